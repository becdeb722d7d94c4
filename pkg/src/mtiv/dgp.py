"""Structural simulator: utility-maximizing agents choosing over budget sets.

Each agent draws i.i.d. standard Gumbel taste shocks eps_t and picks
argmax_t (alpha_t + eps_t + d[z, t]), where d is a discount table encoding the
budget-set schema.  Additive discounts give exact multinomial-logit propensities
and make the monotonicity tables hold unit by unit.

Outcome ranks are tied to the taste shocks through a Gaussian index, which is
what makes treatment endogenous.

``ResponseTypeDesign`` is the analytic counterpart: a finite list of response
types (vectors of potential treatments) with masses and type-specific rank laws
written as Bernstein mixtures, so every cell and complier CDF is available in
closed form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import special, stats

from .core import GE, LE, PairRelation
from .errors import ConfigInvalid, NoLatentData, UnknownPreset

BLOCK = 8192
MIN_COMPLIER_MASS = 0.01

# ---------------------------------------------------------------------------
# outcome families


@dataclass(frozen=True)
class OutcomeFamily:
    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.family == "normal":
            if len(self.params) != 2 or self.params[1] <= 0:
                raise ConfigInvalid(f"normal needs (loc, scale>0), got {self.params}")
        elif self.family == "exponential":
            if len(self.params) != 1 or self.params[0] <= 0:
                raise ConfigInvalid(f"exponential needs (rate>0,), got {self.params}")
        else:
            raise ConfigInvalid(f"unknown outcome family {self.family!r}")

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.family == "normal":
            loc, scale = self.params
            return loc + scale * special.ndtri(u)
        return -np.log1p(-u) / self.params[0]

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "normal":
            loc, scale = self.params
            return special.ndtr((y - loc) / scale)
        return np.where(y > 0, -np.expm1(-self.params[0] * np.maximum(y, 0)), 0.0)

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "normal":
            loc, scale = self.params
            return np.exp(-0.5 * ((y - loc) / scale) ** 2) / (scale * np.sqrt(2 * np.pi))
        rate = self.params[0]
        return np.where(y >= 0, rate * np.exp(-rate * np.maximum(y, 0)), 0.0)

    def mean(self) -> float:
        return self.params[0] if self.family == "normal" else 1.0 / self.params[0]

    def to_dict(self):
        return {"family": self.family, "params": list(self.params)}


def gaussian_family(k: int, scale: float = 1.0) -> tuple[OutcomeFamily, ...]:
    """N(t, scale^2) for t = 0..k."""
    return tuple(OutcomeFamily("normal", (float(t), scale)) for t in range(k + 1))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DgpConfig:
    k: int
    instrument_values: tuple[str, ...]
    assignment_probs: tuple[float, ...]
    outcome_model: tuple[OutcomeFamily, ...]
    alpha: tuple[float, ...]
    discounts: tuple[tuple[float, ...], ...]
    rank_mode: str = "rank_invariance"
    rank_similarity: float = 0.5
    endogeneity: float = 0.5
    seed: int = 0
    schema: str = "custom"
    # declared monotonicity table: (z1, z2, {t: direction}) with z as indices
    table: tuple = ()
    # pairs (z_in, z_out, sign) forming the monotonicity subset
    lambda_pairs: tuple = ()
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "instrument_values", tuple(str(v) for v in self.instrument_values))
        object.__setattr__(self, "assignment_probs", tuple(float(p) for p in self.assignment_probs))
        object.__setattr__(self, "outcome_model", tuple(self.outcome_model))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "discounts",
                           tuple(tuple(float(x) for x in row) for row in self.discounts))
        validate_config(self)

    @property
    def n_treatments(self) -> int:
        return self.k + 1

    @property
    def n_instruments(self) -> int:
        return len(self.instrument_values)

    @property
    def discount_matrix(self) -> NDArray:
        return np.array(self.discounts, dtype=float)

    def label_index(self, z) -> int:
        if isinstance(z, (int, np.integer)) and not isinstance(z, bool):
            if 0 <= z < self.n_instruments:
                return int(z)
        if str(z) in self.instrument_values:
            return self.instrument_values.index(str(z))
        raise ConfigInvalid(f"unknown instrument value {z!r}")

    def analytic_propensity(self) -> NDArray:
        """Exact logit propensities p_t(z) = softmax(alpha + d_z)."""
        util = np.array(self.alpha)[None, :] + self.discount_matrix
        return special.softmax(util, axis=1)

    def monotonicity_spec_pairs(self) -> list[PairRelation]:
        return [PairRelation.from_sign(zi, zo, s, self.k) for zi, zo, s in self.lambda_pairs]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outcome_model"] = [o.to_dict() for o in self.outcome_model]
        d["table"] = [[z1, z2, {str(t): v for t, v in dirs.items()}] for z1, z2, dirs in self.table]
        d["lambda_pairs"] = [list(p) for p in self.lambda_pairs]
        return d

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgpConfig":
        try:
            d = dict(d)
            d["outcome_model"] = tuple(OutcomeFamily(o["family"], tuple(o["params"]))
                                       for o in d["outcome_model"])
            d["table"] = tuple((int(z1), int(z2), {int(t): v for t, v in dirs.items()})
                               for z1, z2, dirs in d.get("table", ()))
            d["lambda_pairs"] = tuple(tuple(int(x) for x in p) for p in d.get("lambda_pairs", ()))
            return cls(**d)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigInvalid):
                raise
            raise ConfigInvalid(f"malformed DGP config: {exc}") from exc


def implied_directions(discounts: NDArray, z1: int, z2: int) -> list[str | None]:
    """Directions of D^t_{z1} versus D^t_{z2} forced by additive discounts.

    t gets '>=' when its relative discount gain is the largest, '<=' when it
    is the smallest, 'both' when all gains coincide, None otherwise.
    """
    gain = discounts[z1] - discounts[z2]
    out: list[str | None] = []
    for t in range(gain.size):
        others = np.delete(gain, t)
        hi = bool(np.all(gain[t] >= others))
        lo = bool(np.all(gain[t] <= others))
        out.append("both" if hi and lo else GE if hi else LE if lo else None)
    return out


def validate_config(cfg: DgpConfig) -> None:
    if cfg.k < 1:
        raise ConfigInvalid("k must be at least 1")
    m, k1 = cfg.n_instruments, cfg.k + 1
    if m < 2:
        raise ConfigInvalid("need at least two instrument values")
    if len(set(cfg.instrument_values)) != m:
        raise ConfigInvalid("instrument labels must be distinct")
    probs = np.array(cfg.assignment_probs)
    if probs.size != m or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise ConfigInvalid(f"assignment_probs must be {m} nonnegative numbers summing to 1")
    if len(cfg.outcome_model) != k1:
        raise ConfigInvalid(f"outcome_model needs {k1} entries")
    if len(cfg.alpha) != k1:
        raise ConfigInvalid(f"alpha needs {k1} entries")
    d = cfg.discount_matrix
    if d.shape != (m, k1) or not np.all(np.isfinite(d)):
        raise ConfigInvalid(f"discounts must be a finite {m}x{k1} table")
    if not np.all(np.isfinite(cfg.alpha)):
        raise ConfigInvalid("alpha must be finite")
    if cfg.rank_mode not in ("rank_invariance", "rank_similarity"):
        raise ConfigInvalid(f"unknown rank_mode {cfg.rank_mode!r}")
    if not 0 <= cfg.rank_similarity <= 1:
        raise ConfigInvalid("rank_similarity must lie in [0, 1]")
    if not 0 <= cfg.endogeneity < 1:
        raise ConfigInvalid("endogeneity must lie in [0, 1)")
    if not 0 <= int(cfg.seed) < 2**64:
        raise ConfigInvalid("seed must be a 64-bit unsigned integer")
    for z1, z2, dirs in cfg.table:
        implied = implied_directions(d, z1, z2)
        for t, want in dirs.items():
            if implied[t] not in (want, "both"):
                raise ConfigInvalid(
                    f"discount table does not force D^{t}_{z1} {want} D^{t}_{z2}")
    p = cfg.analytic_propensity()
    for zi, zo, s in cfg.lambda_pairs:
        for t in range(k1):
            mass = abs(p[zi, t] - p[zo, t])
            if mass < MIN_COMPLIER_MASS:
                raise ConfigInvalid(
                    f"complier mass {mass:.4f} for t={t} on pair "
                    f"({cfg.instrument_values[zi]},{cfg.instrument_values[zo]}) is below "
                    f"{MIN_COMPLIER_MASS}")


# ---------------------------------------------------------------------------
# presets

def _example_i(k: int) -> DgpConfig:
    alpha = tuple([0.5] + [0.0] * k)
    delta = 2.0
    d = np.zeros((k + 1, k + 1))
    for i in range(1, k + 1):
        d[i, i] = delta
    table = [(i, 0, {t: GE if t == i else LE for t in range(k + 1)}) for i in range(1, k + 1)]
    for i in range(1, k + 1):
        for j in range(1, k + 1):
            if i != j:
                table.append((i, j, {i: GE, j: LE}))
    return DgpConfig(
        k=k, instrument_values=tuple(str(i) for i in range(k + 1)),
        assignment_probs=tuple([1.0 / (k + 1)] * (k + 1)),
        outcome_model=gaussian_family(k), alpha=alpha, discounts=d,
        schema="example_I", table=tuple(table),
        lambda_pairs=tuple((i, 0, i) for i in range(1, k + 1)), name=f"example_I({k})")


# (alpha, delta) tuned so every complier mass and cell propensity is >= 0.05
_EXAMPLE_II_PARAMS = {
    2: ((0.0, -0.25, -1.25), (0.0, 1.75, 1.75)),
    3: ((0.0, -0.5, -0.5, -1.75), (0.0, 2.25, 1.75, 2.0)),
}


def _example_ii_discounts(delta, k: int) -> NDArray:
    d = np.zeros((k + 1, k + 1))
    for i in range(1, k + 1):
        d[i, i:] = np.asarray(delta)[i:]
    return d


def _tune_example_ii(k: int):
    """Maximize the smallest complier mass / cell propensity (used for k > 3)."""
    from scipy import optimize

    lam = [(i, i + 1) for i in range(1, k)] + [(k, 0)]
    lo = np.array([-3.0] * k + [0.2] * k)
    hi = np.array([3.0] * k + [4.0] * k)

    def score(x):
        x = np.clip(x, lo, hi)
        alpha = np.concatenate([[0.0], x[:k]])
        d = _example_ii_discounts(np.concatenate([[0.0], x[k:]]), k)
        p = special.softmax(alpha[None, :] + d, axis=1)
        return -min(min(np.abs(p[a] - p[b]).min() for a, b in lam), p.min())

    best = None
    rng = np.random.default_rng(k)
    for _ in range(20):
        r = optimize.minimize(score, rng.uniform(0, 3, 2 * k), method="Nelder-Mead",
                              options={"maxiter": 4000})
        if best is None or r.fun < best.fun:
            best = r
    x = np.round(np.clip(best.x, lo, hi) * 4) / 4
    return tuple(np.concatenate([[0.0], x[:k]])), tuple(np.concatenate([[0.0], x[k:]]))


def _example_ii(k: int) -> DgpConfig:
    alpha, delta = _EXAMPLE_II_PARAMS.get(k) or _tune_example_ii(k)
    d = _example_ii_discounts(delta, k)
    table = [(i, i + 1, {t: GE if t == i else LE for t in range(k + 1)}) for i in range(1, k)]
    table.append((k, 0, {t: GE if t == k else LE for t in range(k + 1)}))
    lam = [(i, i + 1, i) for i in range(1, k)] + [(k, 0, k)]
    return DgpConfig(
        k=k, instrument_values=tuple(str(i) for i in range(k + 1)),
        assignment_probs=tuple([1.0 / (k + 1)] * (k + 1)),
        outcome_model=gaussian_family(k), alpha=alpha, discounts=d,
        schema="example_II", table=tuple(table), lambda_pairs=tuple(lam),
        name=f"example_II({k})")


def _mto() -> DgpConfig:
    # z: a = no voucher, b = regular voucher, c = restricted (experimental) voucher
    alpha = (1.0, 0.0, 0.0)
    d1, d2 = 1.5, 1.5
    d = np.array([[0.0, 0.0, 0.0],
                  [0.0, d1, d2],
                  [0.0, 0.0, d2]])
    a, b, c = 0, 1, 2
    table = ((c, a, {0: LE, 1: LE, 2: GE}),
             (b, c, {0: LE, 1: GE, 2: LE}))
    return DgpConfig(
        k=2, instrument_values=("a", "b", "c"), assignment_probs=(1 / 3, 1 / 3, 1 / 3),
        outcome_model=gaussian_family(2), alpha=alpha, discounts=d, schema="mto",
        table=table, lambda_pairs=((c, a, 2), (b, c, 1)), name="mto")


PRESETS = ("example_I", "example_II", "mto")


def preset(name: str, k: int | None = None, **overrides) -> DgpConfig:
    """Named structural design; ``overrides`` replace config fields."""
    key = name.replace("-", "_")
    if key.lower() == "example_i":
        cfg = _example_i(2 if k is None else int(k))
    elif key.lower() == "example_ii":
        cfg = _example_ii(2 if k is None else int(k))
    elif key.lower() == "mto":
        if k not in (None, 2):
            raise ConfigInvalid("the mto design has k = 2")
        cfg = _mto()
    else:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if key.lower() != "mto" and (k is not None and int(k) < 1):
        raise ConfigInvalid("k must be at least 1")
    if overrides:
        fields = cfg.to_dict()
        fields.update(overrides)
        if "outcome_model" in overrides:
            fields["outcome_model"] = [o.to_dict() if isinstance(o, OutcomeFamily) else o
                                       for o in overrides["outcome_model"]]
        cfg = DgpConfig.from_dict(fields)
    return cfg


# ---------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class Latent:
    u: NDArray            # (n, k+1) rank variables
    y: NDArray            # (n, k+1) potential outcomes
    t_pot: NDArray        # (n, m) potential treatments, column j is T_{z_j}

    def indicator(self, t: int, z: int) -> NDArray[np.bool_]:
        """D^t_z per unit."""
        return self.t_pot[:, z] == t


@dataclass(frozen=True)
class Dataset:
    y: NDArray
    t: NDArray
    z: NDArray
    k: int
    z_labels: tuple[str, ...]
    latent: Latent | None = None
    z_probs: tuple[float, ...] | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.t, dtype=np.int64)
        z = np.asarray(self.z, dtype=np.int64)
        if not (y.shape == t.shape == z.shape) or y.ndim != 1:
            raise ValueError("y, t, z must be 1-d of equal length")
        for a in (y, t, z):
            a.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "z_labels", tuple(str(s) for s in self.z_labels))

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def n_instruments(self) -> int:
        return len(self.z_labels)

    def z_index(self, z) -> int:
        if isinstance(z, (int, np.integer)) and not isinstance(z, bool) and 0 <= z < len(self.z_labels):
            return int(z)
        if str(z) in self.z_labels:
            return self.z_labels.index(str(z))
        raise ConfigInvalid(f"unknown instrument value {z!r}")

    def require_latent(self) -> Latent:
        if self.latent is None:
            raise NoLatentData("this dataset carries no latent records")
        return self.latent

    def assignment_frequencies(self) -> NDArray:
        return np.bincount(self.z, minlength=self.n_instruments) / max(self.n, 1)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.y, self.t, self.z):
            h.update(a.tobytes())
        if self.latent is not None:
            for a in (self.latent.u, self.latent.y, self.latent.t_pot):
                h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# simulation


def choice_function(utilities, discounts, z: int) -> NDArray | int:
    """argmax_t (utilities[..., t] + discounts[z, t]); ties go to the lowest t."""
    u = np.asarray(utilities, dtype=float)
    total = u + np.asarray(discounts, dtype=float)[z]
    out = np.argmax(total, axis=-1)
    return int(out) if out.ndim == 0 else out


def _selection_weights(k: int, rho: float) -> NDArray:
    w = np.arange(k + 1) - k / 2.0
    norm = np.linalg.norm(w)
    return rho * w / norm if norm > 0 else np.zeros(k + 1)


def _block_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(b,)))


def _simulate_block(cfg: DgpConfig, nb: int, rng: np.random.Generator):
    k1, m = cfg.k + 1, cfg.n_instruments
    z = np.searchsorted(np.cumsum(cfg.assignment_probs), rng.random(nb), side="right")
    z = np.minimum(z, m - 1)
    xi = rng.standard_normal((nb, k1))        # taste-shock drivers
    e = rng.standard_normal(nb)               # outcome-rank noise
    e_t = rng.standard_normal((nb, k1))       # per-treatment reshuffle noise
    v = np.clip(special.ndtr(xi), 1e-300, 1 - 1e-16)
    eps = -np.log(-np.log(v))
    base = np.array(cfg.alpha)[None, :] + eps
    d = cfg.discount_matrix
    t_pot = np.stack([np.argmax(base + d[j][None, :], axis=1) for j in range(m)], axis=1)
    w = _selection_weights(cfg.k, cfg.endogeneity)
    c = xi @ w + np.sqrt(1.0 - float(w @ w)) * e
    if cfg.rank_mode == "rank_invariance":
        u = np.repeat(special.ndtr(c)[:, None], k1, axis=1)
    else:
        r = cfg.rank_similarity
        u = special.ndtr(np.sqrt(r) * c[:, None] + np.sqrt(1.0 - r) * e_t)
    u = np.clip(u, 1e-15, 1 - 1e-15)
    y_pot = np.stack([cfg.outcome_model[t].ppf(u[:, t]) for t in range(k1)], axis=1)
    t_obs = t_pot[np.arange(nb), z]
    y = y_pot[np.arange(nb), t_obs]
    return y, t_obs, z, u, y_pot, t_pot


def simulate(cfg: DgpConfig, n: int, seed: int | None = None, latent: bool = True) -> Dataset:
    """Draw n units; blocks of BLOCK units use independent child streams."""
    if n < 1:
        raise ConfigInvalid("n must be at least 1")
    seed = cfg.seed if seed is None else seed
    parts = []
    for b, start in enumerate(range(0, n, BLOCK)):
        nb = min(BLOCK, n - start)
        parts.append(_simulate_block(cfg, nb, _block_rng(seed, b)))
    y, t, z, u, y_pot, t_pot = (np.concatenate([p[i] for p in parts]) for i in range(6))
    lat = Latent(u, y_pot, t_pot) if latent else None
    return Dataset(y, t, z, cfg.k, cfg.instrument_values, lat, cfg.assignment_probs)


# ---------------------------------------------------------------------------
# monotonicity checks on latent data


@dataclass(frozen=True)
class DirectionReport:
    t: int
    direction: str        # '<=', '>=', 'both', 'neither'
    violations_le: int    # units with D^t_{z1} > D^t_{z2}
    violations_ge: int    # units with D^t_{z1} < D^t_{z2}


def verify_monotonicity(data: Dataset, pair) -> list[DirectionReport]:
    lat = data.require_latent()
    z1, z2 = data.z_index(pair[0]), data.z_index(pair[1])
    out = []
    for t in range(data.k + 1):
        d1, d2 = lat.indicator(t, z1), lat.indicator(t, z2)
        v_le = int(np.count_nonzero(d1 & ~d2))
        v_ge = int(np.count_nonzero(~d1 & d2))
        if v_le == 0 and v_ge == 0:
            direction = "both"
        elif v_le == 0:
            direction = LE
        elif v_ge == 0:
            direction = GE
        else:
            direction = "neither"
        out.append(DirectionReport(t, direction, v_le, v_ge))
    return out


def table_violations(data: Dataset, table) -> dict:
    """Per-unit violation counts of a declared table {(z1, z2, t): count}."""
    lat = data.require_latent()
    out = {}
    for z1, z2, dirs in table:
        for t, want in dirs.items():
            d1, d2 = lat.indicator(t, z1), lat.indicator(t, z2)
            bad = (d1 & ~d2) if want == LE else (~d1 & d2)
            out[(z1, z2, t)] = int(np.count_nonzero(bad))
    return out


# ---------------------------------------------------------------------------
# analytic response-type design


def _sinkhorn(kernel: NDArray, row: NDArray, col: NDArray, iters: int = 5000) -> NDArray:
    a = kernel.copy()
    for _ in range(iters):
        a *= (row / a.sum(axis=1))[:, None]
        a *= (col / a.sum(axis=0))[None, :]
        if np.max(np.abs(a.sum(axis=1) - row)) < 1e-15:
            break
    return a


@dataclass(frozen=True)
class ResponseTypeDesign:
    """Finite mixture of response types with exact cell distributions.

    ``types[g, j]`` is T_{z_j} for type g.  Ranks are common across treatments
    (rank invariance); type g's rank law has density sum_j w[g, j] b_j(u) with
    b_j the Beta(j+1, M-j) density.  Column sums of masses[:, None] * w are
    1/M so U is exactly uniform in the population.
    """

    types: NDArray
    masses: NDArray
    weights: NDArray
    outcome_model: tuple[OutcomeFamily, ...]
    z_probs: tuple[float, ...]
    z_labels: tuple[str, ...]

    def __post_init__(self):
        types = np.asarray(self.types, dtype=np.int64)
        masses = np.asarray(self.masses, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if types.ndim != 2 or masses.shape != (types.shape[0],):
            raise ConfigInvalid("types must be (G, m) with one mass per type")
        if abs(masses.sum() - 1) > 1e-12 or np.any(masses < 0):
            raise ConfigInvalid("type masses must be a probability vector")
        if weights.ndim != 2 or weights.shape[0] != types.shape[0]:
            raise ConfigInvalid("weights must be (G, M)")
        if np.any(types < 0) or np.any(types > len(self.outcome_model) - 1):
            raise ConfigInvalid("type treatments out of range")
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "weights", weights / weights.sum(axis=1, keepdims=True))
        object.__setattr__(self, "outcome_model", tuple(self.outcome_model))
        object.__setattr__(self, "z_probs", tuple(float(p) for p in self.z_probs))
        object.__setattr__(self, "z_labels", tuple(str(s) for s in self.z_labels))

    @property
    def k(self) -> int:
        return len(self.outcome_model) - 1

    @property
    def n_instruments(self) -> int:
        return self.types.shape[1]

    @property
    def degree(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def build(cls, types, masses, outcome_model, z_probs=None, z_labels=None,
              degree: int = 8, tilt: float = 1.5) -> "ResponseTypeDesign":
        """Positive kernel exp(tilt * score_g * (j/M - 1/2)) scaled to uniform ranks.

        score_g is the type's mean potential treatment, centred; tilt = 0
        makes ranks independent of type.
        """
        types = np.asarray(types, dtype=np.int64)
        masses = np.asarray(masses, dtype=float)
        m = types.shape[1]
        k = len(outcome_model) - 1
        score = types.mean(axis=1) - k / 2.0
        j = (np.arange(degree) + 0.5) / degree - 0.5
        kernel = np.exp(tilt * score[:, None] * j[None, :])
        keep = masses > 0
        a = np.zeros_like(kernel)
        a[keep] = _sinkhorn(kernel[keep], masses[keep], np.full(degree, 1.0 / degree))
        weights = np.where(keep[:, None], a / np.where(keep, masses, 1)[:, None], 1.0 / degree)
        z_probs = tuple([1.0 / m] * m) if z_probs is None else z_probs
        z_labels = tuple(str(i) for i in range(m)) if z_labels is None else z_labels
        return cls(types, masses, weights, tuple(outcome_model), z_probs, z_labels)

    @classmethod
    def from_latent(cls, data: Dataset, outcome_model, degree: int = 8,
                    tilt: float = 1.5) -> "ResponseTypeDesign":
        """Type frequencies of a simulated population."""
        lat = data.require_latent()
        types, counts = np.unique(lat.t_pot, axis=0, return_counts=True)
        masses = counts / counts.sum()
        return cls.build(types, masses, outcome_model, data.z_probs, data.z_labels,
                         degree=degree, tilt=tilt)

    @classmethod
    def from_config(cls, cfg: DgpConfig, n: int = 400_000, outcome_model=None,
                    degree: int = 8, tilt: float = 1.5) -> "ResponseTypeDesign":
        data = simulate(cfg, n)
        return cls.from_latent(data, outcome_model or cfg.outcome_model, degree, tilt)

    # -- rank laws
    def rank_cdf(self, g, u) -> NDArray:
        """H_g(u) for type index/indices g (broadcast over u)."""
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        M = self.degree
        j = np.arange(M)
        basis = special.betainc(j + 1.0, M - j + 0.0, u[..., None])   # (..., M)
        return basis @ self.weights[g].T

    def rank_pdf(self, g, u) -> NDArray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        M = self.degree
        j = np.arange(M)
        basis = stats.beta.pdf(u[..., None], j + 1.0, M - j + 0.0)
        return basis @ self.weights[g].T

    # -- identified objects
    def propensity(self) -> NDArray:
        p = np.zeros((self.n_instruments, self.k + 1))
        for j in range(self.n_instruments):
            p[j] = np.bincount(self.types[:, j], weights=self.masses, minlength=self.k + 1)
        return p

    def set_subcdf(self, member: NDArray[np.bool_], t: int, y) -> NDArray:
        """P(Y_t <= y, type in member)."""
        y = np.asarray(y, dtype=float)
        g = np.flatnonzero(member)
        if g.size == 0:
            return np.zeros_like(y)
        u = self.outcome_model[t].cdf(y)
        return self.rank_cdf(g, u) @ self.masses[g]

    def set_subpdf(self, member: NDArray[np.bool_], t: int, y) -> NDArray:
        y = np.asarray(y, dtype=float)
        g = np.flatnonzero(member)
        if g.size == 0:
            return np.zeros_like(y)
        fam = self.outcome_model[t]
        return (self.rank_pdf(g, fam.cdf(y)) @ self.masses[g]) * fam.pdf(y)

    def cell_cdf(self, t: int, z: int, y) -> NDArray:
        member = self.types[:, z] == t
        mass = self.masses[member].sum()
        if mass == 0:
            return np.zeros_like(np.asarray(y, dtype=float))
        return self.set_subcdf(member, t, y) / mass

    def cell_pdf(self, t: int, z: int, y) -> NDArray:
        member = self.types[:, z] == t
        mass = self.masses[member].sum()
        if mass == 0:
            return np.zeros_like(np.asarray(y, dtype=float))
        return self.set_subpdf(member, t, y) / mass

    def complier_members(self, t: int, z: int, z2: int) -> NDArray[np.bool_]:
        """Types in C^t_{z,z2} = {D^t_z = 0, D^t_{z2} = 1}."""
        return (self.types[:, z] != t) & (self.types[:, z2] == t)

    def simulate(self, n: int, seed: int) -> Dataset:
        """Units from the design; U ~ H_g via the Beta mixture, Y_t = Q_t(U)."""
        if n < 1:
            raise ConfigInvalid("n must be at least 1")
        parts = []
        for b, start in enumerate(range(0, n, BLOCK)):
            nb = min(BLOCK, n - start)
            rng = _block_rng(seed, b)
            z = np.minimum(np.searchsorted(np.cumsum(self.z_probs), rng.random(nb), side="right"),
                           self.n_instruments - 1)
            g = np.minimum(np.searchsorted(np.cumsum(self.masses), rng.random(nb), side="right"),
                           self.masses.size - 1)
            cw = np.cumsum(self.weights[g], axis=1)
            j = np.minimum((cw < rng.random(nb)[:, None]).sum(axis=1), self.degree - 1)
            u = np.clip(rng.beta(j + 1.0, self.degree - j + 0.0), 1e-15, 1 - 1e-15)
            uu = np.repeat(u[:, None], self.k + 1, axis=1)
            y_pot = np.stack([self.outcome_model[t].ppf(u) for t in range(self.k + 1)], axis=1)
            t_pot = self.types[g]
            t_obs = t_pot[np.arange(nb), z]
            parts.append((y_pot[np.arange(nb), t_obs], t_obs, z, uu, y_pot, t_pot))
        y, t, z, u, y_pot, t_pot = (np.concatenate([p[i] for p in parts]) for i in range(6))
        return Dataset(y, t, z, self.k, self.z_labels, Latent(u, y_pot, t_pot), self.z_probs)


# Response types reproducing the three-instrument example with a common sign
# treatment; masses solved by hand from the propensity table.
SECTION44_TYPES = np.array([
    [0, 0, 0], [0, 0, 2], [0, 2, 2],
    [1, 1, 1], [1, 1, 2], [1, 2, 2],
    [2, 2, 2],
])
SECTION44_MASSES = np.array([0.125, 0.125, 0.0625, 0.3125, 0.0625, 0.0625, 0.25])
SECTION44_PROPENSITY = np.array([
    [0.3125, 0.4375, 0.25],
    [0.25, 0.375, 0.375],
    [0.125, 0.3125, 0.5625],
])


def ch_example_design(tilt: float = 0.0) -> ResponseTypeDesign:
    """Gaussian N(t,1) outcomes independent of type (tilt 0)."""
    return ResponseTypeDesign.build(SECTION44_TYPES, SECTION44_MASSES, gaussian_family(2),
                                    tilt=tilt)

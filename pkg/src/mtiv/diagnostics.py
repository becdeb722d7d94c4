"""Assumption checks and the moment-equation view of identification.

Sign treatments are read off propensity differences, the identifying pair set
is searched for k distinct sign treatments, and the moment system

    Pi_z(y_0..y_k) = sum_t F_{Y|T,Z}(y_t | t, z) p_t(z) - tau

is evaluated together with the determinant of its Jacobian.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .compliers import DEFAULT_ETA, PropensityMatrix, make_cells
from .core import GE, LE, MonotonicitySpec, PairRelation
from .errors import NotSquare, TauOutOfRange, TooFewSamples

SIGN = "sign"
NONE = "none"
AMBIGUOUS = "ambiguous"

DEFAULT_DELTA = 0.05         # trimming of the determinant sweep, in probability units
DEFAULT_DENSITY_FLOOR = 1e-3


def sign_eta(p: PropensityMatrix, eta: float = DEFAULT_ETA) -> float:
    """Zero threshold for propensity differences.

    Exact matrices use 0.  Estimated matrices use the weak-pair threshold, raised
    to three standard errors of a difference at the smallest instrument cell.
    """
    if p.exact:
        return 0.0
    n_min = float(np.min(p.counts))
    return max(eta, 3.0 * np.sqrt(0.5 / n_min))


@dataclass(frozen=True)
class SignResult:
    pair: tuple[int, int]
    differences: tuple[float, ...]      # p_t(z1) - p_t(z2)
    status: str                         # sign | none | ambiguous
    candidates: tuple[int, ...]
    eta: float

    @property
    def sign_treatment(self) -> int | None:
        return self.candidates[0] if self.status == SIGN else None

    @property
    def strength(self) -> float:
        """Smallest |difference|: the mass of the weakest complier group of the pair."""
        return float(np.min(np.abs(self.differences)))

    def relation(self, sign: int | None = None) -> PairRelation:
        s = self.sign_treatment if sign is None else sign
        if s is None or s not in self.candidates:
            raise ValueError(f"pair {self.pair} has no sign treatment {s}")
        up = self.differences[s] > 0
        dirs = tuple((GE if up else LE) if t == s else (LE if up else GE)
                     for t in range(len(self.differences)))
        return PairRelation(self.pair[0], self.pair[1], dirs)


def detect_sign_treatments(p: PropensityMatrix, pairs, eta: float | None = None) -> list[SignResult]:
    """Per pair, the treatment whose propensity moves against all the others.

    Differences within eta of zero are compatible with either direction; when
    more than one treatment qualifies the pair is reported as ambiguous.
    """
    thr = sign_eta(p) if eta is None else float(eta)
    out = []
    for z1, z2 in pairs:
        d = np.asarray(p.diff(z1, z2), dtype=float)
        sgn = np.where(d > thr, 1, np.where(d < -thr, -1, 0))
        cands = []
        for t in range(d.size):
            if sgn[t] == 0:
                continue
            others = np.delete(sgn, t)
            if np.all(others != sgn[t]) and np.any(others == -sgn[t]):
                cands.append(t)
        status = SIGN if len(cands) == 1 else (NONE if not cands else AMBIGUOUS)
        out.append(SignResult((int(z1), int(z2)), tuple(float(x) for x in d), status,
                              tuple(cands), thr))
    return out


@dataclass(frozen=True)
class Assumption3Result:
    satisfied: bool
    lambda_star: tuple[int, ...]        # indices into the pair list
    signs: tuple[int, ...]              # sign treatment of each chosen pair
    reason: str = ""
    strength: float = 0.0               # min complier probability over the chosen pairs

    @property
    def verdict(self) -> str:
        return "satisfied" if self.satisfied else "violated"

    def spec(self, results: list[SignResult], k: int) -> MonotonicitySpec:
        if not self.satisfied:
            raise ValueError("no identifying pair set")
        rels = [results[i].relation(s) for i, s in zip(self.lambda_star, self.signs)]
        return MonotonicitySpec(k, rels, tuple(range(k)))


def check_assumption3(results: list[SignResult], k: int) -> Assumption3Result:
    """Pick k pairs with pairwise distinct sign treatments, strongest first."""
    usable = [i for i, r in enumerate(results) if r.candidates and r.status != NONE]
    if len(results) < k:
        return Assumption3Result(False, (), (), f"only {len(results)} pair(s) for k={k}")
    all_signs = {s for i in usable for s in results[i].candidates}
    if len(usable) < k:
        return Assumption3Result(False, (), (),
                                 f"only {len(usable)} pair(s) have a sign treatment, need {k}")
    if len(all_signs) == 1 and len(usable) == len(results):
        s = next(iter(all_signs))
        return Assumption3Result(False, (), (), f"all pairs share one sign treatment ({s})")
    best = None
    for combo in itertools.combinations(usable, k):
        for signs in itertools.product(*(results[i].candidates for i in combo)):
            if len(set(signs)) != k:
                continue
            # unambiguous pairs first, then the strongest weakest group
            key = (-sum(results[i].status != SIGN for i in combo),
                   min(results[i].strength for i in combo))
            if best is None or key > best[0]:
                best = (key, combo, signs)
    if best is None:
        return Assumption3Result(False, (), (),
                                 f"only {len(all_signs)} distinct sign treatment(s) "
                                 f"{sorted(all_signs)} among the pairs, need {k}")
    return Assumption3Result(True, tuple(best[1]), tuple(int(s) for s in best[2]), "", best[0][1])


def all_pairs(m: int) -> list[tuple[int, int]]:
    """(1,0), (2,0), (2,1), ... for m instrument values."""
    return [(a, b) for a in range(1, m) for b in range(a)]


# ---------------------------------------------------------------------------
# moment equations


def moment_residual(y_vector, tau: float, cells, p: PropensityMatrix | None = None) -> NDArray:
    """Pi per instrument value at (y_0..y_k)."""
    if not 0 < tau < 1:
        raise TauOutOfRange(f"tau must lie in (0, 1), got {tau}")
    cells = make_cells(cells)
    p = cells.propensity if p is None else p
    y = np.asarray(y_vector, dtype=float)
    if y.size != p.k + 1:
        raise ValueError(f"need {p.k + 1} outcome values, got {y.size}")
    out = np.empty(len(p.z_labels))
    for z in range(len(p.z_labels)):
        acc = 0.0
        for t in range(p.k + 1):
            if p[z, t] > 0:
                acc += float(cells.cdf(t, z, y[t])) * p[z, t]
        out[z] = acc - tau
    return out


@dataclass
class JacobianInput:
    densities: Callable          # (t, z, y) -> f_{Y|T,Z}(y | t, z)
    propensities: PropensityMatrix
    instrument_values: tuple[int, ...] = ()
    instrument_independent: bool = False

    def rows(self) -> tuple[int, ...]:
        return tuple(self.instrument_values) or tuple(range(len(self.propensities.z_labels)))


@dataclass(frozen=True)
class JacobianResult:
    determinant: float
    direct: float
    factored: float | None           # density product times det(p); None if not applicable
    propensity_det: float
    propensity_det_exact: Fraction | None
    density_product: float


def rational_determinant(matrix) -> Fraction:
    """Exact determinant by fraction-valued Gaussian elimination."""
    a = [[Fraction(x) for x in row] for row in np.asarray(matrix, dtype=object).tolist()]
    n = len(a)
    if any(len(r) != n for r in a):
        raise NotSquare(f"matrix is {n}x{len(a[0]) if a else 0}")
    det = Fraction(1)
    for c in range(n):
        piv = next((r for r in range(c, n) if a[r][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            a[c], a[piv] = a[piv], a[c]
            det = -det
        det *= a[c][c]
        for r in range(c + 1, n):
            f = a[r][c] / a[c][c]
            if f:
                a[r] = [x - f * y for x, y in zip(a[r], a[c])]
    return det


def jacobian_determinant(inp: JacobianInput, y_vector) -> JacobianResult:
    """det of M[z, t] = f(y_t | t, z) p_t(z) over k+1 instrument rows."""
    p = inp.propensities
    rows = inp.rows()
    k1 = p.k + 1
    if len(rows) != k1:
        raise NotSquare(f"{len(rows)} instrument values for {k1} treatments")
    y = np.asarray(y_vector, dtype=float)
    dens = np.array([[float(inp.densities(t, z, y[t])) for t in range(k1)] for z in rows])
    if np.any(dens < 0):
        raise ValueError("densities must be nonnegative")
    pm = np.array([[p[z, t] for t in range(k1)] for z in rows])
    direct = float(np.linalg.det(dens * pm))
    prop_det = float(np.linalg.det(pm))
    try:
        exact = rational_determinant(pm)
    except (TypeError, ValueError):
        exact = None
    prod = float(np.prod(dens[0]))
    factored = None
    if inp.instrument_independent:
        factored = prod * (float(exact) if exact is not None else prop_det)
    return JacobianResult(direct, direct, factored,
                          float(exact) if exact is not None else prop_det, exact, prod)


def determinant_sweep(inp: JacobianInput, y_vectors) -> NDArray:
    return np.array([jacobian_determinant(inp, y).determinant for y in y_vectors])


def kernel_density(samples, y) -> float | NDArray:
    """Gaussian kernel estimate with Silverman's bandwidth 1.06 sd n^(-1/5)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise TooFewSamples(f"kernel density needs at least 2 samples, got {x.size}")
    h = 1.06 * float(np.std(x, ddof=1)) * x.size ** -0.2
    if h <= 0:
        raise TooFewSamples("samples have zero spread")
    yy = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty(yy.shape)
    # chunked to keep memory flat for large samples
    step = max(1, 2_000_000 // x.size)
    for i in range(0, yy.size, step):
        u = (yy.ravel()[i:i + step, None] - x[None, :]) / h
        out.ravel()[i:i + step] = np.exp(-0.5 * u * u).sum(axis=1) / (x.size * h * np.sqrt(2 * np.pi))
    return float(out[0]) if np.ndim(y) == 0 else out


def cell_densities(cells) -> Callable:
    """Density evaluator per (t, z): exact for analytic cells, kernel otherwise."""
    cells = make_cells(cells)
    if cells.exact:
        return lambda t, z, y: cells.pdf(t, z, y)

    def dens(t, z, y):
        x = cells.samples(t, z)
        return kernel_density(x, y) if x.size >= 2 else 0.0
    return dens


def sweep_vectors(cdfs: dict, taus) -> list[NDArray]:
    """(Q_0(tau)..Q_k(tau)) for each tau, from potential CDFs keyed by treatment."""
    from .effects import quantile_inside
    ks = sorted(cdfs)
    return [np.array([quantile_inside(cdfs[t].cdf, tau) for t in ks]) for tau in taus]


@dataclass
class DiagnosticReport:
    signs: list
    assumption3: Assumption3Result
    sweep_taus: tuple = ()
    determinants: NDArray | None = None
    residual_curves: dict = field(default_factory=dict)      # z -> residuals over taus
    warnings: list = field(default_factory=list)

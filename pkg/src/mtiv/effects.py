"""Potential-outcome distributions and treatment effects from counterfactual maps.

F_{Y_s}(y) = sum_t F_{Y|T,Z}(phi_{s,t}(y) | t, z) p_t(z)
E[Y_s]     = sum_t E[phi_{t,s}(Y) | T=t, Z=z] p_t(z)

Complier groups reuse the same maps: on C^g_{z,z'} the law of Y_{t'} is the
law of phi_{g,t'}(Y_g).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .compliers import ComplierTable, complier_cdf, make_cells
from .core import MonotoneCdf, MonotonicitySpec, generalized_inverse, isotonize
from .counterfactual import MapFamily
from .errors import (
    NoEligiblePair,
    SignTreatmentMismatch,
    TauOutOfRange,
    TauOutsideWindow,
)

DEFAULT_TAUS = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))


@dataclass
class PotentialCdf:
    treatment: int
    cdf: MonotoneCdf
    clamped: int = 0
    per_z: dict = field(default_factory=dict)     # z -> MonotoneCdf

    def z_invariance(self) -> float:
        """Largest sup-distance between per-instrument versions."""
        cdfs = list(self.per_z.values())
        worst = 0.0
        for i in range(len(cdfs)):
            for j in range(i + 1, len(cdfs)):
                worst = max(worst, float(np.max(np.abs(cdfs[i].values - cdfs[j].values))))
        return worst

    def quantile(self, tau: float) -> float:
        return quantile_inside(self.cdf, tau)


def quantile_inside(cdf: MonotoneCdf, tau: float) -> float:
    """Inf-quantile that refuses levels the tabulated window cannot certify."""
    if not 0 < tau < 1:
        raise TauOutOfRange(f"tau must lie in (0, 1), got {tau}")
    if tau <= cdf.values[0] or tau > cdf.values[-1]:
        raise TauOutsideWindow(
            f"tau={tau} outside [{cdf.values[0]:.4f}, {cdf.values[-1]:.4f}] covered by the grid")
    return float(generalized_inverse(cdf, tau))


def _mixture(s: int, maps: MapFamily, cells, z: int, grid: NDArray) -> tuple[NDArray, int]:
    p = cells.propensity
    total = np.zeros_like(grid)
    clamped = 0
    for t in maps.treatments:
        if p[z, t] == 0:
            continue
        y_t, c = maps[(s, t)].evaluate(grid, return_clamped=True)
        clamped += c
        total = total + cells.cdf(t, z, y_t) * p[z, t]
    return total, clamped


def potential_cdf(s: int, maps: MapFamily, cells, z: int | None = None,
                  grid=None) -> PotentialCdf:
    """F_{Y_s} on the domain of phi_{s,.}; z=None averages over instruments."""
    cells = make_cells(cells)
    grid = maps.domains[s] if grid is None else np.asarray(grid, dtype=float)
    m = len(cells.z_labels)
    per_z, clamped, raw = {}, 0, {}
    zs = range(m) if z is None else [z]
    for zz in zs:
        vals, c = _mixture(s, maps, cells, zz, grid)
        clamped += c
        raw[zz] = vals
        per_z[zz] = isotonize(grid, vals)
    if z is None:
        w = np.asarray(cells.z_weights, dtype=float)
        avg = sum(raw[zz] * w[zz] for zz in zs) / w.sum()
        cdf = isotonize(grid, avg)
    else:
        cdf = per_z[z]
    return PotentialCdf(s, cdf, clamped, per_z)


@dataclass
class PotentialMean:
    treatment: int
    mean: float
    clamped: int = 0
    per_z: dict = field(default_factory=dict)


def _clamp_count(mp, x) -> int:
    lo, hi = mp.span
    return int(np.count_nonzero((x < lo) | (x > hi)))


def potential_mean(s: int, maps: MapFamily, cells, z: int | None = None) -> PotentialMean:
    cells = make_cells(cells)
    p = cells.propensity
    m = len(cells.z_labels)
    per_z, clamped = {}, 0
    zs = range(m) if z is None else [z]
    for zz in zs:
        acc = 0.0
        for t in maps.treatments:
            if p[zz, t] == 0:
                continue
            mp = maps[(t, s)]
            acc += cells.expect(t, zz, mp.evaluate) * p[zz, t]
            if not cells.exact:
                clamped += _clamp_count(mp, cells.samples(t, zz))
        per_z[zz] = acc
    if z is None:
        w = np.asarray(cells.z_weights, dtype=float)
        mean = float(sum(per_z[zz] * w[zz] for zz in zs) / w.sum())
    else:
        mean = per_z[z]
    return PotentialMean(s, mean, clamped, per_z)


def ate(s: int, t_prime: int, means: dict) -> float:
    return float(means[s].mean - means[t_prime].mean)


def qte(s: int, t_prime: int, tau: float, cdfs: dict) -> float:
    if s == t_prime:
        cdfs[s].quantile(tau)     # still validates tau
        return 0.0
    return cdfs[s].quantile(tau) - cdfs[t_prime].quantile(tau)


# ---------------------------------------------------------------------------
# complier groups


@dataclass(frozen=True)
class ComplierGroup:
    """Two-way flow group {D^g_{z_out} = 1, D^{other}_{z_in} = 1} = C^g_{z_in,z_out}."""

    table: ComplierTable
    sign_treatment: int
    other: int          # the treatment these units take at z_in

    @property
    def treatment(self) -> int:
        return self.table.treatment

    @property
    def pair(self) -> tuple[int, int]:
        return self.table.pair

    def label(self, z_labels) -> str:
        zi, zo = self.pair
        return f"D^{self.treatment}_{z_labels[zo]}=1,D^{self.other}_{z_labels[zi]}=1"


def complier_group(cells, relation, t: int, t_prime: int, grid, eta: float = 0.01) -> ComplierGroup:
    """Group of units moving between t and t_prime on a pair whose sign is one of them."""
    s = relation.sign_treatment
    if s not in (t, t_prime):
        raise SignTreatmentMismatch(
            f"pair {relation.pair} has sign treatment {s}, not {t} or {t_prime}")
    z_in, z_out = relation.oriented()
    g = t_prime if s == t else t
    tab = complier_cdf(cells, (z_in, z_out), g, grid, eta, orient=False)
    return ComplierGroup(tab, s, s)


def local_cdf(t_prime: int, group: ComplierGroup, maps: MapFamily, grid=None) -> MonotoneCdf:
    """F_{Y_{t'}|C^g}(y) = F_{Y_g|C^g}(phi_{t',g}(y))."""
    g = group.treatment
    if t_prime == g:
        return group.table.cdf
    grid = maps.domains[t_prime] if grid is None else np.asarray(grid, dtype=float)
    y_g = maps[(t_prime, g)].evaluate(grid)
    return isotonize(grid, group.table.cdf(y_g))


def local_mean(t_prime: int, group: ComplierGroup, cells, maps: MapFamily) -> float:
    """E[phi_{g,t'}(Y_g) | C^g_{z,z'}] from the two cell means."""
    cells = make_cells(cells)
    p = cells.propensity
    g = group.treatment
    z, z2 = group.pair
    mp = maps[(g, t_prime)]
    hi = cells.expect(g, z2, mp.evaluate) * p[z2, g] if p[z2, g] > 0 else 0.0
    lo = cells.expect(g, z, mp.evaluate) * p[z, g] if p[z, g] > 0 else 0.0
    return float((hi - lo) / group.table.probability)


def eligible_pairs(spec: MonotonicitySpec, t: int, t_prime: int):
    out = [r for r in spec.pairs
           if r.sign_treatment is not None and r.sign_treatment in (t, t_prime)]
    if not out:
        raise NoEligiblePair(f"no pair has sign treatment {t} or {t_prime}")
    return out


def late(t: int, t_prime: int, group: ComplierGroup, cells, maps: MapFamily) -> float:
    if t == t_prime:
        return 0.0
    _check_group(group, t, t_prime)
    return local_mean(t, group, cells, maps) - local_mean(t_prime, group, cells, maps)


def lqte(t: int, t_prime: int, tau: float, group: ComplierGroup, maps: MapFamily) -> float:
    if t == t_prime:
        if not 0 < tau < 1:
            raise TauOutOfRange(f"tau must lie in (0, 1), got {tau}")
        return 0.0
    _check_group(group, t, t_prime)
    return (quantile_inside(local_cdf(t, group, maps), tau)
            - quantile_inside(local_cdf(t_prime, group, maps), tau))


def _check_group(group: ComplierGroup, t: int, t_prime: int):
    if {group.treatment, group.sign_treatment} != {t, t_prime}:
        raise SignTreatmentMismatch(
            f"group moves between {group.sign_treatment} and {group.treatment}, "
            f"not {t} and {t_prime}")


# ---------------------------------------------------------------------------
# report


@dataclass
class EffectReport:
    means: dict                  # t -> PotentialMean
    cdfs: dict                   # t -> PotentialCdf
    ate: dict                    # (t, t') -> float
    qte: dict                    # (t, t') -> {tau: float}
    late: dict                   # (t, t', group label) -> float
    lqte: dict                   # (t, t', group label) -> {tau: float}
    groups: dict                 # group label -> ComplierGroup
    taus: tuple
    z_invariance: dict           # t -> sup distance across instruments
    clamped: int = 0
    warnings: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def effect_report(maps: MapFamily, cells, spec: MonotonicitySpec, grid,
                  taus=DEFAULT_TAUS, eta: float = 0.01) -> EffectReport:
    cells = make_cells(cells)
    ts = maps.treatments
    means = {t: potential_mean(t, maps, cells) for t in ts}
    cdfs = {t: potential_cdf(t, maps, cells) for t in ts}
    warnings = []
    ate_tab, qte_tab = {}, {}
    for s in ts:
        for t in ts:
            if s == t:
                continue
            ate_tab[(s, t)] = ate(s, t, means)
            curve = {}
            for tau in taus:
                try:
                    curve[float(tau)] = qte(s, t, float(tau), cdfs)
                except TauOutsideWindow:
                    warnings.append(f"qte({s},{t}) skipped at tau={tau}: outside window")
            qte_tab[(s, t)] = curve
    late_tab, lqte_tab, groups = {}, {}, {}
    for s in ts:
        for t in ts:
            if s >= t:
                continue
            try:
                rels = eligible_pairs(spec, s, t)
            except NoEligiblePair:
                continue
            for rel in rels:
                try:
                    grp = complier_group(cells, rel, s, t, grid, eta)
                except Exception as exc:     # weak group: report and move on
                    warnings.append(f"group for ({s},{t}) on pair {rel.pair} skipped: {exc}")
                    continue
                label = grp.label(cells.z_labels)
                groups[label] = grp
                for a, b in ((s, t), (t, s)):
                    late_tab[(a, b, label)] = late(a, b, grp, cells, maps)
                    curve = {}
                    for tau in taus:
                        try:
                            curve[float(tau)] = lqte(a, b, float(tau), grp, maps)
                        except TauOutsideWindow:
                            pass
                    lqte_tab[(a, b, label)] = curve
    zinv = {t: cdfs[t].z_invariance() for t in ts}
    clamped = sum(m.clamped for m in means.values()) + sum(c.clamped for c in cdfs.values())
    if clamped:
        warnings.append(f"{clamped} evaluation(s) clamped to map endpoints")
    grid = np.asarray(grid, dtype=float)
    meta = {
        "grid": {"size": int(grid.size), "lower": float(grid[0]), "upper": float(grid[-1])},
        "lambda": [list(r.pair) + [r.sign_treatment] for r in
                   (spec.chosen if spec.lambda_star else spec.pairs)],
        "complier_probabilities": {lab: g.table.probability for lab, g in groups.items()},
    }
    return EffectReport(means, cdfs, ate_tab, qte_tab, late_tab, lqte_tab, groups,
                        tuple(float(x) for x in taus), zinv, clamped, warnings, meta)

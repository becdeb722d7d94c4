"""Counterfactual mappings from complier CDFs.

Every pair in the identifying set carries one equation.  For a pair with sign
treatment s, oriented so that s is more likely at ``z_in``,

    P(C^s_{out,in}) F_{Y_s|C^s_{out,in}}(y_s)
        = sum_{j != s} P(C^j_{in,out}) F_{Y_j|C^j_{in,out}}(y_j),

because the units pushed into s are exactly the units pushed out of the other
treatments.  With y_j = phi_{K,j}(y_f) the k equations pin down the k unknown
images at a fixed y_f.

Internally treatments are relabelled into positions: position 0 is the one
treatment that is not a sign treatment, positions 1..k are the sign
treatments in ascending order, equation i belongs to the pair whose sign
treatment sits at position i, and position k is held fixed.  Level m of the
nested solve finds positions 0..m-1 from equations 1..m given positions
m..k; level 1 is an explicit quantile, higher levels bisect on position m-1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .compliers import DEFAULT_ETA, ComplierTable, complier_cdf, make_cells
from .core import (
    TIE_SLACK,
    CounterfactualMap,
    MonotonicitySpec,
    PairRelation,
    compose_maps,
    generalized_inverse,
    identity_map,
    invert_map,
    strictify,
)
from .errors import (
    AssumptionThreeViolated,
    DomainEmpty,
    MonotoneBracketViolation,
    NoSolutionOnGrid,
    WeakPair,
)

log = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class SystemTables:
    """Complier tables of the identifying equations in canonical positions."""

    k: int
    order: tuple[int, ...]               # order[pos] = treatment label
    pairs: tuple[tuple[int, int], ...]   # pairs[i-1] = (z_in, z_out) of equation i
    grid: NDArray
    in_tables: dict                      # i -> ComplierTable of C^{s_i}_{out,in}
    out_tables: dict                     # (i, j) -> ComplierTable of C^{order[j]}_{in,out}
    dropped: tuple = ()                  # (i, j) terms with negligible mass

    @property
    def n(self) -> int:
        return self.grid.size

    @property
    def fixed_treatment(self) -> int:
        return self.order[self.k]

    def position(self, t: int) -> int:
        return self.order.index(t)

    def f_in(self, i: int) -> NDArray:
        return self.in_tables[i].values

    def p_in(self, i: int) -> float:
        return self.in_tables[i].probability

    def balance(self) -> NDArray:
        """P(C^{s_i}) - sum_j P(C^j) per equation; zero up to dropped terms."""
        out = []
        for i in range(1, self.k + 1):
            rhs = sum(tab.probability for (ii, _), tab in self.out_tables.items() if ii == i)
            out.append(self.p_in(i) - rhs)
        return np.array(out)

    def residuals(self, ys: list[NDArray]) -> NDArray:
        """Equation residuals in CDF units, shape (k, ...)."""
        res = []
        for i in range(1, self.k + 1):
            lhs = self.f_in(i)[ys[i]] * self.p_in(i)
            res.append(lhs - _rhs(self, i, ys))
        return np.array(res)


def canonical_layout(spec: MonotonicitySpec) -> tuple[tuple[int, ...], tuple[tuple[int, int], ...]]:
    chosen = spec.chosen if spec.lambda_star else spec.pairs
    k = spec.k
    if len(chosen) != k:
        raise AssumptionThreeViolated(f"need {k} identifying pairs, got {len(chosen)}",
                                      {"pairs": [r.pair for r in chosen]})
    signs = [r.sign_treatment for r in chosen]
    if None in signs:
        raise AssumptionThreeViolated("a chosen pair has no sign treatment",
                                      {"signs": signs})
    if len(set(signs)) != k:
        raise AssumptionThreeViolated(f"sign treatments {signs} are not distinct",
                                      {"signs": signs})
    rest = [t for t in range(k + 1) if t not in signs]
    order = tuple(rest + sorted(signs))
    by_sign = {r.sign_treatment: r.oriented() for r in chosen}
    pairs = tuple(by_sign[order[i]] for i in range(1, k + 1))
    return order, pairs


def build_system_tables(cells, spec: MonotonicitySpec, grid, eta: float = DEFAULT_ETA) -> SystemTables:
    cells = make_cells(cells)
    order, pairs = canonical_layout(spec)
    k = spec.k
    grid = np.asarray(grid, dtype=float)
    p = cells.propensity
    in_tables, out_tables, dropped = {}, {}, []
    for i, (z_in, z_out) in enumerate(pairs, start=1):
        s = order[i]
        in_tables[i] = complier_cdf(cells, (z_out, z_in), s, grid, eta, orient=False)
        for j in range(k + 1):
            if j == i:
                continue
            t = order[j]
            mass = p[z_out, t] - p[z_in, t]
            if mass < -eta:
                raise AssumptionThreeViolated(
                    f"treatment {t} gains mass moving to {p.z_labels[z_in]} on pair "
                    f"({p.z_labels[z_in]},{p.z_labels[z_out]}), contradicting sign treatment {s}",
                    {"pair": (z_in, z_out), "t": t, "difference": float(-mass)})
            if mass <= eta:
                if i == 1 and j == 0:
                    raise WeakPair(f"base complier group of treatment {t} has mass {mass:.5f}")
                dropped.append((i, j))
                continue
            out_tables[(i, j)] = complier_cdf(cells, (z_in, z_out), t, grid, eta, orient=False)
    return SystemTables(k, order, pairs, grid, in_tables, out_tables, tuple(dropped))


# ---------------------------------------------------------------------------
# nested solve


def _rhs(T: SystemTables, i: int, ys) -> NDArray:
    acc = 0.0
    for j in range(T.k + 1):
        if j != i and (i, j) in T.out_tables:
            tab = T.out_tables[(i, j)]
            acc = acc + tab.values[ys[j]] * tab.probability
    return acc


@dataclass
class _Level:
    ys: list
    saturated: NDArray
    low: NDArray
    flat: NDArray
    brackets: dict      # equation -> residual change across the last grid step


def _base_level(T: SystemTables, ys: list) -> _Level:
    n = T.n
    num = T.f_in(1)[ys[1]] * T.p_in(1)
    for j in range(2, T.k + 1):
        if (1, j) in T.out_tables:
            tab = T.out_tables[(1, j)]
            num = num - tab.values[ys[j]] * tab.probability
    base = T.out_tables[(1, 0)]
    arg = num / base.probability
    f0 = base.values
    idx = np.searchsorted(f0, arg - TIE_SLACK, side="left")
    saturated = idx >= n
    idx = np.minimum(idx, n - 1)
    step0 = f0[1] - f0[0] if n > 1 else 0.0
    low = (idx == 0) & (f0[0] - arg > max(step0, 1e-8) + TIE_SLACK)
    nxt = f0[np.minimum(idx + 1, n - 1)]
    flat = (idx < n - 1) & (nxt - f0[idx] <= TIE_SLACK)
    out = list(ys)
    out[0] = idx
    prev = np.where(idx > 0, f0[np.maximum(idx - 1, 0)], 0.0)
    return _Level(out, saturated, low, flat, {1: (f0[idx] - prev) * base.probability})


def _level_residual(T: SystemTables, m: int, inner: _Level) -> NDArray:
    g = _rhs(T, m, inner.ys) / T.p_in(m)
    return g - T.f_in(m)[inner.ys[m]]


def _solve_level(T: SystemTables, m: int, ys: list, check: bool = True) -> _Level:
    if m == 1:
        return _base_level(T, ys)
    n = T.n
    shape = np.shape(ys[m])

    def evaluate(cand):
        trial = list(ys)
        trial[m - 1] = cand
        inner = _solve_level(T, m - 1, trial, check)
        return _level_residual(T, m, inner), inner

    top = np.full(shape, n - 1)
    r_top, _ = evaluate(top)
    saturated = r_top < -TIE_SLACK
    lo = np.zeros(shape, dtype=np.int64)
    hi = top.copy()
    hist_mid, hist_r = [top], [r_top]
    while np.any(lo < hi):
        mid = (lo + hi) // 2
        r_mid, _ = evaluate(mid)
        hist_mid.append(mid)
        hist_r.append(r_mid)
        ok = r_mid >= -TIE_SLACK
        active = lo < hi
        hi = np.where(active & ok, mid, hi)
        lo = np.where(active & ~ok, mid + 1, lo)
    idx = lo
    r_idx, inner = evaluate(idx)
    if check:
        _check_monotone(m, np.array(hist_mid + [idx]), np.array(hist_r + [r_idx]),
                        _rounding_allowance(T, m))
    if m >= 3:
        idx, r_idx, inner = _rescan(T, m, ys, idx, r_idx, saturated, evaluate, check)
        idx, r_idx, inner = _polish(T, m, ys, idx, r_idx, inner, evaluate)
    r_prev, _ = evaluate(np.maximum(idx - 1, 0))
    r_next, _ = evaluate(np.minimum(idx + 1, n - 1))
    flat = (idx < n - 1) & (np.abs(r_next - r_idx) <= TIE_SLACK)
    r_one, _ = evaluate(np.ones(shape, dtype=np.int64)) if n > 1 else (r_idx, None)
    low = (idx == 0) & (r_idx > np.maximum(r_one - r_idx, 1e-8) + TIE_SLACK)
    out = list(inner.ys)
    out[m - 1] = idx
    brackets = dict(inner.brackets)
    brackets[m] = np.where(idx > 0, r_idx - r_prev, np.abs(r_idx)) * T.p_in(m)
    return _Level(out, saturated | inner.saturated, low | inner.low, flat | inner.flat, brackets)


def _rescan(T: SystemTables, m: int, ys: list, idx, r_idx, saturated, evaluate, check):
    """Exhaustive scan wherever bisection did not end on a proper crossing.

    Grid rounding can make the level-m residual wobble, and bisection may then
    stop on a node where the residual has not changed sign.  Those nodes get
    the first node with R(i-1) < 0 <= R(i), or the smallest |R| if none.
    """
    r_prev, _ = evaluate(np.maximum(idx - 1, 0))
    proper = (r_idx >= -TIE_SLACK) & ((idx == 0) | (r_prev < -TIE_SLACK))
    bad = ~(proper | saturated)
    if not np.any(bad):
        return idx, r_idx, _final(evaluate, idx)
    cols = np.flatnonzero(bad)
    sub = [None if a is None else np.asarray(a)[cols] for a in ys]
    rs = []
    for cand in range(T.n):
        trial = list(sub)
        trial[m - 1] = np.full(cols.size, cand, dtype=np.int64)
        inner = _solve_level(T, m - 1, trial, check)
        rs.append(_level_residual(T, m, inner))
    rs = np.array(rs)
    ok = rs >= -TIE_SLACK
    prev_neg = np.vstack([np.ones((1, cols.size), bool), rs[:-1] < -TIE_SLACK])
    cross = ok & prev_neg
    first = np.where(cross.any(axis=0), np.argmax(cross, axis=0), np.argmin(np.abs(rs), axis=0))
    idx = idx.copy()
    idx[cols] = first
    r_idx, inner = evaluate(idx)
    return idx, r_idx, inner


def _final(evaluate, idx):
    return evaluate(idx)[1]


def _polish(T: SystemTables, m: int, ys: list, idx, r_idx, inner, evaluate):
    """Move the bisection point one node if that lowers the worst residual.

    Below level 3 the residual is exactly monotone and the first crossing is
    already the best node; above it grid rounding of the inner unknowns can
    leave the crossing one node away from the residual minimizer.
    """
    def score(level):
        full = list(level.ys)
        full[m - 1] = level.ys[m - 1]
        res = [np.abs(T.f_in(i)[full[i]] * T.p_in(i) - _rhs(T, i, full)) for i in range(1, m + 1)]
        return np.max(np.stack(res), axis=0)

    inner.ys[m - 1] = idx
    best_score = score(inner)
    best_idx, best_r, best_inner = idx, r_idx, inner
    for step in (-1, 1):
        cand = np.clip(idx + step, 0, T.n - 1)
        r_c, in_c = evaluate(cand)
        in_c.ys[m - 1] = cand
        sc = score(in_c)
        better = (sc < best_score - TIE_SLACK) & ~in_c.saturated & ~in_c.low
        best_idx = np.where(better, cand, best_idx)
        best_r = np.where(better, r_c, best_r)
        best_score = np.where(better, sc, best_score)
        merged = []
        for a, b in zip(best_inner.ys, in_c.ys):
            merged.append(b if a is None else np.where(better, b, a))
        best_inner = _Level(merged, np.where(better, in_c.saturated, best_inner.saturated),
                            np.where(better, in_c.low, best_inner.low),
                            np.where(better, in_c.flat, best_inner.flat),
                            {e: np.where(better, in_c.brackets[e], b)
                             for e, b in best_inner.brackets.items()})
    return best_idx, best_r, best_inner


def _rounding_allowance(T: SystemTables, m: int) -> float:
    """Largest drop of the level-m residual explained by grid rounding.

    The inner unknowns below position m-1 are grid points chosen by the inf
    rule, so each may overshoot its continuous solution by up to one node in
    either direction; the residual can then fall by the matching CDF jumps.
    On estimated tables the overshoot can span a flat stretch of a step CDF,
    so one DKW band of each inner term is added.
    """
    total = 0.0
    for j in range(m - 1):
        tab = T.out_tables.get((m, j))
        if tab is None:
            continue
        if tab.values.size > 1:
            total += 2.0 * float(np.max(np.diff(tab.values))) * tab.probability
        # on estimated tables the inner overshoot is driven by sampling noise
        noise = tab.dkw()
        if noise is not None:
            total += noise * tab.probability
    return total / T.p_in(m) + MONOTONE_SLACK


def _check_monotone(level: int, mids: NDArray, rs: NDArray, allowance: float) -> None:
    order = np.argsort(mids, axis=0, kind="stable")
    m_sorted = np.take_along_axis(mids, order, axis=0)
    r_sorted = np.take_along_axis(rs, order, axis=0)
    same = np.diff(m_sorted, axis=0) == 0
    drop = (np.diff(r_sorted, axis=0) < -allowance) & ~same
    if np.any(drop):
        cols = np.flatnonzero(drop.any(axis=0))
        raise MonotoneBracketViolation(
            f"residual of equation {level} decreases along the search variable "
            f"at {cols.size} node(s); the complier tables are inconsistent",
            {"level": level, "nodes": cols.tolist()[:20]})


@dataclass(frozen=True)
class SolveResult:
    """Solutions at a batch of y_f nodes (arrays indexed by node)."""

    order: tuple[int, ...]
    y_f_index: NDArray
    indices: NDArray          # (k+1, B) grid indices per position
    images: NDArray           # (k+1, B) grid values per position
    residuals: NDArray        # (k, B) equation residuals in CDF units
    increments: NDArray       # (k, B) certificate bound per equation
    saturated: NDArray
    low: NDArray
    flat: NDArray
    edge: NDArray             # some unknown sits on the first or last grid node
    uncertified: NDArray      # residual exceeds the one-step certificate

    @property
    def valid(self) -> NDArray:
        return ~(self.saturated | self.low | self.edge | self.uncertified)

    def image(self, t: int) -> NDArray:
        return self.images[self.order.index(t)]


def _certificate(T: SystemTables, ys: list) -> NDArray:
    """One grid-step increment per equation.

    Sum over the equation's terms of the largest one-node jump of each
    weighted CDF: the residual a grid solution can carry when every unknown
    is allowed to sit one node off its continuous solution.
    """
    bounds = []
    shape = np.shape(ys[T.k])
    for i in range(1, T.k + 1):
        tabs = [T.in_tables[i]] + [tab for (ii, _), tab in T.out_tables.items() if ii == i]
        b = sum(float(np.max(np.diff(tab.values), initial=0.0)) * tab.probability for tab in tabs)
        bounds.append(np.full(shape, b))
    return np.array(bounds)


def _pack(T: SystemTables, lvl: _Level, yk: NDArray, tol: float) -> SolveResult:
    ys = [np.asarray(a) for a in lvl.ys]
    idx = np.stack(ys)
    res = T.residuals(ys)
    inc = _certificate(T, ys)
    inc = np.maximum(inc, np.stack([np.abs(lvl.brackets[i]) for i in range(1, T.k + 1)]))
    certified = np.all(np.abs(res) <= np.maximum(tol, inc) + TIE_SLACK, axis=0)
    unknown = np.delete(idx, T.k, axis=0)
    edge = np.any((unknown == 0) | (unknown == T.n - 1), axis=0)
    return SolveResult(T.order, yk, idx, T.grid[idx], res, inc,
                       lvl.saturated, lvl.low, lvl.flat, edge, ~certified)


def solve_nodes(T: SystemTables, yk_index, tol: float = 1e-8, check: bool = True) -> SolveResult:
    """Nested monotone bisection at every fixed-position grid index given."""
    yk = np.atleast_1d(np.asarray(yk_index, dtype=np.int64))
    ys = [None] * (T.k + 1)
    ys[T.k] = yk
    lvl = _solve_level(T, T.k, ys, check)
    return _pack(T, lvl, yk, tol)


def _node_of(T: SystemTables, y_f: float) -> int:
    g = T.grid
    if not g[0] <= y_f <= g[-1]:
        raise DomainEmpty(f"y_f={y_f} lies outside the grid [{g[0]:.6g}, {g[-1]:.6g}]")
    return int(np.searchsorted(g, y_f, side="right") - 1)


def _raise_flags(res: SolveResult, y_f: float):
    if res.uncertified[0] and not (res.saturated[0] or res.low[0]):
        raise NoSolutionOnGrid(
            f"no grid point at y_f={y_f} meets the residual certificate",
            best=res.images[:, 0], residuals=res.residuals[:, 0])
    if res.saturated[0]:
        raise NoSolutionOnGrid(f"saturated at y_f={y_f}: the equations cannot be met inside the grid",
                               best=res.images[:, 0], residuals=res.residuals[:, 0])
    if res.low[0]:
        raise NoSolutionOnGrid(f"solution at y_f={y_f} lies below the grid",
                               best=res.images[:, 0], residuals=res.residuals[:, 0])


def solve_general(tables: SystemTables, y_f: float, tol: float = 1e-8,
                  allow_flags: bool = False) -> dict[int, float]:
    """phi_{K,t}(y_f) for every treatment t, K the fixed treatment."""
    if tables.k == 1:
        return solve_binary_point(tables, y_f)
    res = solve_nodes(tables, [_node_of(tables, y_f)], tol)
    if not allow_flags:
        _raise_flags(res, y_f)
    out = {t: float(res.image(t)[0]) for t in tables.order}
    out[tables.fixed_treatment] = float(y_f)
    return out


def solve_k2(tables: SystemTables, y_f: float, tol: float = 1e-8,
             allow_flags: bool = False) -> tuple[float, float]:
    """Closed form for two identifying pairs.

    Scans every grid candidate for the middle position and takes the first
    one at which the second equation is met, with the first position given
    explicitly by the base quantile.  Returns (image at position 1, image at
    position 0); for the canonical layout that is (phi_{2,1}, phi_{2,0}).
    """
    if tables.k != 2:
        raise ValueError("solve_k2 needs exactly two identifying pairs")
    res = solve_k2_nodes(tables, [_node_of(tables, y_f)], tol)
    if not allow_flags:
        _raise_flags(res, y_f)
    return float(res.images[1, 0]), float(res.images[0, 0])


def solve_k2_nodes(T: SystemTables, yk_index, tol: float = 1e-8) -> SolveResult:
    yk = np.atleast_1d(np.asarray(yk_index, dtype=np.int64))
    n = T.n
    cand = np.broadcast_to(np.arange(n)[None, :], (yk.size, n))
    y2 = np.broadcast_to(yk[:, None], (yk.size, n))
    base = _base_level(T, [None, cand, y2])
    r = _level_residual(T, 2, base)
    ok = r >= -TIE_SLACK
    hit = ok.any(axis=1)
    idx1 = np.where(hit, np.argmax(ok, axis=1), n - 1)
    rows = np.arange(yk.size)
    fin = _base_level(T, [None, idx1, yk])
    r_idx = r[rows, idx1]
    r_next = r[rows, np.minimum(idx1 + 1, n - 1)]
    flat = fin.flat | ((idx1 < n - 1) & (np.abs(r_next - r_idx) <= TIE_SLACK))
    r_one = r[:, min(1, n - 1)]
    low = fin.low | ((idx1 == 0) & (r_idx > np.maximum(r_one - r_idx, 1e-8) + TIE_SLACK))
    r_prev = r[rows, np.maximum(idx1 - 1, 0)]
    brackets = {1: fin.brackets[1],
                2: np.where(idx1 > 0, r_idx - r_prev, np.abs(r_idx)) * T.p_in(2)}
    lvl = _Level([fin.ys[0], idx1, yk], ~hit | fin.saturated, low, flat, brackets)
    return _pack(T, lvl, yk, tol)


# ---------------------------------------------------------------------------
# binary case


def solve_binary(tables: SystemTables) -> CounterfactualMap:
    """phi_{s,r}(y) = Q_{Y_r|C}(F_{Y_s|C}(y)) with s the sign treatment."""
    if tables.k != 1:
        raise ValueError("solve_binary needs a single identifying pair")
    m, flags = _binary_images(tables)
    keep = ~flags["saturated"]
    grid = tables.grid[keep]
    images, changed = strictify(m[keep])
    if changed:
        log.warning("binary map: %d tied images spread to keep the map invertible", changed)
    return CounterfactualMap(tables.order[1], tables.order[0], grid, images)


def _binary_images(T: SystemTables):
    f_in = T.f_in(1)
    base = T.out_tables[(1, 0)].cdf
    taus = np.clip(f_in, 1e-15, 1 - 1e-15)
    q, sat = generalized_inverse(base, taus, with_flag=True)
    sat = sat | (f_in >= 1 - 1e-15) | (f_in <= 0)
    widths = np.array([base.flat_width(v) for v in f_in])
    return np.asarray(q), {"saturated": sat, "flat": widths > 0}


def solve_binary_point(T: SystemTables, y_f: float) -> dict[int, float]:
    i = _node_of(T, y_f)
    q, flags = _binary_images(T)
    if flags["saturated"][i]:
        raise NoSolutionOnGrid(f"saturated at y_f={y_f}")
    return {T.order[1]: float(y_f), T.order[0]: float(q[i])}


# ---------------------------------------------------------------------------
# sub-node refinement
#
# The node solve rounds every unknown up to the next grid node, which biases
# the maps by about half a grid step.  Refinement redoes the nested solve with
# the tables read as piecewise-linear CDFs, bisecting near the node solution.

REFINE_ITERS = 40


def _lin(tab, y):
    return np.interp(y, tab.grid, tab.values)


def _lin_inverse(grid, values, arg):
    """Inf point of the linear interpolant at level arg, clamped to the grid."""
    n = grid.size
    i = np.searchsorted(values, arg, side="left")
    i = np.clip(i, 1, n - 1)
    lo, hi = values[i - 1], values[i]
    gap = hi - lo
    frac = np.where(gap > 0, (arg - lo) / np.where(gap > 0, gap, 1.0), 1.0)
    y = grid[i - 1] + np.clip(frac, 0.0, 1.0) * (grid[i] - grid[i - 1])
    return np.clip(y, grid[0], grid[-1])


def _cont_rhs(T, i, ys):
    acc = 0.0
    for j in range(T.k + 1):
        if j != i and (i, j) in T.out_tables:
            tab = T.out_tables[(i, j)]
            acc = acc + _lin(tab, ys[j]) * tab.probability
    return acc


def _cont_level(T, m, ys, bracket=None):
    if m == 1:
        num = _lin(T.in_tables[1], ys[1]) * T.p_in(1)
        for j in range(2, T.k + 1):
            if (1, j) in T.out_tables:
                tab = T.out_tables[(1, j)]
                num = num - _lin(tab, ys[j]) * tab.probability
        base = T.out_tables[(1, 0)]
        out = list(ys)
        out[0] = _lin_inverse(T.grid, base.values, num / base.probability)
        return out
    shape = np.shape(ys[m])
    if bracket is None:
        a = np.full(shape, T.grid[0])
        b = np.full(shape, T.grid[-1])
    else:
        a, b = bracket
    out = None
    for _ in range(REFINE_ITERS):
        mid = 0.5 * (a + b)
        trial = list(ys)
        trial[m - 1] = mid
        inner = _cont_level(T, m - 1, trial)
        r = _cont_rhs(T, m, inner) / T.p_in(m) - _lin(T.in_tables[m], ys[m])
        ok = r >= 0
        b = np.where(ok, mid, b)
        a = np.where(ok, a, mid)
    trial = list(ys)
    trial[m - 1] = b
    out = _cont_level(T, m - 1, trial)
    out[m - 1] = b
    return out


def refine_solution(T: SystemTables, sol: SolveResult) -> NDArray:
    """Sub-node images (k+1, B) for the nodes of a node solution.

    Unknowns that the continuous solve moves more than one grid step away from
    the node solution keep their node values.
    """
    g = T.grid
    idx = sol.indices
    ys = [None] * (T.k + 1)
    ys[T.k] = g[idx[T.k]]
    if T.k == 1:
        out = _cont_level(T, 1, ys)
    else:
        # inner rounding can leave the node solution a node off the continuous
        # root on either side, so the bracket spans two steps each way
        top = idx[T.k - 1]
        bracket = (g[np.maximum(top - 2, 0)], g[np.minimum(top + 2, g.size - 1)])
        out = _cont_level(T, T.k, ys, bracket)
    images = np.stack([np.broadcast_to(np.asarray(v, dtype=float), idx[0].shape) for v in out])
    step = np.max(np.diff(g)) if g.size > 1 else 0.0
    far = np.abs(images - sol.images) > step * (1 + 1e-9)
    return np.where(far, sol.images, images)


# ---------------------------------------------------------------------------
# map family


@dataclass
class MapFamily:
    maps: dict                       # (s, t) -> CounterfactualMap
    domains: dict                    # t -> grid on which phi_{t,.} is tabulated
    order: tuple[int, ...]
    fixed_treatment: int
    excluded_nodes: int = 0
    flat_nodes: int = 0
    repaired: dict = field(default_factory=dict)   # t -> nodes changed by strictify
    warnings: list = field(default_factory=list)
    solution: SolveResult | None = None

    def __getitem__(self, key) -> CounterfactualMap:
        return self.maps[key]

    @property
    def treatments(self) -> tuple[int, ...]:
        return tuple(sorted(self.domains))


def build_all_maps(tables: SystemTables, grid=None, tol: float = 1e-8,
                   method: str = "bisection", refine: bool = True) -> MapFamily:
    """phi_{K,j} tabulated node by node; all other maps by inversion/composition.

    With ``refine`` the certified node solutions are moved to sub-node
    precision (see ``refine_solution``).
    """
    T = tables
    if grid is not None and not np.array_equal(np.asarray(grid, dtype=float), T.grid):
        raise ValueError("tables were built on a different grid")
    K = T.fixed_treatment
    warnings: list[str] = []
    sol = None
    if T.k == 1:
        q, flags = _binary_images(T)
        keep = ~flags["saturated"]
        raw = {T.order[0]: q[keep]}
        dom = T.grid[keep]
        excluded = int((~keep).sum())
        flat = int(flags["flat"][keep].sum())
    else:
        nodes = np.arange(T.n)
        sol = solve_k2_nodes(T, nodes, tol) if method == "exhaustive" else solve_nodes(T, nodes, tol)
        keep = sol.valid
        dom = T.grid[keep]
        images = refine_solution(T, sol) if refine else sol.images
        raw = {t: images[T.position(t)][keep] for t in T.order if t != K}
        excluded = int((~keep).sum())
        n_unc = int((sol.uncertified & ~(sol.saturated | sol.low | sol.edge)).sum())
        if n_unc:
            warnings.append(f"NoSolutionOnGrid at {n_unc} node(s): residual certificate "
                            f"not met, nodes excluded")
        flat = int(sol.flat[keep].sum())
    if dom.size < 2:
        raise DomainEmpty("fewer than two grid nodes admit a solution")
    if excluded:
        warnings.append(f"{excluded} grid node(s) excluded: saturated, below-grid or edge solution")
    if flat:
        warnings.append(f"FlatRegion at {flat} node(s): images are inf points of flat stretches")

    maps, domains, repaired = {}, {K: dom}, {}
    from_k = {}
    for t, img in raw.items():
        fixed, changed = strictify(img)
        if changed:
            repaired[t] = changed
            warnings.append(f"NonMonotoneSolution: phi_{K},{t} repaired at {changed} node(s)")
            log.warning("phi_%d,%d not strictly increasing; %d node(s) repaired", K, t, changed)
        from_k[t] = CounterfactualMap(K, t, dom, fixed)
        domains[t] = from_k[t].images
    to_k = {t: invert_map(mp) for t, mp in from_k.items()}
    for s in domains:
        maps[(s, s)] = identity_map(s, domains[s])
    for t in from_k:
        maps[(K, t)] = from_k[t]
        maps[(t, K)] = to_k[t]
    for s in from_k:
        for t in from_k:
            if s != t:
                maps[(s, t)] = compose_maps(to_k[s], from_k[t])
    return MapFamily(maps, domains, T.order, K, excluded, flat, repaired, warnings, sol)


def spec_from_pairs(k: int, relations) -> MonotonicitySpec:
    rels = tuple(relations)
    return MonotonicitySpec(k, rels, tuple(range(len(rels))) if len(rels) == k else ())


def pairs_to_spec(k: int, triples) -> MonotonicitySpec:
    """(z_in, z_out, sign) triples to a spec using all of them."""
    rels = [PairRelation.from_sign(zi, zo, s, k) for zi, zo, s in triples]
    return spec_from_pairs(k, rels)

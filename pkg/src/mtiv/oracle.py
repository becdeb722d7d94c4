"""Ground truth for validating the pipeline.

Nothing here calls the counterfactual solver.  ``grid_solve`` works on the
moment system directly, ``analytic_phi`` composes the outcome model's own
quantile and distribution functions, and ``latent_complier_stats`` counts
units using their potential treatments.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .compliers import PropensityMatrix, make_cells
from .dgp import Dataset, DgpConfig, OutcomeFamily
from .errors import GridTooLarge, NoLatentData, OutsideSupport, TauOutOfRange

MAX_CANDIDATES = 256 ** 3
MAX_BOXES = 2_000_000


@dataclass
class GridSolveResult:
    tau: float
    solutions: NDArray           # (m, k+1) grid vectors with max |Pi| <= tol
    best: NDArray                # residual-minimizing vector
    best_residual: float
    tol: float
    saturated: bool
    exhaustive: bool
    visited: int                 # candidates (k <= 2) or boxes (k >= 3) examined


def _grids(grid, k1: int) -> list[NDArray]:
    if isinstance(grid, (list, tuple)) and len(grid) == k1 and np.ndim(grid[0]) == 1:
        return [np.asarray(g, dtype=float) for g in grid]
    g = np.asarray(grid, dtype=float)
    return [g] * k1


def _weighted(cells, p: PropensityMatrix, grids) -> list[NDArray]:
    """A[t][z, i] = F(g_t[i] | t, z) p_t(z)."""
    m = len(p.z_labels)
    out = []
    for t, g in enumerate(grids):
        a = np.zeros((m, g.size))
        for z in range(m):
            if p[z, t] > 0:
                a[z] = np.asarray(cells.cdf(t, z, g), dtype=float) * p[z, t]
        out.append(a)
    return out


def default_tolerance(weighted) -> float:
    """Largest one-node change of any moment entry when every coordinate moves one node."""
    jumps = [np.max(np.diff(a, axis=1), axis=1) if a.shape[1] > 1 else np.zeros(a.shape[0])
             for a in weighted]
    return float(np.max(np.sum(jumps, axis=0)))


def grid_solve(tau: float, cells, grid, p: PropensityMatrix | None = None,
               tol: float | None = None, max_candidates: int = MAX_CANDIDATES) -> GridSolveResult:
    """All grid vectors solving the moment system within tol.

    Exhaustive enumeration for k <= 2.  For k >= 3 a branch-and-bound over
    boxes of grid indices; every moment entry is nondecreasing in every
    coordinate, so a box is discarded only when its corner values prove that
    no point inside can meet the tolerance.
    """
    if not 0 < tau < 1:
        raise TauOutOfRange(f"tau must lie in (0, 1), got {tau}")
    cells = make_cells(cells)
    p = cells.propensity if p is None else p
    k1 = p.k + 1
    grids = _grids(grid, k1)
    A = _weighted(cells, p, grids)
    tol = default_tolerance(A) if tol is None else float(tol)
    total = int(np.prod([g.size for g in grids], dtype=object))
    if k1 <= 3:
        if total > max_candidates:
            raise GridTooLarge(f"{total} candidate vectors exceed the cap of {max_candidates}")
        sols, best, best_r = _enumerate(A, tau, tol)
        exhaustive, visited = True, total
    else:
        sols, best, best_r, visited = _branch_and_bound(A, tau, tol)
        exhaustive = False
    sizes = [g.size for g in grids]
    saturated = len(sols) == 0 and any(best[t] == sizes[t] - 1 for t in range(k1))
    vec = lambda idx: np.array([grids[t][i] for t, i in enumerate(idx)])
    solutions = np.array([vec(s) for s in sols]) if sols else np.empty((0, k1))
    return GridSolveResult(float(tau), solutions, vec(best), best_r, tol, saturated,
                           exhaustive, visited)


def _enumerate(A, tau, tol):
    k1 = len(A)
    if k1 == 1:
        r = np.abs(A[0] - tau).max(axis=0)
        ok = np.flatnonzero(r <= tol)
        b = int(np.argmin(r))
        return [(int(i),) for i in ok], (b,), float(r[b])
    if k1 == 2:
        r = np.abs(A[0][:, :, None] + A[1][:, None, :] - tau).max(axis=0)
        ok = np.argwhere(r <= tol)
        b = np.unravel_index(int(np.argmin(r)), r.shape)
        return [tuple(int(x) for x in s) for s in ok], tuple(int(x) for x in b), float(r[b])
    # k1 == 3: one slab per y_0 node keeps memory bounded
    sols, best, best_r = [], None, np.inf
    s12 = A[1][:, :, None] + A[2][:, None, :]
    for i in range(A[0].shape[1]):
        r = np.abs(A[0][:, i, None, None] + s12 - tau).max(axis=0)
        for j, l in np.argwhere(r <= tol):
            sols.append((i, int(j), int(l)))
        b = np.unravel_index(int(np.argmin(r)), r.shape)
        if r[b] < best_r:
            best_r, best = float(r[b]), (i, int(b[0]), int(b[1]))
    return sols, best, best_r


def _branch_and_bound(A, tau, tol):
    k1 = len(A)
    sizes = [a.shape[1] for a in A]
    stack = [(tuple([0] * k1), tuple(s - 1 for s in sizes))]
    sols, best, best_r, visited = [], None, np.inf, 0
    while stack:
        lo, hi = stack.pop()
        visited += 1
        if visited > MAX_BOXES:
            raise GridTooLarge(f"branch-and-bound exceeded {MAX_BOXES} boxes; tolerance too loose")
        low = sum(A[t][:, lo[t]] for t in range(k1)) - tau
        high = sum(A[t][:, hi[t]] for t in range(k1)) - tau
        if np.any(low > tol) or np.any(high < -tol):
            continue
        if lo == hi:
            r = float(np.max(np.abs(low)))
            sols.append(lo)
            if r < best_r:
                best_r, best = r, lo
            continue
        d = int(np.argmax([h - l for l, h in zip(lo, hi)]))
        mid = (lo[d] + hi[d]) // 2
        stack.append((lo, hi[:d] + (mid,) + hi[d + 1:]))
        stack.append((lo[:d] + (mid + 1,) + lo[d + 1:], hi))
    if best is None:
        best, best_r = _coordinate_descent(A, tau)
    return sols, best, best_r, visited


def _coordinate_descent(A, tau):
    """Residual minimizer when nothing meets the tolerance (diagnostic only)."""
    k1 = len(A)
    idx = [a.shape[1] // 2 for a in A]

    def resid(ix):
        return float(np.max(np.abs(sum(A[t][:, ix[t]] for t in range(k1)) - tau)))
    cur = resid(idx)
    improved = True
    while improved:
        improved = False
        for t in range(k1):
            for step in (-1, 1):
                trial = list(idx)
                trial[t] = min(max(trial[t] + step, 0), A[t].shape[1] - 1)
                r = resid(trial)
                if r < cur:
                    idx, cur, improved = trial, r, True
    return tuple(idx), cur


# ---------------------------------------------------------------------------
# analytic maps


def analytic_phi(config, s: int, t: int, y):
    """Q_{Y_t}(F_{Y_s}(y)) from the outcome model of a config or design."""
    model = config.outcome_model if hasattr(config, "outcome_model") else config
    fs, ft = model[s], model[t]
    y_arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y_arr)):
        raise OutsideSupport(f"y={y} is not finite")
    if fs.family == ft.family == "normal":
        (ls, ss), (lt, st) = fs.params, ft.params
        out = lt + (y_arr - ls) * (st / ss) if s != t else y_arr.copy()
    elif fs.family == ft.family == "exponential":
        if np.any(y_arr < 0):
            raise OutsideSupport(f"y={y} is below the support of Y_{s}")
        out = y_arr * (fs.params[0] / ft.params[0]) if s != t else y_arr.copy()
    else:
        u = np.asarray(fs.cdf(y_arr), dtype=float)
        if np.any(u <= 0) or np.any(u >= 1):
            raise OutsideSupport(f"y={y} is outside the interior support of Y_{s}")
        out = np.asarray(ft.ppf(u), dtype=float)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# latent complier statistics


@dataclass
class ComplierSet:
    pair: tuple[int, int]
    treatment: int
    members: NDArray             # unit indices
    count: int
    frequency: float

    def ecdf_values(self, values: NDArray) -> NDArray:
        return np.sort(values[self.members])


@dataclass
class IdentityCheck:
    name: str
    pair: tuple[int, int]
    holds: bool
    detail: str = ""


@dataclass
class LatentComplierStats:
    n: int
    sets: dict                   # (z, z', t) -> ComplierSet
    latent_counts: NDArray       # (m, k+1) units with D^t_z = 1
    identities: list = field(default_factory=list)
    rank_ks: dict = field(default_factory=dict)      # (z, z', t) -> (max KS, bound)

    def get(self, z: int, z2: int, t: int) -> ComplierSet:
        return self.sets[(z, z2, t)]

    def latent_propensity(self, z_labels) -> PropensityMatrix:
        return PropensityMatrix(self.latent_counts / self.n, z_labels,
                                np.full(self.latent_counts.shape[0], float(self.n)))

    @property
    def all_hold(self) -> bool:
        return all(c.holds for c in self.identities)


def ks_distance(a: NDArray, b: NDArray) -> float:
    a, b = np.sort(a), np.sort(b)
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def latent_complier_stats(data: Dataset, pairs=None, taus=(0.25, 0.5, 0.75),
                          min_size: int = 50) -> LatentComplierStats:
    """Exact complier sets and the identities linking them.

    ``pairs`` is a list of (z_in, z_out, sign) triples; the set identities are
    checked for each of them.
    """
    lat = data.latent
    if lat is None:
        raise NoLatentData("latent records are required")
    n, m, k1 = lat.t_pot.shape[0], lat.t_pot.shape[1], data.k + 1
    D = [[lat.t_pot[:, z] == t for t in range(k1)] for z in range(m)]
    counts = np.array([[int(D[z][t].sum()) for t in range(k1)] for z in range(m)])
    sets = {}
    for z, z2 in itertools.permutations(range(m), 2):
        for t in range(k1):
            mem = np.flatnonzero(~D[z][t] & D[z2][t])
            sets[(z, z2, t)] = ComplierSet((z, z2), t, mem, int(mem.size), mem.size / n)
    stats = LatentComplierStats(n, sets, counts)
    for zi, zo, s in pairs or ():
        _check_pair(stats, D, lat, zi, zo, s, k1, taus)
    for key, cs in sets.items():
        if cs.count < min_size:
            continue
        worst = max(ks_distance(lat.u[cs.members, a], lat.u[cs.members, b])
                    for a, b in itertools.combinations(range(k1), 2))
        stats.rank_ks[key] = (worst, 1.36 * np.sqrt(2.0 / cs.count))
    return stats


def _check_pair(stats, D, lat, zi, zo, s, k1, taus):
    into = stats.get(zo, zi, s).members
    parts = [stats.get(zi, zo, j).members for j in range(k1) if j != s]
    union = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    disjoint = union.size == np.unique(union).size
    equal = disjoint and np.array_equal(np.sort(union), into)
    stats.identities.append(IdentityCheck(
        "complier partition", (zi, zo), bool(equal),
        f"C^{s} from z={zo} to z={zi} vs union of {len(parts)} groups"))
    flows = True
    for j in range(k1):
        if j == s:
            continue
        two_way = np.flatnonzero(D[zi][s] & D[zo][j])
        flows &= np.array_equal(two_way, stats.get(zi, zo, j).members)
    stats.identities.append(IdentityCheck("two-way flow groups", (zi, zo), bool(flows),
                                          f"C^j equals {{D^{s}_in=1, D^j_out=1}}"))
    u = lat.u[:, s]
    ok = True
    for tau in taus:
        lhs = int(np.count_nonzero(u[into] <= tau))
        rhs = sum(int(np.count_nonzero(u[p] <= tau)) for p in parts)
        ok &= lhs == rhs
    stats.identities.append(IdentityCheck("rank-count balance", (zi, zo), bool(ok),
                                          f"taus {tuple(taus)}"))

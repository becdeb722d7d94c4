"""Propensities, complier probabilities and complier outcome CDFs.

Two interchangeable cell sources feed everything downstream:

* ``CellData`` holds the sorted outcomes of every (t, z) cell of a Dataset;
* ``AnalyticCells`` evaluates the exact cell CDFs of a ResponseTypeDesign.

Both expose ``cdf(t, z, y)``, ``propensity`` and ``z_weights``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .core import MonotoneCdf, SupportWindow, empirical_quantile, isotonize
from .dgp import Dataset, ResponseTypeDesign
from .errors import EmptyCell, LengthMismatch, WeakPair

DEFAULT_ETA = 0.01
DKW_DELTA = 0.01


@dataclass(frozen=True)
class PropensityMatrix:
    """p[z, t] = P(T = t | Z = z)."""

    values: NDArray
    z_labels: tuple[str, ...]
    counts: NDArray | None = None   # units per instrument value; None when exact

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise LengthMismatch("propensity matrix must be 2-d")
        if len(self.z_labels) != v.shape[0]:
            raise LengthMismatch("one label per instrument row")
        tol = 1e-12 if self.counts is None else 1e-9
        if np.any(np.abs(v.sum(axis=1) - 1) > tol) or np.any(v < -tol):
            raise ValueError("propensity rows must be probability vectors")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "z_labels", tuple(str(s) for s in self.z_labels))

    @property
    def exact(self) -> bool:
        return self.counts is None

    @property
    def k(self) -> int:
        return self.values.shape[1] - 1

    def __getitem__(self, idx):
        return self.values[idx]

    def diff(self, z1: int, z2: int) -> NDArray:
        """p(z1) - p(z2) across treatments."""
        return self.values[z1] - self.values[z2]

    @classmethod
    def from_array(cls, values, z_labels=None) -> "PropensityMatrix":
        values = np.asarray(values, dtype=float)
        labels = tuple(str(i) for i in range(values.shape[0])) if z_labels is None else z_labels
        return cls(values, labels, None)


def propensity_matrix(data: Dataset) -> PropensityMatrix:
    m, k1 = data.n_instruments, data.k + 1
    counts = np.zeros((m, k1))
    np.add.at(counts, (data.z, data.t), 1)
    n_z = counts.sum(axis=1)
    for z in range(m):
        if n_z[z] == 0:
            raise EmptyCell(data.z_labels[z], message=f"no units with z={data.z_labels[z]}")
    return PropensityMatrix(counts / n_z[:, None], data.z_labels, n_z)


# ---------------------------------------------------------------------------
# cell sources


class CellData:
    """Sorted outcome samples per (t, z) cell."""

    exact = False

    def __init__(self, data: Dataset):
        self.data = data
        self.k = data.k
        self.z_labels = data.z_labels
        self.propensity = propensity_matrix(data)
        self.n_z = self.propensity.counts.astype(int)
        self.z_weights = self.n_z / self.n_z.sum()
        self._cells = {}
        order = np.lexsort((data.y, data.t, data.z))
        ys, ts, zs = data.y[order], data.t[order], data.z[order]
        key = zs * (self.k + 1) + ts
        bounds = np.searchsorted(key, np.arange((self.k + 1) * len(self.z_labels) + 1))
        for z in range(len(self.z_labels)):
            for t in range(self.k + 1):
                c = z * (self.k + 1) + t
                self._cells[(t, z)] = ys[bounds[c]:bounds[c + 1]]

    def samples(self, t: int, z: int) -> NDArray:
        return self._cells[(t, z)]

    def size(self, t: int, z: int) -> int:
        return int(self._cells[(t, z)].size)

    def cdf(self, t: int, z: int, y) -> NDArray:
        x = self._cells[(t, z)]
        y = np.asarray(y, dtype=float)
        if x.size == 0:
            if self.propensity[z, t] > 0:
                raise EmptyCell(self.z_labels[z], t)
            return np.zeros_like(y)
        return np.searchsorted(x, y, side="right") / x.size

    def expect(self, t: int, z: int, g) -> float:
        """E[g(Y) | T=t, Z=z] by the sample mean."""
        x = self._cells[(t, z)]
        if x.size == 0:
            raise EmptyCell(self.z_labels[z], t)
        return float(np.mean(g(x)))

    def window(self, trim: float = 0.01) -> SupportWindow:
        """Union of the trimmed windows of all nonempty cells."""
        lo, hi = np.inf, -np.inf
        for x in self._cells.values():
            if x.size:
                lo = min(lo, empirical_quantile(x, trim))
                hi = max(hi, empirical_quantile(x, 1 - trim))
        return SupportWindow(lo, hi, trim)

    def observed_values(self) -> NDArray:
        return np.unique(self.data.y)


class AnalyticCells:
    """Exact cell CDFs of a response-type design."""

    exact = True

    def __init__(self, design: ResponseTypeDesign):
        self.design = design
        self.k = design.k
        self.z_labels = design.z_labels
        self.propensity = PropensityMatrix.from_array(design.propensity(), design.z_labels)
        self.z_weights = np.asarray(design.z_probs)
        self.n_z = None

    def cdf(self, t: int, z: int, y) -> NDArray:
        return self.design.cell_cdf(t, z, y)

    def pdf(self, t: int, z: int, y) -> NDArray:
        return self.design.cell_pdf(t, z, y)

    def expect(self, t: int, z: int, g, nodes: int = 4001) -> float:
        """E[g(Y) | T=t, Z=z] by quadrature in the rank variable."""
        if self.propensity[z, t] == 0:
            raise EmptyCell(self.z_labels[z], t)
        fam = self.design.outcome_model[t]
        member = self.design.types[:, z] == t
        g_idx = np.flatnonzero(member)
        w = self.design.masses[g_idx] / self.design.masses[g_idx].sum()
        u = (np.arange(nodes) + 0.5) / nodes
        dens = self.design.rank_pdf(g_idx, u) @ w
        return float(np.sum(g(fam.ppf(u)) * dens) / nodes)

    def window(self, trim: float = 0.01, nodes: int = 20001) -> SupportWindow:
        lo, hi = np.inf, -np.inf
        for t in range(self.k + 1):
            fam = self.design.outcome_model[t]
            y = fam.ppf(np.linspace(1e-6, 1 - 1e-6, nodes))
            for z in range(len(self.z_labels)):
                if self.propensity[z, t] == 0:
                    continue
                f = self.cdf(t, z, y)
                lo = min(lo, y[min(np.searchsorted(f, trim), nodes - 1)])
                hi = max(hi, y[min(np.searchsorted(f, 1 - trim), nodes - 1)])
        return SupportWindow(lo, hi, trim)


def make_cells(source) -> CellData | AnalyticCells:
    if isinstance(source, (CellData, AnalyticCells)):
        return source
    if isinstance(source, ResponseTypeDesign):
        return AnalyticCells(source)
    if isinstance(source, Dataset):
        return CellData(source)
    raise TypeError(f"cannot build cells from {type(source).__name__}")


def make_grid(cells, size: int = 512, trim: float = 0.01) -> NDArray:
    """Uniform grid over the estimation window; size 0 gives observed values."""
    win = cells.window(trim)
    if size == 0:
        if not isinstance(cells, CellData):
            raise ValueError("grid_size 0 needs data")
        y = cells.observed_values()
        return y[win.contains(y)]
    return win.uniform_grid(size)


# ---------------------------------------------------------------------------
# complier objects


@dataclass(frozen=True)
class ComplierTable:
    """F_{Y_t | C^t_{z, z'}} on a grid, with P(C^t_{z, z'})."""

    pair: tuple[int, int]           # (z, z'): compliers move into t going z -> z'
    treatment: int
    direction: str                  # "z-to-z'" as requested, or "z'-to-z" if flipped
    probability: float
    cdf: MonotoneCdf
    raw_top: float                  # raw plug-in value at the top of the grid
    effective_size: float | None = None

    def __post_init__(self):
        if not self.probability > 0:
            raise WeakPair(f"complier mass {self.probability} is not positive")

    @property
    def grid(self) -> NDArray:
        return self.cdf.grid

    @property
    def values(self) -> NDArray:
        return self.cdf.values

    def subcdf(self) -> NDArray:
        return self.cdf.values * self.probability

    def dkw(self, delta: float = DKW_DELTA) -> float | None:
        if self.effective_size is None:
            return None
        return dkw_bound(self.effective_size, delta)


def dkw_bound(n: float, delta: float = DKW_DELTA) -> float:
    return float(np.sqrt(np.log(2.0 / delta) / (2.0 * n)))


def complier_probability(p: PropensityMatrix, pair, t: int, eta: float = DEFAULT_ETA) -> float:
    """P(C^t_{z,z'}) = p_t(z') - p_t(z); WeakPair when not above eta."""
    z, z2 = pair
    diff = float(p[z2, t] - p[z, t])
    if diff <= eta:
        raise WeakPair(
            f"p_{t}({p.z_labels[z2]}) - p_{t}({p.z_labels[z]}) = {diff:.5f} is not above eta={eta}")
    return diff


def effective_size(p: PropensityMatrix, pair, t: int) -> float | None:
    """Sample size giving the same sup-norm noise as the complier CDF plug-in."""
    if p.counts is None:
        return None
    z, z2 = pair
    mass = p[z2, t] - p[z, t]
    var = p[z2, t] / p.counts[z2] + p[z, t] / p.counts[z]
    return float(mass ** 2 / var) if var > 0 else None


def complier_cdf(cells, pair, t: int, grid, eta: float = DEFAULT_ETA,
                 orient: bool = True) -> ComplierTable:
    """Plug-in complier CDF, isotonized after the signed difference.

    With ``orient`` the pair is flipped when the requested direction has
    negative mass.
    """
    cells = make_cells(cells)
    p = cells.propensity
    z, z2 = pair
    direction = "z-to-z'"
    if orient and p[z2, t] - p[z, t] < 0:
        z, z2 = z2, z
        direction = "z'-to-z"
    prob = complier_probability(p, (z, z2), t, eta)
    grid = np.asarray(grid, dtype=float)
    hi = cells.cdf(t, z2, grid) * p[z2, t] if p[z2, t] > 0 else np.zeros_like(grid)
    lo = cells.cdf(t, z, grid) * p[z, t] if p[z, t] > 0 else np.zeros_like(grid)
    raw = (hi - lo) / prob
    return ComplierTable((z, z2), t, direction, prob, isotonize(grid, raw), float(raw[-1]),
                         effective_size(p, (z, z2), t))

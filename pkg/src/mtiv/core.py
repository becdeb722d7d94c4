"""Foundational numeric types: step CDFs, generalized inverses, tabulated maps.

All containers are frozen dataclasses over read-only numpy arrays.  CDFs are
right-continuous step functions of the grid; counterfactual maps are
piecewise-linear between grid nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import isotonic_regression
from numpy.typing import ArrayLike, NDArray

from .errors import (
    DegenerateSupport,
    EmptySample,
    LengthMismatch,
    NonFinite,
    NotStrictlyIncreasing,
    RangeEscape,
    TauOutOfRange,
    TreatmentMismatch,
)

# Slack for comparing CDF levels against tau; absorbs k/n rounding.
TIE_SLACK = 1e-12


def _frozen(a: ArrayLike, dtype=float) -> NDArray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MonotoneCdf:
    """Nondecreasing tabulated CDF, right-continuous between grid nodes."""

    grid: NDArray[np.float64]
    values: NDArray[np.float64]

    def __post_init__(self):
        grid = _frozen(self.grid)
        values = _frozen(self.values)
        if grid.shape != values.shape or grid.ndim != 1:
            raise LengthMismatch("grid and values must be 1-d of equal length")
        if grid.size == 0:
            raise EmptySample("empty CDF")
        if np.any(np.diff(grid) < 0):
            raise ValueError("grid must be sorted")
        if np.any(np.diff(values) < 0) or values[0] < 0 or values[-1] > 1:
            raise ValueError("values must be nondecreasing in [0, 1]")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(self.grid, y, side="right") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], 0.0)
        return float(out) if out.ndim == 0 else out

    def quantile(self, tau, with_flag: bool = False):
        return generalized_inverse(self, tau, with_flag=with_flag)

    def flat_width(self, tau: float) -> float:
        """Width of the grid stretch on which the CDF sits exactly at level tau."""
        hit = np.abs(self.values - tau) <= TIE_SLACK
        if hit.sum() < 2:
            return 0.0
        nodes = self.grid[hit]
        return float(nodes[-1] - nodes[0])


@dataclass(frozen=True)
class Ecdf(MonotoneCdf):
    """Empirical CDF: mass 1/n per observation, ties merged."""

    n: int = 0

    @property
    def support_points(self) -> NDArray[np.float64]:
        return self.grid


@dataclass(frozen=True)
class SupportWindow:
    lower: float
    upper: float
    trim_fraction: float = 0.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DegenerateSupport(f"lower {self.lower} !< upper {self.upper}")

    def contains(self, y) -> NDArray[np.bool_]:
        y = np.asarray(y, dtype=float)
        return (y >= self.lower) & (y <= self.upper)

    def union(self, other: "SupportWindow") -> "SupportWindow":
        return SupportWindow(min(self.lower, other.lower), max(self.upper, other.upper),
                             self.trim_fraction)

    def intersect(self, other: "SupportWindow") -> "SupportWindow":
        return SupportWindow(max(self.lower, other.lower), min(self.upper, other.upper),
                             self.trim_fraction)

    def uniform_grid(self, nodes: int) -> NDArray[np.float64]:
        return np.linspace(self.lower, self.upper, nodes)


@dataclass(frozen=True)
class CounterfactualMap:
    """Tabulated map y -> phi_{s,t}(y), linear between nodes, clamped outside."""

    source_treatment: int
    target_treatment: int
    grid: NDArray[np.float64]
    images: NDArray[np.float64]

    def __post_init__(self):
        grid = _frozen(self.grid)
        images = _frozen(self.images)
        if grid.shape != images.shape or grid.ndim != 1 or grid.size == 0:
            raise LengthMismatch("grid and images must be nonempty 1-d of equal length")
        if np.any(np.diff(grid) <= 0):
            raise NotStrictlyIncreasing("map grid must be strictly increasing")
        if self.source_treatment == self.target_treatment and not np.array_equal(grid, images):
            raise ValueError("a map from a treatment to itself must be the identity")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "images", images)

    @property
    def is_identity(self) -> bool:
        return np.array_equal(self.grid, self.images)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def __call__(self, y):
        return self.evaluate(y)

    def evaluate(self, y, return_clamped: bool = False):
        y = np.asarray(y, dtype=float)
        out = np.interp(y, self.grid, self.images)
        if return_clamped:
            clamped = int(np.count_nonzero((y < self.grid[0]) | (y > self.grid[-1])))
            return out, clamped
        return float(out) if out.ndim == 0 else out


def identity_map(t: int, grid: ArrayLike) -> CounterfactualMap:
    grid = np.asarray(grid, dtype=float)
    return CounterfactualMap(t, t, grid, grid.copy())


def build_ecdf(samples: Sequence[float] | NDArray) -> Ecdf:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptySample("cannot build an ECDF from an empty sample")
    if not np.all(np.isfinite(x)):
        raise NonFinite("sample contains NaN or infinite values")
    support, counts = np.unique(x, return_counts=True)
    values = np.cumsum(counts) / x.size
    values[-1] = 1.0
    return Ecdf(support, values, n=int(x.size))


def generalized_inverse(cdf: MonotoneCdf, tau, with_flag: bool = False):
    """inf{y on the grid : cdf(y) >= tau}.

    When no grid point reaches tau the largest grid point is returned and,
    with ``with_flag=True``, the saturation flag is set.
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any((tau_arr <= 0) | (tau_arr >= 1)) or np.any(np.isnan(tau_arr)):
        raise TauOutOfRange(f"tau must lie in (0, 1), got {tau}")
    idx = np.searchsorted(cdf.values, tau_arr - TIE_SLACK, side="left")
    saturated = idx >= cdf.values.size
    out = cdf.grid[np.minimum(idx, cdf.values.size - 1)]
    if out.ndim == 0:
        out, saturated = float(out), bool(saturated)
    return (out, saturated) if with_flag else out


def isotonize(grid: ArrayLike, raw_values: ArrayLike) -> MonotoneCdf:
    """Running maximum of the raw values, clipped to [0, 1]."""
    grid = np.asarray(grid, dtype=float)
    raw = np.asarray(raw_values, dtype=float)
    if grid.shape != raw.shape:
        raise LengthMismatch(f"grid has {grid.size} nodes but {raw.size} values given")
    values = np.clip(np.maximum.accumulate(raw), 0.0, 1.0) if raw.size else raw
    return MonotoneCdf(grid, values)


def empirical_quantile(sorted_x: NDArray, tau: float) -> float:
    """Inf-convention quantile of an already sorted sample (tau in [0, 1])."""
    n = sorted_x.size
    if tau <= 0:
        return float(sorted_x[0])
    # smallest i with i/n >= tau
    i = int(np.ceil(tau * n - 1e-9))
    return float(sorted_x[min(max(i, 1), n) - 1])


def trim_support(samples: Sequence[float] | NDArray, trim_fraction: float = 0.01) -> SupportWindow:
    if not 0 <= trim_fraction < 0.5:
        raise ValueError("trim_fraction must lie in [0, 0.5)")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise EmptySample("cannot trim an empty sample")
    lower = empirical_quantile(x, trim_fraction)
    upper = empirical_quantile(x, 1.0 - trim_fraction)
    return SupportWindow(lower, upper, trim_fraction)


def compose_maps(a: CounterfactualMap, b: CounterfactualMap) -> CounterfactualMap:
    """phi_{t,r} o phi_{s,t} tabulated on a's grid."""
    if a.target_treatment != b.source_treatment:
        raise TreatmentMismatch(
            f"cannot compose {a.source_treatment}->{a.target_treatment} "
            f"with {b.source_treatment}->{b.target_treatment}")
    lo, hi = b.span
    pad = 1e-9 * max(1.0, abs(lo), abs(hi))
    if a.images.min() < lo - pad or a.images.max() > hi + pad:
        raise RangeEscape(
            f"images of {a.source_treatment}->{a.target_treatment} span "
            f"[{a.images.min():.6g}, {a.images.max():.6g}] outside [{lo:.6g}, {hi:.6g}]")
    if b.is_identity:
        images = a.images
    else:
        images = np.interp(a.images, b.grid, b.images)
    source, target = a.source_treatment, b.target_treatment
    if source == target:
        # round trip: the composite is the identity by the group law
        return identity_map(source, a.grid)
    return CounterfactualMap(source, target, a.grid, images)


def invert_map(a: CounterfactualMap) -> CounterfactualMap:
    if np.any(np.diff(a.images) <= 0):
        raise NotStrictlyIncreasing(
            f"map {a.source_treatment}->{a.target_treatment} is not strictly increasing")
    return CounterfactualMap(a.target_treatment, a.source_treatment, a.images, a.grid)


def strictify(images: ArrayLike) -> tuple[NDArray[np.float64], int]:
    """Repair a tabulated map into a strictly increasing one.

    Least-squares isotonic fit first (a running maximum would drag noisy maps
    upward); each run of tied images is then spread linearly toward the next
    distinct value (a trailing run gets a tiny ramp).  Returns the repaired
    images and the number of nodes changed.
    """
    raw = np.asarray(images, dtype=float)
    if raw.size and np.any(np.diff(raw) < 0):
        out = np.maximum.accumulate(np.asarray(isotonic_regression(raw).x, dtype=float))
    else:
        out = raw.copy()
    n = out.size
    scale = max(1.0, float(np.max(np.abs(out)))) if n else 1.0
    tie = 1e-12 * scale
    i = 0
    while i < n:
        j = i
        while j + 1 < n and out[j + 1] - out[i] <= tie:
            j += 1
        if j > i:
            v = out[i]
            if j + 1 < n:
                w = out[j + 1]
                out[i:j + 1] = v + (w - v) * np.arange(j - i + 1) / (j - i + 1)
            else:
                out[i:j + 1] = v + 1e-9 * scale * np.arange(j - i + 1)
        i = j + 1
    changed = int(np.count_nonzero(out != raw))
    return out, changed


# ---------------------------------------------------------------------------
# monotonicity structure on instrument pairs

LE = "<="
GE = ">="


@dataclass(frozen=True)
class PairRelation:
    """Per-treatment inequality directions D^t_{z1} (<= or >=) D^t_{z2}."""

    z1: int
    z2: int
    directions: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "directions", tuple(self.directions))
        if any(d not in (LE, GE) for d in self.directions):
            raise ValueError(f"directions must be '<=' or '>=', got {self.directions}")
        if self.z1 == self.z2:
            raise ValueError("a pair needs two distinct instrument values")
        if LE not in self.directions or GE not in self.directions:
            raise ValueError(f"pair ({self.z1},{self.z2}) has no compliers: "
                             f"directions {self.directions} all equal")

    @property
    def pair(self) -> tuple[int, int]:
        return (self.z1, self.z2)

    @property
    def sign_treatment(self) -> int | None:
        ge = [t for t, d in enumerate(self.directions) if d == GE]
        le = [t for t, d in enumerate(self.directions) if d == LE]
        if len(ge) == 1:
            return ge[0]
        if len(le) == 1:
            return le[0]
        return None

    def oriented(self) -> tuple[int, int]:
        """(z_in, z_out): the sign treatment is more likely at z_in."""
        s = self.sign_treatment
        if s is None:
            raise ValueError(f"pair ({self.z1},{self.z2}) has no sign treatment")
        return (self.z1, self.z2) if self.directions[s] == GE else (self.z2, self.z1)

    @classmethod
    def from_sign(cls, z_in: int, z_out: int, sign: int, k: int) -> "PairRelation":
        dirs = tuple(GE if t == sign else LE for t in range(k + 1))
        return cls(z_in, z_out, dirs)


@dataclass(frozen=True)
class MonotonicitySpec:
    """The monotonicity subset and the k pairs chosen for identification."""

    k: int
    pairs: tuple[PairRelation, ...]
    lambda_star: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "lambda_star", tuple(self.lambda_star))
        for rel in self.pairs:
            if len(rel.directions) != self.k + 1:
                raise ValueError("every pair needs one direction per treatment")
        if self.lambda_star:
            if len(self.lambda_star) != self.k:
                raise ValueError(f"lambda_star must hold {self.k} pairs")
            signs = [self.pairs[i].sign_treatment for i in self.lambda_star]
            if None in signs or len(set(signs)) != self.k:
                raise ValueError(f"lambda_star sign treatments {signs} are not distinct")

    @property
    def chosen(self) -> tuple[PairRelation, ...]:
        return tuple(self.pairs[i] for i in self.lambda_star)

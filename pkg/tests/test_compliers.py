import numpy as np
import pytest

from mtiv.compliers import (
    CellData,
    PropensityMatrix,
    complier_cdf,
    complier_probability,
    dkw_bound,
    effective_size,
    make_grid,
    propensity_matrix,
)
from mtiv.dgp import Dataset
from mtiv.errors import EmptyCell, WeakPair
from mtiv.oracle import latent_complier_stats


def _toy():
    y = np.array([0.0, 1.0, 2.0, 3.0, 0.5, 1.5, 2.5, 3.5])
    t = np.array([0, 0, 1, 1, 0, 1, 1, 1])
    z = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    return Dataset(y, t, z, 1, ("0", "1"))


def test_propensity_counts():
    p = propensity_matrix(_toy())
    assert p.values.tolist() == [[0.5, 0.5], [0.25, 0.75]]
    assert p.counts.tolist() == [4, 4]
    assert not p.exact
    assert p.diff(1, 0).tolist() == [-0.25, 0.25]


def test_complier_probability_and_weak_pair():
    p = PropensityMatrix.from_array([[0.5, 0.5], [0.25, 0.75]])
    assert complier_probability(p, (0, 1), 1) == 0.25
    with pytest.raises(WeakPair):
        complier_probability(p, (1, 0), 1)
    q = PropensityMatrix.from_array([[0.5, 0.5], [0.495, 0.505]])
    with pytest.raises(WeakPair):
        complier_probability(q, (0, 1), 1, eta=0.01)


def test_complier_cdf_toy_values():
    cells = CellData(_toy())
    grid = np.array([0.0, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5])
    tab = complier_cdf(cells, (0, 1), 1, grid, eta=0.0)
    # (F(.|1,1) * 0.75 - F(.|1,0) * 0.5) / 0.25, isotonized
    assert tab.probability == 0.25
    assert tab.values.tolist() == [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]


def test_complier_cdf_orients_pair():
    cells = CellData(_toy())
    grid = np.linspace(0, 4, 9)
    tab = complier_cdf(cells, (1, 0), 1, grid, eta=0.0)
    assert tab.pair == (0, 1) and tab.direction == "z'-to-z"


def test_empty_instrument_value():
    d = Dataset(np.array([1.0, 2.0]), np.array([0, 1]), np.array([0, 0]), 1, ("0", "1"))
    with pytest.raises(EmptyCell) as info:
        propensity_matrix(d)
    assert info.value.z == "1"


def test_complier_estimates_track_latent_sets(example_i2_data, example_i2_cells):
    """Estimated complier masses and CDFs track the brute-force latent sets."""
    cells = example_i2_cells
    grid = make_grid(cells, 256)
    st = latent_complier_stats(example_i2_data)
    p = cells.propensity
    for z, z2, t in [(0, 1, 1), (0, 2, 2)]:
        latent = st.get(z, z2, t)
        tab = complier_cdf(cells, (z, z2), t, grid)
        assert abs(tab.probability - latent.frequency) < 0.02
        y = np.sort(example_i2_data.latent.y[latent.members, t])
        ecdf = np.searchsorted(y, grid, side="right") / y.size
        assert np.max(np.abs(tab.values - ecdf)) < 2 * tab.dkw()
    assert effective_size(p, (0, 1), 1) > 0


def test_dkw_bound():
    assert dkw_bound(100, 0.05) == pytest.approx(np.sqrt(np.log(40) / 200))


def test_grid_covers_window(example_i2_cells):
    g = make_grid(example_i2_cells, 64, 0.01)
    w = example_i2_cells.window(0.01)
    assert g.size == 64 and g[0] == w.lower and g[-1] == w.upper


def test_analytic_cells_cdf(analytic_i2):
    y = np.linspace(-5, 7, 40)
    f = analytic_i2.cdf(2, 2, y)
    assert np.all(np.diff(f) >= -1e-12)
    assert analytic_i2.propensity.exact

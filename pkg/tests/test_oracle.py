import numpy as np
import pytest

from mtiv.compliers import AnalyticCells
from mtiv.dgp import OutcomeFamily, ResponseTypeDesign, preset, simulate
from mtiv.errors import OutsideSupport
from mtiv.oracle import analytic_phi, grid_solve, ks_distance, latent_complier_stats

# node-aligned grid containing 0, 1 and 2
CH_GRID = -3 + 0.04 * np.arange(201)


def test_grid_solve_finds_truth_on_section44(ch_cells):
    r = grid_solve(0.5, ch_cells, CH_GRID)
    assert r.exhaustive
    assert np.allclose(r.best, [0.0, 1.0, 2.0], atol=1e-9)
    truth = [tuple(np.round(s, 9)) for s in r.solutions]
    assert (0.0, 1.0, 2.0) in truth


def test_grid_solve_example_i2(analytic_i2):
    grid = -3 + 0.04 * np.arange(201)
    r = grid_solve(0.5, analytic_i2, grid)
    assert np.allclose(r.best, [0.0, 1.0, 2.0], atol=0.04 + 1e-9)


def test_grid_solve_k3_branch_and_bound():
    cfg = preset("example_I", 3)
    cells = AnalyticCells(ResponseTypeDesign.from_config(cfg, n=50_000))
    r = grid_solve(0.5, cells, np.linspace(-3, 6, 91))
    assert np.allclose(r.best, [0.0, 1.0, 2.0, 3.0], atol=0.1 + 1e-9)


def test_analytic_phi_group_laws(example_i2_config):
    y = np.linspace(-2, 2, 11)
    cfg = example_i2_config
    assert np.allclose(analytic_phi(cfg, 1, 1, y), y)
    assert np.allclose(analytic_phi(cfg, 0, 2, y), y + 2)
    assert np.allclose(analytic_phi(cfg, 2, 0, analytic_phi(cfg, 0, 2, y)), y)
    comp = analytic_phi(cfg, 1, 2, analytic_phi(cfg, 0, 1, y))
    assert np.allclose(comp, analytic_phi(cfg, 0, 2, y))


def test_analytic_phi_exponential():
    model = (OutcomeFamily("exponential", (1.0,)), OutcomeFamily("exponential", (0.5,)))
    assert analytic_phi(model, 0, 1, 1.0) == pytest.approx(2.0)
    with pytest.raises(OutsideSupport):
        analytic_phi(model, 0, 1, -1.0)


def test_latent_identities_and_rank_similarity(example_i2_config):
    data = simulate(example_i2_config, 20_000, seed=21)
    st = latent_complier_stats(data, example_i2_config.lambda_pairs)
    assert st.all_hold
    assert all(ks == 0 for ks, _ in st.rank_ks.values())    # rank invariance
    lp = st.latent_propensity(data.z_labels)
    c = st.get(0, 1, 1)
    assert c.frequency == pytest.approx(
        (np.sum((data.latent.t_pot[:, 1] == 1) & (data.latent.t_pot[:, 0] != 1))) / data.n)
    assert lp.values.shape == (3, 3)


def test_ks_distance():
    assert ks_distance(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert ks_distance(np.array([0.0]), np.array([1.0])) == 1.0

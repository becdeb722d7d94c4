from fractions import Fraction

import numpy as np
import pytest

from mtiv.compliers import PropensityMatrix
from mtiv.diagnostics import (
    AMBIGUOUS,
    NONE,
    SIGN,
    JacobianInput,
    all_pairs,
    cell_densities,
    check_assumption3,
    detect_sign_treatments,
    jacobian_determinant,
    kernel_density,
    moment_residual,
    rational_determinant,
    sign_eta,
)
from mtiv.errors import NotSquare, TauOutOfRange, TooFewSamples

P441 = [[0.3125, 0.4375, 0.25], [0.25, 0.375, 0.375], [0.125, 0.3125, 0.5625]]


def test_all_pairs():
    assert all_pairs(3) == [(1, 0), (2, 0), (2, 1)]


def test_section44_signs_and_violation():
    p = PropensityMatrix.from_array(P441)
    res = detect_sign_treatments(p, all_pairs(3))
    assert [r.sign_treatment for r in res] == [2, 2, 2]
    assert all(r.status == SIGN for r in res)
    v = check_assumption3(res, 2)
    assert not v.satisfied and "share one sign treatment" in v.reason


def test_ambiguous_and_none():
    p = PropensityMatrix.from_array([[0.5, 0.3, 0.2], [0.3, 0.5, 0.2], [0.5, 0.3, 0.2]])
    r_amb, r_none = detect_sign_treatments(p, [(1, 0), (2, 0)])
    assert r_amb.status == AMBIGUOUS and set(r_amb.candidates) == {0, 1}
    assert r_none.status == NONE


def test_assumption3_prefers_clean_pairs(example_i2_cells):
    res = detect_sign_treatments(example_i2_cells.propensity, all_pairs(3))
    v = check_assumption3(res, 2)
    assert v.satisfied
    chosen = sorted(zip((res[i].pair for i in v.lambda_star), v.signs))
    assert chosen == [((1, 0), 1), ((2, 0), 2)]


def test_sign_eta_scales_with_sample(example_i2_cells):
    p = example_i2_cells.propensity
    assert sign_eta(p) >= 0.01
    assert sign_eta(PropensityMatrix.from_array(P441)) == 0.0


def test_rational_determinant():
    assert rational_determinant(P441) == Fraction(-1, 256)
    assert rational_determinant([[1, 2], [2, 4]]) == 0
    with pytest.raises(NotSquare):
        rational_determinant([[1, 2, 3], [4, 5, 6]])


def test_jacobian_factorization(ch_cells):
    inp = JacobianInput(cell_densities(ch_cells), ch_cells.propensity, (0, 1, 2), True)
    r = jacobian_determinant(inp, [0.0, 1.0, 2.0])
    assert r.propensity_det_exact == Fraction(-1, 256)
    assert r.determinant < 0
    assert r.factored == pytest.approx(r.direct, rel=1e-9)
    phi = 1 / np.sqrt(2 * np.pi)
    assert r.density_product == pytest.approx(phi ** 3, rel=1e-9)


def test_jacobian_needs_square():
    p = PropensityMatrix.from_array(P441)
    inp = JacobianInput(lambda t, z, y: 1.0, p, (0, 1))
    with pytest.raises(NotSquare):
        jacobian_determinant(inp, [0, 0, 0])


def test_moment_residual_zero_at_truth(ch_cells):
    r = moment_residual([0.0, 1.0, 2.0], 0.5, ch_cells)
    assert np.max(np.abs(r)) < 1e-12
    with pytest.raises(TauOutOfRange):
        moment_residual([0.0, 1.0, 2.0], 1.5, ch_cells)
    with pytest.raises(ValueError):
        moment_residual([0.0, 1.0], 0.5, ch_cells)


def test_kernel_density():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(20_000)
    assert kernel_density(x, 0.0) == pytest.approx(1 / np.sqrt(2 * np.pi), abs=0.02)
    assert kernel_density(x, np.array([0.0, 1.0])).shape == (2,)
    with pytest.raises(TooFewSamples):
        kernel_density([1.0], 0.0)

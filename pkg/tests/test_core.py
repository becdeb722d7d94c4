import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtiv.core import (
    GE,
    LE,
    CounterfactualMap,
    MonotoneCdf,
    MonotonicitySpec,
    PairRelation,
    SupportWindow,
    build_ecdf,
    compose_maps,
    empirical_quantile,
    generalized_inverse,
    identity_map,
    invert_map,
    isotonize,
    strictify,
    trim_support,
)
from mtiv.errors import (
    DegenerateSupport,
    EmptySample,
    LengthMismatch,
    NonFinite,
    NotStrictlyIncreasing,
    RangeEscape,
    TauOutOfRange,
    TreatmentMismatch,
)


def test_ecdf_ties_and_values():
    f = build_ecdf([3.0, 1.0, 2.0, 2.0])
    assert f.grid.tolist() == [1.0, 2.0, 3.0]
    assert f.values.tolist() == [0.25, 0.75, 1.0]
    assert f(1.5) == 0.25 and f(0.0) == 0.0 and f(10) == 1.0
    assert f.n == 4


def test_ecdf_rejects_bad_input():
    with pytest.raises(EmptySample):
        build_ecdf([])
    with pytest.raises(NonFinite):
        build_ecdf([1.0, np.nan])


def test_generalized_inverse_inf_convention():
    f = build_ecdf([1.0, 2.0, 3.0, 4.0])
    assert generalized_inverse(f, 0.5) == 2.0      # F(2) = 0.5 exactly: tie picks the left point
    assert generalized_inverse(f, 0.51) == 3.0
    assert f.quantile(0.25) == 1.0
    with pytest.raises(TauOutOfRange):
        generalized_inverse(f, 0.0)
    with pytest.raises(TauOutOfRange):
        generalized_inverse(f, 1.0)


def test_generalized_inverse_saturation_flag():
    cdf = MonotoneCdf(np.array([0.0, 1.0]), np.array([0.2, 0.6]))
    y, sat = generalized_inverse(cdf, 0.9, with_flag=True)
    assert y == 1.0 and sat
    y, sat = generalized_inverse(cdf, 0.5, with_flag=True)
    assert y == 1.0 and not sat


def test_flat_width():
    cdf = MonotoneCdf(np.arange(5.0), np.array([0.1, 0.5, 0.5, 0.5, 1.0]))
    assert cdf.flat_width(0.5) == 2.0
    assert cdf.flat_width(0.1) == 0.0


def test_isotonize_running_max_and_clip():
    c = isotonize([0, 1, 2, 3], [-0.1, 0.4, 0.3, 1.2])
    assert c.values.tolist() == [0.0, 0.4, 0.4, 1.0]
    with pytest.raises(LengthMismatch):
        isotonize([0, 1], [0.1])


def test_trim_support_and_window():
    w = trim_support(np.arange(1, 101, dtype=float), 0.05)
    assert (w.lower, w.upper) == (5.0, 95.0)
    assert w.contains([4.0, 5.0, 95.0, 96.0]).tolist() == [False, True, True, False]
    u = w.union(SupportWindow(0.0, 10.0))
    assert (u.lower, u.upper) == (0.0, 95.0)
    with pytest.raises(DegenerateSupport):
        trim_support(np.ones(10), 0.1)
    assert empirical_quantile(np.array([1.0, 2.0, 3.0]), 0.0) == 1.0


def test_map_evaluate_and_clamp():
    m = CounterfactualMap(0, 1, np.array([0.0, 1.0, 2.0]), np.array([1.0, 2.0, 4.0]))
    assert m(1.5) == 3.0
    vals, clamped = m.evaluate(np.array([-1.0, 0.5, 3.0]), return_clamped=True)
    assert vals.tolist() == [1.0, 1.5, 4.0] and clamped == 2


def test_self_map_must_be_identity():
    with pytest.raises(ValueError):
        CounterfactualMap(1, 1, np.array([0.0, 1.0]), np.array([0.0, 2.0]))
    assert identity_map(2, [0.0, 1.0]).is_identity


def test_compose_checks_treatments_and_range():
    a = CounterfactualMap(0, 1, np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    b = CounterfactualMap(1, 2, np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    c = compose_maps(a, b)
    assert (c.source_treatment, c.target_treatment) == (0, 2)
    assert c.images.tolist() == [3.0, 4.0]
    with pytest.raises(TreatmentMismatch):
        compose_maps(b, a)
    short = CounterfactualMap(1, 2, np.array([1.0, 1.5]), np.array([3.0, 3.5]))
    with pytest.raises(RangeEscape):
        compose_maps(a, short)


def test_round_trip_is_identity():
    a = CounterfactualMap(0, 1, np.array([0.0, 1.0, 2.0]), np.array([1.0, 2.0, 4.0]))
    assert compose_maps(a, invert_map(a)).is_identity


def test_invert_requires_strict_images():
    a = CounterfactualMap(0, 1, np.array([0.0, 1.0, 2.0]), np.array([1.0, 1.0, 2.0]))
    with pytest.raises(NotStrictlyIncreasing):
        invert_map(a)


def test_strictify_repairs_ties_and_dips():
    out, changed = strictify([0.0, 1.0, 1.0, 2.0])
    assert np.all(np.diff(out) > 0) and changed == 1
    assert out[2] == pytest.approx(1.5)
    out, changed = strictify([0.0, 2.0, 1.0, 3.0])
    assert np.all(np.diff(out) > 0)
    assert out[1] == pytest.approx(1.5)       # least squares pools the dip
    same, changed = strictify([0.0, 1.0, 2.0])
    assert changed == 0


def test_pair_relation_sign_treatment():
    r = PairRelation(1, 0, (LE, GE, LE))
    assert r.sign_treatment == 1
    assert PairRelation(1, 0, (LE, GE, GE)).sign_treatment == 0
    with pytest.raises(ValueError):
        PairRelation(1, 0, (LE, LE, LE))
    assert PairRelation.from_sign(2, 0, 2, 2).directions == (LE, LE, GE)


def test_spec_requires_distinct_signs():
    a = PairRelation.from_sign(1, 0, 1, 2)
    b = PairRelation.from_sign(2, 0, 2, 2)
    spec = MonotonicitySpec(2, [a, b], (0, 1))
    assert spec.chosen == (a, b)
    with pytest.raises(ValueError):
        MonotonicitySpec(2, [a, a], (0, 1))


# ---------------------------------------------------------------------------
# properties

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=100, deadline=None, derandomize=True)
@given(st.lists(finite, min_size=1, max_size=60))
def test_ecdf_quantile_galois(xs):
    f = build_ecdf(xs)
    for tau in (0.1, 0.25, 0.5, 0.75, 0.9):
        q = f.quantile(tau)
        assert np.array_equal(f.values >= tau - 1e-12, f.grid >= q)


@settings(max_examples=100, deadline=None, derandomize=True)
@given(st.lists(st.floats(-0.5, 1.5), min_size=1, max_size=60))
def test_isotonize_idempotent(vals):
    g = np.arange(len(vals), dtype=float)
    once = isotonize(g, vals)
    assert np.array_equal(isotonize(g, once.values).values, once.values)
    assert np.all(np.diff(once.values) >= 0)


@settings(max_examples=100, deadline=None, derandomize=True)
@given(st.lists(finite, min_size=2, max_size=60))
def test_strictify_is_strict(vals):
    out, _ = strictify(vals)
    assert np.all(np.diff(out) > 0)


@settings(max_examples=100, deadline=None, derandomize=True)
@given(st.lists(st.floats(0.01, 5.0), min_size=2, max_size=30),
       st.lists(st.floats(0.01, 5.0), min_size=2, max_size=30))
def test_inverse_round_trip_at_nodes(steps_x, steps_y):
    n = min(len(steps_x), len(steps_y))
    g = np.cumsum(steps_x[:n])
    im = np.cumsum(steps_y[:n])
    a = CounterfactualMap(0, 1, g, im)
    assert np.allclose(invert_map(a)(a(g)), g)

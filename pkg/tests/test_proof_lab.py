import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from strongsde import proof_lab as pl
from strongsde import schemes
from strongsde.brownian import PathState
from strongsde.sde_model import catalog, linear_sde, localize

WINDOW = ((0.05, 3.0), (0.35, 2.2), (0.65, 1.6))
LOC = localize(catalog("quintic"), *WINDOW)


@pytest.fixture(scope="module")
def loc():
    return LOC


def test_constant_coefficients_unit_multipliers():
    s = linear_sde(0.3, 0.0, 0.7, 0.0)
    wp = pl.build_weight_path(s, PathState(0, 1), 16)
    assert np.all(wp.mhat == 1.0) and np.all(wp.Mhat == 1.0)


def test_two_step_product():
    wp = pl.build_weight_path(catalog("quintic"), PathState(2, 2), 2)
    assert wp.Mhat[0] == wp.mhat[0] * wp.mhat[1]
    assert wp.Mhat[2] == 1.0


@given(st.integers(0, 50), st.sampled_from([4, 8, 16, 32]))
@settings(max_examples=30, deadline=None)
def test_recursions_exact(rep, k):
    aux = pl.build_aux_scheme(LOC, PathState(1, rep), k)
    wp = aux.weights
    assert wp.Mhat[-1] == 1.0
    assert np.array_equal(wp.Mhat[:-1], wp.mhat * wp.Mhat[1:])
    assert np.array_equal(wp.Yhat, wp.Mhat[1:] * wp.gap)
    assert aux.Q[0] == 0.0
    assert np.array_equal(aux.Q[1:], wp.mhat * aux.Q[:-1] + wp.gap * aux.J)
    assert pl.aux_identity_error(aux) <= 1e-10


def test_gbm_aux_equals_wp():
    aux = pl.build_aux_scheme(catalog("gbm"), PathState(0, 0), 16)
    assert np.all(aux.Q == 0.0)
    assert np.array_equal(aux.X_aux, aux.weights.X_wpt)
    assert aux.oracle_assisted


def test_aux_uses_free_span_integrals():
    p = PathState(0, 0)
    pl.build_aux_scheme(catalog("quintic"), p, 8)
    assert p.cost() == 8


def test_unit_horizon_required():
    with pytest.raises(ValueError, match="rescale"):
        pl.build_weight_path(catalog("quintic", {"T": 2.0}), PathState(), 4)


def test_rhat_simple():
    assert pl.rhat(np.zeros(8)) == 0.0
    assert pl.rhat(np.ones(8)) == 1.0


def test_variance_bound_simple():
    k = 8
    assert pl.conditional_variance_bound(np.ones(k), 0, k) == pytest.approx(
        1 / (12 * k * k), rel=1e-15)
    d = np.arange(k)
    y = np.linspace(-1, 2, k)
    b1 = pl.conditional_variance_bound(y, d, k)
    b2 = pl.conditional_variance_bound(y, 2 * d + 1, k)
    assert b2 == pytest.approx(b1 / 4, rel=1e-14)


def test_variance_bound_rejects_bad_occupancy():
    with pytest.raises(ValueError):
        pl.conditional_variance_bound(np.ones(4), [0, -1, 0, 0], 4)
    with pytest.raises(ValueError):
        pl.conditional_variance_bound(np.ones(4), 0.5, 4)


def test_weight_continuous_no_derivatives():
    s = linear_sde(0.5, 0.0, 1.0, 0.0, x0=0.2)
    p = PathState(0, 0)
    y = pl.weight_continuous(s, p, 0.25, 64)
    assert y == 0.0  # a' = b' = 0 and G = a'b - ab' - b^2 b''/2 = 0


def test_weight_continuous_gbm_zero():
    assert pl.weight_continuous(catalog("gbm"), PathState(), 0.5, 64) == 0.0


def test_weight_continuous_linear_closed_form():
    # constant derivatives: the left-point exponent sums are exact, so the
    # weight is exp((a1 - b1^2/2)(1 - t) + b1 (W(1) - W(t))) (a1 b0 - a0 b1)
    s = linear_sde(0.2, -0.3, 0.1, 0.4)
    for rep in range(5):
        p = PathState(1, rep)
        y = pl.weight_continuous(s, p, 0.25, 64)
        w = p.evaluate(1.0) - p.evaluate(0.25)
        exact = math.exp((-0.3 - 0.08) * 0.75 + 0.4 * w) * (-0.03 - 0.08)
        assert y == pytest.approx(exact, rel=1e-12)


def test_weight_continuous_shared_path_refines(loc):
    # a finer grid on the same path keeps the coarse nodes and their values
    p = PathState(3, 0)
    pl.weight_continuous(loc, p, 0.0, 64)
    coarse = p.knots[1].copy()
    pl.weight_continuous(loc, p, 0.0, 128)
    assert np.array_equal(p.knots[1][::2], coarse)


def test_weight_continuous_node_check(loc):
    with pytest.raises(ValueError):
        pl.weight_continuous(loc, PathState(), 0.3, 8)


def test_weight_process_matches_discrete_product():
    # with exp(x) ~ 1 + x the two weights agree to O(h) on smooth input
    s = linear_sde(0.2, -0.3, 0.1, 0.4)
    k = 4096
    from strongsde.brownian import sample_grid
    W = sample_grid(0, 4, k)
    X = schemes.simulate_batch(s, "wagner_platen_truncated", 1.0, W)
    ycont = pl.weight_process_batch(s, X, W)
    _, _, _, yhat = pl.weight_arrays(s, X, W)
    assert np.max(np.abs(ycont[:, :-1] - yhat)) < 0.05


def test_milstein_aux_constant_b_equals_milstein():
    s = linear_sde(0.5, -1.0, 0.7, 0.0)
    aux = pl.milstein_aux(s, PathState(1, 1), 16)
    mil = schemes.run_milstein(s, 16, PathState(1, 1))
    eul = schemes.run_euler(s, 16, PathState(1, 1))
    assert np.array_equal(aux.values, mil.values)
    assert np.array_equal(mil.values, eul.values)


def test_milstein_aux_node_difference_is_correction():
    s = catalog("gbm")
    aux = pl.milstein_aux(s, PathState(2, 0), 8)
    assert np.array_equal(aux.milstein_values[1:] - aux.values[1:],
                          aux.milstein_values[1:] - (
                              aux.milstein_values[1:] - aux.correction))
    diff = aux.milstein_values[1:] - aux.values[1:]
    assert np.allclose(diff, aux.correction, rtol=1e-12, atol=1e-15)


def test_milstein_aux_dense_left_limit():
    s = catalog("gbm")
    from strongsde.brownian import sample_grid
    W = sample_grid(0, 3, 64)
    X = schemes.simulate_batch(s, "milstein", 1.0, W[:, ::8])
    dense = pl.milstein_aux_dense(s, X, W)
    a, b, bb1 = schemes._span_coeffs(s, "milstein", X)
    dW = np.diff(W[:, ::8], axis=1)
    corr = 0.5 * bb1 * (dW * dW - 1 / 8)
    assert np.allclose(dense[:, 8::8], X[:, 1:] - corr, rtol=1e-12)


def test_aux_csv(loc):
    aux = pl.build_aux_scheme(loc, PathState(), 4)
    buf = io.StringIO()
    aux.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,mhat,Mhat,Yhat,Qbar" and len(lines) == 6


def test_identity_suite_small(loc):
    ok, worst, n = pl.identity_suite(loc, (8, 32), 50, seed=2)
    assert ok and worst <= 1e-10 and n == 100


def test_conditional_variance_equality_case(loc):
    # with zero occupancy the bound is the exact conditional variance
    v, se, bound = pl.conditional_variance_mc(loc, 32, seed=0, draws=10 ** 5)
    assert v >= bound - 3 * se
    assert abs(v - bound) <= 3 * se


def test_rhat_samples_shape(loc):
    s = pl.rhat_samples(loc, 16, 300)
    assert s.shape == (300,) and np.all(s >= 0)


def test_aux_error_smooth_linear_rate():
    # on a smooth linear equation the aux endpoint error decays like k^-1.5
    s = linear_sde(1.0, -0.5, 0.5, 0.3)
    rep = pl.aux_error_experiment(s, [8, 16, 32, 64], 1000, seed=1)
    assert rep.identity_residual <= 1e-10
    assert -1.8 <= rep.fit.slope <= -1.2

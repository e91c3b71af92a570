import io
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from strongsde import schemes
from strongsde.brownian import PathState, sample_grid
from strongsde.sde_model import CapabilityError, PreconditionError, catalog, \
    linear_sde
from strongsde.schemes import SchemeConfig, interpolate_linear, run

EXPLICIT = ("euler", "milstein", "wagner_platen_truncated", "tamed_euler",
            "tamed_milstein")


def increments(path, k, T=1.0):
    t, w = path.knots
    grid = T * np.arange(k + 1) / k
    return np.diff(np.interp(grid, t, w))


def test_zero_coefficients_constant_path():
    s = linear_sde(0, 0, 0, 0, x0=1.7)
    for sch in EXPLICIT:
        out = run(s, SchemeConfig(sch, 8), PathState(0, 0))
        assert np.all(out.values == 1.7)


def test_unit_drift_integrates_exactly():
    s = linear_sde(1, 0, 0, 0, x0=0.0)
    out = schemes.run_euler(s, 16, PathState(0, 0))
    assert out.endpoint == pytest.approx(1.0, abs=1e-15)


def test_euler_single_step_gbm():
    s = catalog("gbm", {"alpha": 0.0, "beta": 1.0, "x0": 1.0})
    p = PathState(1, 3)
    out = schemes.run_euler(s, 1, p)
    assert out.endpoint == 1.0 + p.evaluate(1.0)


def test_milstein_single_step():
    s = linear_sde(0, 0, 0, 1, x0=1.0)
    p = PathState(2, 0)
    out = schemes.run_milstein(s, 1, p)
    w = p.evaluate(1.0)
    assert out.endpoint == pytest.approx(1 + w + 0.5 * (w * w - 1), rel=1e-15)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 2))
@settings(max_examples=40, deadline=None)
def test_milstein_equals_euler_for_additive_noise(a0, a1, b0):
    s = linear_sde(a0, a1, b0, 0.0, x0=0.3)
    e = schemes.run_euler(s, 32, PathState(4, 1))
    m = schemes.run_milstein(s, 32, PathState(4, 1))
    assert np.array_equal(e.values, m.values)


def test_wp_reduces_to_euler_for_constant_coefficients():
    s = linear_sde(0.0, 0.0, 0.7, 0.0, x0=1.0)
    e = schemes.run_euler(s, 16, PathState(5, 0))
    w = schemes.run_wagner_platen_truncated(s, 16, PathState(5, 0))
    assert np.array_equal(e.values, w.values)


def test_wp_linear_drift_hand_value():
    s = linear_sde(0.0, 1.0, 0.0, 0.0, x0=1.0)
    out = schemes.run_wagner_platen_truncated(s, 1, PathState(0, 0))
    assert out.endpoint == 2.5


def _wp_symbolic():
    x, h, dw, al, be = sp.symbols("x h dw alpha beta")
    a = al * x
    b = be * x
    a1, a2 = sp.diff(a, x), sp.diff(a, x, 2)
    b1, b2 = sp.diff(b, x), sp.diff(b, x, 2)
    expr = (x + a * h + b * dw + sp.Rational(1, 2) * b * b1 * (dw ** 2 - h)
            + (0 + a * b1 - sp.Rational(1, 2) * b * b1 ** 2) * dw * h
            + sp.Rational(1, 6) * (b * b1 ** 2 + b ** 2 * b2) * dw ** 3
            + sp.Rational(1, 2) * (0 + a * a1
                                   + sp.Rational(1, 2) * b ** 2 * a2) * h ** 2)
    return sp.lambdify((x, h, dw, al, be), expr)


def test_wp_one_step_gbm_symbolic():
    f = _wp_symbolic()
    for al, be in ((0.5, 0.8), (-1.0, 0.3), (2.0, 1.5)):
        s = catalog("gbm", {"alpha": al, "beta": be, "x0": 1.3})
        for k in (1, 4):
            p = PathState(7, k)
            out = schemes.run_wagner_platen_truncated(s, k, p)
            dw = increments(p, k)[0]
            assert out.values[1] == pytest.approx(f(1.3, 1 / k, dw, al, be),
                                                  rel=1e-13)


def test_wp_minus_milstein_is_three_terms():
    s = catalog("quintic")
    k = 8
    p1 = PathState(3, 3)
    wp = schemes.run_wagner_platen_truncated(s, k, p1)
    dw = increments(p1, k)
    h = 1 / k
    c = s.coeffs
    for l in range(k):
        x = wp.values[l]
        a, a1, a2 = (c.eval("a", 0, j, 0, x) for j in range(3))
        b, b1, b2 = (c.eval("b", 0, j, 0, x) for j in range(3))
        extra = ((a * b1 - 0.5 * b * b1 ** 2) * dw[l] * h
                 + (b * b1 ** 2 + b * b * b2) * dw[l] ** 3 / 6
                 + 0.5 * (a * a1 + 0.5 * b * b * a2) * h * h)
        mil_step = (x + a * h + b * dw[l] + 0.5 * b * b1 * (dw[l] ** 2 - h))
        assert wp.values[l + 1] == pytest.approx(mil_step + extra, rel=1e-13)


def test_missing_derivative_capability_error():
    from strongsde._catalog_coeffs import user_linear
    from strongsde.sde_model import CoefficientField, SdeSpec, INF
    cf = CoefficientField(user_linear, (0, 1, 1, 0),
                          {"a": (0, 0), "b": (0, 0)},
                          ((0.0, INF), ((-INF, INF),)))
    s = SdeSpec(cf, 1.0, 1.0)
    schemes.run_euler(s, 4, PathState())
    for sch in ("milstein", "wagner_platen_truncated", "tamed_milstein"):
        with pytest.raises(CapabilityError):
            run(s, SchemeConfig(sch, 4), PathState())


def test_tamed_drift_increment_bound():
    # bounded drift |a| <= 1: tamed and untamed increments differ by at most
    # M**2 * h / k per step
    s = linear_sde(1.0, 0.0, 0.5, 0.0, x0=0.0)
    k = 64
    e = schemes.run_euler(s, k, PathState(1, 1))
    t = schemes.run_tamed(s, k, PathState(1, 1), "euler")
    diff = np.abs(np.diff(e.values) - np.diff(t.values))
    assert np.all(diff <= 1.0 / k * (1 / k) + 1e-15)


def test_tamed_variants_validated():
    with pytest.raises(ValueError):
        schemes.run_tamed(catalog("quintic"), 4, PathState(), "heun")


def test_drift_implicit_small_noise_step():
    # Y = sqrt(X) recursion: Y1 = (1 + sqrt(1 + 4 d)) / 2, d = delta h / 2
    s = catalog("cir", {"delta": 1.0, "beta": 0.0, "sigma": 1e-9, "x0": 1.0,
                        "T": 0.5})
    out = schemes.run_drift_implicit_sqrt(s, 1, PathState())
    y1 = (1 + math.sqrt(2.0)) / 2
    assert out.endpoint == pytest.approx(y1 * y1, rel=1e-7)
    # agrees with implicit Euler (1.5) to second order in h
    for h in (0.05, 0.025):
        s = catalog("cir", {"delta": 1.0, "beta": 0.0, "sigma": 1e-9,
                            "T": h})
        out = schemes.run_drift_implicit_sqrt(s, 1, PathState())
        assert abs(out.endpoint - (1 + h)) <= h * h


def test_drift_implicit_positive():
    s = catalog("cir", {"delta": 5.0})
    W = sample_grid(0, 10 ** 4, 64)
    X = schemes.simulate_batch(s, "drift_implicit_sqrt", 1.0, W)
    assert np.all(X > 0)


def test_drift_implicit_preconditions():
    with pytest.raises(PreconditionError):
        run(catalog("cir", {"delta": 0.5}),
            SchemeConfig("drift_implicit_sqrt", 4), PathState())
    with pytest.raises(PreconditionError):
        run(catalog("quintic"), SchemeConfig("drift_implicit_sqrt", 4),
            PathState())


def test_cir_off_domain_is_finite():
    s = catalog("cir", {"delta": 0.5})
    W = sample_grid(0, 500, 16)
    X = schemes.simulate_batch(s, "euler", 1.0, W)
    assert np.all(np.isfinite(X))
    assert np.any(X < 0)


def test_linear_interpolation_nodes_and_midpoints():
    out = schemes.run_euler(catalog("gbm"), 8, PathState(1, 1))
    lin = interpolate_linear(out)
    for t, v in zip(lin.times, lin.values):
        assert lin(t) == v
    assert lin(1 / 16) == pytest.approx(0.5 * (lin.values[0] +
                                               lin.values[1]), rel=1e-15)


def test_linear_vs_continuous_euler_l1_shrinks():
    s = catalog("gbm")
    gaps = []
    for k in (16, 256):
        vals = []
        for r in range(40):
            p = PathState(9, r)
            cont = schemes.run_euler(s, k, p, continuous=True)
            lin = interpolate_linear(cont)
            ts = np.linspace(0, 1, 4097)
            d = np.abs([cont(t) - lin(t) for t in ts])
            vals.append(np.trapezoid(d, ts) if hasattr(np, "trapezoid")
                        else np.trapz(d, ts))
        gaps.append(np.mean(vals))
    assert gaps[0] >= 0 and gaps[1] >= 0
    assert gaps[1] < 0.5 * gaps[0]


def test_continuous_evaluator_at_nodes():
    out = schemes.run_milstein(catalog("gbm"), 8, PathState(0, 2), True)
    for t, v in zip(out.times, out.values):
        assert out(t) == v
    assert math.isfinite(out(0.3))


def test_continuous_rejected_for_tamed():
    with pytest.raises(ValueError):
        SchemeConfig("tamed_euler", 4, continuous_time=True)


def test_bad_config():
    with pytest.raises(ValueError):
        SchemeConfig("euler", 0)
    with pytest.raises(ValueError):
        SchemeConfig("rk4", 4)


@pytest.mark.parametrize("scheme", EXPLICIT)
def test_schemes_see_identical_increments(scheme):
    p = PathState(4, 4)
    run(catalog("quintic"), SchemeConfig(scheme, 32), p)
    t1, w1 = p.knots
    q = PathState(4, 4)
    run(catalog("quintic"), SchemeConfig("euler", 32), q)
    t2, w2 = q.knots
    assert np.array_equal(w1, w2) and np.array_equal(t1, t2)


def test_batch_matches_path_runs():
    s = catalog("quintic")
    W = sample_grid(2, [0, 1, 2], 16)
    for sch in EXPLICIT:
        X = schemes.simulate_batch(s, sch, 1.0, W)
        for r in range(3):
            out = run(s, SchemeConfig(sch, 16), PathState(2, r))
            assert np.array_equal(out.values, X[r], equal_nan=True)


def test_trajectory_csv():
    out = schemes.run_euler(catalog("gbm"), 4, PathState())
    buf = io.StringIO()
    out.to_csv(buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "t,value" and len(lines) == 6


def test_gbm_milstein_rate_calibration():
    from strongsde.error_lab import ErrorMetric, rate_experiment
    rep = rate_experiment(catalog("gbm"), "milstein",
                          ErrorMetric("endpoint"),
                          [16, 32, 64, 128, 256, 512], 2000, seed=3)
    assert -1.15 <= rep.slope <= -0.85

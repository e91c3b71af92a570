import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from strongsde import sde_model as sm
from strongsde.sde_model import catalog, check_conditions, lie_gap, localize


def test_cir_lie_gap_closed_form():
    s = catalog("cir", {"delta": 2.0, "beta": 0.0, "sigma": 2.0})
    assert lie_gap(s, 0.0, 1.0) == pytest.approx(-1.0, abs=1e-14)


def test_quintic_lie_gap():
    assert lie_gap(catalog("quintic"), 0.0, 1.0) == pytest.approx(-4.0)


@given(st.floats(0.1, 5.0), st.floats(-3.0, 3.0))
def test_gbm_lie_gap_vanishes(beta, x):
    s = catalog("gbm", {"alpha": 0.3, "beta": beta})
    assert abs(lie_gap(s, 0.0, x)) <= 1e-12 * (1 + x * x)


def test_sgn_drift_lie_gap_is_sign():
    s = catalog("sgn_drift")
    assert lie_gap(s, 0.0, -2.0) == -1.0
    assert lie_gap(s, 0.0, 3.0) == 1.0


@given(st.floats(-5.0, 5.0).filter(lambda x: abs(x) > 1e-3))
def test_sgn_drift_plain_lie_gap_zero(x):
    assert lie_gap(catalog("sgn_drift_plain"), 0.0, x) == 0.0


@given(st.floats(0.05, 4.0), st.floats(0.1, 6.0), st.floats(0.0, 2.0))
def test_cir_gap_matches_formula(x, delta, beta):
    s = catalog("cir", {"delta": delta, "beta": beta, "sigma": 2.0})
    expect = -beta * math.sqrt(x) + (1 - delta) / math.sqrt(x)
    assert lie_gap(s, 0.0, x) == pytest.approx(expect, rel=1e-10, abs=1e-12)


def test_lie_gap_domain_error():
    with pytest.raises(sm.DomainError):
        lie_gap(catalog("cir"), 0.0, -1.0)


def test_lie_gap_capability_error():
    from strongsde._catalog_coeffs import user_linear
    cf = sm.CoefficientField(user_linear, (0, 1, 1, 0),
                             {"a": (0, 1), "b": (0, 1)},
                             ((0.0, sm.INF), ((-sm.INF, sm.INF),)))
    with pytest.raises(sm.CapabilityError):
        lie_gap(sm.SdeSpec(cf, 1.0, 1.0), 0.0, 1.0)


@pytest.mark.parametrize("name", ["cir", "quintic", "gbm", "sgn_drift",
                                  "sgn_drift_plain", "squared_bessel"])
def test_derivatives_match_finite_differences(name):
    s = catalog(name)
    c = s.coeffs
    rng = np.random.default_rng(5)
    lo, hi = {"cir": (0.2, 5.0), "squared_bessel": (0.2, 5.0)}.get(
        name, (-3.0, 3.0))
    xs = rng.uniform(lo, hi, 100)
    xs = xs[np.abs(xs) > 0.05]
    for which in ("a", "b"):
        for j in range(c.max_order[which][1]):
            for x in xs:
                step = 1e-5 * (abs(x) + 1)
                fd = (c.eval(which, 0, j, 0.3, x + step)
                      - c.eval(which, 0, j, 0.3, x - step)) / (2 * step)
                an = c.eval(which, 0, j + 1, 0.3, x)
                assert fd == pytest.approx(an, rel=1e-5, abs=1e-5 * (
                    1 + abs(an)))


def test_autonomous_gap_is_time_invariant():
    for name in ("cir", "quintic", "sgn_drift"):
        s = catalog(name)
        for x in (0.3, 1.0, 2.5):
            assert lie_gap(s, 0.1, x) == lie_gap(s, 0.9 * s.T, x)


def test_cir_classification_sweep():
    for delta in (0.5, 1.0, 2.0, 5.0):
        for beta in (0.0, 1.0):
            s = catalog("cir", {"delta": delta, "beta": beta, "sigma": 2.0})
            r = check_conditions(s, "pointwise", (0.5, 2.0))
            expect = "satisfied" if (delta != 1 or beta != 0) else "violated"
            assert r.verdict == expect, (delta, beta)


def test_squared_bessel_sup_satisfied_pointwise_violated():
    s = catalog("squared_bessel")
    assert check_conditions(s, "pointwise", (0.5, 2)).verdict == "violated"
    assert check_conditions(s, "sup", (0.5, 2)).verdict == "satisfied"
    assert check_conditions(s, "Lp", (0.5, 2)).verdict == "satisfied"


def test_quintic_pointwise_satisfied():
    r = check_conditions(catalog("quintic"), "pointwise", (0.5, 1.5))
    assert r.verdict == "satisfied"
    assert r.lie_gap_min > 0 and r.b_min > 0


def test_zero_diffusion_violates_sup():
    s = sm.linear_sde(1.0, 0.0, 0.0, 0.0)
    assert check_conditions(s, "sup", (0, 1)).verdict == "violated"


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        check_conditions(catalog("quintic"), "sup", (1.0, 1.0))


def test_condition_report_flat_json():
    import json
    d = check_conditions(catalog("gbm"), "pointwise", (0.5, 2)).to_dict()
    json.dumps(d)
    assert d["verdict"] == "violated"
    assert all(not isinstance(v, dict) for v in d.values())


def test_satisfied_needs_every_flag():
    for name in sm.CATALOG_NAMES:
        for th in sm.THEOREM_IDS:
            lo, hi = (0.5, 2.0)
            r = check_conditions(catalog(name), th, (lo, hi))
            if r.verdict == "satisfied":
                assert r.b_nonvanishing and r.smoothness_declared
                if th == "pointwise":
                    assert r.lie_gap_nonvanishing


WINDOW = ((0.25, 4.0), (0.5, 2.0), (0.75, 1.5))


def test_localized_quintic_agrees_at_one():
    s = catalog("quintic")
    loc = localize(s, *WINDOW)
    for which in ("a", "b"):
        assert loc.coeffs.eval(which, 0, 0, 0.0, 1.0) == \
            s.coeffs.eval(which, 0, 0, 0.0, 1.0)


def test_localized_diffusion_outside_is_one():
    loc = localize(catalog("quintic"), *WINDOW)
    assert loc.coeffs.eval("b", 0, 0, 0.0, 10.0) == 1.0
    assert loc.coeffs.eval("a", 0, 0, 0.0, 10.0) == 0.0


def test_localized_agrees_on_inner_grid_exactly():
    s = catalog("quintic")
    loc = localize(s, *WINDOW)
    xs = np.linspace(0.75, 1.5, 1001)
    for which in ("a", "b"):
        for j in range(3):
            assert np.array_equal(loc.coeffs.eval(which, 0, j, 0.0, xs),
                                  s.coeffs.eval(which, 0, j, 0.0, xs))


def test_localized_cir_diffusion_bounded_away_from_zero():
    loc = localize(catalog("cir"), (0.1, 6.0), (0.3, 5.0), (0.5, 4.0))
    xs = np.arange(-10.0, 20.0, 1e-3)
    b = loc.coeffs.eval("b", 0, 0, 0.0, xs)
    assert np.min(np.abs(b)) > 0
    a = loc.coeffs.eval("a", 0, 0, 0.0, xs)
    assert np.max(np.abs(a)) < np.inf
    # global Lipschitz: derivative bounded on a wide window
    assert np.max(np.abs(loc.coeffs.eval("a", 0, 1, 0.0, xs))) < 1e3


@given(st.floats(-50.0, 50.0))
@settings(max_examples=200)
def test_cutoffs_stay_in_unit_interval(x):
    from strongsde import _bump
    e1 = _bump.plateau_derivs(np.array([x]), 0.25, 0.5, 2.0, 4.0)[0][0]
    assert 0.0 <= e1 <= 1.0


def test_localize_rejects_bad_nesting():
    with pytest.raises(ValueError):
        localize(catalog("quintic"), (0.5, 4), (0.25, 2), (0.75, 1.5))


def test_localize_rejects_sign_change():
    with pytest.raises(sm.PreconditionError):
        localize(catalog("quintic"), (-1, 4), (0.25, 2), (0.75, 1.5))


def test_trivial_window_returns_same_coefficients():
    s = catalog("quintic")
    inf = sm.INF
    loc = localize(s, (-inf, inf), (-inf, inf), (-inf, inf))
    assert loc.coeffs is s.coeffs


def test_catalog_gbm_exact_solution():
    s = catalog("gbm", {"alpha": 0.5, "beta": 0.8, "x0": 2.0})
    w = 0.37
    assert s.exact_solution(2.0, 1.0, w) == pytest.approx(
        2.0 * math.exp((0.5 - 0.32) + 0.8 * w), rel=1e-15)


def test_squared_bessel_is_cir_1_0_2():
    a = catalog("squared_bessel")
    b = catalog("cir", {"delta": 1.0, "beta": 0.0, "sigma": 2.0})
    assert tuple(a.coeffs.params) == tuple(b.coeffs.params)


def test_catalog_domains():
    assert catalog("cir").coeffs.smooth_domain[1] == ((0.0, sm.INF),)
    assert catalog("sgn_drift").coeffs.smooth_domain[1] == (
        (-sm.INF, 0.0), (0.0, sm.INF))
    assert catalog("quintic").coeffs.smooth_domain[1] == ((-sm.INF, sm.INF),)


@pytest.mark.parametrize("name,params", [
    ("nope", None), ("cir", {"delta": -1.0}), ("cir", {"x0": 0.0}),
    ("gbm", {"gamma": 1.0}), ("squared_bessel", {"delta": 2.0}),
])
def test_catalog_rejects_bad_input(name, params):
    with pytest.raises(ValueError):
        catalog(name, params)


def test_spec_needs_positive_horizon():
    with pytest.raises(ValueError):
        catalog("quintic", {"T": 0.0})


def test_exact_solution_consistent_with_small_step():
    s = catalog("gbm")
    h, w = 1e-6, 1e-3
    euler = 1.0 + 0.5 * h + 0.8 * w
    assert s.exact_solution(1.0, h, w) == pytest.approx(euler, abs=1e-6)


def test_specs_pickle_round_trip():
    import pickle
    loc = localize(catalog("quintic"), *WINDOW)
    back = pickle.loads(pickle.dumps(loc))
    xs = np.linspace(-1, 5, 50)
    assert np.array_equal(back.coeffs.eval("b", 0, 0, 0.0, xs),
                          loc.coeffs.eval("b", 0, 0, 0.0, xs))
    lin = sm.linear_sde(1, 2, 3, 4, x0=0.5)
    assert pickle.loads(pickle.dumps(lin)).coeffs.params.tolist() == \
        [1, 2, 3, 4]

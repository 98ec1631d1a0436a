import cmath
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from delayplatoon import (
    ConfigError,
    ControllerGains,
    DegenerateInputError,
    NotApplicableError,
    SearchExhaustedError,
    conservative_margin_check,
    eval_H1,
    eval_Hq,
    falsify_ka_ge_1,
    internal_stability,
    robust_string_stability,
    sup_norm_over_omega,
)
from delayplatoon.frequency import (
    barred_gains,
    default_omega_max,
    h1_response,
    hq_response,
    tau_grid,
)
from delayplatoon.model import gamma, gamma_r

REF_CACC = ControllerGains(ka=0.5, kv=0.67, kp=0.014, hw=0.75, ell=0.1)
REF_R3 = ControllerGains(ka=0.2, kv=0.16, kp=0.02, hw=0.4, ell=0.1, r=3)
TAU0 = 0.5


def oracle_h1(g, tau, w):
    """Straight s-domain evaluation, independent of the vectorised code."""
    s = complex(0.0, w)
    num = g.ka * s**2 * cmath.exp(-g.ell * s) + g.kv * s + g.kp
    den = tau * s**3 + s**2 + (g.kv + g.hw * g.kp) * s + g.kp
    return num / den


def oracle_hq(g, q, tau, w):
    s = complex(0.0, w)
    r = g.r
    gam = r * g.kv + r * (r + 1) / 2 * g.hw * g.kp
    den = tau * s**3 + s**2 + gam * s + r * g.kp
    delay = cmath.exp(-g.ell * s)
    if q == 1:
        num = g.ka * s**2 * delay + g.kv * s + g.kp
    else:
        num = (g.ka * s**2 + g.kv * s + g.kp) * delay
    return num / den


gain_st = st.builds(
    ControllerGains,
    ka=st.floats(0.0, 0.95),
    kv=st.floats(0.01, 3.0),
    kp=st.floats(0.001, 2.0),
    hw=st.floats(0.05, 3.0),
    ell=st.floats(0.0, 0.5),
)


def test_h1_against_complex_oracle_at_one():
    got = eval_H1(REF_CACC, 0.5, 1.0)
    want = oracle_h1(REF_CACC, 0.5, 1.0)
    assert complex(got.real, got.imag) == pytest.approx(want, abs=1e-14)
    assert got.magnitude == pytest.approx(abs(want), abs=1e-14)


@given(g=gain_st, tau=st.floats(1e-3, 1.0), w=st.floats(1e-3, 500.0))
def test_h1_matches_oracle(g, tau, w):
    assert complex(h1_response(g, tau, w)) == pytest.approx(oracle_h1(g, tau, w), rel=1e-9, abs=1e-12)


@given(g=gain_st, tau=st.floats(1e-3, 1.0))
def test_dc_gain_is_one(g, tau):
    assert eval_H1(g, tau, 0.0).magnitude == pytest.approx(1.0, rel=1e-15)


@given(r=st.integers(2, 5), tau=st.floats(1e-3, 1.0), w=st.floats(0.0, 200.0))
def test_hq_dc_and_parity(r, tau, w):
    g = ControllerGains(ka=0.15 / r, kv=0.3, kp=0.05, hw=0.5, ell=0.1, r=r)
    for q in range(1, r + 1):
        assert eval_Hq(g, q, tau, 0.0).magnitude == pytest.approx(1.0 / r, abs=1e-15)
    mags = [eval_Hq(g, q, tau, w).magnitude for q in range(2, r + 1)]
    assert mags == pytest.approx([mags[0]] * len(mags), rel=1e-13)
    for q in range(1, r + 1):
        assert complex(hq_response(g, q, tau, w)) == pytest.approx(oracle_hq(g, q, tau, w), rel=1e-9, abs=1e-13)


def test_hq_reduces_to_h1():
    w = np.geomspace(1e-3, 1e3, 200)
    np.testing.assert_allclose(hq_response(REF_CACC, 1, 0.3, w), h1_response(REF_CACC, 0.3, w), rtol=1e-13)


def test_barred_equivalence():
    w = np.geomspace(1e-3, 1e3, 500)
    b = barred_gains(REF_R3)
    np.testing.assert_allclose(3 * hq_response(REF_R3, 1, 0.5, w), h1_response(b, 0.5, w), rtol=1e-12)
    assert gamma(b) == pytest.approx(gamma_r(REF_R3), rel=1e-14)


@given(g=gain_st, tau=st.floats(1e-3, 1.0), w=st.floats(1e-3, 100.0))
def test_delay_free_reduction(g, tau, w):
    g0 = ControllerGains(ka=g.ka, kv=g.kv, kp=g.kp, hw=g.hw, ell=0.0)
    s = complex(0, w)
    rational = (g.ka * s**2 + g.kv * s + g.kp) / (tau * s**3 + s**2 + gamma(g0) * s + g.kp)
    assert complex(h1_response(g0, tau, w)) == pytest.approx(rational, rel=1e-10, abs=1e-13)


def test_response_input_checks():
    with pytest.raises(ConfigError):
        h1_response(REF_CACC, 0.0, 1.0)
    with pytest.raises(ConfigError):
        h1_response(REF_CACC, 0.5, -1.0)
    with pytest.raises(ConfigError):
        hq_response(REF_R3, 4, 0.5, 1.0)


def test_pole_on_axis_is_degenerate():
    # tau*w^2 = gamma and w^2 = kp puts a pole at j*sqrt(kp)
    g = ControllerGains(ka=0.0, kv=0.5, kp=1.0, hw=0.5)
    with pytest.raises(DegenerateInputError):
        h1_response(g, gamma(g) / 1.0, 1.0)


# -- sweeps ------------------------------------------------------------------


def test_default_omega_max():
    assert default_omega_max(0.1, 0.5) == 1000.0
    assert default_omega_max(0.0, 0.05) == 2000.0
    assert default_omega_max(0.01, 0.5) == pytest.approx(2000 * math.pi)


def test_constant_evaluator():
    est = sup_norm_over_omega(lambda w: 0.5, 100.0, grid_points=1000)
    assert est.magnitude == 0.5
    assert est.positive_magnitude == 0.5


def test_sweep_finds_known_peak():
    # second-order resonance with a known analytic peak
    zeta, wn = 0.05, 7.0
    f = lambda w: np.abs(wn**2 / (wn**2 - w**2 + 2j * zeta * wn * w))
    est = sup_norm_over_omega(f, 1000.0)
    peak = 1.0 / (2 * zeta * math.sqrt(1 - zeta**2))
    assert est.magnitude == pytest.approx(peak, rel=1e-12)
    assert est.omega == pytest.approx(wn * math.sqrt(1 - 2 * zeta**2), abs=1e-6)


def test_sweep_arguments_validated():
    with pytest.raises(ConfigError):
        sup_norm_over_omega(lambda w: w, 100.0, grid_points=10)
    with pytest.raises(ConfigError):
        sup_norm_over_omega(lambda w: w, 1e-5)
    with pytest.raises(ConfigError):
        tau_grid(0.5, 3)


def test_tau_grid():
    t = tau_grid(0.5)
    assert len(t) == 50 and t[-1] == 0.5 and t[0] == pytest.approx(5e-4)
    assert np.all(np.diff(t) > 0)


def _dense_oracle(g, tau, omega_max, points=200_000):
    w = np.concatenate([[0.0], np.geomspace(1e-4, omega_max, points)])
    return float(np.max(np.abs(h1_response(g, tau, w))))


def test_reference_design_peak_is_dc():
    est = sup_norm_over_omega(lambda w: np.abs(h1_response(REF_CACC, TAU0, w)), default_omega_max(0.1, TAU0))
    assert est.magnitude == pytest.approx(1.0, abs=1e-6)
    assert est.omega == 0.0
    assert est.positive_magnitude <= 1.0 + 1e-9
    assert _dense_oracle(REF_CACC, TAU0, est.omega_max) <= est.magnitude + 1e-12


def test_unstable_headway_peak_exceeds_one():
    g = ControllerGains(ka=0.5, kv=0.67, kp=0.014, hw=0.65, ell=0.1)
    est = sup_norm_over_omega(lambda w: np.abs(h1_response(g, TAU0, w)), default_omega_max(0.1, TAU0))
    dense = _dense_oracle(g, TAU0, est.omega_max)
    assert est.magnitude > 1.0
    # refinement never falls below the dense grid and is close to it
    assert est.magnitude >= dense - 1e-12
    assert est.magnitude == pytest.approx(dense, rel=1e-7)


def test_robust_verdicts():
    rep = robust_string_stability(REF_CACC, TAU0)
    assert rep.internally_stable and rep.string_stable and rep.robust
    assert rep.peak_magnitude == pytest.approx(1.0, abs=1e-6)
    assert rep.sum_of_norms is None
    bad = robust_string_stability(ControllerGains(ka=0.5, kv=0.67, kp=0.014, hw=0.65, ell=0.1), TAU0)
    assert not bad.string_stable and bad.positive_peak_magnitude > 1.0
    assert bad.worst_tau == TAU0


def test_robust_cacc_plus_design():
    rep = robust_string_stability(REF_R3, TAU0)
    assert rep.robust
    for q, peak in rep.per_branch_peaks:
        assert peak <= 1.0 / 3.0 + 1e-9
    assert rep.sum_of_norms == pytest.approx(1.0, abs=1e-6)


def test_acc_reduction_is_stable():
    # no delay, no feedforward, headway 1% above 2*tau0
    from delayplatoon import feasible_region, kp_range_given_kv

    hw = 1.01 * 2 * TAU0
    region = feasible_region(0.0, hw, TAU0, 0.0)
    kv = 0.5 * (region.a1 + region.a2)
    kp = kp_range_given_kv(region, kv).midpoint
    rep = robust_string_stability(ControllerGains(ka=0.0, kv=kv, kp=kp, hw=hw, ell=0.0), TAU0)
    assert rep.robust


# -- internal stability ------------------------------------------------------


def test_internal_stability_examples():
    assert internal_stability(REF_CACC, TAU0)
    assert not internal_stability(ControllerGains(ka=0.0, kv=0.01, kp=10.0, hw=0.01), TAU0)


def test_routh_matches_roots():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        r = int(rng.integers(1, 4))
        g = ControllerGains(
            ka=0.0, kv=float(rng.uniform(0.01, 2)), kp=float(rng.uniform(0.01, 5)),
            hw=float(rng.uniform(0.01, 2)), r=r,
        )
        tau0 = float(rng.uniform(0.05, 2.0))
        routh = internal_stability(g, tau0)
        den = lambda tau: np.roots([tau, 1.0, gamma_r(g), r * g.kp])
        assert (np.max(den(tau0).real) < 0) == routh
        if routh:
            # a smaller lag is never worse
            for tau in np.linspace(tau0 / 20, tau0, 5):
                assert np.max(den(tau).real) < 0


# -- conservative check ------------------------------------------------------


def test_conservative_reference_designs():
    assert conservative_margin_check(REF_CACC, TAU0)
    assert conservative_margin_check(REF_R3, TAU0)


def test_conservative_fails_above_gamma_window():
    ka, ell = 0.5, 0.1
    gmax = (1 - ka**2) / (2 * TAU0 + 2 * ka * ell)
    kp, hw = 0.01, 0.8
    g = ControllerGains(ka=ka, kv=gmax - hw * kp + 1e-3, kp=kp, hw=hw, ell=ell)
    assert not conservative_margin_check(g, TAU0)


def test_conservative_acc_reduction():
    g = ControllerGains(ka=0.0, kv=0.9, kp=0.05, hw=1.0, ell=0.0)
    gam = gamma(g)
    expected = 1 - 2 * TAU0 * gam >= 0 and gam**2 >= 2 * g.kp + g.kv**2
    assert conservative_margin_check(g, TAU0) == expected


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
@given(
    ka=st.floats(0.0, 0.9), hw=st.floats(0.3, 3.0), ell=st.sampled_from([0.0, 0.05, 0.1, 0.2]),
    s=st.floats(0.05, 0.95), t=st.floats(0.05, 0.95),
)
def test_conservatism_implies_sweep(ka, hw, ell, s, t):
    from delayplatoon import feasible_region, kp_range_given_kv

    region = feasible_region(ka, hw, TAU0, ell)
    if not region.non_empty:
        return
    kv = region.a1 + s * (region.a2 - region.a1)
    span = kp_range_given_kv(region, kv)
    kp = span.lower + t * (span.upper - span.lower)
    if kp <= 0:
        return
    g = ControllerGains(ka=ka, kv=kv, kp=kp, hw=hw, ell=ell)
    if conservative_margin_check(g, TAU0):
        rep = robust_string_stability(g, TAU0, tau_grid_points=12, grid_points=4000)
        assert rep.string_stable


# -- falsifier ---------------------------------------------------------------


def test_falsifier_example():
    g = ControllerGains(ka=1.5, kv=0.5, kp=0.05, hw=1.0, ell=0.1)
    w = falsify_ka_ge_1(g, TAU0)
    assert w.magnitude > 1.0
    assert abs(oracle_h1(g, w.tau_witness, w.omega_hat)) > 1.5
    k = w.omega_hat * g.ell / (2 * math.pi)
    assert k == pytest.approx(round(k), abs=1e-9) and round(k) == w.harmonic_index
    assert 0 < w.tau_witness <= TAU0


def test_falsifier_ka_one_inequality():
    g = ControllerGains(ka=1.0, kv=0.67, kp=0.014, hw=0.75, ell=0.1)
    w = falsify_ka_ge_1(g, TAU0)
    assert g.kv**2 > (gamma(g) - w.tau_witness * w.omega_hat**2) ** 2
    assert abs(oracle_h1(g, w.tau_witness, w.omega_hat)) > 1.0
    assert 0 < w.tau_witness <= TAU0


@pytest.mark.parametrize(
    "g",
    [
        ControllerGains(ka=0.5, kv=0.67, kp=0.014, hw=0.75, ell=0.1),
        ControllerGains(ka=0.9, kv=0.67, kp=0.014, hw=0.75, ell=0.1),
        ControllerGains(ka=1.5, kv=0.67, kp=0.014, hw=0.75, ell=0.0),
        ControllerGains(ka=0.6, kv=0.67, kp=0.014, hw=0.75, ell=0.1, r=2),
    ],
)
def test_falsifier_not_applicable(g):
    with pytest.raises(NotApplicableError):
        falsify_ka_ge_1(g, TAU0)


def test_falsifier_search_cap():
    # a huge spacing gain pushes the first admissible harmonic past a tiny cap
    g = ControllerGains(ka=1.0, kv=50.0, kp=50.0, hw=5.0, ell=0.5)
    with pytest.raises(SearchExhaustedError) as info:
        falsify_ka_ge_1(g, 1e-3, k_cap=2)
    assert info.value.diagnostics["k_cap"] == 2


@settings(max_examples=50, deadline=None)
@given(
    ka=st.floats(1.0, 2.0), kv=st.floats(0.1, 2.0), kp=st.floats(0.001, 0.5),
    hw=st.floats(0.2, 2.0), ell=st.sampled_from([0.05, 0.1, 0.2]),
)
def test_witnesses_are_valid(ka, kv, kp, hw, ell):
    g = ControllerGains(ka=ka, kv=kv, kp=kp, hw=hw, ell=ell)
    if not internal_stability(g, TAU0):
        return
    w = falsify_ka_ge_1(g, TAU0)
    assert eval_H1(g, w.tau_witness, w.omega_hat).magnitude > 1.0

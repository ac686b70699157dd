import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corrspec.fisher import (
    _binomials,
    _mean_sq,
    _windowed_binomials,
    convergence_threshold,
    fisher_imperfect_multi,
    fisher_polarized,
    fisher_two_weak_imperfect,
    fisher_unpolarized,
    optimize_measurement_count,
    p_meas_distribution,
    p_meas_sq_avg,
    regime_tag,
    suppression_factor,
)
from corrspec.operators import DetectorModel
from oracles import enumerated_fisher

DET = DetectorModel(0.05, 0.035)


@pytest.mark.parametrize("n1,n2", [(1, 1), (1, 3), (2, 2), (3, 4)])
@pytest.mark.parametrize("detector", [None, (0.3, 0.1)])
def test_unpolarized_matches_enumeration(n1, n2, detector):
    phi, tau, omega = 0.25, 1.0, 0.37
    T = tau + (n1 + n2) * phi
    ref = enumerated_fisher(n1, n2, 1.0, phi, omega, tau, polarized=False, detector=detector)
    det = DetectorModel(*detector) if detector else None
    ours = fisher_unpolarized(n1, n2, phi, omega, T, phi, optimize_phase=False, detector=det).info
    assert math.isclose(ours, ref, rel_tol=1e-8)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_polarized_matches_enumeration(n):
    phi, tau, omega = 0.2, 1.3, 0.8
    ref = enumerated_fisher(0, n, 1.0, phi, omega, tau, polarized=True)
    ours = fisher_polarized(n, phi, omega, tau + n * phi, phi, optimize_phase=False).info
    assert math.isclose(ours, ref, rel_tol=1e-8)


def test_optimized_phase_is_quarter_turn():
    phi, tau = 0.3, 1.0
    for n1, n2 in [(1, 1), (2, 3), (4, 4)]:
        T = tau + (n1 + n2) * phi
        opt = fisher_unpolarized(n1, n2, phi, 0.0, T, phi).info
        at = fisher_unpolarized(n1, n2, phi, math.pi / (4 * tau), T, phi, optimize_phase=False).info
        assert math.isclose(opt, at, rel_tol=1e-12)
        grid = [fisher_unpolarized(n1, n2, phi, w, T, phi, optimize_phase=False).info
                for w in np.linspace(0.01, 1.5, 97)]
        assert max(grid) <= opt * (1 + 1e-12)


def test_two_readout_closed_form():
    phi, tau = 0.1, 2.0
    s = math.sin(2 * phi) ** 2
    info = fisher_unpolarized(1, 1, phi, 0.0, tau + 2 * phi, phi).info
    assert math.isclose(info, 4 * s * s * tau * tau, rel_tol=1e-12)


def test_zero_measurements_carry_no_information():
    r = fisher_unpolarized(0, 3, 0.2, 0.1, 5.0, 0.1)
    assert r.info == 0.0 and r.zero_information
    assert fisher_polarized(0, 0.2, 0.1, 5.0, 0.1).info == 0.0
    assert fisher_unpolarized(2, 2, 0.0, 0.3, 5.0, 0.1).info == 0.0


def test_infeasible_schedule_rejected():
    with pytest.raises(ValueError):
        fisher_unpolarized(30, 30, 0.1, 0.0, 5.0, 0.1)
    with pytest.raises(ValueError):
        fisher_polarized(1, 0.1, float("nan"), 5.0, 0.1)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 40), st.integers(0, 40), st.floats(0, 1.5), st.floats(0.0, 3.0),
       st.sampled_from([None, (0.05, 0.035), (0.9, 0.1)]))
def test_information_bounded_by_ramsey(n1, n2, phi, omega, det):
    tau_m, T = 0.05, 10.0
    detector = DetectorModel(*det) if det else None
    for optimize in (True, False):
        r = fisher_unpolarized(n1, n2, phi, omega, T, tau_m, optimize, detector)
        tau = T - (n1 + n2) * tau_m
        assert 0.0 <= r.info <= 4 * tau * tau * (1 + 1e-12)
        assert 0.0 <= r.p_meas_sq_avg <= 1.0 and 0.0 <= r.p_pol_sq_avg <= 1.0


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.floats(0.01, 1.0), st.floats(0, 2))
def test_symmetric_in_periods(n1, n2, phi, omega):
    a = fisher_unpolarized(n1, n2, phi, omega, 10.0, 0.1, False)
    b = fisher_unpolarized(n2, n1, phi, omega, 10.0, 0.1, False)
    assert math.isclose(a.info, b.info, rel_tol=1e-10, abs_tol=1e-300)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.005, 0.7), st.sampled_from([None, (0.05, 0.035), (0.6, 0.2)]))
def test_mean_square_grows_with_readouts(phi, det):
    detector = DetectorModel(*det) if det else None
    vals = [p_meas_sq_avg(n, phi, detector) for n in range(0, 60)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    assert vals[1] == pytest.approx(math.sin(2 * phi) ** 2 if detector is None else vals[1])


def test_mean_square_limits():
    assert p_meas_sq_avg(1, math.pi / 4) == pytest.approx(1.0)
    assert p_meas_sq_avg(5000, 0.1) == pytest.approx(1.0, abs=1e-12)
    assert p_meas_sq_avg(50, 0.0) == 0.0
    assert p_meas_sq_avg(50, 0.1, DetectorModel(0.2, 0.2)) == 0.0


def test_distribution_record():
    d = p_meas_distribution(6, 0.2)
    assert math.isclose(float(d.p.sum()), 1.0, abs_tol=1e-13)
    assert np.all(np.abs(d.p_meas) <= 1)
    assert math.isclose(d.mean_sq, p_meas_sq_avg(6, 0.2))


@pytest.mark.parametrize("n", [2500, 7000])
@pytest.mark.parametrize("detector", [None, DET])
def test_windowed_sum_matches_full(n, detector):
    phi = 0.01
    full = _mean_sq(*_binomials(n, phi, detector))
    win = _mean_sq(*_windowed_binomials(n, phi, detector))
    assert abs(full - win) < 1e-12


def test_regime_tags():
    assert regime_tag(0.01, 100, 1.0) == "weak"
    assert regime_tag(0.1, 1e4, 1.0) == "strong"
    assert regime_tag(0.1, 100, 1.0) == "crossover"


def _scan(phi, T, tau_m, detector=None, polarized=False):
    limit = int(math.floor(T / tau_m + 1e-9))
    best = (0.0, 0)
    for m in range(1, (limit if polarized else limit // 2) + 1):
        if polarized:
            info = fisher_polarized(m, phi, 0.0, T, tau_m, detector=detector).info
        else:
            info = fisher_unpolarized(m, m, phi, 0.0, T, tau_m, detector=detector).info
        if info > best[0]:
            best = (info, m)
    return best


@pytest.mark.parametrize("phi,T", [(0.05, 30.0), (0.1, 100.0), (0.3, 20.0), (0.02, 400.0)])
@pytest.mark.parametrize("polarized", [False, True])
def test_optimizer_matches_unpruned_scan(phi, T, polarized):
    n1, n2, r = optimize_measurement_count(phi, T, 1.0, polarized=polarized)
    info, m = _scan(phi, T, 1.0, polarized=polarized)
    assert math.isclose(r.info, info, rel_tol=1e-12)
    assert n2 == m and (polarized or n1 == m)


def test_optimizer_projective_and_weak_limits():
    n1, n2, r = optimize_measurement_count(math.pi / 4, 10.0, 1.0)
    assert (n1, n2) == (1, 1) and math.isclose(r.info, 4 * 64)
    # weak regime: FI ~ n^2 (T - 2 n tau_m)^2 unpolarized, n (T - n tau_m)^2 polarized
    phi, tau_m, T = 1e-4, 1.0, 600.0
    n1, n2, _ = optimize_measurement_count(phi, T, tau_m)
    assert abs((n1 + n2) * tau_m - T / 2) <= 4
    _, n, _ = optimize_measurement_count(phi, T, tau_m, polarized=True)
    assert abs(n * tau_m - T / 3) <= 2


def test_optimizer_unbalanced_not_worse():
    for phi in (0.05, 0.2):
        bal = optimize_measurement_count(phi, 40.0, 1.0)[2].info
        free = optimize_measurement_count(phi, 40.0, 1.0, balanced=False)[2].info
        assert free >= bal * (1 - 1e-12)


def test_optimizer_respects_n_max():
    n1, n2, _ = optimize_measurement_count(0.01, 100.0, 1.0, n_max=10)
    assert n1 + n2 <= 10 and n1 == n2 == 5


def test_convergence_thresholds():
    assert convergence_threshold(0.1) == 25
    assert convergence_threshold(math.pi / 4) == 1
    assert convergence_threshold(0.1, DET) == 28334
    assert convergence_threshold(0.1, DetectorModel(0.3, 0.3)) == math.inf
    with pytest.raises(ValueError):
        convergence_threshold(0.0)


def test_imperfect_two_readout_matches_enumeration():
    phi, tau = 0.2, 1.0
    for a, b in [(0.3, 0.1), (0.05, 0.035), (1.0, 0.0)]:
        ref = enumerated_fisher(1, 1, 1.0, phi, math.pi / (4 * tau), tau, False, (a, b))
        assert math.isclose(fisher_two_weak_imperfect(phi, tau, DetectorModel(a, b)), ref, rel_tol=1e-8)
        multi = fisher_imperfect_multi(1, 1, phi, DetectorModel(a, b), tau + 2 * phi, phi).info
        assert math.isclose(multi, ref, rel_tol=1e-8)
    assert fisher_two_weak_imperfect(0.2, 1.0, DetectorModel(0.4, 0.4)) == 0.0


def test_perfect_two_readout_limit():
    phi, T = 0.01, 3.0
    info = fisher_two_weak_imperfect(phi, T, DetectorModel(1.0, 0.0))
    assert math.isclose(info, 64 * phi**4 * T * T, rel_tol=1e-3)


def test_suppression_factor():
    assert math.isclose(suppression_factor(DET), 1.7517e-6, rel_tol=1e-4)
    for a, b in [(0.005, 0.0035), (0.002, 0.0005)]:
        det = DetectorModel(a, b)
        exact = fisher_two_weak_imperfect(0.01, 1.0, det) / fisher_two_weak_imperfect(0.01, 1.0, DetectorModel(1, 0))
        assert abs(suppression_factor(det) / exact - 1) < 0.01

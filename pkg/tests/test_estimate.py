import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from corrspec.estimate import (
    FrequencyEstimator,
    GridSpec,
    crb_check,
    exact_count_distribution,
    half_fringe,
    mle_counts,
    mle_frequency,
    sample_counts,
)
from corrspec.operators import DetectorModel, NucleusParams, ProtocolSchedule
from corrspec.simulate import run_batch

SCHED = ProtocolSchedule(2, 2, 0.2, 1.0)


def test_grid_spec():
    g = GridSpec(0.0, 1.0, 5)
    assert np.allclose(g.values, [0, 0.25, 0.5, 0.75, 1.0])
    assert g.shifted(2.0).lo == 2.0
    with pytest.raises(ValueError):
        GridSpec(1.0, 0.0)
    with pytest.raises(ValueError):
        GridSpec(0.0, 1.0, 2)
    h = half_fringe(2.0, 1.0)
    assert h.lo <= 2.0 <= h.hi and math.isclose(h.hi - h.lo, math.pi / 2)


def test_count_distribution_normalised():
    p = exact_count_distribution(SCHED, 0.2, 0.4, DetectorModel(0.3, 0.1))
    assert p.shape == (3, 3) and math.isclose(p.sum(), 1.0)


def test_non_identifiable_when_coupling_vanishes():
    counts = sample_counts(SCHED, 0.0, 0.4, 500, 3, seed=1)
    res = mle_counts(counts, SCHED, 0.0, half_fringe(0.4, 1.0))
    assert not res.identifiable.any() and np.isnan(res.estimates).all()
    rep = crb_check(0.0, 1.8, 0.4, 2, 2, shots=100, experiments=5, tau_m=0.2)
    assert rep.flagged and rep.fisher_variance == math.inf


def test_consistency():
    omega = 0.6
    grid = half_fringe(omega, SCHED.tau)
    errs = []
    for shots in (500, 50000):
        counts = sample_counts(SCHED, 0.3, omega, shots, 40, seed=2)
        est = mle_counts(counts, SCHED, 0.3, grid).estimates
        errs.append(np.sqrt(np.mean((est - omega) ** 2)))
    assert errs[1] < errs[0] / 5 and errs[1] < 0.02


def test_refinement_never_worse_than_grid():
    counts = sample_counts(SCHED, 0.3, 0.6, 2000, 50, seed=3)
    res = mle_counts(counts, SCHED, 0.3, GridSpec(0.0, math.pi / 2, 33))
    assert np.all(res.log_likelihood >= res.coarse_log_likelihood)
    fine = mle_counts(counts, SCHED, 0.3, GridSpec(0.0, math.pi / 2, 20001))
    assert np.allclose(res.estimates, fine.estimates, atol=2e-4)


@pytest.mark.parametrize("m", [1, 3, -2])
def test_equivariance_under_period_shift(m):
    tau = SCHED.tau
    shift = m * math.pi / tau
    counts = sample_counts(SCHED, 0.3, 0.6, 2000, 20, seed=4)
    grid = half_fringe(0.6, tau)
    a = mle_counts(counts, SCHED, 0.3, grid).estimates
    b = mle_counts(counts, SCHED, 0.3, grid.shifted(shift)).estimates
    assert np.allclose(b - a, shift, atol=1e-9)


def test_counts_path_matches_record_path():
    nuc = NucleusParams(1.5, 0.0, 0.5)
    sched = ProtocolSchedule(2, 1, 0.2, 1.0)
    recs = run_batch(nuc, sched, 60, seed=5).records
    grid = half_fringe(0.5, 1.0, 65)
    fast = mle_frequency(recs, grid)
    # any detection detuning forces the exact recursion; a tiny one leaves the optimum in place
    slow_recs = run_batch(NucleusParams(1.5, 1e-12, 0.5), sched, 60, seed=5).records
    slow = mle_frequency(slow_recs, grid)
    assert fast.estimates[0] == pytest.approx(slow.estimates[0], abs=1e-6)
    assert fast.log_likelihood[0] == pytest.approx(slow.log_likelihood[0], abs=1e-8)


def test_mle_frequency_other_parameters():
    nuc = NucleusParams(1.0, 0.3, 0.5)
    recs = run_batch(nuc, ProtocolSchedule(3, 3, 0.4, 0.8), 400, seed=6, initial="x").records
    res = mle_frequency(recs, (0.5, 1.5, 21), param="g")
    assert res.identifiable[0] and abs(res.estimates[0] - 1.0) < 0.25
    with pytest.raises(ValueError):
        mle_frequency([], (0, 1))


def test_cramer_rao():
    # omega at mid-fringe keeps the grid edges many standard deviations away
    for phi, T, tau_m, n, seed in [(0.1, 6.0, 0.2, 3, 2), (0.2, 1.4, 0.2, 1, 1)]:
        tau = T - 2 * n * tau_m
        rep = crb_check(phi, T, math.pi / (4 * tau), n, n, shots=20000, experiments=400, tau_m=tau_m, seed=seed)
        assert rep.identifiable_fraction == 1.0 and not rep.flagged
        assert rep.ratio_ci[0] < 1.0 < rep.ratio_ci[1]
        assert rep.histogram.sum() == 400 and len(rep.bin_edges) == len(rep.histogram) + 1


def test_strong_regime_ratio():
    tau = 2.0
    rep = crb_check(math.pi / 4, tau + 1.0, math.pi / (8 * tau), 1, 1, shots=2000, experiments=400,
                    tau_m=0.5, seed=1)
    assert 0.8 < rep.ratio < 1.25


def test_crb_check_errors():
    with pytest.raises(ValueError):
        crb_check(0.1, 2.0, 0.3, 5, 5, tau_m=0.2)
    with pytest.raises(ValueError):
        crb_check(0.1, 2.0, 0.3, 1, 1, experiments=1, tau_m=0.2)


def test_estimator_api():
    est = FrequencyEstimator(phi=0.3, n1=2, n2=2, tau_m=0.2, tau=1.0)
    params = est.get_params()
    assert params["phi"] == 0.3 and params["grid_points"] == 257
    assert clone(est).get_params() == params
    counts = sample_counts(SCHED, 0.3, 0.6, 20000, 5, seed=7).reshape(5, -1)
    pred = est.fit(counts).predict(counts)
    assert pred.shape == (5,) and np.all(np.abs(pred - 0.6) < 0.1)
    ref = mle_counts(counts.reshape(5, 3, 3), SCHED, 0.3, GridSpec(0.0, math.pi / 2)).estimates
    assert np.allclose(pred, ref)
    with pytest.raises(ValueError):
        est.predict(counts[:, :4])
    with pytest.raises(ValueError):
        est.fit(-counts)
    with pytest.raises(NotFittedError):
        FrequencyEstimator().predict(counts)


def test_count_law_matches_trajectory_simulation():
    sched = ProtocolSchedule(2, 3, 0.2, 1.0)
    batch = run_batch(NucleusParams(1.5, 0.0, 0.5), sched, 20000, seed=8)
    p = exact_count_distribution(sched, 0.3, 0.5)
    expected = 20000 * p
    chi2 = float(np.sum((batch.counts() - expected) ** 2 / expected))
    # 11 degrees of freedom; 99.9% quantile is about 31
    assert chi2 < 31

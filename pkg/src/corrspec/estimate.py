"""Maximum-likelihood frequency estimation and Cramér–Rao checks.

For a single nucleus with no detection detuning the per-shot likelihood only
depends on ``(k1, k2)``, so an experiment of many shots reduces to a count
table and log-likelihoods for all experiments and grid points become one
matrix product.  Other records fall back to the exact recursion of
:func:`corrspec.simulate.log_likelihood_grid`.

The model depends on ``omega`` only through ``cos^2(omega tau)``, so a grid
must sit inside one half-fringe ``[m pi/(2 tau), (m+1) pi/(2 tau)]`` for the
estimate to be unique; :func:`half_fringe` returns the one holding a value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from corrspec import rng
from corrspec._validation import check_count, check_finite, check_positive
from corrspec.analytic import log_binomial, weights
from corrspec.fisher import fisher_unpolarized
from corrspec.operators import DetectorModel, ProtocolSchedule
from corrspec.simulate import MeasurementRecord, log_likelihood_grid

FLAT_LIKELIHOOD = 1e-9
_GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    points: int = 257

    def __post_init__(self):
        check_finite("lo", self.lo)
        check_finite("hi", self.hi)
        if not self.hi > self.lo:
            raise ValueError(f"grid needs hi > lo, got [{self.lo}, {self.hi}]")
        if check_count("points", self.points) < 3:
            raise ValueError("grid needs at least 3 points")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.points)

    def shifted(self, delta: float) -> "GridSpec":
        return GridSpec(self.lo + delta, self.hi + delta, self.points)


@dataclass(frozen=True)
class MleResult:
    estimates: np.ndarray
    log_likelihood: np.ndarray
    coarse_log_likelihood: np.ndarray
    identifiable: np.ndarray


@dataclass
class EstimationReport:
    truth: float
    estimates: np.ndarray
    variance: float
    fisher_variance: float
    ratio: float
    ratio_ci: tuple
    ratio_bootstrap_sigma: float
    grid: GridSpec
    bin_edges: np.ndarray
    histogram: np.ndarray
    shots: int
    n1: int
    n2: int
    identifiable_fraction: float
    flagged: bool = False


def half_fringe(omega: float, tau: float, points: int = 257, margin: float = 0.0) -> GridSpec:
    """Half-fringe of ``cos^2(omega tau)`` containing ``omega``."""
    tau = check_positive("tau", tau)
    width = math.pi / (2 * tau)
    m = math.floor(omega / width)
    return GridSpec(m * width + margin * width, (m + 1) * width - margin * width, points)


def count_log_probabilities(
    schedule: ProtocolSchedule, phi: float, omegas, detector: DetectorModel | None = None
) -> np.ndarray:
    """``log P(one ordered record with counts k1, k2 | omega)``, shape ``(len(omegas), n1+1, n2+1)``."""
    det = None if detector is None or detector.is_perfect else detector
    c1, d1 = weights(schedule.n1, phi, det)
    c2, d2 = weights(schedule.n2, phi, det)
    same = np.outer(c1, c2) + np.outer(d1, d2)
    cross = np.outer(c1, d2) + np.outer(d1, c2)
    cos2 = np.cos(np.atleast_1d(np.asarray(omegas, dtype=float)) * schedule.tau)[:, None, None] ** 2
    with np.errstate(divide="ignore"):
        return np.log(0.5 * (cos2 * same + (1 - cos2) * cross))


def exact_count_distribution(
    schedule: ProtocolSchedule, phi: float, omega: float, detector: DetectorModel | None = None
) -> np.ndarray:
    logp = count_log_probabilities(schedule, phi, [omega], detector)[0]
    lb = log_binomial(schedule.n1)[:, None] + log_binomial(schedule.n2)[None, :]
    p = np.exp(logp + lb)
    return p / p.sum()


def sample_counts(
    schedule: ProtocolSchedule,
    phi: float,
    omega: float,
    shots: int,
    experiments: int,
    seed: int = 0,
    detector: DetectorModel | None = None,
) -> np.ndarray:
    """Count tables of ``experiments`` experiments of ``shots`` shots each.

    Drawn from the exact ``(k1, k2)`` law, which is what :func:`run_batch`
    produces for one nucleus without detection detuning.  Experiment ``e``
    uses stream ``(seed, e)``.
    """
    p = exact_count_distribution(schedule, phi, omega, detector).ravel()
    out = np.empty((experiments, p.size), dtype=np.int64)
    for e in range(experiments):
        out[e] = rng.stream(seed, e).multinomial(shots, p)
    return out.reshape(experiments, schedule.n1 + 1, schedule.n2 + 1)


def _count_objective(counts: np.ndarray, schedule, phi, detector):
    """``f(omegas)``: omegas shape ``(E,)`` or ``(G,)`` broadcast against experiments."""
    flat = counts.reshape(counts.shape[0], -1).astype(float)

    def grid(values):
        logp = count_log_probabilities(schedule, phi, values, detector).reshape(len(values), -1)
        return _dot_counts(flat, logp.T)

    def pointwise(values):
        logp = count_log_probabilities(schedule, phi, values, detector).reshape(len(values), -1)
        with np.errstate(invalid="ignore"):
            return np.where(flat > 0, flat * logp, 0.0).sum(axis=1)

    return grid, pointwise


def _dot_counts(counts: np.ndarray, logp: np.ndarray) -> np.ndarray:
    """``counts @ logp`` with ``0 * -inf = 0`` and ``n * -inf = -inf``."""
    finite = np.where(np.isfinite(logp), logp, 0.0)
    out = counts @ finite
    impossible = (counts > 0).astype(float) @ (~np.isfinite(logp)).astype(float)
    return np.where(impossible > 0, -np.inf, out)


def _maximize(grid_fn, point_fn, n_exp: int, grid: GridSpec, tol: float) -> MleResult:
    values = grid.values
    ll = grid_fn(values)
    best = np.argmax(ll, axis=1)  # first maximum: smallest value wins ties
    coarse = ll[np.arange(n_exp), best]
    finite = np.where(np.isfinite(ll), ll, np.nan)
    with np.errstate(invalid="ignore"):
        spread = np.nanmax(finite, axis=1) - np.nanmin(finite, axis=1)
    identifiable = np.isfinite(coarse) & (spread >= FLAT_LIKELIHOOD)

    step = values[1] - values[0]
    a = np.maximum(values[best] - step, grid.lo)
    b = np.minimum(values[best] + step, grid.hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = point_fn(c), point_fn(d)
    while np.max(b - a) > tol:
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _GOLDEN * (b - a)
        new_d = a + _GOLDEN * (b - a)
        c, d = np.where(left, new_c, d), np.where(left, c, new_d)
        probe = np.where(left, c, d)
        fp = point_fn(probe)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
    mid = 0.5 * (a + b)
    fmid = point_fn(mid)
    better = fmid > coarse
    estimates = np.where(better, mid, values[best])
    final = np.where(better, fmid, coarse)
    estimates = np.where(identifiable, estimates, np.nan)
    return MleResult(estimates, final, coarse, identifiable)


def mle_counts(
    counts,
    schedule: ProtocolSchedule,
    phi: float,
    grid: GridSpec,
    detector: DetectorModel | None = None,
    tol: float | None = None,
) -> MleResult:
    """ML estimate of ``omega`` for each count table in ``counts`` (shape ``(E, n1+1, n2+1)``)."""
    counts = np.asarray(counts)
    if counts.ndim == 2:
        counts = counts[None]
    if counts.shape[1:] != (schedule.n1 + 1, schedule.n2 + 1):
        raise ValueError(f"count tables must have shape {(schedule.n1 + 1, schedule.n2 + 1)}")
    tol = (grid.hi - grid.lo) * 1e-10 if tol is None else tol
    grid_fn, point_fn = _count_objective(counts, schedule, phi, detector)
    return _maximize(grid_fn, point_fn, counts.shape[0], grid, tol)


def _sufficient(records) -> bool:
    first = records[0]
    return all(
        len(r.nuclei) == 1 and r.nuclei[0].delta == 0.0 and r.initial == "mixed"
        and r.schedule == first.schedule and r.detector == first.detector
        and r.nuclei[0].g == first.nuclei[0].g
        for r in records
    )


def mle_frequency(records, grid: GridSpec, param: str = "omega", tol: float | None = None) -> MleResult:
    """Joint ML estimate of ``param`` from a set of records (one experiment).

    Uses the ``(k1, k2)`` counts when they are sufficient, otherwise the exact
    per-record recursion.  A flat likelihood is reported as non-identifiable
    (``estimates`` is NaN).
    """
    records = list(records)
    if not records:
        raise ValueError("at least one record is required")
    if isinstance(grid, (tuple, list)):
        grid = GridSpec(*grid)
    tol = (grid.hi - grid.lo) * 1e-10 if tol is None else tol
    if param == "omega" and _sufficient(records):
        first = records[0]
        table = np.zeros((first.schedule.n1 + 1, first.schedule.n2 + 1), dtype=np.int64)
        for r in records:
            table[r.counts] += 1
        return mle_counts(table, first.schedule, first.schedule.phi(first.nuclei[0].g), grid, first.detector, tol)

    def total(values):
        return sum(log_likelihood_grid(r, values, param) for r in records)

    return _maximize(lambda v: total(v)[None, :], total, 1, grid, tol)


def _bootstrap_ratio(estimates, predicted, seed, n_boot=1000):
    gen = rng.stream(seed, 2**32 - 1)
    idx = gen.integers(0, len(estimates), size=(n_boot, len(estimates)))
    ratios = np.var(estimates[idx], axis=1, ddof=1) / predicted
    return (float(np.quantile(ratios, 0.025)), float(np.quantile(ratios, 0.975))), float(np.std(ratios))


def crb_check(
    phi: float,
    T: float,
    omega: float,
    n1: int,
    n2: int,
    shots: int = 2000,
    experiments: int = 1000,
    tau_m: float = 1.0,
    detector: DetectorModel | None = None,
    grid: GridSpec | None = None,
    seed: int = 0,
) -> EstimationReport:
    """Histogram of ML estimates against the Cramér–Rao variance ``1 / (shots I)``.

    ``T`` is the total time, ``tau_m`` the readout duration (``g = phi/tau_m``);
    each experiment aggregates ``shots`` shots.  The grid defaults to the
    half-fringe holding ``omega``.
    """
    schedule = ProtocolSchedule.from_total_time(n1, n2, tau_m, T)
    if schedule.tau == 0:
        raise ValueError("no rotation time left; omega is not identifiable")
    experiments = check_count("experiments", experiments)
    if experiments < 2:
        raise ValueError("crb_check needs at least 2 experiments")
    grid = half_fringe(omega, schedule.tau) if grid is None else grid
    info = fisher_unpolarized(n1, n2, phi, omega, T, tau_m, optimize_phase=False, detector=detector).info
    predicted = 1.0 / (shots * info) if info > 0 else math.inf
    counts = sample_counts(schedule, phi, omega, shots, experiments, seed, detector)
    result = mle_counts(counts, schedule, phi, grid, detector)
    ok = result.identifiable
    est = result.estimates[ok]
    if len(est) < 2 or not math.isfinite(predicted):
        return EstimationReport(
            omega, result.estimates, math.nan, predicted, math.inf, (math.inf, math.inf), math.inf,
            grid, np.array([]), np.array([]), shots, n1, n2, float(ok.mean()), flagged=True,
        )
    variance = float(np.var(est, ddof=1))
    ratio = variance / predicted
    ci, sigma = _bootstrap_ratio(est, predicted, seed)
    hist, edges = np.histogram(est, bins="fd")
    return EstimationReport(
        omega, result.estimates, variance, predicted, ratio, ci, sigma, grid, edges, hist,
        shots, n1, n2, float(ok.mean()), flagged=not ok.all(),
    )


class FrequencyEstimator(BaseEstimator):
    """ML estimator of ``omega`` with a scikit-learn interface.

    Each row of ``X`` is one experiment's flattened ``(k1, k2)`` count table.
    ``fit`` checks the data and tabulates the grid log-probabilities;
    ``predict`` returns one estimate per row (NaN when non-identifiable).
    """

    def __init__(self, phi=0.2, n1=1, n2=1, tau_m=1.0, tau=1.0, a=1.0, b=0.0,
                 grid_lo=None, grid_hi=None, grid_points=257):
        self.phi = phi
        self.n1 = n1
        self.n2 = n2
        self.tau_m = tau_m
        self.tau = tau
        self.a = a
        self.b = b
        self.grid_lo = grid_lo
        self.grid_hi = grid_hi
        self.grid_points = grid_points

    def _setup(self):
        schedule = ProtocolSchedule(self.n1, self.n2, self.tau_m, self.tau)
        detector = DetectorModel(self.a, self.b)
        if self.grid_lo is None or self.grid_hi is None:
            grid = GridSpec(0.0, math.pi / (2 * self.tau), self.grid_points)
        else:
            grid = GridSpec(self.grid_lo, self.grid_hi, self.grid_points)
        return schedule, detector, grid

    def _check(self, X):
        X = check_array(X, dtype=np.int64)
        width = (self.n1 + 1) * (self.n2 + 1)
        if X.shape[1] != width:
            raise ValueError(f"expected {width} columns, got {X.shape[1]}")
        if (X < 0).any():
            raise ValueError("counts must be non-negative")
        return X.reshape(len(X), self.n1 + 1, self.n2 + 1)

    def fit(self, X, y=None):
        self._check(X)
        self.schedule_, self.detector_, self.grid_ = self._setup()
        return self

    def predict(self, X):
        check_is_fitted(self, "grid_")
        counts = self._check(X)
        return mle_counts(counts, self.schedule_, self.phi, self.grid_, self.detector_).estimates

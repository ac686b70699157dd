"""Fisher information of the correlation protocol and measurement-budget optimisation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from corrspec._validation import check_count, check_finite, check_positive
from corrspec.analytic import event_probabilities, log_binomial, log_weights
from corrspec.operators import DetectorModel

WEAK_REGIME = 0.1
STRONG_REGIME = 10.0
# binomial tails beyond this many standard deviations are below exp(-800)
_WINDOW_SIGMAS = 40.0
_WINDOW_MIN_N = 2000


@dataclass(frozen=True)
class FisherResult:
    info: float
    n1: int
    n2: int
    p_meas_sq_avg: float
    p_pol_sq_avg: float
    regime: str
    zero_information: bool = False


@dataclass(frozen=True)
class PMeasDistribution:
    """Outcome-count law as an equal mixture of two binomials ``p1`` (``|up_x>``) and ``p2``."""

    n: int
    k: np.ndarray
    c_k: np.ndarray
    d_k: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    @property
    def p(self) -> np.ndarray:
        return 0.5 * (self.p1 + self.p2)

    @property
    def p_meas(self) -> np.ndarray:
        total = self.c_k + self.d_k
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, (self.c_k - self.d_k) / np.where(total > 0, total, 1), 0.0)

    @property
    def mean_sq(self) -> float:
        return _mean_sq(self.p1, self.p2)


def _mean_sq(p1: np.ndarray, p2: np.ndarray) -> float:
    s = p1 + p2
    mask = s > 0
    # rounding can push the sum a hair above its bound of 1
    return min(float(0.5 * np.sum((p1[mask] - p2[mask]) ** 2 / s[mask])), 1.0)


def _binomials(n: int, phi: float, detector: DetectorModel | None):
    log_c, log_d = log_weights(n, phi, _perfect_as_none(detector))
    lb = log_binomial(n)
    return np.exp(lb + log_c), np.exp(lb + log_d)


def _perfect_as_none(detector):
    if detector is None or detector.is_perfect:
        return None
    return detector


def p_meas_distribution(n: int, phi: float, detector: DetectorModel | None = None) -> PMeasDistribution:
    n = check_count("n", n)
    phi = check_finite("phi", phi)
    det = _perfect_as_none(detector)
    log_c, log_d = log_weights(n, phi, det)
    lb = log_binomial(n)
    return PMeasDistribution(
        n=n,
        k=np.arange(n + 1),
        c_k=np.exp(log_c),
        d_k=np.exp(log_d),
        p1=np.exp(lb + log_c),
        p2=np.exp(lb + log_d),
    )


def _windowed_binomials(n: int, phi: float, detector: DetectorModel | None):
    """Binomial pmfs restricted to the ``k`` window holding all non-negligible mass."""
    e_up, e_dn = event_probabilities(phi, _perfect_as_none(detector))
    lo_p, hi_p = min(e_up, e_dn), max(e_up, e_dn)
    spread = _WINDOW_SIGMAS * math.sqrt(n * 0.25) + 1
    lo = max(0, int(math.floor(n * lo_p - spread)))
    hi = min(n, int(math.ceil(n * hi_p + spread)))
    k = np.arange(lo, hi + 1)
    lb = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)

    def pmf(e):
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = lb + np.where(k > 0, k * np.log(e) if e > 0 else -np.inf, 0.0)
            logp = logp + np.where(n - k > 0, (n - k) * np.log1p(-e) if e < 1 else -np.inf, 0.0)
        return np.exp(logp)

    return pmf(e_up), pmf(e_dn)


def p_meas_sq_avg(n: int, phi: float, detector: DetectorModel | None = None) -> float:
    """Trajectory average of ``p_meas**2`` after ``n`` readouts."""
    if n == 0:
        return 0.0
    if n > _WINDOW_MIN_N:
        return _mean_sq(*_windowed_binomials(n, phi, detector))
    return _mean_sq(*_binomials(n, phi, detector))


def regime_parameter(phi: float, T: float, tau_m: float, detector: DetectorModel | None = None) -> float:
    """``g^2 tau_m T``, scaled by ``(a-b)^2/(a+b)`` for an imperfect detector."""
    q = phi * phi * T / tau_m
    det = _perfect_as_none(detector)
    if det is not None:
        q *= (det.a - det.b) ** 2 / (det.a + det.b) if det.a + det.b > 0 else 0.0
    return q


def regime_tag(phi, T, tau_m, detector=None) -> str:
    q = regime_parameter(phi, T, tau_m, detector)
    if q < WEAK_REGIME:
        return "weak"
    if q > STRONG_REGIME:
        return "strong"
    return "crossover"


def _rotation_time(n: int, T: float, tau_m: float) -> float:
    tau = T - n * tau_m
    if tau < -1e-12 * max(1.0, T):
        raise ValueError(f"infeasible schedule: {n} measurements of {tau_m} exceed T = {T}")
    return max(tau, 0.0)


def fisher_polarized(
    n: int,
    phi: float,
    omega: float,
    T: float,
    tau_m: float,
    optimize_phase: bool = True,
    detector: DetectorModel | None = None,
) -> FisherResult:
    """FI for a fully x-polarised nucleus followed by ``n`` readouts."""
    n = check_count("n", n)
    T = check_positive("T", T)
    tau_m = check_positive("tau_m", tau_m)
    omega = check_finite("omega", omega)
    tau = _rotation_time(n, T, tau_m)
    regime = regime_tag(phi, T, tau_m, detector)
    if n == 0:
        return FisherResult(0.0, 0, 0, 0.0, 1.0, regime, zero_information=True)
    p1, p2 = _binomials(n, phi, detector)
    msq = _mean_sq(p1, p2)
    if optimize_phase:
        info = 4.0 * msq * tau * tau
    else:
        cos2 = math.cos(omega * tau) ** 2
        sin2 = 1.0 - cos2
        denom = p1 * cos2 + p2 * sin2
        mask = denom > 0
        info = (
            tau * tau * math.sin(2 * omega * tau) ** 2
            * float(np.sum((p1[mask] - p2[mask]) ** 2 / denom[mask]))
        )
    return FisherResult(info, 0, n, msq, 1.0, regime, zero_information=info == 0.0)


def fisher_unpolarized(
    n1: int,
    n2: int,
    phi: float,
    omega: float,
    T: float,
    tau_m: float,
    optimize_phase: bool = True,
    detector: DetectorModel | None = None,
) -> FisherResult:
    """FI for a maximally mixed nucleus with ``n1`` initial and ``n2`` final readouts."""
    n1 = check_count("n1", n1)
    n2 = check_count("n2", n2)
    T = check_positive("T", T)
    tau_m = check_positive("tau_m", tau_m)
    omega = check_finite("omega", omega)
    tau = _rotation_time(n1 + n2, T, tau_m)
    regime = regime_tag(phi, T, tau_m, detector)
    if n1 == 0 or n2 == 0:
        pol = p_meas_sq_avg(n1, phi, detector)
        meas = p_meas_sq_avg(n2, phi, detector)
        return FisherResult(0.0, n1, n2, meas, pol, regime, zero_information=True)
    a1, b1 = _binomials(n1, phi, detector)
    a2, b2 = _binomials(n2, phi, detector)
    pol = _mean_sq(a1, b1)
    meas = _mean_sq(a2, b2)
    if optimize_phase:
        info = 4.0 * pol * meas * tau * tau
    else:
        cos2 = math.cos(omega * tau) ** 2
        sin2 = 1.0 - cos2
        same = np.outer(a1, a2) + np.outer(b1, b2)
        cross = np.outer(a1, b2) + np.outer(b1, a2)
        diff2 = np.outer((a1 - b1) ** 2, (a2 - b2) ** 2)
        denom = cos2 * same + sin2 * cross
        mask = denom > 0
        info = (
            0.5 * tau * tau * math.sin(2 * omega * tau) ** 2
            * float(np.sum(diff2[mask] / denom[mask]))
        )
    return FisherResult(info, n1, n2, meas, pol, regime, zero_information=info == 0.0)


def fisher_imperfect_multi(
    n1: int,
    n2: int,
    phi: float,
    detector: DetectorModel,
    T: float,
    tau_m: float,
    omega: float = 0.0,
    optimize_phase: bool = True,
) -> FisherResult:
    """Unpolarized-start FI with photon-counting readout."""
    return fisher_unpolarized(n1, n2, phi, omega, T, tau_m, optimize_phase, detector)


def fisher_two_weak_imperfect(phi: float, T: float, detector: DetectorModel) -> float:
    """FI of one initial and one final photon-counting readout (phase optimised)."""
    a, b = detector.a, detector.b
    if a == b:
        return 0.0
    strength = 2 * (a - b) ** 2 / ((a + b) * (2 - a - b)) * math.sin(2 * phi) ** 2
    return strength**2 * T * T


def suppression_factor(detector: DetectorModel) -> float:
    """Small-``a,b`` FI ratio imperfect/perfect for two readouts, ``((a-b)^2 / (2(a+b)))^2``."""
    a, b = detector.a, detector.b
    return ((a - b) ** 2 / (2 * (a + b))) ** 2


class _MeanSqCache:
    """``<p_meas^2>(m)`` evaluated lazily; shared by both detection periods."""

    def __init__(self, phi, detector):
        self.phi = phi
        self.detector = detector
        self._values = {0: 0.0}

    def __call__(self, m: int) -> float:
        v = self._values.get(m)
        if v is None:
            v = self._values[m] = p_meas_sq_avg(m, self.phi, self.detector)
        return v


def optimize_measurement_count(
    phi: float,
    T: float,
    tau_m: float,
    detector: DetectorModel | None = None,
    polarized: bool = False,
    balanced: bool = True,
    n_max: int | None = None,
):
    """Exhaustive scan of the measurement count at optimised phase.

    Returns ``(n1, n2, FisherResult)``.  Unpolarized scans use ``n1 == n2``
    unless ``balanced=False``.  Since ``<p^2> <= 1`` the FI of any schedule
    with ``n`` readouts is at most ``4 (T - n tau_m)^2``; the scan stops once
    that bound cannot beat the incumbent.  Ties go to the smallest count.
    """
    T = check_positive("T", T)
    tau_m = check_positive("tau_m", tau_m)
    limit = int(math.floor(T / tau_m + 1e-9))
    if n_max is not None:
        limit = min(limit, check_count("n_max", n_max))
    msq = _MeanSqCache(phi, detector)
    best = (0.0, 0, 0)
    if polarized:
        for n in range(1, limit + 1):
            tau = T - n * tau_m
            if 4 * tau * tau <= best[0]:
                break
            info = 4 * msq(n) * tau * tau
            if info > best[0]:
                best = (info, 0, n)
    elif balanced:
        for m in range(1, limit // 2 + 1):
            tau = T - 2 * m * tau_m
            if 4 * tau * tau <= best[0]:
                break
            v = msq(m)
            info = 4 * v * v * tau * tau
            if info > best[0]:
                best = (info, m, m)
    else:
        for n in range(2, limit + 1):
            tau = T - n * tau_m
            if 4 * tau * tau <= best[0]:
                break
            for n1 in range(1, n):
                info = 4 * msq(n1) * msq(n - n1) * tau * tau
                if info > best[0]:
                    best = (info, n1, n - n1)
    _, n1, n2 = best
    if polarized:
        result = fisher_polarized(n2, phi, 0.0, T, tau_m, True, detector)
    else:
        result = fisher_unpolarized(n1, n2, phi, 0.0, T, tau_m, True, detector)
    return n1, n2, result


def convergence_threshold(phi: float, detector: DetectorModel | None = None) -> float:
    """Readouts needed for the two outcome binomials to separate.

    Perfect readout: ``ceil(cot^2(2 phi))`` (at least 1).  Photon counting:
    ``ceil(3 (a+b) / (4 (a-b)^2 phi^2))``; ``math.inf`` when ``a == b``.
    """
    phi = check_positive("phi", phi)
    det = _perfect_as_none(detector)
    if det is None:
        t = math.tan(2 * phi)
        bound = 0.0 if not math.isfinite(t) or abs(t) > 1e15 else 1.0 / (t * t)
    else:
        if det.a == det.b:
            return math.inf
        bound = 3 * (det.a + det.b) / (4 * (det.a - det.b) ** 2 * phi * phi)
    # guard against ceil() of values like 24.000000000000004
    return max(1, math.ceil(bound - 1e-9))

"""Closed-form correlation probabilities, trajectory weights and precision.

Outcome counting convention: for perfect measurements ``k`` counts the ``-1``
electron outcomes in a detection period; with a :class:`DetectorModel` it
counts detected photons, the bright state being the ``+1`` outcome.  In both
cases ``c_k`` is the probability of one particular sequence given the nucleus
is in ``|up_x>`` and ``d_k`` given ``|down_x>``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy.special import gammaln

from corrspec._validation import check_count, check_finite, check_sign
from corrspec.operators import (
    DetectorModel,
    NucleusParams,
    conditional_propagator,
    delayed_propagator,
)

WEAK_COUPLING_LIMIT = 0.2


class WeakCouplingWarning(UserWarning):
    """A weak-coupling formula was evaluated outside its validity regime."""


@dataclass(frozen=True)
class TrajectoryWeight:
    c_k: float
    d_k: float
    n: int
    k: int
    informative: bool = True

    @property
    def p_meas(self) -> float:
        total = self.c_k + self.d_k
        return 0.0 if total == 0 else (self.c_k - self.d_k) / total


@dataclass(frozen=True)
class JointTrajectoryWeight:
    c: float
    d: float
    n1: int
    n2: int
    k1: int
    k2: int

    @classmethod
    def combine(cls, first: TrajectoryWeight, second: TrajectoryWeight) -> "JointTrajectoryWeight":
        return cls(
            first.c_k * second.c_k + first.d_k * second.d_k,
            first.c_k * second.d_k + first.d_k * second.c_k,
            first.n,
            second.n,
            first.k,
            second.k,
        )


def corr_prob_single(phi, omega, tau, sign=1):
    """Probability of equal (``sign=+1``) or opposite outcomes of two single measurements."""
    s = check_sign(sign)
    return 0.5 * (1.0 + s * np.sin(2 * phi) ** 2 * np.cos(2 * omega * tau))


def precision_delta_omega(phi: float, omega: float, tau: float) -> float:
    """Frequency uncertainty of the two-measurement protocol; ``inf`` at derivative nodes."""
    s2 = math.sin(2 * phi) ** 2
    slope = abs(math.sin(2 * omega * tau))
    denom = 2.0 * s2 * tau * slope
    if denom < 1e-300 or slope < 1e-15 or s2 < 1e-300:
        return math.inf
    num = math.sqrt(max(0.0, 1.0 - s2 * s2 * math.cos(2 * omega * tau) ** 2))
    return num / denom


def corr_prob_two(phi1, phi2, omega1, omega2, tau, sign=1):
    s = check_sign(sign)
    a = np.cos(2 * omega1 * tau) * np.sin(2 * phi1) ** 2 * np.cos(2 * phi2) ** 2
    b = np.cos(2 * omega2 * tau) * np.cos(2 * phi1) ** 2 * np.sin(2 * phi2) ** 2
    return 0.5 + s * 0.5 * (a + b)


def weak_coupling_valid(phis, limit: float = WEAK_COUPLING_LIMIT) -> bool:
    return bool(np.all(np.abs(np.asarray(phis, dtype=float)) <= limit))


def corr_prob_multi_weak(phis, omegas, tau, sign=1, limit: float = WEAK_COUPLING_LIMIT):
    """Leading-order correlation probability for several weakly coupled nuclei.

    Emits :class:`WeakCouplingWarning` when any ``|phi_k| > limit``.
    """
    s = check_sign(sign)
    phis = np.asarray(phis, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    if phis.shape != omegas.shape:
        raise ValueError("phis and omegas must have the same length")
    if not weak_coupling_valid(phis, limit):
        warnings.warn(
            f"weak-coupling formula used with max |phi| = {np.abs(phis).max():.3g} > {limit}",
            WeakCouplingWarning,
            stacklevel=2,
        )
    return 0.5 + s * 2.0 * float(np.sum(phis**2 * np.cos(2 * omegas * tau)))


def event_probabilities(phi: float, detector: DetectorModel | None = None) -> tuple[float, float]:
    """Per-measurement probability of the counted event given ``|up_x>`` / ``|down_x>``."""
    alpha = math.sin(phi + math.pi / 4) ** 2
    beta = math.sin(phi - math.pi / 4) ** 2
    if detector is None:
        # counted event: the -1 outcome
        return beta, alpha
    a, b = detector.a, detector.b
    return a * alpha + b * beta, a * beta + b * alpha


def _xlogy(k, p):
    k = np.asarray(k, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(k == 0, 0.0, k * np.log(p) if p > 0 else -np.inf)


def log_weights(n: int, phi: float, detector: DetectorModel | None = None):
    """``(log c_k, log d_k)`` for ``k = 0..n`` (``-inf`` for impossible sequences)."""
    e_up, e_dn = event_probabilities(phi, detector)
    k = np.arange(n + 1)
    log_c = _xlogy(k, e_up) + _xlogy(n - k, 1.0 - e_up)
    log_d = _xlogy(k, e_dn) + _xlogy(n - k, 1.0 - e_dn)
    return log_c, log_d


def log_binomial(n: int) -> np.ndarray:
    k = np.arange(n + 1)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def weights(n: int, phi: float, detector: DetectorModel | None = None):
    """``(c_k, d_k)`` arrays for ``k = 0..n``."""
    log_c, log_d = log_weights(n, phi, detector)
    return np.exp(log_c), np.exp(log_d)


def _check_k(n, k):
    n = check_count("n", n)
    k = check_count("k", k)
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    return n, k


def trajectory_prob_polarized(n, k, phi, omega, tau):
    """Probability of one ordered sequence with ``k`` minus outcomes, nucleus starting in ``|up_x>``."""
    n, k = _check_k(n, k)
    c, d = weights(n, phi)
    return c[k] * math.cos(omega * tau) ** 2 + d[k] * math.sin(omega * tau) ** 2


def trajectory_prob_unpolarized(n1, n2, k1, k2, phi, omega, tau):
    """Probability of one ordered record with ``k1`` / ``k2`` minus outcomes from a mixed start."""
    n1, k1 = _check_k(n1, k1)
    n2, k2 = _check_k(n2, k2)
    c1, d1 = weights(n1, phi)
    c2, d2 = weights(n2, phi)
    same = c1[k1] * c2[k2] + d1[k1] * d2[k2]
    cross = c1[k1] * d2[k2] + d1[k1] * c2[k2]
    return 0.5 * math.cos(omega * tau) ** 2 * same + 0.5 * math.sin(omega * tau) ** 2 * cross


def imperfect_trajectory_weights(n, k, phi, detector: DetectorModel) -> TrajectoryWeight:
    """Sequence weights with ``k`` detected photons out of ``n`` readouts.

    ``a == b`` yields ``c_k == d_k`` and ``informative=False``.
    """
    n, k = _check_k(n, k)
    phi = check_finite("phi", phi)
    c, d = weights(n, phi, detector)
    return TrajectoryWeight(float(c[k]), float(d[k]), n, k, informative=detector.informative)


def _trace(a: np.ndarray) -> complex:
    return complex(np.trace(a))


def exact_joint_prob(nuclei, tau: float, T: float) -> float:
    """Probability of two ``+1`` outcomes without the weak-coupling approximation.

    ``tau`` is each detection duration and ``T`` the rotation time between them;
    every nucleus starts maximally mixed.  The nuclear rotation turns the second
    detection's coupling axis by ``-2 omega_k T``.
    """
    nuclei = [p if isinstance(p, NucleusParams) else NucleusParams(*p) for p in nuclei]
    if not nuclei:
        raise ValueError("at least one nucleus is required")
    prod = np.ones(4, dtype=complex)
    for p in nuclei:
        up = conditional_propagator(p, tau, +1).matrix
        um = conditional_propagator(p, tau, -1).matrix
        phase = -2.0 * p.omega * T
        vp = delayed_propagator(p, tau, phase, +1).matrix
        vm = delayed_propagator(p, tau, phase, -1).matrix
        vmv = vm.conj().T @ vp
        vpv = vp.conj().T @ vm
        prod *= np.array(
            [
                _trace(vmv @ up @ um.conj().T),
                _trace(vpv @ up @ um.conj().T),
                _trace(vmv @ um @ up.conj().T),
                _trace(vpv @ um @ up.conj().T),
            ]
        )
    n = len(nuclei)
    total = 4.0 * 2**n - prod[0] + prod[1] + prod[2] - prod[3]
    return float(total.real) / (16.0 * 2**n)


def dense_joint_prob(nuclei, tau: float, T: float, outcomes=(1, 1)) -> float:
    """Reference: full electron-nuclei simulation with matrix exponentials."""
    from scipy.linalg import expm

    from corrspec.operators import SIGMA_X, SIGMA_Y, SIGMA_Z, IDENTITY

    nuclei = list(nuclei)
    m = len(nuclei)
    d = 2**m

    def embed(op, j):
        mats = [IDENTITY] * m
        mats[j] = op
        return reduce(np.kron, mats)

    hx = sum(-p.g * embed(SIGMA_X, j) for j, p in enumerate(nuclei))
    hz = sum(p.delta * embed(SIGMA_Z, j) for j, p in enumerate(nuclei))
    h_det = np.kron(SIGMA_Z, hx) + np.kron(IDENTITY, hz)
    u_det = expm(-1j * tau * h_det)
    h_rot = sum(p.omega * embed(SIGMA_Z, j) for j, p in enumerate(nuclei))
    u_rot = expm(-1j * T * h_rot)
    e_init = np.array([1, 1j]) / math.sqrt(2)
    rho_n = np.eye(d, dtype=complex) / d
    for i, outcome in enumerate(outcomes):
        if i:
            rho_n = u_rot @ rho_n @ u_rot.conj().T
        rho = np.kron(np.outer(e_init, e_init.conj()), rho_n)
        rho = u_det @ rho @ u_det.conj().T
        e_out = np.array([1, outcome]) / math.sqrt(2)
        proj = np.kron(e_out.conj()[None, :], np.eye(d))
        rho_n = proj @ rho @ proj.conj().T
    return float(np.trace(rho_n).real)

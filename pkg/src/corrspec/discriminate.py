"""Telling a quantum (nuclear) signal from classical noise at the same frequency.

Quantum contrasts are ``p(+) - p(-)`` of the final readout, computed by exact
density-matrix recursion with the measurement Kraus operators.  The classical
signal ``g_c cos(omega_n t + varphi)`` is modelled through the phase it imprints
on the electron during a readout, ``theta = g_c tau_m cos(varphi)``, giving
``p(+) - p(-) = -sin(2 theta)``; nothing it does depends on the nucleus, so
conditioning pulses have no effect on it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from corrspec import rng
from corrspec._validation import check_count, check_finite, check_nonnegative
from corrspec.operators import (
    SIGMA_X,
    SIGMA_Y,
    IDENTITY,
    NucleusParams,
    kraus_pair,
    rotation_unitary,
)

SCHEMES = ("polarized", "pi-pulse", "nv-mediated")
_BLOCK = 4096


@dataclass(frozen=True)
class ClassicalNoiseModel:
    """Amplitude uniform on ``[0, g_max]``, phase uniform on ``[0, 2 pi)``, frequency locked to the nucleus."""

    g_max: float
    tau_m: float
    omega: float = 0.0

    def __post_init__(self):
        check_nonnegative("g_max", self.g_max)
        check_nonnegative("tau_m", self.tau_m)
        check_finite("omega", self.omega)


@dataclass(frozen=True)
class DiscriminationReport:
    scheme: str
    quantum_contrast: float
    classical_contrast: float
    classical_stderr: float
    samples: int
    formula: float

    @property
    def classical_z(self) -> float:
        return self.classical_contrast / self.classical_stderr if self.classical_stderr > 0 else 0.0


def _nucleus(phi: float) -> tuple[np.ndarray, np.ndarray]:
    # unit coupling with tau_m = phi keeps phi the only parameter
    return kraus_pair(NucleusParams(1.0), phi) if phi > 0 else (IDENTITY / math.sqrt(2),) * 2


def _readout_contrast(rho: np.ndarray, phi: float) -> float:
    kp, km = _nucleus(phi)
    e = kp.conj().T @ kp - km.conj().T @ km
    return float(np.trace(e @ rho).real)


def _rotate(rho, omega, tau):
    u = rotation_unitary(omega, tau)
    return u @ rho @ u.conj().T


def polarized_contrast(p_pol: float, phi: float, omega: float, tau: float) -> float:
    """Final-readout contrast for a nucleus with x-polarisation ``2 p_pol``: ``2 p_pol sin(2 phi) cos(2 omega tau)``."""
    if not 0.0 <= p_pol <= 0.5:
        raise ValueError(f"p_pol must lie in [0, 0.5], got {p_pol}")
    return 2 * p_pol * math.sin(2 * phi) * math.cos(2 * omega * tau)


def polarized_contrast_exact(p_pol: float, phi: float, omega: float, tau: float) -> float:
    rho = 0.5 * (IDENTITY + 2 * p_pol * SIGMA_X)
    return _readout_contrast(_rotate(rho, omega, tau), phi)


def pi_pulse_conditioned_contrast(phi: float, omega: float, tau: float) -> float:
    """``sin^2(2 phi) cos(2 omega tau)``: a pi pulse after a ``-`` first outcome aligns the polarisation."""
    return math.sin(2 * phi) ** 2 * math.cos(2 * omega * tau)


def _after_first_readout(phi: float, conditional) -> np.ndarray:
    kp, km = _nucleus(phi)
    rho0 = IDENTITY / 2
    plus = kp @ rho0 @ kp.conj().T
    minus = km @ rho0 @ km.conj().T
    return plus + conditional(minus)


def pi_pulse_conditioned_exact(phi: float, omega: float, tau: float) -> float:
    flip = SIGMA_Y  # pi rotation about y: x -> -x
    rho = _after_first_readout(phi, lambda m: flip @ m @ flip.conj().T)
    return _readout_contrast(_rotate(rho, omega, tau), phi)


def nv_mediated_contrast(phi: float, phi1: float, omega: float, tau: float) -> float:
    """Small-``phi`` form ``2 phi^2 sin^2(phi1/2) cos(2 omega tau)``."""
    return 2 * phi * phi * math.sin(phi1 / 2) ** 2 * math.cos(2 * omega * tau)


def nv_mediated_exact(phi: float, phi1: float, omega: float, tau: float) -> float:
    """Exact recursion: after a ``-`` outcome the NV, prepared in an equal superposition of its
    two levels, rotates the nucleus by ``phi1`` about y in one branch only; the NV is then traced out.

    Closed form ``sin^2(2 phi) sin^2(phi1/2) cos(2 omega tau) / 2``.
    """
    c, s = math.cos(phi1 / 2), math.sin(phi1 / 2)
    rot = c * IDENTITY - 1j * s * SIGMA_Y
    rho = _after_first_readout(phi, lambda m: 0.5 * m + 0.5 * rot @ m @ rot.conj().T)
    return _readout_contrast(_rotate(rho, omega, tau), phi)


def _classical_block(model: ClassicalNoiseModel, tau: float, seed: int, block: int, size: int, readouts: int):
    """Mean of the final outcome (+1/-1) for ``size`` noise realisations."""
    gen = rng.stream(seed, block)
    amp = gen.uniform(0.0, model.g_max, size)
    phase = gen.uniform(0.0, 2 * math.pi, size)
    outcome = None
    for r in range(readouts):
        # the signal phase at readout r: the second one starts a rotation period later
        theta = amp * model.tau_m * np.cos(phase + (2 * model.omega * tau if r else 0.0))
        p_plus = 0.5 * (1 - np.sin(2 * theta))
        outcome = np.where(gen.random(size) < p_plus, 1.0, -1.0)
    return outcome


def classical_contrast(
    model: ClassicalNoiseModel, scheme: str, tau: float, samples: int = 100_000, seed: int = 0, threads: int = 1
) -> tuple[float, float]:
    """Monte Carlo ``(mean final outcome, standard error)`` under the classical noise model.

    ``polarized`` has one readout; the conditioned schemes have two, and their
    conditional operation acts on the nucleus only, which the noise ignores.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    samples = check_count("samples", samples)
    if samples < 2:
        raise ValueError("need at least 2 samples")
    readouts = 1 if scheme == "polarized" else 2
    n_blocks = -(-samples // _BLOCK)
    sizes = [min(_BLOCK, samples - b * _BLOCK) for b in range(n_blocks)]

    def work(b):
        return _classical_block(model, tau, seed, b, sizes[b], readouts)

    if threads <= 1:
        parts = [work(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(n_blocks)))
    x = np.concatenate(parts)
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(samples))


def discriminate(
    scheme: str,
    phi: float,
    omega: float,
    tau: float,
    p_pol: float = 0.5,
    phi1: float = math.pi,
    g_max: float | None = None,
    tau_m: float = 1.0,
    samples: int = 100_000,
    seed: int = 0,
    threads: int = 1,
) -> DiscriminationReport:
    """Quantum contrast (exact), its closed form, and the classical-noise contrast for one scheme.

    ``g_max`` defaults to the quantum coupling ``phi / tau_m``.
    """
    if scheme == "polarized":
        quantum = polarized_contrast_exact(p_pol, phi, omega, tau)
        formula = polarized_contrast(p_pol, phi, omega, tau)
    elif scheme == "pi-pulse":
        quantum = pi_pulse_conditioned_exact(phi, omega, tau)
        formula = pi_pulse_conditioned_contrast(phi, omega, tau)
    elif scheme == "nv-mediated":
        quantum = nv_mediated_exact(phi, phi1, omega, tau)
        formula = nv_mediated_contrast(phi, phi1, omega, tau)
    else:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    g_max = phi / tau_m if g_max is None else g_max
    model = ClassicalNoiseModel(g_max, tau_m, omega)
    mean, se = classical_contrast(model, scheme, tau, samples, seed, threads)
    return DiscriminationReport(scheme, quantum, mean, se, samples, formula)

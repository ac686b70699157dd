"""Exact 2x2 operator algebra for the correlation protocol.

Conventions
-----------
Nuclear spin operators are unit-square (Pauli-like): ``I_x**2 == 1``.  A free
rotation ``exp(-i omega tau I_z)`` therefore turns the transverse Bloch vector
by ``2 omega tau``.

During a detection period the nucleus evolves under ``-s g I_x + delta I_z``
where ``s = +1/-1`` is the electron ``sigma_z`` branch (``sign`` below).  The
electron is initialised along ``init_axis`` and read out along ``meas_axis``;
the default (``y`` then ``x``) is the protocol used throughout the package.
With these choices outcome ``+1`` at ``delta = 0`` gives the Kraus operator
``(cos(phi) + sin(phi) I_x) / sqrt(2)`` (up to a global phase), so a
maximally mixed nucleus collapses to x-polarisation ``+sin(2 phi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import NamedTuple

import numpy as np

from corrspec._validation import (
    check_count,
    check_finite,
    check_nonnegative,
    check_positive,
    check_probability,
    check_sign,
)

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)

# electron z-basis amplitudes <s|+axis>, s ordered (sigma_z=+1, sigma_z=-1)
_ELECTRON_STATES = {
    "x": np.array([1, 1], dtype=complex) / math.sqrt(2),
    "y": np.array([1, 1j], dtype=complex) / math.sqrt(2),
}

NEGLIGIBLE_PROBABILITY = 1e-14


@dataclass(frozen=True)
class NucleusParams:
    """Coupling ``g``, detection detuning ``delta`` and rotation detuning ``omega``."""

    g: float
    delta: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "g", check_nonnegative("g", self.g))
        object.__setattr__(self, "delta", check_finite("delta", self.delta))
        object.__setattr__(self, "omega", check_finite("omega", self.omega))

    def replace(self, **changes) -> "NucleusParams":
        values = {"g": self.g, "delta": self.delta, "omega": self.omega}
        values.update(changes)
        return NucleusParams(**values)


@dataclass(frozen=True)
class ProtocolSchedule:
    """``n1`` measurements, a rotation of length ``tau``, then ``n2`` measurements."""

    n1: int
    n2: int
    tau_m: float
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "n1", check_count("n1", self.n1))
        object.__setattr__(self, "n2", check_count("n2", self.n2))
        object.__setattr__(self, "tau_m", check_positive("tau_m", self.tau_m))
        object.__setattr__(self, "tau", check_nonnegative("tau", self.tau))

    @classmethod
    def from_total_time(cls, n1: int, n2: int, tau_m: float, T: float) -> "ProtocolSchedule":
        tau = T - (n1 + n2) * tau_m
        if tau < 0:
            raise ValueError(
                f"infeasible schedule: (n1+n2)*tau_m = {(n1 + n2) * tau_m} exceeds T = {T}"
            )
        return cls(n1, n2, tau_m, tau)

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    @property
    def T(self) -> float:
        return self.tau + self.n * self.tau_m

    def phi(self, g: float) -> float:
        return g * self.tau_m


@dataclass(frozen=True)
class DetectorModel:
    """Photon probability ``a`` from the bright state and ``b`` from the dark state."""

    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", check_probability("a", self.a))
        object.__setattr__(self, "b", check_probability("b", self.b))

    @property
    def is_perfect(self) -> bool:
        return self.a == 1.0 and self.b == 0.0

    @property
    def informative(self) -> bool:
        return self.a != self.b


@dataclass(frozen=True, eq=False)
class SpinState:
    """Density matrix of one or more nuclei (dimension ``2**m``)."""

    matrix: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.validate:
            check_state(m)

    @classmethod
    def maximally_mixed(cls, n_nuclei: int = 1) -> "SpinState":
        d = 2**n_nuclei
        return cls(np.eye(d, dtype=complex) / d)

    @classmethod
    def from_bloch(cls, x: float = 0.0, y: float = 0.0, z: float = 0.0) -> "SpinState":
        return cls(0.5 * (IDENTITY + x * SIGMA_X + y * SIGMA_Y + z * SIGMA_Z))

    @property
    def bloch(self) -> np.ndarray:
        if self.matrix.shape != (2, 2):
            raise ValueError("Bloch vector is only defined for a single nucleus")
        return np.array([np.trace(self.matrix @ p).real for p in PAULI])


def check_state(m: np.ndarray, atol: float = 1e-12) -> None:
    """Raise ``ValueError`` unless ``m`` is Hermitian, unit trace and PSD."""
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {m.shape}")
    if np.max(np.abs(m - m.conj().T)) > atol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(m).real - 1.0) > atol:
        raise ValueError(f"density matrix trace is {np.trace(m).real!r}, expected 1")
    eig = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    if eig.min() < -atol or eig.max() > 1 + atol:
        raise ValueError(f"density matrix eigenvalues {eig} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class ConditionalPropagator:
    matrix: np.ndarray
    sign: int
    kind: str  # "detection" (U) or "delayed" (V)


@dataclass(frozen=True, eq=False)
class KrausOperator:
    matrix: np.ndarray
    outcome: int
    init_axis: str = "y"
    meas_axis: str = "x"


class KrausResult(NamedTuple):
    probability: float
    state: SpinState | None
    negligible: bool


def su2(t: float, hx: float, hy: float, hz: float) -> np.ndarray:
    """``exp(-i t (hx X + hy Y + hz Z))`` in closed form."""
    n = math.sqrt(hx * hx + hy * hy + hz * hz)
    if n == 0.0:
        return IDENTITY.copy()
    s = math.sin(n * t) / n
    return math.cos(n * t) * IDENTITY - 1j * s * (hx * SIGMA_X + hy * SIGMA_Y + hz * SIGMA_Z)


def su2_derivative(t: float, hx: float, hy: float, hz: float, axis: int) -> np.ndarray:
    """Derivative of :func:`su2` with respect to field component ``axis``."""
    h = (hx, hy, hz)
    n = math.sqrt(hx * hx + hy * hy + hz * hz)
    if n * t < 1e-4:
        # series: sin(nt)/n ~ t - n^2 t^3/6
        s_over_n = t - n * n * t**3 / 6.0
        ds_coeff = -(t**3) / 3.0 + n * n * t**5 / 30.0
        cos_coeff = -t * s_over_n
    else:
        c, s = math.cos(n * t), math.sin(n * t)
        s_over_n = s / n
        ds_coeff = (t * c - s / n) / (n * n)
        cos_coeff = -t * s / n
    hvec = hx * SIGMA_X + hy * SIGMA_Y + hz * SIGMA_Z
    return cos_coeff * h[axis] * IDENTITY - 1j * (
        s_over_n * PAULI[axis] + ds_coeff * h[axis] * hvec
    )


def _check_duration(duration) -> float:
    return check_nonnegative("duration", duration)


def conditional_propagator(p: NucleusParams, duration: float, sign: int) -> ConditionalPropagator:
    """Detection-period propagator for electron branch ``sign``."""
    duration = _check_duration(duration)
    sign = check_sign(sign)
    m = su2(duration, -sign * p.g, 0.0, p.delta)
    return ConditionalPropagator(m, sign, "detection")


def delayed_propagator(
    p: NucleusParams, duration: float, rotation_phase: float, sign: int
) -> ConditionalPropagator:
    """Detection propagator with the coupling axis turned by ``rotation_phase`` in the xy-plane."""
    duration = _check_duration(duration)
    rotation_phase = check_finite("rotation_phase", rotation_phase)
    sign = check_sign(sign)
    m = su2(
        duration,
        -sign * p.g * math.cos(rotation_phase),
        -sign * p.g * math.sin(rotation_phase),
        p.delta,
    )
    return ConditionalPropagator(m, sign, "delayed")


def _electron_weights(init_axis: str, meas_axis: str, outcome: int) -> np.ndarray:
    """Amplitudes ``<outcome|s><s|init>`` for the two electron branches."""
    try:
        init = _ELECTRON_STATES[init_axis]
        meas = _ELECTRON_STATES[meas_axis]
    except KeyError:
        raise ValueError(
            f"unsupported axis combination init={init_axis!r}, meas={meas_axis!r}; "
            "both axes must be 'x' or 'y'"
        ) from None
    # outcome -1 is the state orthogonal to +axis on the equator
    bra = meas.conj() if outcome == 1 else np.array([meas[0], -meas[1]]).conj()
    return bra * init


def combine_branches(
    up: np.ndarray, down: np.ndarray, init_axis: str = "y", meas_axis: str = "x", outcome: int = 1
) -> np.ndarray:
    """Nuclear Kraus matrix from the two branch propagators."""
    w = _electron_weights(init_axis, meas_axis, check_sign(outcome))
    return w[0] * up + w[1] * down


def measurement_kraus(
    p: NucleusParams,
    tau_m: float,
    init_axis: str = "y",
    meas_axis: str = "x",
    outcome: int = 1,
) -> KrausOperator:
    """Kraus operator on the nucleus for one electron readout of duration ``tau_m``."""
    tau_m = check_positive("tau_m", tau_m)
    outcome = check_sign(outcome)
    up = conditional_propagator(p, tau_m, +1).matrix
    down = conditional_propagator(p, tau_m, -1).matrix
    m = combine_branches(up, down, init_axis, meas_axis, outcome)
    return KrausOperator(m, outcome, init_axis, meas_axis)


def kraus_pair(p: NucleusParams, tau_m: float, init_axis: str = "y", meas_axis: str = "x"):
    """``(K_plus, K_minus)`` matrices for one measurement."""
    return tuple(
        measurement_kraus(p, tau_m, init_axis, meas_axis, o).matrix for o in (1, -1)
    )


def joint_kraus_pair(
    nuclei, tau_m: float, init_axis: str = "y", meas_axis: str = "x"
) -> tuple[np.ndarray, np.ndarray]:
    """Kraus pair on the tensor-product space of several nuclei."""
    ups = [conditional_propagator(p, tau_m, +1).matrix for p in nuclei]
    downs = [conditional_propagator(p, tau_m, -1).matrix for p in nuclei]
    up = reduce(np.kron, ups)
    down = reduce(np.kron, downs)
    return tuple(combine_branches(up, down, init_axis, meas_axis, o) for o in (1, -1))


def rotation_unitary(omega: float, tau: float) -> np.ndarray:
    """``exp(-i omega tau I_z)``."""
    a = check_finite("omega", omega) * check_finite("tau", tau)
    return np.diag([np.exp(-1j * a), np.exp(1j * a)])


def joint_rotation_unitary(omegas, tau: float) -> np.ndarray:
    return reduce(np.kron, [rotation_unitary(w, tau) for w in omegas])


def apply_kraus(state: SpinState, k) -> KrausResult:
    """Generalised-measurement update ``K rho K^dag / p``."""
    m = k.matrix if isinstance(k, KrausOperator) else np.asarray(k)
    out = m @ state.matrix @ m.conj().T
    prob = float(np.trace(out).real)
    if prob < NEGLIGIBLE_PROBABILITY:
        return KrausResult(max(prob, 0.0), None, True)
    out = out / prob
    out = 0.5 * (out + out.conj().T)
    return KrausResult(prob, SpinState(out), False)


def free_rotation(state: SpinState, omega: float, tau: float) -> SpinState:
    omega = check_finite("omega", omega)
    tau = check_finite("tau", tau)
    d = state.matrix.shape[0]
    u = joint_rotation_unitary([omega] * int(round(math.log2(d))), tau)
    return SpinState(u @ state.matrix @ u.conj().T)

"""Consecutive weak measurements at fixed detuning (the nano-NMR protocol).

States are handled as unnormalised Pauli-basis vectors ``r`` with
``rho = (r0 I + rx X + ry Y + rz Z) / 2`` and each readout outcome as a real
4x4 superoperator, which keeps enumeration and Monte Carlo vectorised.  The
Fisher information is with respect to the detuning ``delta``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from corrspec import rng
from corrspec._validation import check_count, check_finite, check_nonnegative, check_positive
from corrspec.fisher import optimize_measurement_count, regime_parameter, regime_tag
from corrspec.operators import (
    IDENTITY,
    PAULI,
    SIGMA_X,
    SIGMA_Z,
    DetectorModel,
    KrausOperator,
    SpinState,
)

_BASIS = (IDENTITY,) + PAULI
_INITIAL = {
    "x": np.array([1.0, 1.0, 0.0, 0.0]),
    "y": np.array([1.0, 0.0, 1.0, 0.0]),
    "mixed": np.array([1.0, 0.0, 0.0, 0.0]),
}
MAX_ENUMERATION_STEPS = 20
_CHUNK_ROWS = 1 << 15


@dataclass(frozen=True)
class NmrConfig:
    g: float
    delta: float
    tau_m: float
    n_steps: int
    initial: str = "x"
    gaps: float | tuple = 0.0
    detector: DetectorModel | None = None

    def __post_init__(self):
        object.__setattr__(self, "g", check_nonnegative("g", self.g))
        object.__setattr__(self, "delta", check_finite("delta", self.delta))
        object.__setattr__(self, "tau_m", check_positive("tau_m", self.tau_m))
        object.__setattr__(self, "n_steps", check_count("n_steps", self.n_steps))
        if self.initial not in _INITIAL:
            raise ValueError(f"initial must be one of {sorted(_INITIAL)}, got {self.initial!r}")
        n_gaps = max(self.n_steps - 1, 0)
        if np.ndim(self.gaps) == 0:
            gaps = (check_nonnegative("gaps", self.gaps),) * n_gaps
        else:
            gaps = tuple(check_nonnegative("gaps", x) for x in self.gaps)
            if len(gaps) != n_gaps:
                raise ValueError(f"expected {n_gaps} gaps for {self.n_steps} steps, got {len(gaps)}")
        object.__setattr__(self, "gaps", gaps)

    @property
    def phi(self) -> float:
        return self.g * self.tau_m

    @property
    def total_time(self) -> float:
        return self.n_steps * self.tau_m + sum(self.gaps)

    @property
    def readout_times(self) -> np.ndarray:
        """End time of each readout."""
        steps = np.full(self.n_steps, self.tau_m)
        steps[1:] += np.asarray(self.gaps)
        return np.cumsum(steps)


@dataclass(frozen=True)
class NmrFisherEstimate:
    value: float
    stderr: float
    method: str
    samples: int
    flagged: bool = False


@dataclass
class ComparisonReport:
    phi: float
    g: float
    delta: float
    polarized: bool
    rows: list = field(default_factory=list)
    crossover_T: float | None = None


def _series(n: float, t: float):
    """``sin(nt)/n`` and ``d/dn (sin(nt)/n) / n`` with a small-argument series."""
    if n * t < 1e-4:
        return t - n * n * t**3 / 6.0, -(t**3) / 3.0 + n * n * t**5 / 30.0
    s = math.sin(n * t)
    return s / n, (t * math.cos(n * t) - s / n) / (n * n)


def nmr_kraus_with_derivative(g: float, delta: float, tau_m: float, outcome: int):
    """Kraus matrix ``C_outcome`` and its derivative with respect to ``delta``."""
    n = math.hypot(g, delta)
    c = math.cos(n * tau_m)
    s, ds = _series(n, tau_m)
    sign = 1 if outcome == 1 else -1
    k = (c * IDENTITY - 1j * s * delta * SIGMA_Z + sign * s * g * SIGMA_X) / math.sqrt(2)
    dk = (
        -tau_m * s * delta * IDENTITY
        - 1j * (s + ds * delta * delta) * SIGMA_Z
        + sign * ds * delta * g * SIGMA_X
    ) / math.sqrt(2)
    return k, dk


def nmr_kraus(g: float, delta: float, tau_m: float, outcome: int) -> KrausOperator:
    k, _ = nmr_kraus_with_derivative(
        check_nonnegative("g", g), check_finite("delta", delta), check_positive("tau_m", tau_m), outcome
    )
    return KrausOperator(k, 1 if outcome == 1 else -1, "y", "x")


def superoperator(k: np.ndarray, dk: np.ndarray | None = None):
    """Pauli-basis matrices of ``rho -> K rho K^dag`` and of its derivative."""
    s = np.empty((4, 4))
    d = np.zeros((4, 4))
    for i, pi in enumerate(_BASIS):
        for j, pj in enumerate(_BASIS):
            s[i, j] = 0.5 * np.trace(pi @ k @ pj @ k.conj().T).real
            if dk is not None:
                d[i, j] = np.trace(pi @ dk @ pj @ k.conj().T).real
    return s, d


def _rotation_superop(delta: float, t: float):
    """Free precession ``exp(-i delta t Z)`` and its delta-derivative."""
    a = 2 * delta * t
    c, s = math.cos(a), math.sin(a)
    rot = np.array([[1, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1.0]])
    drot = 2 * t * np.array([[0, 0, 0, 0], [0, -s, -c, 0], [0, c, -s, 0], [0, 0, 0, 0.0]])
    return rot, drot


def _instrument(config: NmrConfig):
    """Superoperators (and derivatives) for the two recorded outcomes ``(+1/photon, -1/none)``."""
    ops = [
        superoperator(*nmr_kraus_with_derivative(config.g, config.delta, config.tau_m, o))
        for o in (1, -1)
    ]
    det = config.detector
    if det is None or det.is_perfect:
        return ops
    (sp, dsp), (sm, dsm) = ops
    return [
        (det.a * sp + det.b * sm, det.a * dsp + det.b * dsm),
        ((1 - det.a) * sp + (1 - det.b) * sm, (1 - det.a) * dsp + (1 - det.b) * dsm),
    ]


def _state_vector(state) -> np.ndarray:
    if isinstance(state, str):
        return _INITIAL[state].copy()
    if isinstance(state, SpinState):
        m = state.matrix
        return np.array([np.trace(p @ m).real for p in _BASIS])
    return np.asarray(state, dtype=float)


def _to_state(r: np.ndarray) -> SpinState:
    m = 0.5 * sum(c * p for c, p in zip(r, _BASIS))
    return SpinState(m)


def nmr_step_probabilities(state, config: NmrConfig):
    """One readout from ``state``: ``(p_plus, p_minus, post_plus, post_minus)``."""
    r = _state_vector(state)
    r = r / r[0]
    out = []
    for s, _ in _instrument(config):
        q = s @ r
        out.append(q)
    probs = [float(q[0]) for q in out]
    posts = [_to_state(q / q[0]) if q[0] > 0 else None for q in out]
    return probs[0], probs[1], posts[0], posts[1]


def probability_trace(config: NmrConfig):
    """Outcome probabilities at each step without conditioning (ensemble average)."""
    ops = _instrument(config)
    channel = ops[0][0] + ops[1][0]
    r = _state_vector(config.initial)
    rot = [_rotation_superop(config.delta, gp)[0] for gp in config.gaps]
    p_plus = np.empty(config.n_steps)
    for j in range(config.n_steps):
        p_plus[j] = (ops[0][0] @ r)[0]
        r = channel @ r
        if j < len(rot):
            r = rot[j] @ r
    return p_plus


def weak_backaction_probability(g: float, delta: float, tau_m: float, t) -> np.ndarray:
    """``p_plus`` for an x-polarised start when backaction is neglected."""
    return 0.5 + 0.5 * math.sin(2 * g * tau_m) * np.cos(2 * delta * np.asarray(t))


def weak_regime_fisher(config: NmrConfig) -> float:
    """``sum_t 4 t^2 sin^2(2 g tau_m) sin^2(2 delta t)`` (x start; cos^2 for a y start)."""
    t = config.readout_times
    osc = np.sin(2 * config.delta * t) if config.initial == "x" else np.cos(2 * config.delta * t)
    if config.initial == "mixed":
        raise ValueError("no weak-backaction closed form for a mixed start")
    return float(np.sum(4 * t * t * math.sin(2 * config.phi) ** 2 * osc**2))


def short_time_fisher(g: float, delta: float, tau_m: float, T: float) -> float:
    return 64.0 / 5.0 * g * g * tau_m * delta * delta * T**5


def mid_regime_fisher(g: float, tau_m: float, T: float) -> float:
    return 8.0 / 3.0 * g * g * tau_m * T**3


def _enumerate(r, dr, ops, rots, step, n_steps) -> float:
    while step < n_steps:
        if len(r) > _CHUNK_ROWS:
            half = len(r) // 2
            return _enumerate(r[:half], dr[:half], ops, rots, step, n_steps) + _enumerate(
                r[half:], dr[half:], ops, rots, step, n_steps
            )
        new_r, new_dr = [], []
        for s, ds in ops:
            new_r.append(r @ s.T)
            new_dr.append(r @ ds.T + dr @ s.T)
        r = np.concatenate(new_r)
        dr = np.concatenate(new_dr)
        keep = r[:, 0] > 0
        r, dr = r[keep], dr[keep]
        if step < len(rots):
            rot, drot = rots[step]
            dr = r @ drot.T + dr @ rot.T
            r = r @ rot.T
        step += 1
    return float(np.sum(dr[:, 0] ** 2 / r[:, 0]))


def _fisher_enumerate(config: NmrConfig) -> float:
    if config.n_steps > MAX_ENUMERATION_STEPS:
        raise ValueError(
            f"enumeration supports at most {MAX_ENUMERATION_STEPS} steps, got {config.n_steps}"
        )
    ops = _instrument(config)
    rots = [_rotation_superop(config.delta, gp) for gp in config.gaps]
    r = _state_vector(config.initial)[None, :]
    return _enumerate(r, np.zeros_like(r), ops, rots, 0, config.n_steps)


def _scores(config: NmrConfig, seed: int, indices: range, block: int = 1024) -> np.ndarray:
    """Exact score ``d log p / d delta`` of sampled trajectories ``indices``."""
    ops = _instrument(config)
    (sp, dsp), (sm, dsm) = ops
    rots = [_rotation_superop(config.delta, gp) for gp in config.gaps]
    m = len(indices)
    r = np.tile(_state_vector(config.initial), (m, 1))
    dr = np.zeros_like(r)
    score = np.zeros(m)
    gens = [rng.stream(seed, i) for i in indices]
    u = None
    for step in range(config.n_steps):
        j = step % block
        if j == 0:
            size = min(block, config.n_steps - step)
            u = np.stack([g.random(size) for g in gens]) if m else np.empty((0, size))
        qp = r @ sp.T
        pp = qp[:, 0]
        plus = u[:, j] < pp
        q = np.where(plus[:, None], qp, r @ sm.T)
        dq = np.where(plus[:, None], r @ dsp.T + dr @ sp.T, r @ dsm.T + dr @ sm.T)
        p = q[:, 0]
        dp = dq[:, 0]
        score += dp / p
        r = q / p[:, None]
        dr = dq / p[:, None] - r * (dp / p)[:, None]
        if step < len(rots):
            rot, drot = rots[step]
            dr = r @ drot.T + dr @ rot.T
            r = r @ rot.T
    return score


def score_samples(config: NmrConfig, samples: int, seed: int = 0, threads: int = 1) -> np.ndarray:
    parts = rng.chunks(samples, threads)
    if threads <= 1:
        pieces = [_scores(config, seed, part) for part in parts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pieces = list(pool.map(lambda part: _scores(config, seed, part), parts))
    return np.concatenate(pieces) if pieces else np.empty(0)


def nmr_fisher(
    config: NmrConfig,
    method: str = "enumerate",
    samples: int = 4000,
    seed: int = 0,
    threads: int = 1,
) -> NmrFisherEstimate:
    """FI of the full readout record with respect to ``delta``.

    ``enumerate`` sums over all ``2**n_steps`` records (``n_steps <= 20``);
    ``monte-carlo`` averages squared exact scores of sampled trajectories and
    reports the standard error of the mean.
    """
    if config.n_steps == 0:
        return NmrFisherEstimate(0.0, 0.0, method, 0)
    if method == "enumerate":
        return NmrFisherEstimate(_fisher_enumerate(config), 0.0, method, 2**config.n_steps)
    if method not in ("monte-carlo", "mc"):
        raise ValueError(f"unknown method {method!r}; use 'enumerate' or 'monte-carlo'")
    samples = check_count("samples", samples)
    if samples == 0:
        raise ValueError("monte-carlo needs samples > 0")
    sq = score_samples(config, samples, seed, threads) ** 2
    value = float(np.mean(sq))
    stderr = float(np.std(sq, ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
    flagged = samples < 100 or (value > 0 and stderr > 0.2 * value)
    return NmrFisherEstimate(value, stderr, "monte-carlo", samples, flagged)


def compare_protocols(
    T_grid,
    phi: float,
    tau_m: float = 1.0,
    delta: float | None = None,
    detector: DetectorModel | None = None,
    polarized: bool = True,
    samples: int = 2000,
    seed: int = 0,
    threads: int = 1,
) -> ComparisonReport:
    """FI of the NMR protocol and of the optimised correlation protocol on a shared budget ``T``.

    ``g = phi / tau_m``; ``delta`` defaults to ``5 g`` so that ``delta T > 1``
    well before the backaction scale ``T ~ 1 / (g^2 tau_m)``.  The NMR record
    uses ``floor(T / tau_m)`` back-to-back readouts; rows carry a regime tag.
    """
    tau_m = check_positive("tau_m", tau_m)
    g = phi / tau_m
    delta = 5.0 * g if delta is None else delta
    report = ComparisonReport(phi, g, delta, polarized)
    previous = None
    for i, T in enumerate(np.asarray(T_grid, dtype=float)):
        n_steps = int(math.floor(T / tau_m + 1e-9))
        if n_steps == 0:
            nmr = NmrFisherEstimate(0.0, 0.0, "none", 0)
            corr = 0.0
        else:
            config = NmrConfig(g, delta, tau_m, n_steps, "x" if polarized else "mixed", detector=detector)
            method = "enumerate" if n_steps <= 12 else "monte-carlo"
            nmr = nmr_fisher(config, method, samples, seed + i, threads)
            corr = optimize_measurement_count(phi, T, tau_m, detector, polarized)[2].info
        q = regime_parameter(phi, T, tau_m, detector)
        row = {
            "T": float(T),
            "g2_tau_m_T": q,
            "regime": regime_tag(phi, T, tau_m, detector),
            "nmr_fisher": nmr.value,
            "nmr_stderr": nmr.stderr,
            "correlation_fisher": corr,
            "ramsey_limit": 4 * T * T,
            "ratio_nmr_over_correlation": nmr.value / corr if corr > 0 else math.nan,
        }
        report.rows.append(row)
        ahead = corr > nmr.value
        if previous is not None and ahead and not previous and report.crossover_T is None:
            report.crossover_T = float(T)
        previous = ahead if n_steps else previous
    return report

"""Monte Carlo measurement records for the correlation protocol.

A shot runs ``n1`` readouts, a free rotation of length ``tau`` and ``n2``
readouts on the nuclear density matrix.  Shots are simulated as a batch
(arrays of shape ``(shots, d, d)``); shot ``i`` consumes uniforms from its own
counter-derived stream so batches may be split across threads freely.

Outcome tokens: ``+1``/``-1`` electron outcomes for perfect readout,
``1``/``0`` (photon / no photon) with a :class:`DetectorModel`.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from corrspec import rng
from corrspec._validation import check_count
from corrspec.operators import (
    DetectorModel,
    NucleusParams,
    ProtocolSchedule,
    check_state,
    joint_kraus_pair,
    joint_rotation_unitary,
)

MAX_NUCLEI = 3
RECORD_HEADER = "#record v1"
_X_UP = np.full((2, 2), 0.5, dtype=complex)


@dataclass(frozen=True)
class MeasurementRecord:
    schedule: ProtocolSchedule
    outcomes: tuple
    seed: int
    nuclei: tuple
    detector: DetectorModel | None = None
    shot: int = 0
    initial: str = "mixed"

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(int(o) for o in self.outcomes))
        object.__setattr__(self, "nuclei", tuple(_as_nuclei(self.nuclei)))
        if len(self.outcomes) != self.schedule.n:
            raise ValueError(
                f"record has {len(self.outcomes)} outcomes, schedule expects {self.schedule.n}"
            )
        allowed = {1, -1} if self.detector is None else {0, 1}
        if not set(self.outcomes) <= allowed:
            raise ValueError(f"outcome tokens must be in {sorted(allowed)}")

    @property
    def counts(self) -> tuple[int, int]:
        """``(k1, k2)``: ``-1`` outcomes (perfect) or photons (detector) per period."""
        event = -1 if self.detector is None else 1
        n1 = self.schedule.n1
        k1 = sum(o == event for o in self.outcomes[:n1])
        k2 = sum(o == event for o in self.outcomes[n1:])
        return k1, k2

    def to_lines(self) -> list[str]:
        s = self.schedule
        sched = {"n1": s.n1, "n2": s.n2, "tau_m": s.tau_m, "tau": s.tau}
        nuclei = [{"g": p.g, "delta": p.delta, "omega": p.omega} for p in self.nuclei]
        det = None if self.detector is None else {"a": self.detector.a, "b": self.detector.b}
        lines = [
            RECORD_HEADER,
            "#schedule " + json.dumps(sched),
            "#nuclei " + json.dumps(nuclei),
            "#detector " + json.dumps(det),
            f"#seed {self.seed}",
            f"#shot {self.shot}",
            f"#initial {self.initial}",
        ]
        if self.detector is None:
            lines += ["+" if o == 1 else "-" for o in self.outcomes]
        else:
            lines += [str(o) for o in self.outcomes]
        return lines


def _as_nuclei(nuclei) -> list[NucleusParams]:
    if isinstance(nuclei, NucleusParams):
        nuclei = [nuclei]
    out = [p if isinstance(p, NucleusParams) else NucleusParams(**p) if isinstance(p, dict)
           else NucleusParams(*p) for p in nuclei]
    if not 1 <= len(out) <= MAX_NUCLEI:
        raise ValueError(f"between 1 and {MAX_NUCLEI} nuclei are supported, got {len(out)}")
    return out


def dumps_records(records) -> str:
    return "".join("\n".join(r.to_lines()) + "\n" for r in records)


def loads_records(text: str) -> list[MeasurementRecord]:
    records = []
    block: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line == RECORD_HEADER and block:
            records.append(_parse_block(block))
            block = []
        block.append(line)
    if block:
        records.append(_parse_block(block))
    return records


def _parse_block(lines: list[str]) -> MeasurementRecord:
    if lines[0] != RECORD_HEADER:
        raise ValueError(f"expected {RECORD_HEADER!r}, got {lines[0]!r}")
    meta = {}
    tokens = []
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, value = line[1:].partition(" ")
            meta[key] = value
        else:
            tokens.append(line)
    try:
        schedule = ProtocolSchedule(**json.loads(meta["schedule"]))
        nuclei = [NucleusParams(**p) for p in json.loads(meta["nuclei"])]
        det = json.loads(meta["detector"])
        detector = None if det is None else DetectorModel(**det)
        mapping = {"+": 1, "-": -1} if detector is None else {"1": 1, "0": 0}
        outcomes = [mapping[t] for t in tokens]
        return MeasurementRecord(
            schedule, outcomes, int(meta["seed"]), nuclei, detector,
            int(meta.get("shot", 0)), meta.get("initial", "mixed"),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed record: {exc}") from exc


def _instrument(nuclei, tau_m: float, detector: DetectorModel | None):
    """``[(token, [kraus, ...]), ...]`` for one readout."""
    kp, km = joint_kraus_pair(nuclei, tau_m)
    if detector is None:
        return [(1, [kp]), (-1, [km])]
    a, b = detector.a, detector.b
    return [
        (1, [math.sqrt(a) * kp, math.sqrt(b) * km]),
        (0, [math.sqrt(1 - a) * kp, math.sqrt(1 - b) * km]),
    ]


def _initial_state(initial: str, m: int) -> np.ndarray:
    d = 2**m
    if initial == "mixed":
        return np.eye(d, dtype=complex) / d
    if initial == "x":
        rho = _X_UP
        for _ in range(m - 1):
            rho = np.kron(rho, _X_UP)
        return rho
    raise ValueError(f"initial must be 'mixed' or 'x', got {initial!r}")


def _sandwich(k: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return k @ rho @ k.conj().T


def _simulate(nuclei, schedule, detector, initial, u: np.ndarray) -> np.ndarray:
    """Outcome tokens, shape ``(shots, n)``, driven by uniforms ``u`` of the same shape."""
    shots = u.shape[0]
    instrument = _instrument(nuclei, schedule.tau_m, detector)
    rot = joint_rotation_unitary([p.omega for p in nuclei], schedule.tau)
    rho = np.broadcast_to(_initial_state(initial, len(nuclei)), (shots,) + (2 ** len(nuclei),) * 2)
    tokens = np.array([t for t, _ in instrument], dtype=np.int8)
    out = np.empty((shots, schedule.n), dtype=np.int8)
    for step in range(schedule.n):
        if step == schedule.n1:
            rho = _sandwich(rot, rho)
        branches = [sum(_sandwich(k, rho) for k in ks) for _, ks in instrument]
        probs = np.stack([np.trace(b, axis1=1, axis2=2).real for b in branches], axis=1)
        cum = np.cumsum(probs, axis=1)
        choice = np.minimum((u[:, step, None] >= cum).sum(axis=1), len(instrument) - 1)
        out[:, step] = tokens[choice]
        chosen = np.stack(branches, axis=1)[np.arange(shots), choice]
        p = probs[np.arange(shots), choice]
        rho = chosen / np.where(p > 0, p, 1.0)[:, None, None]
    return out


@dataclass
class BatchResult:
    """Outcomes of a batch of shots plus simple empirical statistics."""

    schedule: ProtocolSchedule
    nuclei: tuple
    detector: DetectorModel | None
    seed: int
    initial: str
    outcomes: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def shots(self) -> int:
        return self.outcomes.shape[0]

    def record(self, i: int) -> MeasurementRecord:
        return MeasurementRecord(
            self.schedule, self.outcomes[i].tolist(), self.seed, self.nuclei, self.detector, i, self.initial
        )

    @property
    def records(self) -> list[MeasurementRecord]:
        return [self.record(i) for i in range(self.shots)]

    def counts(self) -> np.ndarray:
        """``(n1+1, n2+1)`` table of how many shots had each ``(k1, k2)``."""
        event = -1 if self.detector is None else 1
        n1, n2 = self.schedule.n1, self.schedule.n2
        k1 = (self.outcomes[:, :n1] == event).sum(axis=1)
        k2 = (self.outcomes[:, n1:] == event).sum(axis=1)
        table = np.zeros((n1 + 1, n2 + 1), dtype=np.int64)
        np.add.at(table, (k1, k2), 1)
        return table


def _statistics(outcomes: np.ndarray, n1: int) -> dict:
    """Agreement of the first readout of each period, with a binomial standard error."""
    if n1 == 0 or outcomes.shape[1] == n1:
        return {}
    same = outcomes[:, 0] == outcomes[:, n1]
    p = float(same.mean())
    se = math.sqrt(max(p * (1 - p), 0.0) / len(same))
    return {"p_same": p, "p_same_stderr": se, "ci95": (p - 1.96 * se, p + 1.96 * se)}


def run_batch(
    nuclei,
    schedule: ProtocolSchedule,
    shots: int,
    seed: int = 0,
    detector: DetectorModel | None = None,
    initial: str = "mixed",
    threads: int = 1,
    first_shot: int = 0,
) -> BatchResult:
    """Simulate ``shots`` independent shots; shot ``i`` uses stream ``(seed, i)``."""
    shots = check_count("shots", shots)
    if shots == 0:
        raise ValueError("shots must be positive")
    nuclei = tuple(_as_nuclei(nuclei))
    if detector is not None and detector.is_perfect:
        detector = None
    parts = rng.chunks(shots, threads)

    def work(part):
        idx = range(first_shot + part.start, first_shot + part.stop)
        u = rng.uniforms(seed, idx, schedule.n)
        return _simulate(nuclei, schedule, detector, initial, u)

    if threads <= 1:
        pieces = [work(p) for p in parts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pieces = list(pool.map(work, parts))
    outcomes = np.concatenate(pieces)
    return BatchResult(schedule, nuclei, detector, seed, initial, outcomes, _statistics(outcomes, schedule.n1))


def run_protocol(
    nuclei,
    schedule: ProtocolSchedule,
    detector: DetectorModel | None = None,
    seed: int = 0,
    shot: int = 0,
    initial: str = "mixed",
) -> MeasurementRecord:
    """One shot; identical to shot ``shot`` of :func:`run_batch` with the same seed."""
    batch = run_batch(nuclei, schedule, 1, seed, detector, initial, first_shot=shot)
    return MeasurementRecord(
        schedule, batch.outcomes[0].tolist(), seed, batch.nuclei, batch.detector, shot, initial
    )


def log_likelihood_grid(
    record: MeasurementRecord, values, param: str = "omega", nucleus: int = 0, validate: bool = False
) -> np.ndarray:
    """Log-probability of ``record`` for each candidate value of ``param`` on ``nucleus``.

    Exact recursion through the recorded outcomes.  Impossible records give
    ``-inf``.  With ``validate=True`` every intermediate state is checked.
    """
    if param not in ("omega", "delta", "g"):
        raise ValueError(f"param must be 'omega', 'delta' or 'g', got {param!r}")
    values = np.atleast_1d(np.asarray(values, dtype=float))
    sched = record.schedule
    out = np.empty(len(values))
    for j, v in enumerate(values):
        nuclei = list(record.nuclei)
        nuclei[nucleus] = nuclei[nucleus].replace(**{param: float(v)})
        instrument = dict(_instrument(nuclei, sched.tau_m, record.detector))
        rot = joint_rotation_unitary([p.omega for p in nuclei], sched.tau)
        rho = _initial_state(record.initial, len(nuclei))
        total = 0.0
        for step, o in enumerate(record.outcomes):
            if step == sched.n1:
                rho = _sandwich(rot, rho)
            rho = sum(_sandwich(k, rho) for k in instrument[o])
            p = float(np.trace(rho).real)
            if p <= 0.0:
                total = -math.inf
                break
            total += math.log(p)
            rho = rho / p
            if validate:
                check_state(rho, atol=1e-10)
        out[j] = total
    return out


def likelihood_of_record(record: MeasurementRecord, value=None, param: str = "omega", nucleus: int = 0) -> float:
    """Log-likelihood of one record (``value=None`` uses the record's own parameters)."""
    if value is None:
        value = getattr(record.nuclei[nucleus], param)
    return float(log_likelihood_grid(record, [value], param, nucleus)[0])

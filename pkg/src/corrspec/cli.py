"""Command-line front end.

``corrspec <command> [--config FILE] [--preset NAME] [--seed N] [--out PATH] [--threads N]``

Commands: analytic, fisher, simulate, estimate, nmr, discriminate.  A preset
supplies a base configuration; keys from ``--config`` (YAML or JSON) override
it.  Unknown keys are rejected before anything runs.

Output is a tab-separated table preceded by ``#`` header lines holding the
command, column-set version and the full effective configuration (seed
included).  With ``--out PATH`` a JSON twin is written next to it
(``PATH`` with suffix ``.json``).  Frequencies are in units of the coupling
``g`` and times in ``1/g`` unless a config sets ``g`` explicitly.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from corrspec import analytic, discriminate as disc, estimate, fisher, nmr, simulate
from corrspec.operators import DetectorModel, NucleusParams, ProtocolSchedule

FORMAT_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
MAX_SEED = 2**64 - 1


class ConfigError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DetectorCfg(_Strict):
    a: float = Field(1.0, ge=0, le=1)
    b: float = Field(0.0, ge=0, le=1)

    def model(self) -> DetectorModel:
        return DetectorModel(self.a, self.b)


class NucleusCfg(_Strict):
    g: float = Field(1.0, ge=0)
    delta: float = 0.0
    omega: float = 0.0


class _Command(_Strict):
    seed: int = Field(0, ge=0, le=MAX_SEED)


class AnalyticCfg(_Command):
    phi: float = 0.2
    omega_tau: float = 0.0
    tau: float = Field(1.0, gt=0)
    sweep: dict[str, list[float]] = {}

    @field_validator("sweep")
    @classmethod
    def _axes(cls, v):
        bad = sorted(set(v) - {"phi", "omega_tau"})
        if bad:
            raise ValueError(f"unknown sweep axis {bad[0]!r}; allowed: phi, omega_tau")
        return v


class FisherCfg(_Command):
    mode: Literal["vs_n", "vs_phi", "vs_T"] = "vs_n"
    phi: list[float] = [0.2]
    T: float = Field(1.0, gt=0)
    tau_m: float = Field(0.005, gt=0)
    polarized: bool = False
    n_values: Optional[list[int]] = None
    T_values: Optional[list[float]] = None
    omega: float = 0.0
    optimize_phase: bool = True
    detector: Optional[DetectorCfg] = None


class SimulateCfg(_Command):
    nuclei: list[NucleusCfg] = [NucleusCfg(g=1.0, omega=0.1)]
    n1: int = Field(1, ge=0)
    n2: int = Field(1, ge=0)
    tau_m: float = Field(0.2, gt=0)
    T: float = Field(3.0, gt=0)
    shots: int = Field(1000, ge=1)
    initial: Literal["mixed", "x"] = "mixed"
    detector: Optional[DetectorCfg] = None
    records_out: Optional[str] = None


class EstimateCfg(_Command):
    g: float = Field(1.0, gt=0)
    phi: float = Field(0.2, gt=0)
    T: float = Field(30.0, gt=0)
    omega: float = 0.1
    schedules: list[tuple[int, int]] = [(15, 15), (2, 2)]
    shots: int = Field(20000, ge=1)
    experiments: int = Field(5000, ge=2)
    detector: Optional[DetectorCfg] = None
    grid_points: int = Field(257, ge=3)
    records: Optional[str] = None
    grid: Optional[tuple[float, float]] = None


class NmrCfg(_Command):
    mode: Literal["fisher", "compare"] = "fisher"
    g: float = Field(0.005, ge=0)
    delta: float = 0.025
    tau_m: float = Field(1.0, gt=0)
    n_steps: list[int] = [10, 100, 1000]
    initial: Literal["x", "y", "mixed"] = "x"
    gap: float = Field(0.0, ge=0)
    method: Literal["auto", "enumerate", "monte-carlo"] = "auto"
    samples: int = Field(2000, ge=2)
    phi: float = Field(0.005, gt=0)
    compare_delta: Optional[float] = None
    T_values: list[float] = [10.0, 100.0, 1000.0]
    polarized: list[bool] = [True, False]
    detector: Optional[DetectorCfg] = None


class DiscriminateCfg(_Command):
    phi: float = Field(0.2, ge=0)
    omega: float = 0.1
    tau: float = Field(3.0, ge=0)
    p_pol: float = Field(0.5, ge=0, le=0.5)
    phi1: float = math.pi
    g_max: Optional[float] = Field(None, ge=0)
    tau_m: float = Field(1.0, gt=0)
    samples: int = Field(100_000, ge=2)
    schemes: list[Literal["polarized", "pi-pulse", "nv-mediated"]] = list(disc.SCHEMES)


MODELS = {
    "analytic": AnalyticCfg,
    "fisher": FisherCfg,
    "simulate": SimulateCfg,
    "estimate": EstimateCfg,
    "nmr": NmrCfg,
    "discriminate": DiscriminateCfg,
}

PRESETS: dict[str, dict[str, dict]] = {
    "analytic": {
        "corr1": {"phi": 0.2, "sweep": {"omega_tau": np.linspace(0, math.pi, 41).tolist()}},
    },
    "fisher": {
        "fig4a": {"mode": "vs_n", "phi": [0.2, 0.15, 0.1, 0.05], "T": 1.0, "tau_m": 0.005},
        "fig4b": {"mode": "vs_n", "phi": [0.2, 0.15, 0.1, 0.05], "T": 1.0, "tau_m": 0.005, "polarized": True},
        "fig4c": {"mode": "vs_phi", "phi": np.geomspace(0.01, math.pi / 4, 30).tolist(), "T": 1.0, "tau_m": 0.005},
        "fig4d": {
            "mode": "vs_T", "phi": [0.1], "tau_m": 0.1,
            "T_values": np.geomspace(1.0, 3000.0, 16).tolist(),
            "detector": {"a": 0.05, "b": 0.035},
        },
    },
    "simulate": {
        "fig3": {"nuclei": [{"g": 1.0, "omega": 0.1}], "n1": 15, "n2": 15, "tau_m": 0.2, "T": 30.0, "shots": 2000},
    },
    "estimate": {
        "fig3": {"g": 1.0, "phi": 0.2, "T": 30.0, "omega": 0.1, "schedules": [[15, 15], [2, 2]],
                 "shots": 20000, "experiments": 5000},
    },
    "nmr": {
        "compare": {"mode": "compare", "phi": 0.005, "tau_m": 1.0,
                    "T_values": np.geomspace(10.0, 10000.0, 7).tolist(), "samples": 400},
    },
    "discriminate": {
        "schemes": {"phi": 0.2, "omega": 0.1, "tau": 3.0, "samples": 100_000},
    },
}


# --------------------------------------------------------------------- output


class Table:
    def __init__(self, columns: list[str], rows: list[list], extra: dict | None = None):
        self.columns = columns
        self.rows = rows
        self.extra = extra or {}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def render_tsv(command: str, config: dict, table: Table) -> str:
    lines = [
        f"# corrspec {command}",
        f"# format-version {FORMAT_VERSION}",
        "# config " + json.dumps(_jsonable(config), sort_keys=True),
        "\t".join(table.columns),
    ]
    lines += ["\t".join(_fmt(v) for v in row) for row in table.rows]
    return "\n".join(lines) + "\n"


def render_json(command: str, config: dict, table: Table) -> str:
    doc = {
        "command": command,
        "format_version": FORMAT_VERSION,
        "config": config,
        "columns": table.columns,
        "rows": table.rows,
        "extra": table.extra,
    }
    return json.dumps(_jsonable(doc), sort_keys=True, indent=1) + "\n"


def parse_tsv(text: str) -> tuple[str, dict, list[str], list[list[str]]]:
    """Inverse of :func:`render_tsv`: ``(command, config, columns, rows as strings)``."""
    lines = text.splitlines()
    command = lines[0].split()[-1]
    config = json.loads(lines[2][len("# config "):])
    columns = lines[3].split("\t")
    rows = [line.split("\t") for line in lines[4:] if line]
    return command, config, columns, rows


# ------------------------------------------------------------------ commands


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def cmd_analytic(cfg: AnalyticCfg, threads: int = 1) -> Table:
    axes = {"phi": cfg.sweep.get("phi", [cfg.phi]), "omega_tau": cfg.sweep.get("omega_tau", [cfg.omega_tau])}
    rows = []
    for phi, wt in itertools.product(axes["phi"], axes["omega_tau"]):
        omega = wt / cfg.tau
        rows.append([
            phi, wt,
            float(analytic.corr_prob_single(phi, omega, cfg.tau, 1)),
            float(analytic.corr_prob_single(phi, omega, cfg.tau, -1)),
            analytic.precision_delta_omega(phi, omega, cfg.tau),
        ])
    return Table(["phi", "omega_tau", "p_plus", "p_minus", "delta_omega"], rows)


def cmd_fisher(cfg: FisherCfg, threads: int = 1) -> Table:
    det = cfg.detector.model() if cfg.detector else None
    if cfg.mode == "vs_n":
        limit = int(math.floor(cfg.T / cfg.tau_m + 1e-9))
        if cfg.n_values is not None:
            for n in cfg.n_values:
                if n < 0 or n > limit:
                    raise ValueError(f"infeasible schedule: n={n} readouts of {cfg.tau_m} do not fit in T={cfg.T}")
            ns = cfg.n_values
        else:
            ns = list(range(1, limit + 1)) if cfg.polarized else list(range(2, limit + 1, 2))

        def point(args):
            phi, n = args
            if cfg.polarized:
                r = fisher.fisher_polarized(n, phi, cfg.omega, cfg.T, cfg.tau_m, cfg.optimize_phase, det)
            else:
                r = fisher.fisher_unpolarized(n // 2, n - n // 2, phi, cfg.omega, cfg.T, cfg.tau_m,
                                              cfg.optimize_phase, det)
            return [phi, n, r.n1, r.n2, r.info, r.info / (4 * cfg.T**2), r.regime]

        rows = _map(point, list(itertools.product(cfg.phi, ns)), threads)
        return Table(["phi", "n", "n1", "n2", "fisher", "fisher_over_4T2", "regime"], rows)

    if cfg.mode == "vs_phi":
        def point(phi):
            _, np_, rp = fisher.optimize_measurement_count(phi, cfg.T, cfg.tau_m, det, polarized=True)
            n1, n2, ru = fisher.optimize_measurement_count(phi, cfg.T, cfg.tau_m, det, polarized=False)
            ratio = rp.info / ru.info if ru.info > 0 else math.inf
            return [phi, rp.info, np_, ru.info, n1, n2, ratio]

        rows = _map(point, cfg.phi, threads)
        return Table(["phi", "fisher_polarized", "n_polarized", "fisher_unpolarized", "n1", "n2",
                      "polarized_over_unpolarized"], rows)

    T_values = cfg.T_values or [cfg.T]

    def point(args):
        phi, T = args
        n1, n2, r = fisher.optimize_measurement_count(phi, T, cfg.tau_m, None, cfg.polarized)
        row = [phi, T, r.info, n1, n2, 4 * T * T, r.regime]
        if det is not None:
            d1, d2, rd = fisher.optimize_measurement_count(phi, T, cfg.tau_m, det, cfg.polarized)
            row += [rd.info, d1, d2]
        else:
            row += [None, None, None]
        return row

    rows = _map(point, list(itertools.product(cfg.phi, T_values)), threads)
    return Table(["phi", "T", "fisher", "n1", "n2", "ramsey_limit", "regime",
                  "fisher_detector", "n1_detector", "n2_detector"], rows)


def _schedule(n1, n2, tau_m, T) -> ProtocolSchedule:
    return ProtocolSchedule.from_total_time(n1, n2, tau_m, T)


def cmd_simulate(cfg: SimulateCfg, threads: int = 1) -> Table:
    nuclei = [NucleusParams(n.g, n.delta, n.omega) for n in cfg.nuclei]
    schedule = _schedule(cfg.n1, cfg.n2, cfg.tau_m, cfg.T)
    det = cfg.detector.model() if cfg.detector else None
    batch = simulate.run_batch(nuclei, schedule, cfg.shots, cfg.seed, det, cfg.initial, threads)
    if cfg.records_out:
        Path(cfg.records_out).write_text(simulate.dumps_records(batch.records))
    event = -1 if batch.detector is None else 1
    n1 = schedule.n1
    rows = []
    for i, out in enumerate(batch.outcomes):
        k1 = int((out[:n1] == event).sum())
        k2 = int((out[n1:] == event).sum())
        tokens = "".join(("+" if o == 1 else "-") if batch.detector is None else str(int(o)) for o in out)
        rows.append([i, k1, k2, tokens])
    return Table(["shot", "k1", "k2", "outcomes"], rows, {"statistics": batch.stats})


def cmd_estimate(cfg: EstimateCfg, threads: int = 1) -> Table:
    det = cfg.detector.model() if cfg.detector else None
    tau_m = cfg.phi / cfg.g
    columns = ["n1", "n2", "experiments", "shots", "mean_estimate", "variance", "fisher_variance",
               "ratio", "ratio_ci_low", "ratio_ci_high", "identifiable_fraction"]
    if cfg.records:
        records = simulate.loads_records(Path(cfg.records).read_text())
        if not records:
            raise ValueError(f"no records in {cfg.records}")
        sched = records[0].schedule
        if cfg.grid is not None:
            grid = estimate.GridSpec(cfg.grid[0], cfg.grid[1], cfg.grid_points)
        else:
            grid = estimate.half_fringe(records[0].nuclei[0].omega, sched.tau, cfg.grid_points)
        res = estimate.mle_frequency(records, grid)
        row = [sched.n1, sched.n2, 1, len(records), float(res.estimates[0]), None, None, None, None, None,
               float(res.identifiable.mean())]
        return Table(columns, [row], {"log_likelihood": res.log_likelihood})

    def run(item):
        i, (n1, n2) = item
        schedule = _schedule(n1, n2, tau_m, cfg.T)
        grid = None
        if cfg.grid is not None:
            grid = estimate.GridSpec(cfg.grid[0], cfg.grid[1], cfg.grid_points)
        elif schedule.tau > 0:
            grid = estimate.half_fringe(cfg.omega, schedule.tau, cfg.grid_points)
        return estimate.crb_check(cfg.phi, cfg.T, cfg.omega, n1, n2, cfg.shots, cfg.experiments,
                                  tau_m, det, grid, cfg.seed + i)

    reports = _map(run, list(enumerate(cfg.schedules)), threads)
    rows, hists = [], []
    for rep in reports:
        est = rep.estimates[np.isfinite(rep.estimates)]
        rows.append([rep.n1, rep.n2, len(rep.estimates), rep.shots,
                     float(est.mean()) if len(est) else math.nan, rep.variance, rep.fisher_variance,
                     rep.ratio, rep.ratio_ci[0], rep.ratio_ci[1], rep.identifiable_fraction])
        hists.append({"n1": rep.n1, "n2": rep.n2, "bin_edges": rep.bin_edges, "counts": rep.histogram})
    return Table(columns, rows, {"histograms": hists})


def cmd_nmr(cfg: NmrCfg, threads: int = 1) -> Table:
    det = cfg.detector.model() if cfg.detector else None
    if cfg.mode == "fisher":
        rows = []
        for i, n in enumerate(cfg.n_steps):
            conf = nmr.NmrConfig(cfg.g, cfg.delta, cfg.tau_m, n, cfg.initial, cfg.gap, det)
            method = cfg.method
            if method == "auto":
                method = "enumerate" if n <= 12 else "monte-carlo"
            est = nmr.nmr_fisher(conf, method, cfg.samples, cfg.seed + i, threads)
            weak = nmr.weak_regime_fisher(conf) if cfg.initial != "mixed" else None
            rows.append([n, conf.total_time, est.value, est.stderr, est.method, est.flagged, weak])
        return Table(["n_steps", "T", "fisher", "stderr", "method", "flagged", "weak_regime_sum"], rows)
    rows = []
    for pol in cfg.polarized:
        report = nmr.compare_protocols(cfg.T_values, cfg.phi, cfg.tau_m, cfg.compare_delta, det, pol,
                                       cfg.samples, cfg.seed, threads)
        for r in report.rows:
            rows.append([pol, r["T"], r["g2_tau_m_T"], r["regime"], r["nmr_fisher"], r["nmr_stderr"],
                         r["correlation_fisher"], r["ramsey_limit"], r["ratio_nmr_over_correlation"],
                         report.crossover_T])
    return Table(["polarized", "T", "g2_tau_m_T", "regime", "nmr_fisher", "nmr_stderr", "correlation_fisher",
                  "ramsey_limit", "ratio_nmr_over_correlation", "crossover_T"], rows)


def cmd_discriminate(cfg: DiscriminateCfg, threads: int = 1) -> Table:
    rows = []
    for i, scheme in enumerate(cfg.schemes):
        r = disc.discriminate(scheme, cfg.phi, cfg.omega, cfg.tau, cfg.p_pol, cfg.phi1, cfg.g_max,
                              cfg.tau_m, cfg.samples, cfg.seed + i, threads)
        rows.append([scheme, r.quantum_contrast, r.formula, r.classical_contrast, r.classical_stderr,
                     r.classical_z, r.samples])
    return Table(["scheme", "quantum_contrast", "formula", "classical_contrast", "classical_stderr",
                  "classical_z", "samples"], rows)


COMMANDS = {
    "analytic": cmd_analytic,
    "fisher": cmd_fisher,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "nmr": cmd_nmr,
    "discriminate": cmd_discriminate,
}


# ---------------------------------------------------------------------- main


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(command: str, path: str | None, preset: str | None, seed: int | None):
    base: dict = {}
    if preset is not None:
        try:
            base = PRESETS[command][preset]
        except KeyError:
            names = ", ".join(sorted(PRESETS.get(command, {}))) or "none"
            raise ConfigError(f"unknown preset {preset!r} for {command}; available: {names}") from None
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            user = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a mapping")
        base = _deep_merge(base, user)
    if seed is not None:
        base = {**base, "seed": seed}
    try:
        return MODELS[command].model_validate(base)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"invalid config at {where}: {first['msg']}") from exc


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _threads(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrspec", description="Correlation spectroscopy with weak measurements.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON configuration file")
        p.add_argument("--preset", help="named base configuration: " + ", ".join(sorted(PRESETS[name])))
        p.add_argument("--seed", type=_seed, help="master seed (overrides the config)")
        p.add_argument("--out", help="output TSV path; a .json twin is written alongside")
        p.add_argument("--threads", type=_threads, default=1)
    return parser


def _check_finite(table: Table, command: str) -> None:
    allowed_inf = {"delta_omega", "polarized_over_unpolarized", "ratio", "ratio_ci_low", "ratio_ci_high",
                   "ratio_nmr_over_correlation", "mean_estimate"}
    for row in table.rows:
        for col, v in zip(table.columns, row):
            if isinstance(v, (float, np.floating)) and math.isnan(v) and col not in allowed_inf:
                raise NumericalError(f"{command}: non-finite value in column {col!r}")


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.command, args.config, args.preset, args.seed)
        with np.errstate(over="raise", invalid="ignore", divide="ignore"):
            table = COMMANDS[args.command](cfg, args.threads)
        _check_finite(table, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    # LinAlgError subclasses ValueError, so it must be caught first
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    config = cfg.model_dump(mode="json")
    tsv = render_tsv(args.command, config, table)
    if args.out:
        out = Path(args.out)
        if out.suffix == ".json":
            out.write_text(render_json(args.command, config, table))
        else:
            out.write_text(tsv)
            out.with_suffix(".json").write_text(render_json(args.command, config, table))
    else:
        stdout.write(tsv)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command-line entry point: simulate, synthesize, analyze, rates, report.

Exit codes: 0 success, 2 configuration error, 3 data error. Output files are
deterministic functions of the inputs and seed; wall-clock timestamps go
only to ``run.log`` in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import gzip
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimation import analyze_tables, exact_parity, parity_components, witness_lower_bound
from .optics import STANDARD_SETTINGS, DetectorModel, MeasurementSetting, load_settings, to_logical_frame
from .protocol import ConditionalStateSet, ghz_projection_table, label_for, make_bell, make_werner, werner_p_for_fidelity
from .quantum import DensityMatrix, fidelity
from .rates import LinkModel, rate_sweep, simulate_rates, sweep_to_csv
from .timetags import AttemptWindowing, ParseError, extract_coincidences, iter_stream, open_text, synthesize_stream

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass(frozen=True)
class SourceSpec:
    kind: str = "ideal"  # ideal | werner | measured
    werner_p: float | None = None
    path: str | None = None
    frame: str = "logical"

    def pairs(self) -> list[DensityMatrix]:
        if self.kind == "ideal":
            return [make_bell()] * 3
        if self.kind == "werner":
            return [make_werner(self.werner_p)] * 3
        return load_measured(Path(self.path), self.frame)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "werner_p": self.werner_p, "path": self.path, "frame": self.frame}


def load_measured(path: Path, frame: str) -> list[DensityMatrix]:
    """One or three two-qubit density matrices (ion first) in JSON form."""
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read measured states {path}: {exc}") from exc
    items = data if isinstance(data, list) else [data]
    if len(items) == 1:
        items = items * 3
    if len(items) != 3:
        raise DataError(f"{path}: expected one or three density matrices, got {len(items)}")
    try:
        rhos = [DensityMatrix.from_dict(d) for d in items]
        return [to_logical_frame(r, frame, [1]) for r in rhos]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    source: SourceSpec = field(default_factory=SourceSpec)
    settings: tuple[MeasurementSetting, ...] = STANDARD_SETTINGS
    detector: DetectorModel = field(default_factory=DetectorModel)
    efficiencies: tuple[float, float, float] = (1.0, 1.0, 1.0)
    attempts: int = 14_000
    seed: int | None = None
    output_dir: str = "out"
    windowing: AttemptWindowing = field(default_factory=AttemptWindowing)
    gzip: bool = False
    beta: float | None = None
    beta_sigma: float = 0.01
    n_resamples: int = 1000
    weighted_fit: bool = True

    def validate(self) -> "RunConfig":
        if self.attempts <= 0:
            raise ConfigError("attempts must be positive")
        if self.source.kind not in ("ideal", "werner", "measured"):
            raise ConfigError(f"unknown source kind {self.source.kind!r}")
        if self.source.kind == "werner" and (self.source.werner_p is None or not 0 <= self.source.werner_p <= 1):
            raise ConfigError("werner source needs p in [0, 1]")
        if self.source.kind == "measured":
            if not self.source.path or not Path(self.source.path).is_file():
                raise ConfigError(f"measured-state file not found: {self.source.path!r}")
        if len(self.efficiencies) != 3 or any(not 0 <= e <= 1 for e in self.efficiencies):
            raise ConfigError("efficiencies must be three numbers in [0, 1]")
        if self.n_resamples < 2:
            raise ConfigError("n_resamples must be at least 2")
        if self.beta is not None and self.beta <= 0:
            raise ConfigError("beta must be positive")
        return self


def _settings_from(obj) -> tuple[MeasurementSetting, ...]:
    if obj in (None, "standard"):
        return STANDARD_SETTINGS
    if isinstance(obj, str):
        return tuple(load_settings(obj))
    return tuple(MeasurementSetting.from_dict(d) for d in obj)


def _detector_from(obj: dict) -> DetectorModel:
    obj = dict(obj)
    dark = float(obj.pop("dark_counts_per_window", 0.0))
    if "beta" in obj:
        return DetectorModel.from_beta(float(obj.pop("beta")), float(obj.pop("eta_r", 1.0)), dark_counts_per_window=dark)
    return DetectorModel(float(obj.pop("eta_t", 1.0)), float(obj.pop("eta_r", 1.0)), dark)


def config_from_dict(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    known = {"source", "settings", "detector", "efficiencies", "attempts", "seed", "output_dir",
             "windowing", "gzip", "analysis"}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        src = dict(obj.get("source", {"kind": "ideal"}))
        kind = src.get("kind", "ideal")
        p = src.get("p")
        if kind == "werner" and p is None and "fidelity" in src:
            p = werner_p_for_fidelity(float(src["fidelity"]))
        source = SourceSpec(kind, None if p is None else float(p), src.get("path"), src.get("frame", "logical"))
        win = obj.get("windowing", {})
        analysis = obj.get("analysis", {})
        return RunConfig(
            source=source,
            settings=_settings_from(obj.get("settings")),
            detector=_detector_from(obj.get("detector", {})),
            efficiencies=tuple(float(e) for e in obj.get("efficiencies", (1.0, 1.0, 1.0))),
            attempts=int(obj.get("attempts", 14_000)),
            seed=None if obj.get("seed") is None else int(obj["seed"]),
            output_dir=str(obj.get("output_dir", "out")),
            windowing=AttemptWindowing(**win),
            gzip=bool(obj.get("gzip", False)),
            beta=analysis.get("beta"),
            beta_sigma=float(analysis.get("beta_sigma", 0.01)),
            n_resamples=int(analysis.get("n_resamples", 1000)),
            weighted_fit=bool(analysis.get("weighted_fit", True)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError, OSError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return config_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    try:
        if getattr(args, "ideal", False):
            cfg = replace(cfg, source=SourceSpec("ideal"))
        if getattr(args, "werner_p", None) is not None:
            cfg = replace(cfg, source=SourceSpec("werner", args.werner_p))
        if getattr(args, "werner_fidelity", None) is not None:
            cfg = replace(cfg, source=SourceSpec("werner", werner_p_for_fidelity(args.werner_fidelity)))
        if getattr(args, "measured", None) is not None:
            cfg = replace(cfg, source=SourceSpec("measured", path=args.measured, frame=args.frame or "logical"))
        if getattr(args, "settings", None) is not None:
            cfg = replace(cfg, settings=tuple(load_settings(args.settings)))
        det = cfg.detector
        if getattr(args, "det_beta", None) is not None:
            det = DetectorModel.from_beta(args.det_beta, det.eta_r, dark_counts_per_window=det.dark_counts_per_window)
        if getattr(args, "eta_t", None) is not None:
            det = DetectorModel(args.eta_t, det.eta_r, det.dark_counts_per_window)
        if getattr(args, "eta_r", None) is not None:
            det = DetectorModel(det.eta_t, args.eta_r, det.dark_counts_per_window)
        if getattr(args, "dark_counts", None) is not None:
            det = DetectorModel(det.eta_t, det.eta_r, args.dark_counts)
        cfg = replace(cfg, detector=det)
        if getattr(args, "efficiencies", None) is not None:
            cfg = replace(cfg, efficiencies=tuple(args.efficiencies))
        for name in ("attempts", "seed", "beta", "beta_sigma", "n_resamples"):
            if getattr(args, name, None) is not None:
                cfg = replace(cfg, **{name: getattr(args, name)})
        if getattr(args, "out", None) is not None:
            cfg = replace(cfg, output_dir=args.out)
        if getattr(args, "gzip", False):
            cfg = replace(cfg, gzip=True)
        if getattr(args, "unweighted", False):
            cfg = replace(cfg, weighted_fit=False)
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


# ---------------------------------------------------------------- utilities


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _log(out_dir: Path, command: str, message: str) -> None:
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    with open(out_dir / "run.log", "a", encoding="utf-8") as fh:
        fh.write(f"{stamp} {command}: {message}\n")


def _write_all(out_dir: Path, files: dict[str, str | bytes]) -> None:
    """Write after all content is computed, so failures leave no partial outputs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        path = out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content, encoding="utf-8")


def _states(cfg: RunConfig) -> ConditionalStateSet:
    try:
        return ghz_projection_table(cfg.source.pairs())
    except ValueError as exc:
        raise DataError(f"invalid ion-photon states: {exc}") from exc


def predictions(states: ConditionalStateSet, settings: Sequence[MeasurementSetting]) -> dict:
    """Noiseless model predictions per ion outcome."""
    out = {}
    for outcome, branch in states:
        label = label_for(outcome)
        entry = {"label": label.name, "probability": branch.probability}
        if branch.state is not None:
            rho = branch.state
            comp = parity_components(rho)
            entry.update(
                fidelity_model=fidelity(rho, label.ket()),
                populations=[float(v) for v in rho.diagonal()],
                parities={s.key: exact_parity(rho, s.theta) for s in settings if s.is_parity},
                C=comp.C,
                alpha=comp.alpha,
                single_frequency_amplitudes=list(comp.single_amplitudes),
                single_frequency_phases=list(comp.single_phases),
                witness_lower_bound=float(witness_lower_bound(rho.diagonal(), exact_parity(rho, 0.0), label)),
            )
        out[outcome.label] = entry
    return out


# ----------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    states = _states(cfg)
    out_dir = Path(cfg.output_dir)
    pred = {
        "source": cfg.source.to_dict(),
        "settings": [s.to_dict() for s in cfg.settings],
        "outcomes": predictions(states, cfg.settings),
    }
    _write_all(out_dir, {"conditional_states.json": states.to_json() + "\n", "predictions.json": _dumps(pred)})
    _log(out_dir, "simulate", f"source={cfg.source.kind}")
    return EXIT_OK


def _synth_one(job):
    states, setting, det, eff, attempts, seed_seq, windowing = job
    s = synthesize_stream(states, setting, det, eff, attempts, np.random.default_rng(seed_seq), windowing)
    return s.text, s.truth.coincidences


def _stream_name(i: int, setting: MeasurementSetting, gz: bool) -> str:
    return f"timetags/{i:02d}_{setting.key}.jsonl" + (".gz" if gz else "")


def cmd_synthesize(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    if cfg.seed is None:
        raise ConfigError("synthesize requires --seed")
    states = _states(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.settings))
    jobs = [(states, s, cfg.detector, cfg.efficiencies, cfg.attempts, sd, cfg.windowing)
            for s, sd in zip(cfg.settings, seeds)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_synth_one, jobs))
    else:
        results = [_synth_one(j) for j in jobs]
    files: dict[str, str | bytes] = {}
    manifest = []
    for i, (setting, (text, n)) in enumerate(zip(cfg.settings, results)):
        name = _stream_name(i, setting, cfg.gzip)
        if cfg.gzip:
            files[name] = gzip.compress(text.encode("utf-8"), mtime=0)
        else:
            files[name] = text
        manifest.append({"file": name, "setting": setting.to_dict(), "attempts": cfg.attempts, "coincidences": n})
    files["timetags/manifest.json"] = _dumps({"seed": cfg.seed, "source": cfg.source.to_dict(), "streams": manifest})
    out_dir = Path(cfg.output_dir)
    _write_all(out_dir, files)
    _log(out_dir, "synthesize", f"seed={cfg.seed} streams={len(manifest)}")
    return EXIT_OK


def read_table(path: str):
    try:
        with open_text(path, "r") as fh:
            header, events = iter_stream(fh)
            table = extract_coincidences(events, header.windowing, header.setting)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ParseError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return table


def _analysis_files(result, tables) -> dict[str, str]:
    files = {
        "report.json": result.to_json() + "\n",
        "report.csv": result.to_csv(),
        "report.txt": result.to_text(),
    }
    for i, t in enumerate(tables):
        files[f"counts/{i:02d}_{t.setting.key}.csv"] = t.to_csv()
    return files


def cmd_analyze(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    if not args.files:
        raise ConfigError("analyze needs at least one timetag file")
    tables = [read_table(f) for f in args.files]
    keys = [t.setting.key for t in tables]
    if len(set(keys)) != len(keys):
        raise DataError("two input files share the same measurement setting")
    model = None
    if args.predictions:
        model = {k: v.get("fidelity_model") for k, v in _read_json(args.predictions)["outcomes"].items()}
    try:
        result = analyze_tables(
            tables, beta=cfg.beta, beta_sigma=cfg.beta_sigma, n_resamples=cfg.n_resamples,
            weighted_fit=cfg.weighted_fit, seed=cfg.seed if cfg.seed is not None else 0, model_fidelities=model,
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out_dir = Path(cfg.output_dir)
    _write_all(out_dir, _analysis_files(result, tables))
    _log(out_dir, "analyze", f"files={len(tables)} gaps={len(result.corrected.gaps)}")
    sys.stdout.write(result.to_text())
    return EXIT_OK


def _parse_list(text: str, cast) -> list:
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {text!r}") from exc


def cmd_rates(args) -> int:
    ns = _parse_list(args.n, int)
    ps = _parse_list(args.p, float)
    try:
        rows = rate_sweep(ns, ps)
        if args.mc_trials:
            seeds = np.random.SeedSequence(args.seed if args.seed is not None else 0).spawn(len(rows))
            for row, sd in zip(rows, seeds):
                s = simulate_rates(LinkModel(row["p"], row["n"], args.cutoff), args.mc_trials, np.random.default_rng(sd))
                row["mc_mean"], row["mc_sem"] = s.mean, s.sem
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    text = sweep_to_csv(rows) if not args.mc_trials else _rows_csv(rows)
    if args.out:
        out = Path(args.out)
        _write_all(out.parent if str(out.parent) else Path("."), {out.name: text})
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def render_report(pred: dict | None, analysis: dict | None) -> str:
    """Summary table from a predictions file and/or an analysis report."""
    if pred is None and analysis is None:
        raise ConfigError("report needs --predictions and/or --analysis")
    if pred is not None:
        outcomes = list(pred["outcomes"])
    else:
        outcomes = [o["outcome"] for o in analysis["beta_corrected"]["outcomes"]]
    arrows = {"d": "↓", "u": "↑"}

    def cell(x, s=None):
        if x is None:
            return "-"
        if s is None or s <= 0:
            return f"{x:.2f}"
        return f"{x:.2f}({max(1, round(s * 100))})"

    rows = [["Ion outcome"] + ["".join(arrows[c] for c in o) for o in outcomes]]
    if pred is not None:
        po = pred["outcomes"]
        rows.append(["Three-photon state"] + [po[o]["label"] for o in outcomes])
        rows.append(["Fidelity model"] + [cell(po[o].get("fidelity_model")) for o in outcomes])
        rows.append(["Bound model"] + [cell(po[o].get("witness_lower_bound")) for o in outcomes])
    if analysis is not None:
        by = {o["outcome"]: o for o in analysis["beta_corrected"]["outcomes"]}
        one = {o["outcome"]: o for o in analysis["beta_one"]["outcomes"]}
        if pred is None:
            rows.append(["Three-photon state"] + [by[o]["label"] for o in outcomes])
        rows.append(["Fidelity parity"] + [cell(*(by[o]["fidelity_exact"] or [None])) for o in outcomes])
        beta = analysis["beta_corrected"]["beta"]
        rows.append([f"Lower bound beta={beta:.2f}"] + [cell(*(by[o]["lower_bound"] or [None])) for o in outcomes])
        rows.append(["Lower bound beta=1"] + [cell(*(one[o]["lower_bound"] or [None])) for o in outcomes])
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for n, r in enumerate(rows):
        lines.append(" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if n == 0:
            lines.append("-+-".join("-" * w for w in widths))
    if analysis is not None:
        ad = analysis["beta_corrected"].get("alpha_difference")
        if ad is not None:
            lines.append("")
            lines.append(f"alpha(uuu) - alpha(ddd) = {ad[0]:.3f} +/- {ad[1]:.3f} rad")
        for gap in analysis["beta_corrected"].get("gaps", []):
            lines.append(f"missing: {gap}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    pred = _read_json(args.predictions) if args.predictions else None
    analysis = _read_json(args.analysis) if args.analysis else None
    try:
        text = render_report(pred, analysis)
    except (KeyError, TypeError, IndexError) as exc:
        raise DataError(f"unexpected report input structure: {exc}") from exc
    if args.out:
        out = Path(args.out)
        _write_all(out.parent, {out.name: text})
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------- parser


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--ideal", action="store_true", help="ideal Bell-state inputs")
    src.add_argument("--werner-p", type=float, help="Werner mixing weight of each input pair")
    src.add_argument("--werner-fidelity", type=float, help="Bell fidelity of Werner input pairs")
    src.add_argument("--measured", help="JSON file with one or three measured ion-photon matrices")
    p.add_argument("--frame", choices=["logical", "jones_post_q1", "jones_pre_q1"], help="photon frame of --measured")
    p.add_argument("--settings", help="JSON list of measurement settings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghz-factory", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="heralded photon states and noiseless predictions")
    _add_run_options(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synthesize", help="synthetic timetag streams, one per setting")
    _add_run_options(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--attempts", type=int, help="attempts per setting")
    p.add_argument("--eta-t", type=float)
    p.add_argument("--eta-r", type=float)
    p.add_argument("--det-beta", type=float, help="eta_r / eta_t of the simulated detectors")
    p.add_argument("--dark-counts", type=float, help="mean dark clicks per detector and window")
    p.add_argument("--efficiencies", type=float, nargs=3, metavar=("E1", "E2", "E3"))
    p.add_argument("--gzip", action="store_true")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("analyze", help="count tables, fits, fidelities and witness bounds")
    p.add_argument("files", nargs="*", help="timetag JSONL files (.gz allowed)")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="bootstrap seed (default 0)")
    p.add_argument("--beta", type=float, help="external efficiency ratio; estimated from singles if omitted")
    p.add_argument("--beta-sigma", type=float)
    p.add_argument("--n-resamples", type=int)
    p.add_argument("--unweighted", action="store_true", help="unweighted parity fits")
    p.add_argument("--predictions", help="predictions.json from simulate, for the model row")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("rates", help="expected attempts sweep as CSV")
    p.add_argument("--n", default="1,2,3,4,5,6,7,8")
    p.add_argument("--p", default="0.5,0.1,0.01")
    p.add_argument("--mc-trials", type=int, default=0, help="add Monte Carlo columns")
    p.add_argument("--cutoff", type=int, help="memory cutoff for the Monte Carlo columns")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("report", help="summary table from predictions and/or an analysis report")
    p.add_argument("--predictions")
    p.add_argument("--analysis")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

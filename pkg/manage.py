#!/usr/bin/env python3
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from phasing import Bench, create_bench
from phasing.config import configure_logging, load_harness_config, load_settings, maybe_load_dotenv
from phasing.errors import ConfigError, DomainError, PhasingError, PlantAbort
from phasing.models import CONTROLLERS, RunManifest
from phasing.studies import calibrate, noise_study, oracle_check, run, run_batch, sensitivity, tune_pid
from phasing.studies.run import parse_manifests
from utils.records_io import write_table, write_text_table

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ABORT = 3

ORACLE_LIMIT = 0.5


def _seed(args, bench: Bench) -> int:
    return bench.settings.seed if args.seed is None else args.seed


def _out(args, bench: Bench, name: str) -> Path:
    return Path(args.out) if args.out else bench.settings.out_dir / name


def cmd_run(args, bench: Bench) -> int:
    manifest = RunManifest(
        case=args.case,
        controller=args.controller,
        seed=_seed(args, bench),
        out_dir=args.out,
        plant_config=args.config,
        duration=args.duration,
    )
    artifacts = run(manifest, bench, plots=not args.no_plots)
    summary = artifacts.result.summary
    print(f"{artifacts.result.preset.name} / {manifest.controller} (seed {manifest.seed})")
    print(summary[["cylinder", "segment", "settling_cycles", "steady_min", "steady_max", "overshoot"]].to_string(index=False))
    print(f"artifacts in {artifacts.out_dir}")
    return EXIT_OK


def cmd_calibrate(args, bench: Bench) -> int:
    out = _out(args, bench, "calibration")
    result = calibrate(bench, out, dataset_path=args.dataset, seed=_seed(args, bench), perturbation=args.perturbation)
    print("Per-cylinder intake validation RMSE")
    print(result.intake.report.to_string())
    print()
    print("SOC / CA50 prediction errors (CAD)")
    print(result.ca50.report.to_string(float_format=lambda v: f"{v:.3f}"))
    print(f"fitted coefficients written to {out / 'coefficients.json'}")
    return EXIT_OK


def cmd_noise_study(args, bench: Bench) -> int:
    seed = _seed(args, bench)
    study = noise_study(bench, args.case, seed=seed, duration=args.duration)
    out = _out(args, bench, "noise-study")
    header = bench.attribution(seed=seed, preset=study.quiet.preset.name, controller="adaptive")
    write_table(study.report, out / "noise_report.csv", header, index=True)
    write_text_table(study.report, out / "noise_report.txt", header)
    print(study.report.to_string(float_format=lambda v: f"{v:.3f}"))
    print(f"worst steady-state band with noise: {study.steady_band.max():.3f} CAD")
    return EXIT_OK


def cmd_sensitivity(args, bench: Bench) -> int:
    seed = _seed(args, bench)
    table = sensitivity(bench, seed=seed)
    out = _out(args, bench, "sensitivity")
    header = bench.attribution(seed=seed, preset="calibration-dataset", controller="none")
    write_table(table, out / "error_response.csv", header)
    write_text_table(table, out / "error_response.txt", header)
    print(table.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    return EXIT_OK


def cmd_oracle_check(args, bench: Bench) -> int:
    table = oracle_check(bench)
    out = _out(args, bench, "oracle")
    header = bench.attribution(seed=_seed(args, bench), preset="oracle-grid", controller="none")
    write_table(table, out / "oracle.csv", header)
    worst = float(table["deviation"].max())
    print(f"{len(table)} grid points, max |soc_full - soc_simplified| = {worst:.4f} CAD (limit {ORACLE_LIMIT})")
    return EXIT_OK if worst <= ORACLE_LIMIT else EXIT_FAILURE


def cmd_tune_pid(args, bench: Bench) -> int:
    result = tune_pid(bench, args.case, seed=_seed(args, bench), relay_amplitude=args.amplitude, cycles=args.cycles)
    print(f"ultimate gain {result.ultimate_gain:.3f}, ultimate period {result.ultimate_period:.2f} cycles")
    print(json.dumps({"controllers": {"kp": round(result.kp, 4), "ki": round(result.ki, 4), "kd": 0.0}}, indent=2))
    return EXIT_OK


def cmd_batch(args, bench: Bench) -> int:
    path = Path(args.file)
    if not path.exists():
        raise ConfigError(f"batch file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    defaults = {"seed": _seed(args, bench), "out_dir": args.out}
    manifests = parse_manifests(payload, defaults)
    outcomes = run_batch(manifests, bench, workers=args.workers or bench.settings.workers)
    for o in outcomes:
        where = o.out_dir if o.out_dir else o.error
        print(f"- {o.manifest.case} {o.manifest.controller} seed={o.manifest.seed}: {o.status} {where}")
    if any(o.status == "PlantAbort" for o in outcomes):
        return EXIT_ABORT
    return EXIT_OK if all(o.status == "ok" for o in outcomes) else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description="Cylinder-resolved CA50 phasing bench")
    sub = p.add_subparsers(dest="cmd", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Random seed (default: PHASING_SEED)")
    common.add_argument("--out", help="Output directory (default: PHASING_OUT_DIR/<command>)")
    common.add_argument("--config", help="Harness JSON file (default: data/harness.json)")

    p_run = sub.add_parser("run", parents=[common], help="Run one test case under one controller")
    p_run.add_argument("--case", required=True, help="Case preset: case1..case4, 1..4 or a JSON path")
    p_run.add_argument("--controller", choices=CONTROLLERS, default="adaptive", help="Controller (default: adaptive)")
    p_run.add_argument("--duration", type=float, help="Simulated seconds (default: both segments)")
    p_run.add_argument("--no-plots", action="store_true", help="Write tables only")

    p_cal = sub.add_parser("calibrate", parents=[common], help="Fit intake and CA50 coefficients")
    p_cal.add_argument("--dataset", help="Calibration table to ingest instead of synthesizing one")
    p_cal.add_argument("--perturbation", type=float, help="Relative spread of the starting coefficients")

    p_noise = sub.add_parser("noise-study", parents=[common], help="Adaptive control with and without CA50 noise")
    p_noise.add_argument("--case", default="case2", help="Case preset whose first operating point is used")
    p_noise.add_argument("--duration", type=float, help="Simulated seconds (default: one segment)")

    sub.add_parser("sensitivity", parents=[common], help="CA50 prediction error response to input offsets")
    sub.add_parser("oracle-check", parents=[common], help="Knock integral vs closed-form SOC over a grid")

    p_tune = sub.add_parser("tune-pid", parents=[common], help="Relay-tune PI gains on the virtual engine")
    p_tune.add_argument("--case", default="case2", help="Case preset whose first operating point is used")
    p_tune.add_argument("--amplitude", type=float, default=1.0, help="Relay amplitude in CAD (default: 1)")
    p_tune.add_argument("--cycles", type=int, default=40, help="Relay cycles (default: 40)")

    p_batch = sub.add_parser("batch", parents=[common], help="Run a JSON list of manifests across threads")
    p_batch.add_argument("--file", required=True, help="JSON list of {case, controller, seed, duration}")
    p_batch.add_argument("--workers", type=int, help="Worker threads (default: PHASING_WORKERS)")

    return p


COMMANDS: Dict[str, Callable[..., int]] = {
    "run": cmd_run,
    "calibrate": cmd_calibrate,
    "noise-study": cmd_noise_study,
    "sensitivity": cmd_sensitivity,
    "oracle-check": cmd_oracle_check,
    "tune-pid": cmd_tune_pid,
    "batch": cmd_batch,
}


def main(argv: Optional[List[str]] = None) -> int:
    maybe_load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings()
        configure_logging(settings.log_level)
        harness = load_harness_config(Path(args.config) if args.config else settings.harness_config)
        return COMMANDS[args.cmd](args, create_bench(settings, harness))
    except PlantAbort as exc:
        print(f"plant abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PhasingError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())

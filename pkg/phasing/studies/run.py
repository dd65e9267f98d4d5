from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from .. import Bench
from ..config import load_harness_config
from ..engine import CaseResult, run_case
from ..errors import ConfigError, PhasingError
from ..models import RunManifest
from utils.records_io import records_frame, write_table, write_text_table

from .plots import plot_run

logger = logging.getLogger(__name__)

SOI_TRACE_CYLINDER = 1


@dataclass
class RunArtifacts:
    manifest: RunManifest
    result: CaseResult
    out_dir: Path
    files: List[Path] = field(default_factory=list)


def run_dir(bench: Bench, manifest: RunManifest, preset_name: str) -> Path:
    root = Path(manifest.out_dir) if manifest.out_dir else bench.settings.out_dir
    return root / f"{preset_name}-{manifest.controller}-seed{manifest.seed}"


def manifest_bench(bench: Bench, manifest: RunManifest) -> Bench:
    """The bench with the manifest's own harness file applied, when it names one."""
    if not manifest.plant_config:
        return bench
    path = Path(manifest.plant_config)
    if not path.is_file():
        raise ConfigError(f"plant config not found: {path}")
    return replace(bench, harness=load_harness_config(path))


def simulate(bench: Bench, manifest: RunManifest) -> CaseResult:
    preset = bench.preset(manifest.case)
    plant = bench.plant_config(ca50_noise_std=0.0)
    return run_case(
        preset,
        manifest.controller,
        plant,
        duration=manifest.duration,
        seed=manifest.seed,
        settings=bench.harness.controllers,
        settle_band=bench.harness.bands.settle,
    )


def annotate_summary(summary: pd.DataFrame, band: float) -> pd.DataFrame:
    out = summary.copy()
    out["claim_band"] = band
    out["within_claim"] = out["steady_band"] <= band
    return out


def run(manifest: RunManifest, bench: Bench, *, plots: bool = True) -> RunArtifacts:
    """Simulate one manifest and write records, summaries, the SOI trace and plots."""
    bench = manifest_bench(bench, manifest)
    result = simulate(bench, manifest)
    preset = result.preset
    out = run_dir(bench, manifest, preset.name)
    plant_file = Path(manifest.plant_config or bench.settings.harness_config).name
    header = bench.attribution(
        seed=manifest.seed, preset=preset.name, controller=manifest.controller, plant_config=plant_file
    )

    frame = records_frame(result.records)
    summary = annotate_summary(result.summary, bench.harness.bands.for_controller(manifest.controller))
    soi = frame.loc[frame["cylinder_index"] == SOI_TRACE_CYLINDER, ["cycle_index", "sim_time", "soi", "clamped"]]

    files = [
        write_table(frame, out / "records.csv", header),
        write_table(summary, out / "summary.csv", header),
        write_text_table(summary, out / "summary.txt", header),
        write_table(soi, out / f"soi_cyl{SOI_TRACE_CYLINDER}.csv", header),
    ]
    if plots:
        files.extend(plot_run(frame, out, f"{preset.name} / {manifest.controller}", SOI_TRACE_CYLINDER))
    for path in files:
        logger.info("wrote %s", path)
    return RunArtifacts(manifest=manifest, result=result, out_dir=out, files=files)


@dataclass
class BatchOutcome:
    manifest: RunManifest
    status: str
    out_dir: Optional[Path] = None
    error: str = ""


def run_batch(manifests: Sequence[RunManifest], bench: Bench, workers: int = 4, plots: bool = False) -> List[BatchOutcome]:
    """Independent manifests across worker threads; one failure does not stop the others."""

    def _one(manifest: RunManifest) -> BatchOutcome:
        try:
            artifacts = run(manifest, bench, plots=plots)
        except PhasingError as exc:
            logger.warning("batch run %s/%s failed: %s", manifest.case, manifest.controller, exc)
            return BatchOutcome(manifest, type(exc).__name__, error=str(exc))
        return BatchOutcome(manifest, "ok", artifacts.out_dir)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, manifests))


def parse_manifests(payload: object, defaults: Optional[Dict[str, object]] = None) -> List[RunManifest]:
    if not isinstance(payload, list):
        raise ConfigError("batch file must hold a list of manifests")
    manifests = []
    for i, item in enumerate(payload):
        if not isinstance(item, dict) or "case" not in item:
            raise ConfigError(f"manifest {i} must be an object with a 'case' field")
        try:
            manifests.append(RunManifest(**{**(defaults or {}), **item}))
        except TypeError as exc:
            raise ConfigError(f"manifest {i}: {exc}") from None
    return manifests


__all__ = ["RunArtifacts", "run_dir", "manifest_bench", "simulate", "annotate_summary", "run", "BatchOutcome", "run_batch", "parse_manifests"]

import logging
from dataclasses import dataclass
from typing import Optional

import pandas as pd

from .. import Bench
from ..engine import ACTIVATION_CYCLE, CaseResult, run_case

logger = logging.getLogger(__name__)

NOISE_STD = 0.25
NOISE_BOUND = 0.5


@dataclass
class NoiseStudy:
    report: pd.DataFrame
    steady_band: pd.Series
    quiet: CaseResult
    noisy: CaseResult


def error_std(result: CaseResult) -> pd.Series:
    """Per-cylinder std-dev of CA50 tracking error over every controlled cycle, transient included."""
    frame = result.frame()
    frame = frame[(frame["cycle_index"] >= ACTIVATION_CYCLE) & frame["fired"] & ~frame["misfire"]]
    errors = frame["ca50_true"] - frame["ca50_ref"]
    return errors.groupby(frame["cylinder_index"]).std(ddof=0)


def noise_study(
    bench: Bench,
    case: str = "case2",
    *,
    seed: int = 0,
    duration: Optional[float] = None,
    noise_std: float = NOISE_STD,
    noise_bound: float = NOISE_BOUND,
) -> NoiseStudy:
    """Adaptive control at the preset's first operating point, with and without CA50 measurement noise."""
    preset = bench.preset(case)
    duration = preset.segment_duration if duration is None else min(duration, preset.segment_duration)
    runs = {}
    for label, std in (("quiet", 0.0), ("noisy", noise_std)):
        plant = bench.plant_config(ca50_noise_std=std, ca50_noise_bound=noise_bound)
        runs[label] = run_case(
            preset,
            "adaptive",
            plant,
            duration=duration,
            seed=seed,
            settings=bench.harness.controllers,
            settle_band=bench.harness.bands.settle,
        )
    report = pd.DataFrame({"noise_off_std": error_std(runs["quiet"]), "noise_on_std": error_std(runs["noisy"])})
    report.index.name = "cylinder"
    steady = runs["noisy"].summary.set_index("cylinder")["steady_band"]
    logger.info("noise study on %s: worst steady band with noise %.3f CAD", preset.name, steady.max())
    return NoiseStudy(report=report, steady_band=steady, quiet=runs["quiet"], noisy=runs["noisy"])


__all__ = ["NOISE_STD", "NOISE_BOUND", "NoiseStudy", "error_std", "noise_study"]

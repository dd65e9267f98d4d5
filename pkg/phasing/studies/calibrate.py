import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import pandas as pd

from utils.coefficients_io import dump_coefficients
from utils.records_io import read_samples, write_samples, write_table, write_text_table

from .. import Bench
from ..calibration import Ca50Fit, IntakeFit, calibrate_ca50, calibrate_intake, perturb_initial, train_validate_split
from ..engine import synthesize_dataset
from ..models import CoefficientSet, IntakeCoefficients

logger = logging.getLogger(__name__)


@dataclass
class CalibrationRun:
    coefficients: CoefficientSet
    intake: IntakeFit
    ca50: Ca50Fit
    files: List[Path] = field(default_factory=list)


def starting_point(bench: Bench, fraction: float, seed: int) -> CoefficientSet:
    """The working set with every fitted coefficient scaled by 1 + U(-fraction, fraction)."""
    base = bench.coefficients
    if fraction == 0:
        return base
    intake = {
        cyl: IntakeCoefficients(**perturb_initial(coeffs.as_dict(), fraction, seed * 100 + cyl))
        for cyl, coeffs in base.intake.items()
    }
    comb = base.combustion
    fit_keys = comb.FIT_KEYS
    start = perturb_initial({k: getattr(comb, k) for k in fit_keys}, fraction, seed * 100)
    return CoefficientSet(f"{base.name}-start", intake, comb.with_values(fit_keys, (start[k] for k in fit_keys)))


def convergence_logs(intake: IntakeFit, ca50: Ca50Fit) -> pd.DataFrame:
    parts = []
    for cyl, fits in intake.fits.items():
        for fit in fits:
            parts.append(fit.log.assign(fit=f"{fit.evaluator}-cyl{cyl}"))
    for fit in (ca50.soc_fit, ca50.ca50_fit):
        parts.append(fit.log.assign(fit=fit.evaluator))
    return pd.concat(parts, ignore_index=True)


def calibrate(
    bench: Bench,
    out_dir: Optional[Path] = None,
    *,
    dataset_path: Optional[Path] = None,
    seed: int = 0,
    perturbation: Optional[float] = None,
) -> CalibrationRun:
    cal = bench.harness.calibration
    perturbation = cal.initial_perturbation if perturbation is None else perturbation
    plant = bench.plant_config()
    if dataset_path is not None:
        dataset = read_samples(dataset_path)
    else:
        dataset = synthesize_dataset(plant, n_points=cal.dataset_size, seed=seed, ca50_noise=cal.ca50_noise)

    train, validate = train_validate_split(dataset, cal.train_fraction, seed)
    start = starting_point(bench, perturbation, seed)
    intake = calibrate_intake(train, start.intake, cal.optimizer, validate)
    ca50 = calibrate_ca50(train, start.combustion, plant.geometry, cal.optimizer, validate)
    fitted = CoefficientSet(f"{bench.coefficients.name}-fitted", intake.coefficients, ca50.coefficients)
    run = CalibrationRun(fitted, intake, ca50)

    if out_dir is not None:
        out_dir = Path(out_dir)
        header = bench.attribution(seed=seed, preset="calibration", controller="none")
        run.files = [
            dump_coefficients(fitted, out_dir / "coefficients.json", description="fitted by manage.py calibrate"),
            write_samples(dataset, out_dir / "dataset.csv", header),
            write_table(intake.report, out_dir / "intake_report.csv", header, index=True),
            write_table(ca50.report, out_dir / "ca50_report.csv", header, index=True),
            write_text_table(ca50.report, out_dir / "ca50_report.txt", header),
            write_table(convergence_logs(intake, ca50), out_dir / "convergence.csv", header),
        ]
        for path in run.files:
            logger.info("wrote %s", path)
    return run


__all__ = ["CalibrationRun", "starting_point", "convergence_logs", "calibrate"]

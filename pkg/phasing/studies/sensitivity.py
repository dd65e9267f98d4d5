import logging
from typing import Optional

import pandas as pd

from .. import Bench
from ..calibration import DEFAULT_PERTURBATIONS, error_response_study
from ..engine import synthesize_dataset

logger = logging.getLogger(__name__)


def sensitivity(bench: Bench, dataset: Optional[pd.DataFrame] = None, *, seed: int = 0) -> pd.DataFrame:
    """CA50 prediction error statistics under each input offset, baseline first."""
    if dataset is None:
        cal = bench.harness.calibration
        dataset = synthesize_dataset(
            bench.plant_config(), n_points=cal.dataset_size, seed=seed, ca50_noise=cal.ca50_noise
        )
    table = error_response_study(
        dataset,
        bench.coefficients.intake,
        bench.coefficients.combustion,
        bench.plant_config().geometry,
        DEFAULT_PERTURBATIONS,
    )
    baseline = float(table.loc[0, "std"])
    table["std_change"] = table["std"] - baseline
    logger.info("sensitivity: baseline std %.3f CAD, widest shift %.3f CAD", baseline, table["std_change"].abs().max())
    return table


__all__ = ["sensitivity"]

import itertools
import logging
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .. import Bench
from ..combustion import ORACLE_STEP, compression_trace, soc_full, soc_simplified
from ..gas import cylinder_volume, p_ivc, polytropic_to_soi, t_ivc
from ..models import SAMPLE_RANGES, GasState

logger = logging.getLogger(__name__)

ORACLE_SOIS = (-10.0, -5.0, 0.0)


def oracle_grid(levels: int = 5, sois: Sequence[float] = ORACLE_SOIS) -> pd.DataFrame:
    axes = {name: np.linspace(*SAMPLE_RANGES[name], levels) for name in ("speed", "p_im", "phi", "egr")}
    rows = itertools.product(axes["speed"], axes["p_im"], axes["phi"], axes["egr"], sois)
    grid = pd.DataFrame(list(rows), columns=["speed", "p_im", "phi", "egr", "soi"])
    grid["t_im"] = float(np.mean(SAMPLE_RANGES["t_im"]))
    return grid


def oracle_check(
    bench: Bench,
    *,
    cylinder: int = 1,
    step: float = ORACLE_STEP,
    grid: Optional[pd.DataFrame] = None,
) -> pd.DataFrame:
    """Knock-integral SOC against the frozen-state closed form over a grid of operating points."""
    grid = oracle_grid() if grid is None else grid
    geometry = bench.plant_config().geometry
    intake = bench.coefficients.intake[cylinder]
    comb = bench.coefficients.combustion
    v_ivc = cylinder_volume(geometry, geometry.ivc)

    full, simple = [], []
    for row in grid.itertuples(index=False):
        ivc = GasState(
            p_ivc(intake, row.t_im, row.speed, row.p_im),
            t_ivc(intake, row.t_im, row.p_im, row.phi, row.speed, row.egr),
            geometry.ivc,
        )
        trace = compression_trace(ivc, geometry, comb.k_c, row.soi, step=step)
        full.append(soc_full(trace, row.soi, row.speed, row.egr, row.phi, comb))
        soi_state = polytropic_to_soi(ivc, v_ivc, cylinder_volume(geometry, row.soi), comb.k_c)
        simple.append(soc_simplified(row.soi, soi_state, row.speed, row.egr, row.phi, comb))

    out = grid.copy()
    out["soc_full"] = full
    out["soc_simplified"] = simple
    out["deviation"] = np.abs(out["soc_full"] - out["soc_simplified"])
    logger.info("oracle check over %d points: max |deviation| %.4f CAD", len(out), out["deviation"].max())
    return out


__all__ = ["ORACLE_SOIS", "oracle_grid", "oracle_check"]

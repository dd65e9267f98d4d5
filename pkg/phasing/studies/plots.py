import logging
from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")  # non-interactive backend, must precede any figure creation
from matplotlib.figure import Figure

import pandas as pd

logger = logging.getLogger(__name__)


def _ca50_figure(frame: pd.DataFrame, title: str) -> Figure:
    fig = Figure(figsize=(9, 5))
    ax = fig.add_subplot(1, 1, 1)
    fired = frame[frame["fired"] & ~frame["misfire"]]
    for cyl, group in fired.groupby("cylinder_index"):
        ax.plot(group["sim_time"], group["ca50_true"], lw=0.8, label=f"cyl {cyl}")
    ref = fired.sort_values("sim_time")
    ax.plot(ref["sim_time"], ref["ca50_ref"], "k--", lw=1.0, label="reference")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("CA50 (CAD aTDC)")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8, ncol=2)
    fig.tight_layout()
    return fig


def _soi_figure(frame: pd.DataFrame, title: str, cylinder: int) -> Figure:
    fig = Figure(figsize=(9, 4))
    ax = fig.add_subplot(1, 1, 1)
    cyl = frame[(frame["cylinder_index"] == cylinder) & frame["fired"]]
    ax.step(cyl["sim_time"], cyl["soi"], where="post", lw=1.0)
    ax.set_xlabel("time (s)")
    ax.set_ylabel(f"SOI cyl {cylinder} (CAD aTDC)")
    ax.set_title(title)
    fig.tight_layout()
    return fig


def plot_run(frame: pd.DataFrame, out_dir: Path, title: str, cylinder: int = 1) -> List[Path]:
    """CA50 per cylinder and the SOI trace of one cylinder. Returns [] if plotting fails."""
    paths = [Path(out_dir) / "ca50.png", Path(out_dir) / f"soi_cyl{cylinder}.png"]
    try:
        _ca50_figure(frame, title).savefig(paths[0], dpi=150, bbox_inches="tight")
        _soi_figure(frame, title, cylinder).savefig(paths[1], dpi=150, bbox_inches="tight")
    except Exception as exc:
        logger.warning("plotting failed, continuing with tables only: %s", exc)
        return []
    return paths


__all__ = ["plot_run"]

from ..summary import summarize
from .calibrate import calibrate
from .noise import noise_study
from .oracle import oracle_check
from .run import run, run_batch
from .sensitivity import sensitivity
from .tune import tune_pid

__all__ = ["summarize", "calibrate", "noise_study", "oracle_check", "run", "run_batch", "sensitivity", "tune_pid"]

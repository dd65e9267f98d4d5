"""
Coefficient calibration.

Every fit is a batch minimisation of the RMSE between a model evaluated over
the whole dataset and one target column. The optimizer treats the model as
opaque: gradients come from central finite differences on coefficients
normalised by their initial magnitudes, so c13 ~ 1e5 and c10 ~ 1e-5 move on
the same scale.

Intake models (T_IVC, P_IVC) are fitted per cylinder. The CA50 model is
shared by all cylinders and is fitted in two stages: the ignition-delay
coefficients on SOC, then the burn coefficients on CA50 with the delay
coefficients held.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .combustion import composite_burn_term, ignition_delay
from .errors import DomainError, OptimizerFailure
from .gas import cylinder_volume, p_ivc, polytropic_arrays, t_ivc
from .models import (
    CombustionCoefficients,
    EngineGeometry,
    IntakeCoefficients,
    OptimizerConfig,
)

logger = logging.getLogger(__name__)

MIN_SAMPLES_PER_CYLINDER = 30
SOC_KEYS = ("c10", "c11", "c12", "c13", "c14")
BURN_KEYS = ("c16", "c17", "c18")

Params = Dict[str, float]


def rmse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.size == 0 or p.shape != t.shape:
        raise DomainError("rmse needs two non-empty sequences of equal length")
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass(frozen=True)
class ModelEvaluator:
    """A model over a dataset: `predict(params, frame)` returns one prediction per row."""

    name: str
    target: str
    keys: Tuple[str, ...]
    predict: Callable[[Params, pd.DataFrame], np.ndarray]


@dataclass
class FitResult:
    evaluator: str
    params: Params
    initial_rmse: float
    final_rmse: float
    iterations: int
    converged: bool
    reason: str
    log: pd.DataFrame = field(default_factory=pd.DataFrame)


def _residual_fn(dataset: pd.DataFrame, evaluator: ModelEvaluator, scale: np.ndarray):
    target = dataset[evaluator.target].to_numpy(dtype=float)

    def residuals(theta: np.ndarray) -> np.ndarray:
        try:
            with np.errstate(all="ignore"):
                pred = np.asarray(evaluator.predict(dict(zip(evaluator.keys, theta)), dataset), dtype=float)
        except DomainError:
            return np.full(target.shape, np.inf)
        return pred - target

    return residuals


def _jacobian(residuals, theta: np.ndarray, scale: np.ndarray, fd_step: float) -> np.ndarray:
    """d(residual)/dz with z = theta / scale, by central differences."""
    z = theta / scale
    columns = []
    for i in range(theta.size):
        h = fd_step * max(abs(z[i]), 1.0)
        up, down = theta.copy(), theta.copy()
        up[i] += h * scale[i]
        down[i] -= h * scale[i]
        columns.append((residuals(up) - residuals(down)) / (2.0 * h))
    return np.column_stack(columns)


def _rms(r: np.ndarray) -> float:
    value = float(np.sqrt(np.mean(r**2)))
    return value if math.isfinite(value) else math.inf


def batch_gradient_descent(
    dataset: pd.DataFrame,
    evaluator: ModelEvaluator,
    initial: Mapping[str, float],
    config: OptimizerConfig = OptimizerConfig(),
) -> FitResult:
    if dataset.empty:
        raise DomainError("cannot calibrate on an empty dataset")
    theta = np.array([float(initial[k]) for k in evaluator.keys])
    scale = np.where(np.abs(theta) > 0, np.abs(theta), 1.0)
    residuals = _residual_fn(dataset, evaluator, scale)
    n = len(dataset)

    r = residuals(theta)
    error = _rms(r)
    log: List[dict] = [{"iteration": 0, "rmse": error, "grad_norm": math.nan, "step": 0.0, "backtracks": 0}]
    if not math.isfinite(error):
        raise OptimizerFailure(f"{evaluator.name}: initial RMSE is not finite", pd.DataFrame(log))

    initial_rmse = error
    lr = config.learning_rate
    damping = 1e-3
    streak = 0
    converged, reason, iteration = False, "max-iterations", 0

    for iteration in range(1, config.max_iterations + 1):
        jac = _jacobian(residuals, theta, scale, config.fd_step)
        grad = jac.T @ r / (n * error) if error > 0 else np.zeros_like(theta)
        grad_norm = float(np.linalg.norm(grad))
        if not np.all(np.isfinite(grad)):
            raise OptimizerFailure(f"{evaluator.name}: non-finite gradient", pd.DataFrame(log))
        if grad_norm <= config.stop_tolerance:
            converged, reason = True, "gradient"
            iteration -= 1
            break

        backtracks = 0
        while True:
            if config.method == "descent":
                step = lr * (0.5**backtracks)
                delta = -step * grad
            else:
                step = damping
                normal = jac.T @ jac
                diag = np.diag(np.where(np.diag(normal) > 0, np.diag(normal), 1.0))
                try:
                    delta = np.linalg.solve(normal + damping * diag, -jac.T @ r)
                except np.linalg.LinAlgError:
                    delta = np.full_like(theta, np.nan)
            candidate = theta + delta * scale
            r_new = residuals(candidate) if np.all(np.isfinite(candidate)) else np.full_like(r, np.inf)
            new_error = _rms(r_new)
            if new_error <= error:
                break
            backtracks += 1
            if config.method != "descent":
                damping *= 2.0
            if backtracks > config.max_halvings:
                break

        if backtracks > config.max_halvings:
            logger.warning("%s: RMSE cannot decrease after %d backtracks; stopping", evaluator.name, backtracks - 1)
            converged, reason = True, "no-decrease"
            iteration -= 1
            break

        streak = streak + 1 if backtracks else 0
        if config.method == "descent":
            lr = step if backtracks else min(config.learning_rate, step * 1.25)
        elif not backtracks:
            damping /= 3.0
        improvement = error - new_error
        theta, r, error = candidate, r_new, new_error
        log.append(
            {"iteration": iteration, "rmse": error, "grad_norm": grad_norm, "step": step, "backtracks": backtracks}
        )
        logger.debug("%s iter %d rmse=%.6g |g|=%.3g backtracks=%d", evaluator.name, iteration, error, grad_norm, backtracks)
        if streak >= config.divergence_limit:
            raise OptimizerFailure(
                f"{evaluator.name}: {streak} consecutive iterations needed backtracking", pd.DataFrame(log)
            )
        if improvement < config.stop_tolerance:
            converged, reason = True, "improvement"
            break

    params = dict(zip(evaluator.keys, (float(v) for v in theta)))
    logger.info(
        "%s: rmse %.6g -> %.6g after %d iterations (%s)", evaluator.name, initial_rmse, error, iteration, reason
    )
    return FitResult(
        evaluator=evaluator.name,
        params=params,
        initial_rmse=initial_rmse,
        final_rmse=error,
        iterations=iteration,
        converged=converged,
        reason=reason,
        log=pd.DataFrame(log),
    )


def perturb_initial(values: Mapping[str, float], fraction: float = 0.2, seed: int = 0) -> Params:
    rng = np.random.default_rng(seed)
    return {k: float(v) * (1.0 + rng.uniform(-fraction, fraction)) for k, v in values.items()}


def train_validate_split(
    dataset: pd.DataFrame, train_fraction: float = 0.7, seed: int = 0
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Per-cylinder shuffled split; each cylinder gets its own seeded permutation."""
    if not 0 < train_fraction < 1:
        raise DomainError("train_fraction must lie in (0, 1)")
    train, valid = [], []
    for cyl, group in dataset.groupby("cylinder", sort=True):
        order = np.random.default_rng([seed, int(cyl)]).permutation(len(group))
        cut = int(round(train_fraction * len(group)))
        train.append(group.iloc[order[:cut]])
        valid.append(group.iloc[order[cut:]])
    return pd.concat(train), pd.concat(valid)


# -- evaluators ------------------------------------------------------------


def intake_temperature_evaluator(template: IntakeCoefficients) -> ModelEvaluator:
    def predict(params: Params, frame: pd.DataFrame) -> np.ndarray:
        coeffs = template.with_values(params.keys(), params.values())
        return t_ivc(coeffs, frame["t_im"].to_numpy(), frame["p_im"].to_numpy(), frame["phi"].to_numpy(),
                     frame["speed"].to_numpy(), frame["egr"].to_numpy())

    return ModelEvaluator("t_ivc", "t_ivc", IntakeCoefficients.TEMPERATURE_KEYS, predict)


def intake_pressure_evaluator(template: IntakeCoefficients) -> ModelEvaluator:
    def predict(params: Params, frame: pd.DataFrame) -> np.ndarray:
        coeffs = template.with_values(params.keys(), params.values())
        return p_ivc(coeffs, frame["t_im"].to_numpy(), frame["speed"].to_numpy(), frame["p_im"].to_numpy())

    return ModelEvaluator("p_ivc", "p_ivc", IntakeCoefficients.PRESSURE_KEYS, predict)


def soi_states(frame: pd.DataFrame, k_c: float, geometry: EngineGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """P and T at SOI from the IVC columns of a dataset."""
    return polytropic_arrays(
        frame["p_ivc"].to_numpy(dtype=float),
        frame["t_ivc"].to_numpy(dtype=float),
        cylinder_volume(geometry, geometry.ivc),
        cylinder_volume(geometry, frame["soi"].to_numpy(dtype=float)),
        k_c,
    )


def predict_soc(coeffs: CombustionCoefficients, frame: pd.DataFrame, geometry: EngineGeometry) -> np.ndarray:
    p_soi, t_soi = soi_states(frame, coeffs.k_c, geometry)
    return frame["soi"].to_numpy(dtype=float) + ignition_delay(
        p_soi, t_soi, frame["speed"].to_numpy(dtype=float), frame["egr"].to_numpy(dtype=float),
        frame["phi"].to_numpy(dtype=float), coeffs,
    )


def predict_ca50(coeffs: CombustionCoefficients, frame: pd.DataFrame, geometry: EngineGeometry) -> np.ndarray:
    x_d = frame["egr"].to_numpy(dtype=float) + frame["x_r"].to_numpy(dtype=float)
    return predict_soc(coeffs, frame, geometry) + composite_burn_term(x_d, frame["phi"].to_numpy(dtype=float), coeffs)


def soc_evaluator(template: CombustionCoefficients, geometry: EngineGeometry) -> ModelEvaluator:
    def predict(params: Params, frame: pd.DataFrame) -> np.ndarray:
        return predict_soc(template.with_values(params.keys(), params.values()), frame, geometry)

    return ModelEvaluator("soc", "soc", SOC_KEYS, predict)


def ca50_evaluator(
    template: CombustionCoefficients, geometry: EngineGeometry, keys: Sequence[str] = BURN_KEYS
) -> ModelEvaluator:
    def predict(params: Params, frame: pd.DataFrame) -> np.ndarray:
        return predict_ca50(template.with_values(params.keys(), params.values()), frame, geometry)

    return ModelEvaluator("ca50", "ca50", tuple(keys), predict)


# -- calibration pipelines -------------------------------------------------


@dataclass
class IntakeFit:
    coefficients: Dict[int, IntakeCoefficients]
    report: pd.DataFrame
    fits: Dict[int, Tuple[FitResult, FitResult]]


def calibrate_intake(
    train: pd.DataFrame,
    initial: Mapping[int, IntakeCoefficients],
    config: OptimizerConfig = OptimizerConfig(),
    validate: Optional[pd.DataFrame] = None,
) -> IntakeFit:
    coefficients: Dict[int, IntakeCoefficients] = {}
    fits: Dict[int, Tuple[FitResult, FitResult]] = {}
    rows = []
    for cyl, group in train.groupby("cylinder", sort=True):
        cyl = int(cyl)
        if len(group) < MIN_SAMPLES_PER_CYLINDER:
            raise DomainError(f"cylinder {cyl} has {len(group)} samples, need >= {MIN_SAMPLES_PER_CYLINDER}")
        if cyl not in initial:
            raise DomainError(f"no initial intake coefficients for cylinder {cyl}")
        start = initial[cyl]
        temperature_eval = intake_temperature_evaluator(start)
        pressure_eval = intake_pressure_evaluator(start)
        temperature = batch_gradient_descent(
            group, temperature_eval, {k: getattr(start, k) for k in temperature_eval.keys}, config
        )
        pressure = batch_gradient_descent(group, pressure_eval, {k: getattr(start, k) for k in pressure_eval.keys}, config)
        fitted = start.with_values(temperature.params.keys(), temperature.params.values())
        fitted = fitted.with_values(pressure.params.keys(), pressure.params.values())
        coefficients[cyl] = fitted
        fits[cyl] = (temperature, pressure)

        check = group if validate is None else validate[validate["cylinder"] == cyl]
        rows.append(
            {
                "cylinder": cyl,
                "n_train": len(group),
                "n_validate": len(check),
                "t_ivc_rmse": rmse(temperature_eval.predict(temperature.params, check), check["t_ivc"]),
                "p_ivc_rmse": rmse(pressure_eval.predict(pressure.params, check), check["p_ivc"]),
            }
        )
    return IntakeFit(coefficients, pd.DataFrame(rows).set_index("cylinder"), fits)


@dataclass
class Ca50Fit:
    coefficients: CombustionCoefficients
    report: pd.DataFrame
    soc_fit: FitResult
    ca50_fit: FitResult


def prediction_report(
    coeffs: CombustionCoefficients, frame: pd.DataFrame, geometry: EngineGeometry
) -> pd.DataFrame:
    """Std-dev and max |error| of SOC and CA50 predictions, one column per cylinder."""
    soc_err = predict_soc(coeffs, frame, geometry) - frame["soc"].to_numpy(dtype=float)
    ca50_err = predict_ca50(coeffs, frame, geometry) - frame["ca50"].to_numpy(dtype=float)
    cylinders = frame["cylinder"].to_numpy()
    report = {}
    for cyl in sorted(set(int(c) for c in cylinders)):
        mask = cylinders == cyl
        report[cyl] = {
            "soc_std": float(np.std(soc_err[mask])),
            "soc_max": float(np.max(np.abs(soc_err[mask]))),
            "ca50_std": float(np.std(ca50_err[mask])),
            "ca50_max": float(np.max(np.abs(ca50_err[mask]))),
        }
    return pd.DataFrame(report).loc[["soc_std", "soc_max", "ca50_std", "ca50_max"]]


def calibrate_ca50(
    train: pd.DataFrame,
    initial: CombustionCoefficients,
    geometry: EngineGeometry = EngineGeometry(),
    config: OptimizerConfig = OptimizerConfig(),
    validate: Optional[pd.DataFrame] = None,
) -> Ca50Fit:
    if train.empty:
        raise DomainError("cannot calibrate on an empty dataset")
    soc_eval = soc_evaluator(initial, geometry)
    soc_fit = batch_gradient_descent(train, soc_eval, {k: getattr(initial, k) for k in SOC_KEYS}, config)
    stage = initial.with_values(soc_fit.params.keys(), soc_fit.params.values())

    burn_eval = ca50_evaluator(stage, geometry)
    ca50_fit = batch_gradient_descent(train, burn_eval, {k: getattr(stage, k) for k in BURN_KEYS}, config)
    fitted = stage.with_values(ca50_fit.params.keys(), ca50_fit.params.values())

    report = prediction_report(fitted, train if validate is None else validate, geometry)
    return Ca50Fit(fitted, report, soc_fit, ca50_fit)


# -- sensitivity -----------------------------------------------------------

DEFAULT_PERTURBATIONS: Tuple[Tuple[str, float], ...] = (
    ("t_im", 5.0),
    ("t_im", -5.0),
    ("p_im", 0.1),
    ("p_im", -0.1),
    ("egr", 0.05),
    ("egr", -0.05),
    ("phi", 0.05),
    ("phi", -0.05),
    ("x_r", 0.03),
    ("x_r", -0.03),
)

_PERTURB_LIMITS = {"egr": (0.0, 1.0), "x_r": (0.0, 0.99)}


def predict_ca50_from_intake(
    frame: pd.DataFrame,
    intake: Mapping[int, IntakeCoefficients],
    coeffs: CombustionCoefficients,
    geometry: EngineGeometry = EngineGeometry(),
) -> np.ndarray:
    """CA50 predicted from manifold conditions through the intake models."""
    staged = frame.copy()
    staged["t_ivc"] = np.nan
    staged["p_ivc"] = np.nan
    for cyl, group in frame.groupby("cylinder"):
        cyl_coeffs = intake[int(cyl)]
        staged.loc[group.index, "t_ivc"] = t_ivc(
            cyl_coeffs, group["t_im"].to_numpy(), group["p_im"].to_numpy(), group["phi"].to_numpy(),
            group["speed"].to_numpy(), group["egr"].to_numpy(),
        )
        staged.loc[group.index, "p_ivc"] = p_ivc(
            cyl_coeffs, group["t_im"].to_numpy(), group["speed"].to_numpy(), group["p_im"].to_numpy()
        )
    return predict_ca50(coeffs, staged, geometry)


def error_response_study(
    dataset: pd.DataFrame,
    intake: Mapping[int, IntakeCoefficients],
    coeffs: CombustionCoefficients,
    geometry: EngineGeometry = EngineGeometry(),
    perturbations: Sequence[Tuple[str, float]] = DEFAULT_PERTURBATIONS,
) -> pd.DataFrame:
    """CA50 prediction error statistics with one input offset at a time."""
    measured = dataset["ca50"].to_numpy(dtype=float)
    rows = []
    for source, delta in (("none", 0.0), *perturbations):
        frame = dataset.reset_index(drop=True)
        if source != "none":
            frame = frame.copy()
            shifted = frame[source] + delta
            if source in _PERTURB_LIMITS:
                shifted = shifted.clip(*_PERTURB_LIMITS[source])
            frame[source] = shifted
        err = predict_ca50_from_intake(frame, intake, coeffs, geometry) - measured
        rows.append({"source": source, "delta": delta, "std": float(np.std(err)), "max": float(np.max(np.abs(err)))})
        logger.debug("error response %s %+g: std %.3f", source, delta, rows[-1]["std"])
    return pd.DataFrame(rows, columns=["source", "delta", "std", "max"])


__all__ = [
    "MIN_SAMPLES_PER_CYLINDER",
    "SOC_KEYS",
    "BURN_KEYS",
    "rmse",
    "ModelEvaluator",
    "FitResult",
    "batch_gradient_descent",
    "perturb_initial",
    "train_validate_split",
    "intake_temperature_evaluator",
    "intake_pressure_evaluator",
    "soi_states",
    "predict_soc",
    "predict_ca50",
    "soc_evaluator",
    "ca50_evaluator",
    "IntakeFit",
    "calibrate_intake",
    "Ca50Fit",
    "prediction_report",
    "calibrate_ca50",
    "DEFAULT_PERTURBATIONS",
    "predict_ca50_from_intake",
    "error_response_study",
]

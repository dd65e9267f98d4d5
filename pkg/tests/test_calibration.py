import numpy as np
import pandas as pd
import pytest

from phasing.calibration import (
    BURN_KEYS,
    DEFAULT_PERTURBATIONS,
    SOC_KEYS,
    ModelEvaluator,
    batch_gradient_descent,
    ca50_evaluator,
    calibrate_ca50,
    calibrate_intake,
    error_response_study,
    intake_temperature_evaluator,
    perturb_initial,
    predict_ca50,
    predict_ca50_from_intake,
    predict_soc,
    prediction_report,
    rmse,
    train_validate_split,
)
from phasing.config import ROOT, load_harness_config
from phasing.engine import synthesize_dataset
from phasing.errors import DomainError, OptimizerFailure
from phasing.models import EngineGeometry, IntakeCoefficients, OptimizerConfig, PlantConfig
from utils.coefficients_io import load_coefficients

ENGINE = load_coefficients()
GEOM = EngineGeometry()
LM = OptimizerConfig(method="levenberg-marquardt")
HARNESS_OPTIMIZER = load_harness_config(ROOT / "data" / "harness.json").calibration.optimizer


@pytest.fixture(scope="module")
def dataset() -> pd.DataFrame:
    return synthesize_dataset(PlantConfig(coefficients=ENGINE), n_points=40, seed=0, ca50_noise=0.0)


@pytest.fixture(scope="module")
def closed_form_dataset(dataset) -> pd.DataFrame:
    """Targets regenerated from the closed-form model so the true coefficients fit exactly."""
    frame = dataset.copy()
    frame["soc"] = predict_soc(ENGINE.combustion, frame, GEOM)
    frame["ca50"] = predict_ca50(ENGINE.combustion, frame, GEOM)
    return frame


def _line(slope=2.0, intercept=1.0):
    frame = pd.DataFrame({"x": np.linspace(0.0, 5.0, 30)})
    frame["y"] = slope * frame["x"] + intercept
    evaluator = ModelEvaluator("line", "y", ("a", "b"), lambda p, f: p["a"] * f["x"].to_numpy() + p["b"])
    return frame, evaluator


def test_rmse_examples():
    assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.sqrt(12.5))
    with pytest.raises(DomainError):
        rmse([1.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        rmse([], [])


def test_start_at_optimum_stops_immediately():
    frame, evaluator = _line()
    fit = batch_gradient_descent(frame, evaluator, {"a": 2.0, "b": 1.0})
    assert fit.converged and fit.reason == "gradient"
    assert fit.iterations == 0
    assert fit.final_rmse == 0.0
    assert fit.params == {"a": 2.0, "b": 1.0}


@pytest.mark.parametrize("method", ["descent", "levenberg-marquardt"])
def test_line_fit_reduces_rmse(method):
    frame, evaluator = _line()
    fit = batch_gradient_descent(frame, evaluator, {"a": 1.5, "b": 0.5}, OptimizerConfig(method=method))
    assert fit.final_rmse < fit.initial_rmse
    assert list(fit.log.columns) == ["iteration", "rmse", "grad_norm", "step", "backtracks"]
    assert (fit.log["rmse"].diff().dropna() <= 1e-12).all()


def test_levenberg_marquardt_solves_line():
    frame, evaluator = _line()
    fit = batch_gradient_descent(frame, evaluator, {"a": 1.5, "b": 0.5}, LM)
    assert fit.converged
    assert fit.final_rmse < 1e-6
    assert fit.params["a"] == pytest.approx(2.0, abs=1e-5)
    assert fit.params["b"] == pytest.approx(1.0, abs=1e-5)


def test_iteration_cap():
    frame, evaluator = _line()
    fit = batch_gradient_descent(frame, evaluator, {"a": 1.5, "b": 0.5}, OptimizerConfig(max_iterations=3))
    assert fit.iterations == 3
    assert fit.reason == "max-iterations"
    assert not fit.converged


def test_non_finite_start_fails():
    frame, _ = _line()
    evaluator = ModelEvaluator("bad", "y", ("a",), lambda p, f: np.full(len(f), np.nan))
    with pytest.raises(OptimizerFailure) as info:
        batch_gradient_descent(frame, evaluator, {"a": 1.0})
    assert isinstance(info.value.log, pd.DataFrame)


def test_empty_dataset_rejected():
    _, evaluator = _line()
    with pytest.raises(DomainError):
        batch_gradient_descent(pd.DataFrame({"x": [], "y": []}), evaluator, {"a": 1.0, "b": 0.0})


def test_perturb_initial_is_bounded_and_seeded():
    values = {"c1": -7.35e-3, "c2": 8.42, "c13": 8.22e4}
    a = perturb_initial(values, 0.2, seed=1)
    assert a == perturb_initial(values, 0.2, seed=1)
    assert a != perturb_initial(values, 0.2, seed=2)
    for k, v in values.items():
        assert abs(a[k] / v - 1.0) <= 0.2


def test_split_is_per_cylinder_and_disjoint(dataset):
    train, validate = train_validate_split(dataset, 0.7, seed=3)
    assert len(train) + len(validate) == len(dataset)
    assert set(train.index).isdisjoint(validate.index)
    assert (train["cylinder"].value_counts() == 28).all()
    again, _ = train_validate_split(dataset, 0.7, seed=3)
    pd.testing.assert_frame_equal(train, again)
    with pytest.raises(DomainError):
        train_validate_split(dataset, 1.0)


def test_intake_calibration_recovers_per_cylinder_models(dataset):
    train, validate = train_validate_split(dataset, 0.8, seed=0)
    start = {
        cyl: IntakeCoefficients(**perturb_initial(coeffs.as_dict(), 0.05, seed=cyl))
        for cyl, coeffs in ENGINE.intake.items()
    }
    fit = calibrate_intake(train, start, LM, validate)
    assert list(fit.report.index) == [1, 2, 3, 4, 5, 6]
    assert (fit.report["n_train"] == 32).all()
    assert (fit.report["t_ivc_rmse"] < 0.5).all()
    assert (fit.report["p_ivc_rmse"] < 0.01).all()

    # one model for all cylinders cannot match the per-cylinder fits
    pooled_eval = intake_temperature_evaluator(fit.coefficients[1])
    pooled = batch_gradient_descent(
        train, pooled_eval, {k: getattr(fit.coefficients[1], k) for k in pooled_eval.keys}, LM
    )
    assert pooled.final_rmse > fit.report["t_ivc_rmse"].max()


def test_intake_calibration_needs_enough_samples(dataset):
    few = dataset.groupby("cylinder").head(10)
    with pytest.raises(DomainError):
        calibrate_intake(few, dict(ENGINE.intake), LM)


@pytest.mark.parametrize("cylinder, seed", [(1, 0), (1, 1), (4, 2), (6, 3)])
def test_harness_optimizer_recovers_temperature_model_from_twenty_percent(dataset, cylinder, seed):
    rows = dataset[dataset["cylinder"] == cylinder]
    truth = ENGINE.intake[cylinder]
    evaluator = intake_temperature_evaluator(truth)
    start = perturb_initial({k: getattr(truth, k) for k in evaluator.keys}, 0.2, seed=seed)
    fit = batch_gradient_descent(rows, evaluator, start, HARNESS_OPTIMIZER)
    assert fit.final_rmse < 0.5 < fit.initial_rmse
    assert fit.log["rmse"].is_monotonic_decreasing


def test_burn_stage_at_truth_stops_immediately(closed_form_dataset):
    evaluator = ca50_evaluator(ENGINE.combustion, GEOM)
    assert evaluator.keys == BURN_KEYS
    fit = batch_gradient_descent(
        closed_form_dataset, evaluator, {k: getattr(ENGINE.combustion, k) for k in BURN_KEYS}, LM
    )
    assert fit.reason == "gradient"
    assert fit.iterations == 0


def test_ca50_calibration_recovers_closed_form(closed_form_dataset):
    comb = ENGINE.combustion
    start = perturb_initial({k: getattr(comb, k) for k in comb.FIT_KEYS}, 0.02, seed=7)
    initial = comb.with_values(start.keys(), start.values())
    fit = calibrate_ca50(closed_form_dataset, initial, GEOM, LM)
    assert tuple(fit.soc_fit.params) == SOC_KEYS
    assert fit.soc_fit.final_rmse < 0.01
    assert fit.ca50_fit.final_rmse < 0.01
    assert fit.ca50_fit.final_rmse < fit.ca50_fit.initial_rmse
    assert list(fit.report.index) == ["soc_std", "soc_max", "ca50_std", "ca50_max"]
    assert list(fit.report.columns) == [1, 2, 3, 4, 5, 6]


def test_prediction_report_against_knock_integral(dataset):
    report = prediction_report(ENGINE.combustion, dataset, GEOM)
    assert report.shape == (4, 6)
    # the closed form tracks the knock integral to well under a crank degree
    assert (report.loc["soc_max"] < 1.0).all()
    assert (report.loc["soc_std"] <= report.loc["soc_max"]).all()


def test_error_response_study(closed_form_dataset):
    table = error_response_study(closed_form_dataset, ENGINE.intake, ENGINE.combustion, GEOM)
    assert list(table.columns) == ["source", "delta", "std", "max"]
    assert len(table) == 1 + len(DEFAULT_PERTURBATIONS)
    baseline = table.iloc[0]
    assert baseline["source"] == "none" and baseline["delta"] == 0.0
    # closed-form targets through the true intake models reproduce the dataset's IVC columns
    assert baseline["max"] < 1e-6
    shifted = table[table["source"] == "p_im"]
    assert (shifted["max"] > 0.01).all()


def test_predict_from_intake_matches_dataset_columns(closed_form_dataset):
    predicted = predict_ca50_from_intake(closed_form_dataset, ENGINE.intake, ENGINE.combustion, GEOM)
    assert np.allclose(predicted, closed_form_dataset["ca50"].to_numpy(), atol=1e-9)

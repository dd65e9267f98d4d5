import json
from dataclasses import replace

import pytest

from phasing import create_bench
from phasing.config import ROOT, CalibrationSettings, load_harness_config, load_settings
from phasing.engine import synthesize_dataset
from phasing.errors import ConfigError
from phasing.models import OptimizerConfig, RunManifest
from phasing.studies import calibrate, noise_study, oracle_check, run, run_batch, sensitivity, tune_pid
from phasing.studies.oracle import oracle_grid
from phasing.studies.run import parse_manifests
from utils.coefficients_io import load_coefficients
from utils.records_io import read_records, read_table


@pytest.fixture
def bench(tmp_path):
    settings = replace(load_settings({}), out_dir=tmp_path)
    return create_bench(settings, load_harness_config(ROOT / "data" / "harness.json"))


def test_run_writes_artifacts(bench, tmp_path):
    artifacts = run(RunManifest(case="case2", controller="feedforward", seed=2, duration=1.0), bench, plots=False)
    assert artifacts.out_dir == tmp_path / "case2-feedforward-seed2"
    names = sorted(p.name for p in artifacts.files)
    assert names == ["records.csv", "soi_cyl1.csv", "summary.csv", "summary.txt"]
    header, records = read_records(artifacts.out_dir / "records.csv")
    assert header["seed"] == "2"
    assert header["controller"] == "feedforward"
    assert header["coefficients"] == "engine.json"
    assert header["plant_config"] == "harness.json"
    assert len(records) == 60
    _, summary = read_table(artifacts.out_dir / "summary.csv")
    assert {"claim_band", "within_claim", "settling_cycles"} <= set(summary.columns)
    assert (summary["claim_band"] == 1.3).all()
    _, soi = read_table(artifacts.out_dir / "soi_cyl1.csv")
    assert list(soi.columns) == ["cycle_index", "sim_time", "soi", "clamped"]


def test_run_applies_manifest_plant_file(bench, tmp_path):
    payload = json.loads((ROOT / "data" / "harness.json").read_text(encoding="utf-8"))
    payload["bands"]["feedforward"] = 2.0
    custom = tmp_path / "custom.json"
    custom.write_text(json.dumps(payload), encoding="utf-8")
    manifest = RunManifest(case="case2", controller="feedforward", duration=0.5, plant_config=str(custom))
    artifacts = run(manifest, bench, plots=False)
    header, summary = read_table(artifacts.out_dir / "summary.csv")
    assert header["plant_config"] == "custom.json"
    assert (summary["claim_band"] == 2.0).all()

    with pytest.raises(ConfigError):
        run(RunManifest(case="case2", plant_config=str(tmp_path / "missing.json")), bench, plots=False)


def test_run_with_plots(bench):
    artifacts = run(RunManifest(case="1", controller="adaptive", duration=0.5), bench)
    pngs = [p for p in artifacts.files if p.suffix == ".png"]
    assert [p.name for p in pngs] == ["ca50.png", "soi_cyl1.png"]
    assert all(p.stat().st_size > 0 for p in pngs)


def test_unknown_case_writes_nothing(bench, tmp_path):
    with pytest.raises(ConfigError):
        run(RunManifest(case="case9"), bench)
    assert list(tmp_path.iterdir()) == []


def test_batch_isolates_failures(bench):
    manifests = parse_manifests(
        [{"case": "case2", "duration": 0.5}, {"case": "case9"}, {"case": "case3", "controller": "pid", "duration": 0.5}],
        {"seed": 1},
    )
    outcomes = run_batch(manifests, bench, workers=2)
    assert [o.status for o in outcomes] == ["ok", "ConfigError", "ok"]
    assert outcomes[0].manifest.seed == 1
    assert (outcomes[2].out_dir / "records.csv").exists()


@pytest.mark.parametrize(
    "payload",
    [{"case": "case1"}, [{"controller": "pid"}], [{"case": "case1", "controller": "mpc"}], [{"case": "case1", "speed": 3}]],
)
def test_parse_manifests_rejects_bad_entries(payload):
    with pytest.raises(ConfigError):
        parse_manifests(payload)


def test_noise_study_report_shape(bench):
    study = noise_study(bench, "case2", duration=1.5)
    assert study.report.shape == (6, 2)
    assert list(study.report.columns) == ["noise_off_std", "noise_on_std"]
    assert study.report.index.name == "cylinder"
    assert list(study.steady_band.index) == [1, 2, 3, 4, 5, 6]
    assert study.noisy.frame()["sim_time"].max() < 1.5
    measured = study.noisy.frame().dropna(subset=["ca50_true"])
    assert (measured["ca50_measured"] - measured["ca50_true"]).abs().max() <= 0.5


def test_sensitivity_table(bench):
    dataset = synthesize_dataset(bench.plant_config(), n_points=5, seed=0)
    table = sensitivity(bench, dataset)
    assert table.loc[0, "source"] == "none"
    assert table.loc[0, "std_change"] == 0.0
    assert len(table) == 11


def test_oracle_check_small_grid(bench):
    table = oracle_check(bench, grid=oracle_grid(levels=2))
    assert len(table) == 2**4 * 3
    assert (table["deviation"] <= 0.5).all()
    assert (table["soc_full"] > table["soi"]).all()


def test_calibrate_writes_loadable_coefficients(bench, tmp_path):
    small = CalibrationSettings(optimizer=OptimizerConfig(method="levenberg-marquardt"), dataset_size=50)
    bench = replace(bench, harness=replace(bench.harness, calibration=small))
    result = calibrate(bench, tmp_path / "cal", seed=1, perturbation=0.02)
    names = sorted(p.name for p in result.files)
    assert names == [
        "ca50_report.csv",
        "ca50_report.txt",
        "coefficients.json",
        "convergence.csv",
        "dataset.csv",
        "intake_report.csv",
    ]
    fitted = load_coefficients(tmp_path / "cal" / "coefficients.json")
    assert fitted.cylinders() == (1, 2, 3, 4, 5, 6)
    assert (result.intake.report["t_ivc_rmse"] < 1.0).all()
    _, log = read_table(tmp_path / "cal" / "convergence.csv")
    assert {"fit", "rmse", "iteration"} <= set(log.columns)
    assert "soc" in set(log["fit"])

    repeat = calibrate(bench, tmp_path / "repeat", seed=1, perturbation=0.02)
    assert repeat.coefficients == result.coefficients
    assert (tmp_path / "repeat" / "coefficients.json").read_bytes() == (tmp_path / "cal" / "coefficients.json").read_bytes()

    # a written dataset reloads exactly, so refitting it reproduces the coefficients
    again = calibrate(bench, tmp_path / "again", dataset_path=tmp_path / "cal" / "dataset.csv", seed=1, perturbation=0.02)
    assert again.coefficients == result.coefficients


def test_tune_pid_on_virtual_engine(bench):
    result = tune_pid(bench, "case2", cycles=24)
    assert result.ultimate_period >= 2.0
    assert result.kp > 0 and result.ki > 0

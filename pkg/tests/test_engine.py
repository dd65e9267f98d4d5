import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from scipy.stats import truncnorm

from phasing.engine import (
    VirtualEngine,
    egr_actuator_step,
    egr_time_constant,
    engine_cycle_period,
    firing_schedule,
    manifold_step,
    run_case,
    synthesize_dataset,
)
from phasing.errors import ConfigError, DomainError, PlantAbort
from phasing.models import (
    SAMPLE_FIELDS,
    CasePreset,
    CoefficientSet,
    ControlCommand,
    ManifoldDynamics,
    ManifoldState,
    OperatingPoint,
    PlantConfig,
)
from utils.coefficients_io import load_coefficients
from utils.presets_io import load_preset

ENGINE = load_coefficients()
POINT = OperatingPoint(1200.0, 300.0, 2.0, 0.7, 0.25, 8.0)


def _config(**overrides) -> PlantConfig:
    return PlantConfig(coefficients=ENGINE, **overrides)


def test_cycle_period():
    assert engine_cycle_period(1200.0) == pytest.approx(0.1)
    assert engine_cycle_period(1500.0) == pytest.approx(0.08)
    with pytest.raises(DomainError):
        engine_cycle_period(0.0)


def test_firing_schedule_for_one_second_at_1200_rpm():
    events = firing_schedule(1200.0, duration=1.0)
    assert len(events) == 60
    assert len(firing_schedule(1200.0, duration=0.95)) == 54
    assert [e.cylinder_index for e in events[:6]] == [1, 5, 3, 6, 2, 4]
    assert events[1].sim_time == pytest.approx(0.1 / 6)
    assert events[6].cycle_index == 2
    assert all(b.sim_time > a.sim_time for a, b in zip(events, events[1:]))


def test_firing_schedule_follows_speed_change():
    events = firing_schedule(lambda t: 1200.0 if t < 0.45 else 1500.0, duration=1.0)
    assert [e.cycle_index for e in events[::6]][:6] == [1, 2, 3, 4, 5, 6]
    assert events[30].sim_time == pytest.approx(0.5)
    assert events[31].sim_time - events[30].sim_time == pytest.approx(0.08 / 6)
    # six 0.08 s cycles fit after the switch; a seventh would overrun the window
    assert events[-1].cycle_index == 11
    assert len(events) == 30 + 36
    assert events[-1].sim_time == pytest.approx(0.9 + 5 * 0.08 / 6)


def test_firing_schedule_rejects_incomplete_order():
    with pytest.raises(DomainError):
        firing_schedule(1200.0, firing_order=(1, 2, 3))


def test_manifold_step_response():
    state = ManifoldState(p_im=1.0, p_im_target=2.0, t_im=300.0)
    times, pressures = [], []
    for k in range(10000):
        state = manifold_step(state, 0.001)
        times.append((k + 1) * 0.001)
        pressures.append(state.p_im)
    peak = int(np.argmax(pressures))
    # about 37% overshoot near half the damped period
    assert 2.33 <= pressures[peak] <= 2.41
    assert 1.25 <= times[peak] <= 1.45
    assert abs(pressures[-1] - 2.0) < 0.01


def test_manifold_rejects_bad_step():
    with pytest.raises(DomainError):
        manifold_step(ManifoldState(1.0, 2.0, 300.0), 0.0)


def test_egr_actuator_reaches_98_percent_in_settle_time():
    egr = 0.0
    for _ in range(700):
        egr = egr_actuator_step(egr, 0.5, 0.001)
    assert egr >= 0.49 - 1e-9
    assert egr_time_constant() == pytest.approx(0.7 / math.log(50))


def test_egr_actuator_rejects_bad_target():
    with pytest.raises(DomainError):
        egr_actuator_step(0.1, 0.6, 0.001)


def test_zero_noise_measurement_equals_truth():
    engine = VirtualEngine(_config(), seed=3)
    engine.reset(POINT)
    record = engine.cylinder_cycle(1, ControlCommand(-5.0, 1, 2), POINT, cycle_index=2)
    assert record.fired and not record.misfire
    assert record.ca50_measured == record.ca50_true
    assert record.soc > record.soi
    assert record.ca50_true > record.soc


def test_unfired_cycle_has_no_combustion():
    engine = VirtualEngine(_config(), seed=0)
    engine.reset(POINT)
    record = engine.cylinder_cycle(2, None, POINT, cycle_index=1)
    assert not record.fired
    assert math.isnan(record.ca50_true)


def test_mismatch_depends_on_seed_only():
    a, b, c = VirtualEngine(_config(), 1), VirtualEngine(_config(), 1), VirtualEngine(_config(), 2)
    assert a.intake == b.intake
    assert a.intake != c.intake
    for cyl, coeffs in a.intake.items():
        base = ENGINE.intake[cyl].as_dict()
        for key, value in coeffs.as_dict().items():
            assert abs(value / base[key] - 1.0) <= 0.01 + 1e-12


def test_zero_mismatch_keeps_coefficients():
    engine = VirtualEngine(_config(intake_mismatch=0.0), seed=5)
    assert engine.intake == dict(ENGINE.intake)


def test_combust_is_pure():
    engine = VirtualEngine(_config(), seed=0)
    kwargs = dict(p_im=2.0, t_im=300.0, egr=0.25, x_r=0.06, speed=1200.0, phi=0.7)
    assert engine.combust(1, -5.0, **kwargs) == engine.combust(1, -5.0, **kwargs)
    later = engine.combust(1, -3.0, **kwargs)
    assert later.ca50 > engine.combust(1, -5.0, **kwargs).ca50


def test_combust_dilution_counts_residual_gas():
    engine = VirtualEngine(_config(), seed=0)
    kwargs = dict(p_im=2.0, t_im=300.0, egr=0.25, speed=1200.0, phi=0.7)
    lean = engine.combust(1, -5.0, x_r=0.04, **kwargs)
    diluted = engine.combust(1, -5.0, x_r=0.08, **kwargs)
    assert diluted.soc == lean.soc
    assert diluted.bd > lean.bd
    with pytest.raises(DomainError):
        engine.combust(1, -5.0, x_r=1.0, **kwargs)


def test_noise_matches_truncated_normal():
    engine = VirtualEngine(_config(ca50_noise_std=0.25, ca50_noise_bound=0.5), seed=11)
    draws = engine.draw_noise(10_000)
    assert np.all(np.abs(draws) <= 0.5)
    expected = truncnorm(-2.0, 2.0, scale=0.25).std()
    assert np.std(draws) == pytest.approx(expected, rel=0.05)
    assert abs(np.mean(draws)) < 0.01


def test_residual_fraction_follows_egr_target():
    engine = VirtualEngine(_config(), seed=0)
    assert engine.residual_fraction(0.0) == pytest.approx(0.0721)
    assert engine.residual_fraction(0.25) == pytest.approx(0.0568)
    assert engine.residual_fraction(0.5) == pytest.approx(0.0415)


def test_residual_jitter_stays_in_bounds():
    engine = VirtualEngine(_config(x_r_jitter=0.05), seed=0)
    values = [engine.residual_fraction(0.0) for _ in range(200)]
    assert min(values) >= 0.0344 and max(values) <= 0.0909
    assert len(set(values)) > 1


def test_advance_tracks_boost_target():
    preset = load_preset("case2")
    engine = VirtualEngine(_config(), seed=0)
    engine.reset(preset.segments[0])
    engine.advance(9.0, preset)
    assert engine.time == pytest.approx(9.0)
    assert engine.manifold.p_im == pytest.approx(2.0, abs=0.01)
    assert engine.egr == pytest.approx(0.25)


def test_run_case_startup_sequence():
    result = run_case(load_preset("case2"), "adaptive", _config(), duration=1.0)
    frame = result.frame()
    assert len(frame) == 60
    schedule = firing_schedule(1200.0, duration=1.0)
    assert list(frame["cylinder_index"]) == [e.cylinder_index for e in schedule]
    assert list(frame["sim_time"]) == pytest.approx([e.sim_time for e in schedule])
    first = frame[frame["cycle_index"] == 1]
    assert not first["fired"].any()
    second = frame[frame["cycle_index"] == 2]
    assert (second["soi"] == -5.0).all()
    controlled = frame[frame["cycle_index"] >= 3]
    assert controlled["x1_hat"].notna().all()
    assert controlled["x1_true"].notna().all()
    assert set(result.summary["cylinder"]) == {1, 2, 3, 4, 5, 6}


def test_run_case_replays_bit_for_bit():
    preset = load_preset("case3")
    config = _config(ca50_noise_std=0.25)
    a = run_case(preset, "feedforward", config, duration=0.6, seed=4).frame()
    b = run_case(preset, "feedforward", config, duration=0.6, seed=4).frame()
    pd.testing.assert_frame_equal(a, b)
    c = run_case(preset, "feedforward", config, duration=0.6, seed=5).frame()
    assert not a["ca50_measured"].equals(c["ca50_measured"])


def test_run_case_aborts_on_misfire_streak():
    sluggish = ENGINE.combustion.with_values(["c11"], [1e3])
    config = PlantConfig(coefficients=CoefficientSet("sluggish", ENGINE.intake, sluggish))
    with pytest.raises(PlantAbort) as info:
        run_case(load_preset("case2"), "pid", config, duration=2.0)
    assert info.value.diagnostic["cylinder"] == 1
    assert info.value.diagnostic["preset"] == "case2"


def test_plant_config_validation():
    with pytest.raises(ConfigError):
        _config(intake_mismatch=0.5)
    with pytest.raises(ConfigError):
        _config(firing_order=(1, 2, 3, 4, 5, 5))


def test_synthesized_dataset_shape_and_ranges():
    frame = synthesize_dataset(_config(), n_points=10, seed=2)
    assert list(frame.columns) == list(SAMPLE_FIELDS)
    assert len(frame) == 60
    assert frame["cylinder"].value_counts().to_dict() == {c: 10 for c in range(1, 7)}
    assert frame["egr"].between(0.0, 0.5).all()
    assert frame["soi"].between(-10.0, 0.0).all()
    assert frame["x_r"].between(0.0344, 0.0909).all()
    assert (frame["soc"] > frame["soi"]).all()


def test_synthesized_dataset_without_noise_is_plant_truth():
    config = _config()
    frame = synthesize_dataset(config, n_points=3, seed=1, ca50_noise=0.0)
    engine = VirtualEngine(replace(config, intake_mismatch=0.0), seed=1)
    row = frame.iloc[0]
    burn = engine.combust(
        int(row["cylinder"]),
        row["soi"],
        p_im=row["p_im"],
        t_im=row["t_im"],
        egr=row["egr"],
        x_r=row["x_r"],
        speed=row["speed"],
        phi=row["phi"],
    )
    assert row["ca50"] == pytest.approx(burn.ca50, rel=1e-12)
    assert row["t_ivc"] == pytest.approx(burn.t_ivc, rel=1e-12)


def test_synthesized_dataset_is_seeded():
    a = synthesize_dataset(_config(), n_points=4, seed=9)
    b = synthesize_dataset(_config(), n_points=4, seed=9)
    pd.testing.assert_frame_equal(a, b)


def test_constant_point_preset_has_no_switch_effects():
    preset = CasePreset("flat", (POINT, POINT), segment_duration=1e6, transition_time=0.0)
    engine = VirtualEngine(_config(manifold=ManifoldDynamics()), seed=0)
    engine.reset(POINT)
    engine.advance(8.0, preset)
    assert engine.manifold.p_im == pytest.approx(2.0, abs=0.01)

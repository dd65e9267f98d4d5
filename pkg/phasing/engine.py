"""
Synthetic six-cylinder plant.

Ground truth is the full model chain: per-cylinder IVC models (optionally
perturbed away from the controllers' copy), a polytropic compression trace,
the knock integral, the burn-duration law and the Wiebe CA50. The airpath is
scripted: the intake manifold follows the boost target through an
underdamped second-order response and EGR follows its target through a
first-order actuator. Manifold and EGR states are integrated at fixed
substeps between firing events.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import truncnorm

from .combustion import burn_duration, ca50_from_wiebe, compression_trace, soc_full
from .controllers import ControllerSettings, SensorFrame, make_controllers, true_states
from .errors import DomainError, NoIgnitionError, PlantAbort
from .gas import (
    cylinder_volume,
    exhaust_oxygen_fraction,
    intake_oxygen_fraction,
    p_ivc,
    polytropic_to_soi,
    t_ivc,
)
from .models import (
    DEFAULT_FIRING_ORDER,
    SAMPLE_FIELDS,
    SAMPLE_RANGES,
    CasePreset,
    ChargeComposition,
    CombustionCoefficients,
    ControlCommand,
    CycleRecord,
    GasState,
    IntakeCoefficients,
    ManifoldDynamics,
    ManifoldState,
    OperatingPoint,
    PlantConfig,
)
from .summary import summarize

logger = logging.getLogger(__name__)

CYCLE_CAD = 720.0
ACTIVATION_CYCLE = 3


def engine_cycle_period(n: float) -> float:
    """Seconds per four-stroke cycle at n RPM."""
    if n <= 0:
        raise DomainError("engine speed must be > 0")
    return CYCLE_CAD / (6.0 * n)


def manifold_step(state: ManifoldState, dt: float, dynamics: ManifoldDynamics = ManifoldDynamics()) -> ManifoldState:
    if dt <= 0:
        raise DomainError("dt must be > 0")
    w = dynamics.omega
    accel = w * w * (state.p_im_target - state.p_im) - 2.0 * dynamics.damping_ratio * w * state.velocity
    velocity = state.velocity + dt * accel
    return replace(state, p_im=state.p_im + dt * velocity, velocity=velocity)


def egr_time_constant(settle_time: float = 0.7, settled_fraction: float = 0.98) -> float:
    return settle_time / -math.log(1.0 - settled_fraction)


def egr_actuator_step(current: float, target: float, dt: float, settle_time: float = 0.7) -> float:
    if not 0.0 <= target <= 0.5:
        raise DomainError("EGR target must lie in [0, 0.5]")
    if dt <= 0:
        raise DomainError("dt must be > 0")
    return target + (current - target) * math.exp(-dt / egr_time_constant(settle_time))


@dataclass(frozen=True)
class FiringEvent:
    sim_time: float
    cylinder_index: int
    cycle_index: int


def firing_schedule(
    n: Union[float, Callable[[float], float]],
    n_cyl: int = 6,
    firing_order: Tuple[int, ...] = DEFAULT_FIRING_ORDER,
    duration: float = 1.0,
) -> List[FiringEvent]:
    """Complete engine cycles inside ``duration``; ``n`` is a fixed speed or a speed-vs-time callable read at each cycle start."""
    if len(firing_order) != n_cyl:
        raise DomainError("firing order must name every cylinder once")
    speed_at = n if callable(n) else (lambda _t: n)
    events: List[FiringEvent] = []
    cycle_start, cycle = 0.0, 1
    while True:
        period = engine_cycle_period(speed_at(cycle_start))
        if cycle_start + period > duration + 1e-9:
            break
        spacing = period / n_cyl
        events.extend(FiringEvent(cycle_start + slot * spacing, cyl, cycle) for slot, cyl in enumerate(firing_order))
        cycle_start += period
        cycle += 1
    return events


@dataclass(frozen=True)
class Combustion:
    """Outcome of one cylinder's combustion for fixed inputs."""

    p_ivc: float
    t_ivc: float
    soi_state: GasState
    soc: float
    bd: float
    ca50: float


def _perturb(values: Dict[str, float], fraction: float, rng: np.random.Generator) -> Dict[str, float]:
    if fraction == 0:
        return dict(values)
    return {k: v * (1.0 + rng.uniform(-fraction, fraction)) for k, v in values.items()}


class VirtualEngine:
    def __init__(self, config: PlantConfig, seed: int = 0):
        self.config = config
        self.geometry = config.geometry
        mismatch, noise, residual, sensors = np.random.SeedSequence(seed).spawn(4)
        mismatch_rng = np.random.default_rng(mismatch)
        self._noise_rng = np.random.default_rng(noise)
        self._residual_rng = np.random.default_rng(residual)
        self._sensor_rng = np.random.default_rng(sensors)

        self.intake: Dict[int, IntakeCoefficients] = {
            cyl: IntakeCoefficients(**_perturb(coeffs.as_dict(), config.intake_mismatch, mismatch_rng))
            for cyl, coeffs in sorted(config.coefficients.intake.items())
        }
        model = config.coefficients.combustion
        fitted = {k: getattr(model, k) for k in CombustionCoefficients.FIT_KEYS}
        self.combustion = model.with_values(
            CombustionCoefficients.FIT_KEYS,
            _perturb(fitted, config.combustion_mismatch, mismatch_rng).values(),
        )
        self.c15 = self.combustion.burn_scale(config.wiebe)
        if config.ca50_noise_std > 0:
            bound = config.ca50_noise_bound / config.ca50_noise_std
            self._noise = truncnorm(-bound, bound, loc=0.0, scale=config.ca50_noise_std)
        else:
            self._noise = None

        self._v_ivc = cylinder_volume(self.geometry, self.geometry.ivc)
        self.time = 0.0
        self.manifold = ManifoldState(config.initial_manifold_pressure, config.initial_manifold_pressure, 300.0)
        self.egr = 0.0

    # -- airpath --------------------------------------------------------

    def reset(self, point: OperatingPoint) -> None:
        self.time = 0.0
        self.manifold = ManifoldState(
            p_im=self.config.initial_manifold_pressure,
            p_im_target=point.boost_target,
            t_im=point.charge_temperature,
        )
        self.egr = point.egr_target

    def advance(self, t_target: float, preset: CasePreset) -> None:
        """Integrate manifold and EGR states up to t_target."""
        step = self.config.substep
        while self.time < t_target - 1e-12:
            dt = min(step, t_target - self.time)
            point = preset.operating_point_at(self.time)
            if self.time < preset.switch_time <= self.time + dt:
                self._kick(preset)
            self.manifold = manifold_step(
                replace(self.manifold, p_im_target=point.boost_target, t_im=point.charge_temperature),
                dt,
                self.config.manifold,
            )
            self.egr = egr_actuator_step(self.egr, point.egr_target, dt, self.config.egr_settle_time)
            self.time += dt

    def _kick(self, preset: CasePreset) -> None:
        # airpath disturbance from the change in speed and EGR demand
        first, second = preset.segments
        severity = abs(second.speed - first.speed) / first.speed + abs(second.egr_target - first.egr_target)
        if severity > 0:
            self.manifold = replace(
                self.manifold, velocity=self.manifold.velocity + self.config.transition_kick * severity
            )
            logger.info("segment switch at t=%.3f s, manifold kick %.3f bar/s", self.time, severity)

    def residual_fraction(self, egr_target: float) -> float:
        cfg = self.config
        x_r = cfg.x_r_at_zero_egr + (cfg.x_r_at_half_egr - cfg.x_r_at_zero_egr) * egr_target / 0.5
        if cfg.x_r_jitter > 0:
            x_r += self._residual_rng.uniform(-cfg.x_r_jitter, cfg.x_r_jitter)
        lo, hi = cfg.x_r_bounds
        return min(hi, max(lo, x_r))

    def sense(self, cylinder_index: int, cycle_index: int, point: OperatingPoint) -> SensorFrame:
        amb = self.config.x_o2_amb
        exh = float(exhaust_oxygen_fraction(point.phi, amb))
        intake = float(intake_oxygen_fraction(self.egr, exh, amb))
        if self.config.o2_noise_std > 0:
            intake += self._sensor_rng.normal(0.0, self.config.o2_noise_std)
            intake = min(amb, max(exh, intake))
        return SensorFrame(
            cylinder_index=cylinder_index,
            cycle_index=cycle_index,
            ca50_ref=point.ca50_ref,
            speed=point.speed,
            phi=point.phi,
            t_im=self.manifold.t_im,
            p_im=self.manifold.p_im,
            x_o2_amb=amb,
            x_o2_int=intake,
            x_o2_exh=exh,
        )

    # -- combustion -----------------------------------------------------

    def combust(
        self,
        cylinder_index: int,
        soi: float,
        *,
        p_im: float,
        t_im: float,
        egr: float,
        x_r: float,
        speed: float,
        phi: float,
        step: Optional[float] = None,
    ) -> Combustion:
        intake = self.intake[cylinder_index]
        temperature = t_ivc(intake, t_im, p_im, phi, speed, egr)
        pressure = p_ivc(intake, t_im, speed, p_im)
        ivc = GasState(pressure, temperature, self.geometry.ivc)
        soi_state = polytropic_to_soi(ivc, self._v_ivc, cylinder_volume(self.geometry, soi), self.combustion.k_c)
        trace = compression_trace(ivc, self.geometry, self.combustion.k_c, soi, step=step or self.config.kim_step)
        soc = soc_full(trace, soi, speed, egr, phi, self.combustion)
        charge = ChargeComposition(egr, x_r, phi)
        bd = burn_duration(charge.x_d, charge.phi, self.c15, self.combustion)
        return Combustion(pressure, temperature, soi_state, soc, bd, ca50_from_wiebe(soc, bd, self.config.wiebe))

    def draw_noise(self, size: Optional[int] = None):
        if self._noise is None:
            return 0.0 if size is None else np.zeros(size)
        return self._noise.rvs(size=size, random_state=self._noise_rng)

    def cylinder_cycle(
        self,
        cylinder_index: int,
        command: Optional[ControlCommand],
        point: OperatingPoint,
        *,
        cycle_index: int,
        segment: int = 0,
    ) -> CycleRecord:
        record = CycleRecord(
            cycle_index=cycle_index,
            sim_time=self.time,
            cylinder_index=cylinder_index,
            segment=segment,
            fired=command is not None,
            ca50_ref=point.ca50_ref,
            egr=self.egr,
            p_im=self.manifold.p_im,
            t_im=self.manifold.t_im,
            speed=point.speed,
            phi=point.phi,
        )
        if command is None:
            return record

        x_r = self.residual_fraction(point.egr_target)
        record.soi, record.clamped, record.x_r = command.soi, command.clamped, x_r
        try:
            burn = self.combust(
                cylinder_index,
                command.soi,
                p_im=record.p_im,
                t_im=record.t_im,
                egr=self.egr,
                x_r=x_r,
                speed=point.speed,
                phi=point.phi,
            )
        except NoIgnitionError as exc:
            logger.warning("misfire cyl %d cycle %d: %s", cylinder_index, cycle_index, exc)
            record.misfire = True
            return record

        record.p_ivc, record.t_ivc = burn.p_ivc, burn.t_ivc
        record.p_soi, record.t_soi = burn.soi_state.pressure, burn.soi_state.temperature
        record.soc, record.bd, record.ca50_true = burn.soc, burn.bd, burn.ca50
        record.ca50_measured = burn.ca50 + float(self.draw_noise())
        return record


@dataclass
class CaseResult:
    preset: CasePreset
    controller: str
    seed: int
    records: List[CycleRecord] = field(default_factory=list)
    summary: Optional[pd.DataFrame] = None

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.as_row() for r in self.records])


def run_case(
    preset: CasePreset,
    controller: str,
    config: PlantConfig,
    *,
    duration: Optional[float] = None,
    seed: int = 0,
    settings: ControllerSettings = ControllerSettings(),
    settle_band: float = 1.0,
) -> CaseResult:
    duration = preset.duration if duration is None else duration
    if duration <= 0:
        raise DomainError("duration must be > 0")

    engine = VirtualEngine(config, seed)
    first = preset.segments[0]
    engine.reset(first)
    coeffs = config.coefficients
    controllers = make_controllers(controller, first, dict(coeffs.intake), coeffs.combustion, config.geometry, settings)
    model = coeffs.combustion

    result = CaseResult(preset=preset, controller=controller, seed=seed)
    misfires = {cyl: 0 for cyl in config.firing_order}
    logger.info("running %s with %s controller for %.2f s (seed %d)", preset.name, controller, duration, seed)

    schedule = firing_schedule(
        lambda t: preset.operating_point_at(t).speed,
        n_cyl=len(config.firing_order),
        firing_order=tuple(config.firing_order),
        duration=duration,
    )
    for event in schedule:
        t_event, cyl, cycle = event.sim_time, event.cylinder_index, event.cycle_index
        engine.advance(t_event, preset)
        point = preset.operating_point_at(t_event)
        segment = preset.segment_index(t_event)

        frame = None
        if cycle == 1:
            command = None
        elif cycle < ACTIVATION_CYCLE:
            command = ControlCommand(settings.base_soi, cyl, cycle)
        else:
            frame = engine.sense(cyl, cycle, point)
            command = controllers[cyl].command(frame)

        record = engine.cylinder_cycle(cyl, command, point, cycle_index=cycle, segment=segment)
        record.controller = controller
        if frame is not None:
            controllers[cyl].feedback(frame, command, record.ca50_measured)
            obs = controllers[cyl].observer()
            if obs is not None:
                record.x1_hat, record.x2_hat = obs.x1_hat, obs.x2_hat
                if not record.misfire:
                    x1, x2 = true_states(
                        record.egr, GasState(record.p_soi, record.t_soi), record.egr + record.x_r, model
                    )
                    record.x1_true, record.x2_true = x1, x2

        if record.misfire:
            misfires[cyl] += 1
            if misfires[cyl] > config.misfire_limit:
                raise PlantAbort(
                    f"cylinder {cyl} misfired {misfires[cyl]} cycles in a row",
                    {"cylinder": cyl, "cycle": cycle, "time": t_event, "soi": record.soi, "preset": preset.name},
                )
        else:
            misfires[cyl] = 0
        result.records.append(record)

    result.summary = summarize(result.records, band=settle_band)
    return result


def synthesize_dataset(
    config: PlantConfig,
    *,
    n_points: int = 288,
    seed: int = 0,
    ca50_noise: float = 0.3,
    x_r_spread: float = 0.01,
) -> pd.DataFrame:
    """Calibration samples from the plant's own truth chain, one row per cylinder per operating point."""
    engine = VirtualEngine(replace(config, intake_mismatch=0.0, combustion_mismatch=0.0), seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(5)[4])
    amb = config.x_o2_amb
    lo_xr, hi_xr = config.x_r_bounds

    rows = []
    for _ in range(n_points):
        draw = {name: rng.uniform(lo, hi) for name, (lo, hi) in SAMPLE_RANGES.items()}
        exh = float(exhaust_oxygen_fraction(draw["phi"], amb))
        intake = float(intake_oxygen_fraction(draw["egr"], exh, amb))
        x_r_nominal = config.x_r_at_zero_egr + (config.x_r_at_half_egr - config.x_r_at_zero_egr) * draw["egr"] / 0.5
        for cyl in config.firing_order:
            x_r = min(hi_xr, max(lo_xr, x_r_nominal + rng.uniform(-x_r_spread, x_r_spread)))
            try:
                burn = engine.combust(
                    cyl,
                    draw["soi"],
                    p_im=draw["p_im"],
                    t_im=draw["t_im"],
                    egr=draw["egr"],
                    x_r=x_r,
                    speed=draw["speed"],
                    phi=draw["phi"],
                )
            except NoIgnitionError:
                logger.warning("skipping non-igniting sample at %s", draw)
                continue
            rows.append(
                {
                    "cylinder": cyl,
                    **{k: draw[k] for k in ("t_im", "p_im", "speed", "phi", "egr", "soi")},
                    "x_r": x_r,
                    "x_o2_amb": amb,
                    "x_o2_int": intake,
                    "x_o2_exh": exh,
                    "t_ivc": burn.t_ivc,
                    "p_ivc": burn.p_ivc,
                    "soc": burn.soc,
                    "ca50": burn.ca50 + (rng.normal(0.0, ca50_noise) if ca50_noise > 0 else 0.0),
                }
            )
    frame = pd.DataFrame(rows, columns=list(SAMPLE_FIELDS))
    logger.info("synthesized %d calibration samples from %d operating points", len(frame), n_points)
    return frame


__all__ = [
    "ACTIVATION_CYCLE",
    "engine_cycle_period",
    "manifold_step",
    "egr_time_constant",
    "egr_actuator_step",
    "FiringEvent",
    "firing_schedule",
    "Combustion",
    "VirtualEngine",
    "CaseResult",
    "run_case",
    "synthesize_dataset",
]

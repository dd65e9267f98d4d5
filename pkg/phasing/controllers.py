"""
Cycle-to-cycle SOI controllers.

The adaptive controller treats CA50 as y = u + alpha*x1 + beta*x2 with
u = SOI, alpha = N*phi^-c12 and beta = phi^c17, inverts that model with the
observer's estimates and corrects the estimates by a normalised gradient
step on the tracking error. The feedforward controller inverts the
closed-form CA50 model from sensed intake conditions. The PID controller is a
model-free baseline.

Each controller object owns the state of one cylinder only; there is no
coupling between cylinders.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .combustion import egr_affine_term, composite_burn_term, ignition_delay
from .errors import DomainError
from .gas import cylinder_volume, egr_fraction, p_ivc, polytropic_to_soi, t_ivc
from .models import (
    DEFAULT_SOI,
    SOI_BAND,
    AdaptiveObserverState,
    CombustionCoefficients,
    ControlCommand,
    EngineGeometry,
    GasState,
    IntakeCoefficients,
    OperatingPoint,
    PidState,
)

logger = logging.getLogger(__name__)

ADAPTIVE_GAIN = 0.3
X_R_BAR = 0.0642


@dataclass(frozen=True)
class ControllerSettings:
    adaptive_gain: float = ADAPTIVE_GAIN
    x_r_bar: float = X_R_BAR
    kp: float = 0.5
    ki: float = 0.3
    kd: float = 0.0
    integral_limit: float = 20.0
    base_soi: float = DEFAULT_SOI
    soi_band: Tuple[float, float] = SOI_BAND
    sensor_tolerance: float = 0.002

    def __post_init__(self) -> None:
        lo, hi = self.soi_band
        if not (SOI_BAND[0] <= lo < hi <= SOI_BAND[1]):
            raise DomainError(f"soi_band must lie inside {SOI_BAND}")
        if not lo <= self.base_soi <= hi:
            raise DomainError("base_soi must lie inside soi_band")
        if not 0 < self.adaptive_gain < 2:
            raise DomainError("adaptive_gain must lie in (0, 2) for a contracting observer")


def clamp_soi(soi: float, band: Tuple[float, float] = SOI_BAND) -> Tuple[float, bool]:
    lo, hi = band
    if soi < lo:
        return lo, True
    if soi > hi:
        return hi, True
    return soi, False


# -- adaptive ------------------------------------------------------------


def alpha_beta(n: float, phi: float, coeffs: CombustionCoefficients) -> Tuple[float, float]:
    if n <= 0 or phi <= 0:
        raise DomainError("n and phi must be > 0")
    return n * phi ** (-coeffs.c12), phi**coeffs.c17


def learning_rate(alpha: float, beta: float, gain: float = ADAPTIVE_GAIN) -> float:
    denom = alpha**2 + beta**2
    if denom <= 0:
        raise DomainError("alpha and beta cannot both be zero")
    return gain / denom


def true_states(
    egr: float, soi_state: GasState, x_d: float, coeffs: CombustionCoefficients
) -> Tuple[float, float]:
    x1 = float(egr_affine_term(egr, coeffs)) * math.exp(
        coeffs.c13 * soi_state.pressure**coeffs.c14 / soi_state.temperature
    )
    x2 = coeffs.c18 * (1.0 + x_d) ** coeffs.c16
    return x1, x2


def observe(obs: AdaptiveObserverState, n: float, phi: float, coeffs: CombustionCoefficients) -> AdaptiveObserverState:
    """Refresh alpha and beta from the measured speed and equivalence ratio."""
    alpha, beta = alpha_beta(n, phi, coeffs)
    return replace(obs, alpha=alpha, beta=beta)


def control_input(y_d: float, obs: AdaptiveObserverState) -> float:
    return y_d - obs.alpha * obs.x1_hat - obs.beta * obs.x2_hat


def adaptive_control_law(
    y_d: float,
    obs: AdaptiveObserverState,
    cycle_index: int = 0,
    band: Tuple[float, float] = SOI_BAND,
) -> ControlCommand:
    soi, clamped = clamp_soi(control_input(y_d, obs), band)
    return ControlCommand(soi=soi, cylinder_index=obs.cylinder_index, cycle_index=cycle_index, clamped=clamped)


def adaptive_update(
    obs: AdaptiveObserverState,
    y_measured: float,
    y_d: float,
    gain: float = ADAPTIVE_GAIN,
) -> AdaptiveObserverState:
    step = learning_rate(obs.alpha, obs.beta, gain) * (y_measured - y_d)
    return replace(obs, x1_hat=obs.x1_hat + step * obs.alpha, x2_hat=obs.x2_hat + step * obs.beta)


def simulate_matched_plant(
    y_d: float,
    obs: AdaptiveObserverState,
    x1: float,
    x2: float,
    cycles: int,
    gain: float = ADAPTIVE_GAIN,
) -> np.ndarray:
    """Tracking errors y - y_d of the unclamped law on y = u + alpha*x1 + beta*x2 with frozen states."""
    errors = []
    for _ in range(cycles + 1):
        u = control_input(y_d, obs)
        y = u + obs.alpha * x1 + obs.beta * x2
        errors.append(y - y_d)
        obs = adaptive_update(obs, y, y_d, gain)
    return np.asarray(errors)


@dataclass(frozen=True)
class LyapunovAudit:
    v: np.ndarray
    delta_v: np.ndarray
    ratios: np.ndarray
    applicable: bool
    passed: bool
    max_relative_deviation: float


def lyapunov_audit(
    errors: Sequence[float],
    *,
    frozen: bool = True,
    gain: float = ADAPTIVE_GAIN,
    rel_tol: float = 1e-9,
) -> LyapunovAudit:
    """V(k) = e(k)^2 and its decrease, checked against the contraction of the observer."""
    e = np.asarray(errors, dtype=float)
    v = e**2
    delta_v = np.diff(v)
    contraction = 1.0 - gain
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(e[:-1] != 0, e[1:] / e[:-1], np.nan)

    if not frozen:
        return LyapunovAudit(v, delta_v, ratios, applicable=False, passed=False, max_relative_deviation=math.nan)

    expected = -(1.0 - contraction**2) * v[:-1]
    deviations = []
    for dv, ex, ratio in zip(delta_v, expected, ratios):
        if ex == 0:
            deviations.append(0.0 if dv == 0 else math.inf)
            continue
        deviations.append(abs(dv - ex) / abs(ex))
        deviations.append(abs(ratio - contraction) / contraction)
    worst = max(deviations, default=0.0)
    return LyapunovAudit(v, delta_v, ratios, applicable=True, passed=worst <= rel_tol, max_relative_deviation=worst)


# -- feedforward ---------------------------------------------------------


def feedforward_soi(
    ca50_ref: float,
    egr: float,
    n: float,
    phi: float,
    p_ivc: float,
    t_ivc: float,
    v_ivc: float,
    v_soi_prev: float,
    x_r_bar: float,
    coeffs: CombustionCoefficients,
    *,
    cylinder_index: int = 0,
    cycle_index: int = 0,
    band: Tuple[float, float] = SOI_BAND,
) -> ControlCommand:
    soi_state = polytropic_to_soi(GasState(p_ivc, t_ivc), v_ivc, v_soi_prev, coeffs.k_c)
    raw = (
        ca50_ref
        - ignition_delay(soi_state.pressure, soi_state.temperature, n, egr, phi, coeffs)
        - composite_burn_term(egr + x_r_bar, phi, coeffs)
    )
    soi, clamped = clamp_soi(raw, band)
    return ControlCommand(soi=soi, cylinder_index=cylinder_index, cycle_index=cycle_index, clamped=clamped)


# -- PID -----------------------------------------------------------------


def pid_soi(
    state: PidState,
    error: float,
    *,
    cylinder_index: int = 0,
    cycle_index: int = 0,
    band: Tuple[float, float] = SOI_BAND,
) -> Tuple[ControlCommand, PidState]:
    """Discrete PID on CA50 error; a late CA50 (positive error) advances SOI."""
    derivative = 0.0 if state.previous_error is None else error - state.previous_error
    lim = state.integral_limit
    integral = min(lim, max(-lim, state.integral + error))

    raw = state.base_soi - (state.kp * error + state.ki * integral + state.kd * derivative)
    soi, clamped = clamp_soi(raw, band)
    # saturated in the direction the error pushes: hold the accumulator
    if clamped and ((raw < band[0] and error > 0) or (raw > band[1] and error < 0)):
        integral = state.integral

    command = ControlCommand(soi=soi, cylinder_index=cylinder_index, cycle_index=cycle_index, clamped=clamped)
    return command, replace(state, integral=integral, previous_error=error)


@dataclass(frozen=True)
class RelayResult:
    ultimate_gain: float
    ultimate_period: float
    amplitude: float
    kp: float
    ki: float
    kd: float = 0.0


def relay_tune(
    respond: Callable[[float], float],
    reference: float,
    *,
    base_soi: float = DEFAULT_SOI,
    relay_amplitude: float = 1.0,
    cycles: int = 40,
    band: Tuple[float, float] = SOI_BAND,
) -> RelayResult:
    """Relay experiment on a cycle-domain plant, then Ziegler-Nichols PI gains.

    `respond` maps one SOI command to the measured CA50 of that cycle.
    """
    if relay_amplitude <= 0 or cycles < 8:
        raise DomainError("relay needs a positive amplitude and at least 8 cycles")
    # centre the relay on the SOI that would zero the error at unit gain
    centre = base_soi - (respond(base_soi) - reference)
    errors: List[float] = []
    soi = centre
    for _ in range(cycles):
        error = respond(clamp_soi(soi, band)[0]) - reference
        errors.append(error)
        soi = centre - relay_amplitude if error > 0 else centre + relay_amplitude

    tail = np.asarray(errors[cycles // 2 :])
    signs = np.sign(tail)
    crossings = np.flatnonzero(signs[1:] != signs[:-1])
    if crossings.size < 2:
        raise DomainError("relay experiment did not oscillate; widen the amplitude")
    period = 2.0 * float(np.mean(np.diff(crossings)))
    amplitude = float(tail.max() - tail.min()) / 2.0
    ku = 4.0 * relay_amplitude / (math.pi * amplitude)
    kp = 0.45 * ku
    ki = kp / (period / 1.2)
    logger.info("relay tune: Ku=%.3f Pu=%.2f cycles -> kp=%.3f ki=%.3f", ku, period, kp, ki)
    return RelayResult(ultimate_gain=ku, ultimate_period=period, amplitude=amplitude, kp=kp, ki=ki)


# -- per-cylinder controller objects --------------------------------------


@dataclass(frozen=True)
class SensorFrame:
    """What a controller sees before it schedules one cylinder's injection."""

    cylinder_index: int
    cycle_index: int
    ca50_ref: float
    speed: float
    phi: float
    t_im: float
    p_im: float
    x_o2_amb: float
    x_o2_int: float
    x_o2_exh: float


class CylinderController(Protocol):
    name: str

    def command(self, frame: SensorFrame) -> ControlCommand: ...

    def feedback(self, frame: SensorFrame, command: ControlCommand, ca50_measured: float) -> None: ...

    def observer(self) -> Optional[AdaptiveObserverState]: ...


class AdaptiveController:
    name = "adaptive"

    def __init__(
        self,
        initial: AdaptiveObserverState,
        coeffs: CombustionCoefficients,
        settings: ControllerSettings = ControllerSettings(),
    ):
        self.state = initial
        self.coeffs = coeffs
        self.settings = settings

    def command(self, frame: SensorFrame) -> ControlCommand:
        self.state = observe(self.state, frame.speed, frame.phi, self.coeffs)
        return adaptive_control_law(frame.ca50_ref, self.state, frame.cycle_index, self.settings.soi_band)

    def feedback(self, frame: SensorFrame, command: ControlCommand, ca50_measured: float) -> None:
        if math.isnan(ca50_measured):
            return
        # a clamped command cannot reach y_d; compare against what the applied SOI should give
        y_d = command.soi + self.state.estimate if command.clamped else frame.ca50_ref
        self.state = adaptive_update(self.state, ca50_measured, y_d, self.settings.adaptive_gain)

    def observer(self) -> Optional[AdaptiveObserverState]:
        return self.state


class FeedforwardController:
    name = "feedforward"

    def __init__(
        self,
        cylinder_index: int,
        intake: IntakeCoefficients,
        coeffs: CombustionCoefficients,
        geometry: EngineGeometry,
        settings: ControllerSettings = ControllerSettings(),
    ):
        self.cylinder_index = cylinder_index
        self.intake = intake
        self.coeffs = coeffs
        self.geometry = geometry
        self.settings = settings
        self.previous_soi = settings.base_soi
        self._v_ivc = cylinder_volume(geometry, geometry.ivc)

    def command(self, frame: SensorFrame) -> ControlCommand:
        egr = egr_fraction(frame.x_o2_amb, frame.x_o2_int, frame.x_o2_exh, tolerance=self.settings.sensor_tolerance)
        temperature = t_ivc(self.intake, frame.t_im, frame.p_im, frame.phi, frame.speed, egr)
        pressure = p_ivc(self.intake, frame.t_im, frame.speed, frame.p_im)
        return feedforward_soi(
            frame.ca50_ref,
            egr,
            frame.speed,
            frame.phi,
            pressure,
            temperature,
            self._v_ivc,
            cylinder_volume(self.geometry, self.previous_soi),
            self.settings.x_r_bar,
            self.coeffs,
            cylinder_index=self.cylinder_index,
            cycle_index=frame.cycle_index,
            band=self.settings.soi_band,
        )

    def feedback(self, frame: SensorFrame, command: ControlCommand, ca50_measured: float) -> None:
        self.previous_soi = command.soi

    def observer(self) -> Optional[AdaptiveObserverState]:
        return None


class PidController:
    name = "pid"

    def __init__(self, cylinder_index: int, settings: ControllerSettings = ControllerSettings()):
        self.cylinder_index = cylinder_index
        self.settings = settings
        self.state = PidState(
            kp=settings.kp,
            ki=settings.ki,
            kd=settings.kd,
            integral_limit=settings.integral_limit,
            base_soi=settings.base_soi,
        )
        self._last_error: Optional[float] = None

    def command(self, frame: SensorFrame) -> ControlCommand:
        if self._last_error is None:
            return ControlCommand(self.settings.base_soi, self.cylinder_index, frame.cycle_index)
        command, self.state = pid_soi(
            self.state,
            self._last_error,
            cylinder_index=self.cylinder_index,
            cycle_index=frame.cycle_index,
            band=self.settings.soi_band,
        )
        return command

    def feedback(self, frame: SensorFrame, command: ControlCommand, ca50_measured: float) -> None:
        if not math.isnan(ca50_measured):
            self._last_error = ca50_measured - frame.ca50_ref

    def observer(self) -> Optional[AdaptiveObserverState]:
        return None


def initial_observer(
    cylinder_index: int,
    point: OperatingPoint,
    intake: IntakeCoefficients,
    coeffs: CombustionCoefficients,
    geometry: EngineGeometry,
    settings: ControllerSettings = ControllerSettings(),
) -> AdaptiveObserverState:
    """Observer seeded with the model states at the operating point's nominal intake state."""
    temperature = t_ivc(intake, point.charge_temperature, point.boost_target, point.phi, point.speed, point.egr_target)
    pressure = p_ivc(intake, point.charge_temperature, point.speed, point.boost_target)
    soi_state = polytropic_to_soi(
        GasState(pressure, temperature),
        cylinder_volume(geometry, geometry.ivc),
        cylinder_volume(geometry, settings.base_soi),
        coeffs.k_c,
    )
    x1, x2 = true_states(point.egr_target, soi_state, point.egr_target + settings.x_r_bar, coeffs)
    alpha, beta = alpha_beta(point.speed, point.phi, coeffs)
    return AdaptiveObserverState(cylinder_index, x1, x2, alpha, beta)


def make_controllers(
    kind: str,
    point: OperatingPoint,
    intake: Dict[int, IntakeCoefficients],
    coeffs: CombustionCoefficients,
    geometry: EngineGeometry,
    settings: ControllerSettings = ControllerSettings(),
) -> Dict[int, CylinderController]:
    controllers: Dict[int, CylinderController] = {}
    for cyl, cyl_intake in sorted(intake.items()):
        if kind == "adaptive":
            obs = initial_observer(cyl, point, cyl_intake, coeffs, geometry, settings)
            controllers[cyl] = AdaptiveController(obs, coeffs, settings)
        elif kind == "feedforward":
            controllers[cyl] = FeedforwardController(cyl, cyl_intake, coeffs, geometry, settings)
        elif kind == "pid":
            controllers[cyl] = PidController(cyl, settings)
        else:
            raise DomainError(f"unknown controller {kind!r}")
    return controllers


__all__ = [
    "ADAPTIVE_GAIN",
    "X_R_BAR",
    "ControllerSettings",
    "clamp_soi",
    "alpha_beta",
    "learning_rate",
    "true_states",
    "observe",
    "control_input",
    "adaptive_control_law",
    "adaptive_update",
    "simulate_matched_plant",
    "LyapunovAudit",
    "lyapunov_audit",
    "feedforward_soi",
    "pid_soi",
    "RelayResult",
    "relay_tune",
    "SensorFrame",
    "CylinderController",
    "AdaptiveController",
    "FeedforwardController",
    "PidController",
    "initial_observer",
    "make_controllers",
]

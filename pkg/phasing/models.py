"""
Domain types shared by the gas, combustion, control and plant modules.

Units are fixed across the package: pressures in bar, temperatures in K,
engine speed in RPM, crank angles in CAD aTDC, lengths in mm and volumes in
litres. Every coefficient set is bound to these units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DomainError

SOI_BAND: Tuple[float, float] = (-10.0, 0.0)
DEFAULT_SOI = -5.0
DEFAULT_FIRING_ORDER: Tuple[int, ...] = (1, 5, 3, 6, 2, 4)
X_R_RANGE: Tuple[float, float] = (0.0344, 0.0909)
CONTROLLERS = ("adaptive", "feedforward", "pid")

CANONICAL_UNITS: Dict[str, str] = {
    "pressure": "bar",
    "temperature": "K",
    "speed": "RPM",
    "angle": "CAD aTDC",
}


def _positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class EngineGeometry:
    bore: float = 126.0
    stroke: float = 166.0
    rod_length: float = 251.0
    compression_ratio: float = 17.0
    n_cylinders: int = 6
    ivo: float = -363.5
    ivc: float = -148.5
    evo: float = 137.0
    evc: float = 389.0

    def __post_init__(self) -> None:
        _positive("bore", self.bore)
        _positive("stroke", self.stroke)
        if not self.compression_ratio > 1:
            raise DomainError("compression_ratio must be > 1")
        if not self.rod_length > self.stroke / 2:
            raise DomainError("rod_length must exceed half the stroke")
        if self.n_cylinders < 1:
            raise DomainError("n_cylinders must be >= 1")

    @property
    def crank_radius(self) -> float:
        return self.stroke / 2

    @property
    def piston_area(self) -> float:
        """Piston crown area in mm^2."""
        return math.pi / 4 * self.bore**2

    @property
    def displacement(self) -> float:
        """Swept volume of one cylinder, litres."""
        return self.piston_area * self.stroke / 1e6

    @property
    def clearance_volume(self) -> float:
        return self.displacement / (self.compression_ratio - 1)


@dataclass(frozen=True)
class IntakeCoefficients:
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    c7: float
    c8: float
    c9: float

    TEMPERATURE_KEYS = ("c1", "c2", "c3", "c4", "c5", "c6", "c7")
    PRESSURE_KEYS = ("c8", "c9")

    def __post_init__(self) -> None:
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise DomainError(f"intake coefficient {f.name} is not finite")

    def as_dict(self) -> Dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def with_values(self, keys: Sequence[str], values: Iterable[float]) -> "IntakeCoefficients":
        return replace(self, **{k: float(v) for k, v in zip(keys, values)})


@dataclass(frozen=True)
class CombustionCoefficients:
    c10: float
    c11: float
    c12: float
    c13: float
    c14: float
    c16: float
    c17: float
    c18: float
    k_c: float
    # raw burn-duration scale; derived from c18 and the Wiebe parameters when absent
    c15: Optional[float] = None

    FIT_KEYS = ("c10", "c11", "c12", "c13", "c14", "c16", "c17", "c18")

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None and not math.isfinite(value):
                raise DomainError(f"combustion coefficient {f.name} is not finite")
        if not self.k_c > 1:
            raise DomainError("k_c must be > 1")

    def burn_scale(self, wiebe: "WiebeParams") -> float:
        if self.c15 is not None:
            return self.c15
        return self.c18 / wiebe.ca50_factor

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_values(self, keys: Sequence[str], values: Iterable[float]) -> "CombustionCoefficients":
        return replace(self, **{k: float(v) for k, v in zip(keys, values)})


@dataclass(frozen=True)
class CoefficientSet:
    """Per-cylinder intake coefficients plus the shared combustion set."""

    name: str
    intake: Mapping[int, IntakeCoefficients]
    combustion: CombustionCoefficients
    checksum: str = ""

    def cylinders(self) -> Tuple[int, ...]:
        return tuple(sorted(self.intake))


@dataclass(frozen=True)
class GasState:
    pressure: float
    temperature: float
    crank_angle: float = 0.0

    def __post_init__(self) -> None:
        _positive("pressure", self.pressure)
        _positive("temperature", self.temperature)


@dataclass(frozen=True)
class ChargeComposition:
    egr: float
    x_r: float
    phi: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.egr <= 1.0:
            raise DomainError(f"egr must lie in [0, 1], got {self.egr!r}")
        if not 0.0 <= self.x_r < 1.0:
            raise DomainError(f"x_r must lie in [0, 1), got {self.x_r!r}")
        _positive("phi", self.phi)

    @property
    def x_d(self) -> float:
        return self.egr + self.x_r


@dataclass(frozen=True)
class WiebeParams:
    a: float = 6.9078
    b: float = 1.5

    def __post_init__(self) -> None:
        _positive("wiebe a", self.a)
        _positive("wiebe b", self.b)

    @property
    def ca50_factor(self) -> float:
        """(ln2/a)^(1/b): fraction of the burn duration elapsed at CA50."""
        return (math.log(2.0) / self.a) ** (1.0 / self.b)


@dataclass(frozen=True, eq=False)
class CompressionTrace:
    crank_angles: np.ndarray
    pressures: np.ndarray
    temperatures: np.ndarray

    def __post_init__(self) -> None:
        theta = np.asarray(self.crank_angles, dtype=float)
        p = np.asarray(self.pressures, dtype=float)
        t = np.asarray(self.temperatures, dtype=float)
        if not (theta.shape == p.shape == t.shape) or theta.ndim != 1 or theta.size < 2:
            raise DomainError("trace arrays must be 1-D, equally sized and hold >= 2 samples")
        if np.any(np.diff(theta) <= 0):
            raise DomainError("trace crank angles must be strictly increasing")
        if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(~np.isfinite(t)) or np.any(t <= 0):
            raise DomainError("trace pressures and temperatures must be positive")
        object.__setattr__(self, "crank_angles", theta)
        object.__setattr__(self, "pressures", p)
        object.__setattr__(self, "temperatures", t)

    def __len__(self) -> int:
        return int(self.crank_angles.size)


@dataclass(frozen=True)
class OperatingPoint:
    speed: float
    charge_temperature: float
    boost_target: float
    phi: float
    egr_target: float
    ca50_ref: float

    def __post_init__(self) -> None:
        _positive("speed", self.speed)
        _positive("charge_temperature", self.charge_temperature)
        _positive("boost_target", self.boost_target)
        _positive("phi", self.phi)
        if not 0.0 <= self.egr_target <= 0.5:
            raise DomainError("egr_target must lie in [0, 0.5]")


@dataclass(frozen=True)
class CasePreset:
    name: str
    segments: Tuple[OperatingPoint, OperatingPoint]
    segment_duration: float = 10.0
    # speed and equivalence ratio ramp over this window after the switch
    transition_time: float = 0.5
    description: str = ""

    def __post_init__(self) -> None:
        if len(self.segments) != 2:
            raise ConfigError(f"preset {self.name!r} must define exactly two operating points")
        if not self.segment_duration > 0:
            raise ConfigError("segment_duration must be > 0")
        if self.transition_time < 0:
            raise ConfigError("transition_time must be >= 0")

    @property
    def duration(self) -> float:
        return 2 * self.segment_duration

    @property
    def switch_time(self) -> float:
        return self.segment_duration

    def segment_index(self, t: float) -> int:
        return 0 if t < self.switch_time else 1

    def operating_point_at(self, t: float) -> OperatingPoint:
        first, second = self.segments
        if t < self.switch_time:
            return first
        if self.transition_time <= 0:
            return second
        w = min(1.0, (t - self.switch_time) / self.transition_time)
        return replace(
            second,
            speed=first.speed + w * (second.speed - first.speed),
            phi=first.phi + w * (second.phi - first.phi),
        )


@dataclass(frozen=True)
class ControlCommand:
    soi: float
    cylinder_index: int
    cycle_index: int
    clamped: bool = False

    def __post_init__(self) -> None:
        lo, hi = SOI_BAND
        if not lo <= self.soi <= hi:
            raise DomainError(f"commanded SOI {self.soi!r} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class AdaptiveObserverState:
    cylinder_index: int
    x1_hat: float
    x2_hat: float
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        _positive("alpha", self.alpha)
        _positive("beta", self.beta)

    @property
    def estimate(self) -> float:
        """alpha*x1_hat + beta*x2_hat, the observer's estimate of CA50 - SOI."""
        return self.alpha * self.x1_hat + self.beta * self.x2_hat


@dataclass(frozen=True)
class PidState:
    kp: float
    ki: float
    kd: float
    integral: float = 0.0
    previous_error: Optional[float] = None
    integral_limit: float = 20.0
    base_soi: float = DEFAULT_SOI

    def __post_init__(self) -> None:
        if self.integral_limit <= 0:
            raise DomainError("integral_limit must be > 0")
        if abs(self.integral) > self.integral_limit:
            raise DomainError("integral accumulator outside its anti-windup band")


@dataclass(frozen=True)
class ManifoldDynamics:
    natural_period: float = 2.6
    damping_ratio: float = 0.3

    def __post_init__(self) -> None:
        _positive("natural_period", self.natural_period)
        _positive("damping_ratio", self.damping_ratio)

    @property
    def omega(self) -> float:
        return 2 * math.pi / self.natural_period


@dataclass(frozen=True)
class ManifoldState:
    p_im: float
    p_im_target: float
    t_im: float
    velocity: float = 0.0

    def __post_init__(self) -> None:
        _positive("p_im", self.p_im)
        _positive("p_im_target", self.p_im_target)
        _positive("t_im", self.t_im)

    @property
    def displacement(self) -> float:
        return self.p_im - self.p_im_target


@dataclass(frozen=True)
class PlantConfig:
    coefficients: CoefficientSet
    geometry: EngineGeometry = field(default_factory=EngineGeometry)
    wiebe: WiebeParams = field(default_factory=WiebeParams)
    intake_mismatch: float = 0.01
    combustion_mismatch: float = 0.0
    x_r_at_zero_egr: float = 0.0721
    x_r_at_half_egr: float = 0.0415
    x_r_bounds: Tuple[float, float] = X_R_RANGE
    x_r_jitter: float = 0.0
    ca50_noise_std: float = 0.0
    ca50_noise_bound: float = 0.5
    o2_noise_std: float = 0.0
    x_o2_amb: float = 0.2095
    manifold: ManifoldDynamics = field(default_factory=ManifoldDynamics)
    initial_manifold_pressure: float = 1.0
    transition_kick: float = 0.5
    egr_settle_time: float = 0.7
    substep: float = 0.001
    kim_step: float = 0.1
    firing_order: Tuple[int, ...] = DEFAULT_FIRING_ORDER
    misfire_limit: int = 5

    def __post_init__(self) -> None:
        for name in ("intake_mismatch", "combustion_mismatch"):
            value = getattr(self, name)
            if not 0.0 <= value <= 0.2:
                raise ConfigError(f"{name} must lie in [0, 0.2], got {value!r}")
        for name in ("ca50_noise_std", "ca50_noise_bound", "o2_noise_std", "x_r_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        lo, hi = self.x_r_bounds
        if not (0 <= lo < hi < 1):
            raise ConfigError("x_r_bounds must satisfy 0 <= lo < hi < 1")
        for x_r in (self.x_r_at_zero_egr, self.x_r_at_half_egr):
            if not lo <= x_r <= hi:
                raise ConfigError("x_r trajectory endpoints must lie inside x_r_bounds")
        if sorted(self.firing_order) != list(range(1, self.geometry.n_cylinders + 1)):
            raise ConfigError("firing_order must be a permutation of the cylinder indices")
        if set(self.coefficients.intake) != set(self.firing_order):
            raise ConfigError("coefficient set does not cover every cylinder")
        if self.substep <= 0 or self.kim_step <= 0 or self.egr_settle_time <= 0:
            raise ConfigError("substep, kim_step and egr_settle_time must be > 0")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.05
    max_iterations: int = 500
    stop_tolerance: float = 1e-9
    method: str = "descent"
    max_halvings: int = 30
    divergence_limit: int = 10
    fd_step: float = 1e-6
    seed: int = 0

    METHODS = ("descent", "levenberg-marquardt")

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.stop_tolerance < 0:
            raise ConfigError("stop_tolerance must be >= 0")
        if self.method not in self.METHODS:
            raise ConfigError(f"unknown optimizer method {self.method!r}")
        if self.max_iterations < 0 or self.max_halvings < 0 or self.divergence_limit < 1:
            raise ConfigError("iteration limits must be non-negative")


@dataclass(frozen=True)
class CalibrationSample:
    cylinder: int
    t_im: float
    p_im: float
    speed: float
    phi: float
    egr: float
    soi: float
    x_r: float
    x_o2_amb: float
    x_o2_int: float
    x_o2_exh: float
    t_ivc: float
    p_ivc: float
    soc: float
    ca50: float


SAMPLE_FIELDS: Tuple[str, ...] = tuple(f.name for f in fields(CalibrationSample))

# operating ranges of the calibration data, before the 20% margin
SAMPLE_RANGES: Dict[str, Tuple[float, float]] = {
    "speed": (1200.0, 1500.0),
    "t_im": (302.52, 333.29),
    "p_im": (1.43, 2.97),
    "phi": (0.5, 0.9),
    "egr": (0.0, 0.5),
    "soi": (-10.0, 0.0),
}


def sample_in_range(sample: CalibrationSample, margin: float = 0.2) -> bool:
    for name, (lo, hi) in SAMPLE_RANGES.items():
        span = margin * max(abs(lo), abs(hi))
        value = getattr(sample, name)
        if not (lo - span <= value <= hi + span):
            return False
    targets = (sample.t_ivc, sample.p_ivc, sample.soc, sample.ca50)
    return all(math.isfinite(v) for v in targets)


@dataclass
class CycleRecord:
    cycle_index: int
    sim_time: float
    cylinder_index: int
    segment: int = 0
    controller: str = ""
    fired: bool = True
    misfire: bool = False
    soi: float = math.nan
    soc: float = math.nan
    bd: float = math.nan
    ca50_true: float = math.nan
    ca50_measured: float = math.nan
    ca50_ref: float = math.nan
    p_ivc: float = math.nan
    t_ivc: float = math.nan
    p_soi: float = math.nan
    t_soi: float = math.nan
    egr: float = math.nan
    x_r: float = math.nan
    p_im: float = math.nan
    t_im: float = math.nan
    speed: float = math.nan
    phi: float = math.nan
    clamped: bool = False
    x1_hat: float = math.nan
    x2_hat: float = math.nan
    x1_true: float = math.nan
    x2_true: float = math.nan

    @property
    def error(self) -> float:
        return self.ca50_true - self.ca50_ref

    def as_row(self) -> Dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


RECORD_FIELDS: Tuple[str, ...] = tuple(f.name for f in fields(CycleRecord))


@dataclass(frozen=True)
class RunManifest:
    case: str
    controller: str = "adaptive"
    seed: int = 0
    out_dir: Optional[str] = None
    plant_config: Optional[str] = None
    duration: Optional[float] = None

    def __post_init__(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"unknown controller {self.controller!r}; expected one of {CONTROLLERS}")
        if self.duration is not None and not self.duration > 0:
            raise ConfigError("duration must be > 0")

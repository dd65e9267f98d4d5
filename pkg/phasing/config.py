import json
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

try:
    # optional dependency
    from dotenv import load_dotenv
except Exception:
    load_dotenv = None

from .controllers import ControllerSettings
from .errors import ConfigError, DomainError
from .models import CoefficientSet, ManifoldDynamics, OptimizerConfig, PlantConfig, WiebeParams

logger = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parent.parent
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def maybe_load_dotenv(root: Path = ROOT) -> bool:
    # Load .env into environment when available
    env_path = root / ".env"
    if load_dotenv and env_path.exists():
        load_dotenv(env_path)
        return True
    return False


@dataclass(frozen=True)
class Settings:
    data_dir: Path
    out_dir: Path
    coefficients: Path
    published_coefficients: Path
    harness_config: Path
    log_level: str = "INFO"
    workers: int = 4
    seed: int = 0


def _int(env: Mapping[str, str], key: str, default: int) -> int:
    raw = env.get(key)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw!r}") from None


def load_settings(env: Optional[Mapping[str, str]] = None) -> Settings:
    """Settings from the process environment, with paths defaulting under the repository."""
    env = os.environ if env is None else env
    data_dir = Path(env.get("PHASING_DATA_DIR") or ROOT / "data")
    workers = _int(env, "PHASING_WORKERS", 4)
    if workers < 1:
        raise ConfigError("PHASING_WORKERS must be >= 1")
    level = (env.get("PHASING_LOG_LEVEL") or "INFO").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ConfigError(f"unknown log level {level!r}")
    return Settings(
        data_dir=data_dir,
        out_dir=Path(env.get("PHASING_OUT_DIR") or ROOT / "out"),
        coefficients=Path(env.get("PHASING_COEFFICIENTS") or data_dir / "coefficients" / "engine.json"),
        published_coefficients=Path(
            env.get("PHASING_PUBLISHED_COEFFICIENTS") or data_dir / "coefficients" / "published.json"
        ),
        harness_config=Path(env.get("PHASING_HARNESS_CONFIG") or data_dir / "harness.json"),
        log_level=level,
        workers=workers,
        seed=_int(env, "PHASING_SEED", 0),
    )


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


@dataclass(frozen=True)
class Bands:
    settle: float = 1.0
    adaptive: float = 0.1
    feedforward: float = 1.3

    def for_controller(self, controller: str) -> float:
        return self.adaptive if controller == "adaptive" else self.feedforward


@dataclass(frozen=True)
class CalibrationSettings:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    dataset_size: int = 288
    train_fraction: float = 0.7
    ca50_noise: float = 0.3
    initial_perturbation: float = 0.1


@dataclass(frozen=True)
class HarnessConfig:
    controllers: ControllerSettings = field(default_factory=ControllerSettings)
    bands: Bands = field(default_factory=Bands)
    wiebe: WiebeParams = field(default_factory=WiebeParams)
    x_o2_amb: float = 0.2095
    plant: Mapping[str, Any] = field(default_factory=dict)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)

    def plant_config(self, coefficients: CoefficientSet, **overrides: Any) -> PlantConfig:
        knobs = {**self.plant, **overrides}
        return PlantConfig(coefficients=coefficients, wiebe=self.wiebe, x_o2_amb=self.x_o2_amb, **knobs)


_PLANT_EXCLUDED = {"coefficients", "geometry", "wiebe", "x_o2_amb", "manifold"}
_PLANT_KEYS = {f.name for f in fields(PlantConfig)} - _PLANT_EXCLUDED
_TUPLE_KEYS = {"x_r_bounds", "firing_order", "soi_band"}
_CALIBRATION_EXTRAS = ("dataset_size", "train_fraction", "ca50_noise", "initial_perturbation")


def _section(payload: Mapping[str, Any], name: str, allowed) -> Dict[str, Any]:
    section = payload.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"harness section {name!r} must be an object")
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in harness section {name!r}: {sorted(unknown)}")
    return {k: tuple(v) if k in _TUPLE_KEYS else v for k, v in section.items()}


def load_harness_config(path: Optional[Path] = None) -> HarnessConfig:
    """Harness settings from JSON. A missing file yields the defaults."""
    path = Path(path) if path else load_settings().harness_config
    if not path.exists():
        logger.warning("harness file %s not found; using defaults", path)
        return HarnessConfig()
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: harness file must hold an object")
    unknown = set(payload) - {"controllers", "bands", "wiebe", "sensing", "plant", "calibration"}
    if unknown:
        raise ConfigError(f"{path}: unknown harness sections {sorted(unknown)}")

    try:
        sensing = _section(payload, "sensing", ("x_o2_amb", "sensor_tolerance"))
        controllers = _section(payload, "controllers", {f.name for f in fields(ControllerSettings)} - {"sensor_tolerance"})
        if "sensor_tolerance" in sensing:
            controllers["sensor_tolerance"] = sensing["sensor_tolerance"]
        plant = _section(payload, "plant", _PLANT_KEYS | {"manifold"})
        if "manifold" in plant:
            plant["manifold"] = ManifoldDynamics(**plant["manifold"])
        calibration = _section(payload, "calibration", {f.name for f in fields(OptimizerConfig)}
                               | set(_CALIBRATION_EXTRAS))
        extras = {k: calibration.pop(k) for k in _CALIBRATION_EXTRAS if k in calibration}

        config = HarnessConfig(
            controllers=ControllerSettings(**controllers),
            bands=Bands(**_section(payload, "bands", {f.name for f in fields(Bands)})),
            wiebe=WiebeParams(**_section(payload, "wiebe", ("a", "b"))),
            x_o2_amb=float(sensing.get("x_o2_amb", 0.2095)),
            plant=plant,
            calibration=CalibrationSettings(optimizer=OptimizerConfig(**calibration), **extras),
        )
    except (DomainError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config


__all__ = [
    "ROOT",
    "maybe_load_dotenv",
    "Settings",
    "load_settings",
    "configure_logging",
    "Bands",
    "CalibrationSettings",
    "HarnessConfig",
    "load_harness_config",
]

import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

from phasing.errors import CoefficientDomainError, ConfigError
from phasing.models import CANONICAL_UNITS, CoefficientSet, CombustionCoefficients, IntakeCoefficients

from .checksum import file_checksum

INTAKE_KEYS = IntakeCoefficients.TEMPERATURE_KEYS + IntakeCoefficients.PRESSURE_KEYS
COMBUSTION_KEYS = CombustionCoefficients.FIT_KEYS + ("k_c",)


def default_path(name: str = "engine") -> Path:
    base = Path(__file__).resolve().parent.parent
    return base / "data" / "coefficients" / f"{name}.json"


def _check_signs(coeffs: CoefficientSet) -> None:
    # signs every set in canonical units shares with the published tables
    for cyl, intake in coeffs.intake.items():
        if not (intake.c6 > 0 and intake.c7 > 0):
            raise CoefficientDomainError(f"cylinder {cyl}: c6 and c7 must be > 0")
    comb = coeffs.combustion
    if not (comb.c11 > 0 and comb.c13 > 0 and comb.c14 < 0):
        raise CoefficientDomainError("combustion set needs c11 > 0, c13 > 0 and c14 < 0")


def parse_coefficients(data: Any, *, name: str = "", checksum: str = "") -> CoefficientSet:
    if not isinstance(data, dict):
        raise ConfigError("unsupported coefficient format: expected an object")

    units = data.get("units")
    if units != CANONICAL_UNITS:
        raise ConfigError(f"coefficient set must declare canonical units {CANONICAL_UNITS}, got {units!r}")

    intake_raw = data.get("intake")
    if not isinstance(intake_raw, dict) or not intake_raw:
        raise ConfigError("coefficient set needs an 'intake' object keyed by cylinder")
    intake: Dict[int, IntakeCoefficients] = {}
    for key, values in intake_raw.items():
        try:
            cyl = int(key)
        except ValueError:
            raise ConfigError(f"cylinder key {key!r} is not an integer") from None
        if not isinstance(values, dict) or set(values) != set(INTAKE_KEYS):
            raise ConfigError(f"cylinder {cyl} must define exactly {list(INTAKE_KEYS)}")
        try:
            intake[cyl] = IntakeCoefficients(**{k: float(v) for k, v in values.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cylinder {cyl}: {exc}") from None
    if sorted(intake) != list(range(1, len(intake) + 1)):
        raise ConfigError(f"cylinders must be numbered 1..n, got {sorted(intake)}")

    comb_raw = data.get("combustion")
    if not isinstance(comb_raw, dict):
        raise ConfigError("coefficient set needs a 'combustion' object")
    missing = set(COMBUSTION_KEYS) - set(comb_raw)
    extra = set(comb_raw) - set(COMBUSTION_KEYS) - {"c15"}
    if missing or extra:
        raise ConfigError(f"combustion keys: missing {sorted(missing)}, unexpected {sorted(extra)}")
    try:
        combustion = CombustionCoefficients(**{k: (None if v is None else float(v)) for k, v in comb_raw.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"combustion: {exc}") from None

    coeffs = CoefficientSet(name=data.get("name") or name, intake=intake, combustion=combustion, checksum=checksum)
    _check_signs(coeffs)
    return coeffs


def load_coefficients(path: Optional[Union[str, Path]] = None) -> CoefficientSet:
    path = default_path() if path is None else Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"coefficient file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_coefficients(data, name=path.stem, checksum=file_checksum(path))


def coefficients_payload(coeffs: CoefficientSet, description: str = "") -> Dict[str, Any]:
    comb = coeffs.combustion.as_dict()
    if comb.get("c15") is None:
        comb.pop("c15", None)
    return {
        "name": coeffs.name,
        "description": description,
        "units": dict(CANONICAL_UNITS),
        "intake": {str(cyl): coeffs.intake[cyl].as_dict() for cyl in coeffs.cylinders()},
        "combustion": comb,
    }


def dump_coefficients(coeffs: CoefficientSet, path: Union[str, Path], description: str = "") -> Path:
    """Write a set in the format load_coefficients reads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(coefficients_payload(coeffs, description), indent=2) + "\n", encoding="utf-8")
    return path


__all__ = ["default_path", "parse_coefficients", "load_coefficients", "coefficients_payload", "dump_coefficients"]

import json
from pathlib import Path
from typing import Any, List, Optional, Union

from phasing.errors import ConfigError
from phasing.models import CasePreset, OperatingPoint

POINT_KEYS = ("speed", "charge_temperature", "boost_target", "phi", "egr_target", "ca50_ref")


def cases_dir(data_dir: Optional[Union[str, Path]] = None) -> Path:
    if data_dir is None:
        data_dir = Path(__file__).resolve().parent.parent / "data"
    return Path(data_dir) / "cases"


def list_presets(data_dir: Optional[Union[str, Path]] = None) -> List[str]:
    folder = cases_dir(data_dir)
    return sorted(p.stem for p in folder.glob("*.json")) if folder.exists() else []


def _point(raw: Any, index: int) -> OperatingPoint:
    if not isinstance(raw, dict) or set(raw) != set(POINT_KEYS):
        raise ConfigError(f"segment {index + 1} must define exactly {list(POINT_KEYS)}")
    try:
        return OperatingPoint(**{k: float(raw[k]) for k in POINT_KEYS})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"segment {index + 1}: {exc}") from None


def parse_preset(data: Any, name: str = "") -> CasePreset:
    if not isinstance(data, dict):
        raise ConfigError("unsupported preset format: expected an object")
    segments = data.get("segments")
    if not isinstance(segments, list) or len(segments) != 2:
        raise ConfigError("preset must list exactly two segments")
    try:
        return CasePreset(
            name=str(data.get("name") or name),
            segments=tuple(_point(raw, i) for i, raw in enumerate(segments)),
            segment_duration=float(data.get("segment_duration", 10.0)),
            transition_time=float(data.get("transition_time", 0.5)),
            description=str(data.get("description", "")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_preset(case: Union[str, Path], data_dir: Optional[Union[str, Path]] = None) -> CasePreset:
    """Resolve `case1`, `1` or a path to a preset file."""
    path = Path(case)
    if path.suffix != ".json":
        stem = str(case) if str(case).startswith("case") else f"case{case}"
        path = cases_dir(data_dir) / f"{stem}.json"
    try:
        with path.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        known = ", ".join(list_presets(data_dir)) or "none"
        raise ConfigError(f"unknown case {str(case)!r} (known: {known})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_preset(data, name=path.stem)


__all__ = ["POINT_KEYS", "cases_dir", "list_presets", "parse_preset", "load_preset"]

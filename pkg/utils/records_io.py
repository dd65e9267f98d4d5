"""
Delimited-text I/O for cycle records, calibration datasets and report tables.

Every file starts with `# key: value` attribution lines; readers skip them
and hand them back as a dict.
"""
from __future__ import annotations

import io
from pathlib import Path
from typing import Dict, Iterable, Mapping, Tuple, Union

import numpy as np
import pandas as pd

from phasing.errors import ConfigError
from phasing.models import RECORD_FIELDS, SAMPLE_FIELDS, CalibrationSample, CycleRecord, sample_in_range

PathLike = Union[str, Path]


def header_lines(header: Mapping[str, object]) -> str:
    return "".join(f"# {key}: {value}\n" for key, value in header.items())


def split_header(text: str) -> Tuple[Dict[str, str], str]:
    header: Dict[str, str] = {}
    lines = text.splitlines(keepends=True)
    body_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            body_start = i
            break
        key, _, value = line[1:].strip().partition(":")
        header[key.strip()] = value.strip()
    else:
        body_start = len(lines)
    return header, "".join(lines[body_start:])


def write_table(frame: pd.DataFrame, path: PathLike, header: Mapping[str, object], *, index: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(header_lines(header))
        frame.to_csv(f, index=index, lineterminator="\n")
    return path


def read_table(path: PathLike, **kwargs) -> Tuple[Dict[str, str], pd.DataFrame]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"table not found: {path}") from None
    header, body = split_header(text)
    if not body.strip():
        raise ConfigError(f"{path}: no table body")
    return header, pd.read_csv(io.StringIO(body), **kwargs)


def write_text_table(frame: pd.DataFrame, path: PathLike, header: Mapping[str, object]) -> Path:
    """Human-readable rendering of a table with the same attribution lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(header_lines(header) + frame.to_string() + "\n", encoding="utf-8")
    return path


def records_frame(records: Iterable[CycleRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.as_row() for r in records], columns=list(RECORD_FIELDS))


def write_records(records: Iterable[CycleRecord], path: PathLike, header: Mapping[str, object]) -> Path:
    return write_table(records_frame(records), path, header)


def read_records(path: PathLike) -> Tuple[Dict[str, str], pd.DataFrame]:
    header, frame = read_table(path)
    missing = set(RECORD_FIELDS) - set(frame.columns)
    if missing:
        raise ConfigError(f"{path}: record table lacks columns {sorted(missing)}")
    return header, frame


def read_samples(path: PathLike) -> pd.DataFrame:
    """Calibration dataset with a header row naming the sample fields.

    Rows must be finite and lie inside the calibration ranges widened by 20%.
    Floats are parsed round-trip so a written dataset reloads bit for bit.
    """
    _, frame = read_table(path, float_precision="round_trip")
    missing = set(SAMPLE_FIELDS) - set(frame.columns)
    if missing:
        raise ConfigError(f"{path}: dataset lacks columns {sorted(missing)}")
    frame = frame[list(SAMPLE_FIELDS)]
    if frame.isna().any().any():
        raise ConfigError(f"{path}: dataset has empty cells")
    try:
        finite = np.isfinite(frame.to_numpy(dtype=float)).all(axis=1)
    except ValueError as exc:
        raise ConfigError(f"{path}: dataset has non-numeric cells") from exc
    for i, row in enumerate(frame.itertuples(index=False)):
        if not finite[i]:
            raise ConfigError(f"{path}: row {i + 1} has non-finite values")
        if not sample_in_range(CalibrationSample(*row)):
            raise ConfigError(f"{path}: row {i + 1} lies outside the calibration operating ranges")
    return frame


def write_samples(frame: pd.DataFrame, path: PathLike, header: Mapping[str, object]) -> Path:
    return write_table(frame[list(SAMPLE_FIELDS)], path, header)


__all__ = [
    "header_lines",
    "split_header",
    "write_table",
    "read_table",
    "write_text_table",
    "records_frame",
    "write_records",
    "read_records",
    "read_samples",
    "write_samples",
]

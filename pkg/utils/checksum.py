from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
from pathlib import Path
from typing import Union

ALGORITHM = "sha256"
CHUNK_SIZE = 1 << 16


def _b64(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _unb64(s: str) -> bytes:
    padding = "=" * (-len(s) % 4)
    return base64.urlsafe_b64decode(s + padding)


def digest_bytes(data: bytes) -> str:
    if not isinstance(data, (bytes, bytearray)):
        raise TypeError("data must be bytes")
    return f"{ALGORITHM}${_b64(hashlib.sha256(data).digest())}"


def file_checksum(path: Union[str, Path]) -> str:
    """`sha256$<urlsafe b64>` of a file's bytes."""
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(CHUNK_SIZE), b""):
            h.update(chunk)
    return f"{ALGORITHM}${_b64(h.digest())}"


def verify_checksum(path: Union[str, Path], stored: str) -> bool:
    if not isinstance(stored, str) or "$" not in stored:
        return False
    try:
        algo, encoded = stored.split("$", 1)
        if algo != ALGORITHM:
            return False
        expected = _unb64(encoded)
    except (ValueError, binascii.Error):
        return False
    try:
        actual = _unb64(file_checksum(path).split("$", 1)[1])
    except FileNotFoundError:
        return False
    return hmac.compare_digest(actual, expected)


__all__ = ["digest_bytes", "file_checksum", "verify_checksum"]

"""Fingerprint utilities."""

from __future__ import annotations

import hashlib
import json
from typing import Any, Iterable, Mapping

import numpy as np


def array_fingerprint(values: np.ndarray) -> str:
    """sha256 over dtype, shape and the little-endian bytes of ``values``."""

    array = np.ascontiguousarray(values)
    digest = hashlib.sha256()
    digest.update(f"{array.dtype.newbyteorder('<').str}{array.shape}".encode("utf-8"))
    digest.update(array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes())
    return digest.hexdigest()


def payload_fingerprint(payload: Mapping[str, Any]) -> str:
    serialized = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(serialized).hexdigest()


def transcript_fingerprint(lines: Iterable[str]) -> str:
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()

"""Named-tensor store and the ``RTFS`` binary container.

Layout (all integers little-endian)::

    magic   4 bytes  b"RTFS"
    version u32      1
    count   u32      number of tensors
    then per tensor:
        u16 name length, UTF-8 name,
        u8 dtype (0 = float32, 1 = uint8), u8 rank, rank x u32 dims,
        row-major payload

The model configuration travels as a uint8 tensor named ``__config__``
holding UTF-8 JSON.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from .errors import FormatError, WeightError
from .models import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"RTFS"
FORMAT_VERSION = 1
CONFIG_TENSOR = "__config__"

_DTYPES: Dict[int, np.dtype] = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1}


@dataclass
class WeightStore:
    """Ordered map from tensor name to array, plus the config it was built for."""

    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    config: Optional[ModelConfig] = None
    version: int = FORMAT_VERSION

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise WeightError(f"Missing tensor {name!r}", name) from None

    def __contains__(self, name: object) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def names(self) -> List[str]:
        return list(self.tensors)

    def element_count(self, names=None) -> int:
        keys = self.tensors if names is None else names
        return sum(int(self.tensors[name].size) for name in keys)

    def astype(self, dtype) -> "WeightStore":
        tensors = {name: value.astype(dtype) for name, value in self.tensors.items()}
        return WeightStore(tensors=tensors, config=self.config, version=self.version)

    def replace(self, name: str, value: np.ndarray) -> "WeightStore":
        current = self[name]
        if tuple(value.shape) != tuple(current.shape):
            raise WeightError(f"Tensor {name!r} has shape {current.shape}, got {value.shape}", name)
        tensors = dict(self.tensors)
        tensors[name] = np.asarray(value, dtype=current.dtype)
        return WeightStore(tensors=tensors, config=self.config, version=self.version)

    def zero_biases(self) -> "WeightStore":
        """Copy with every bias vector (conv ``.bias`` and SRU ``b_f``/``b_r``) set to zero."""

        tensors = {
            name: np.zeros_like(value) if _is_bias(name) else value
            for name, value in self.tensors.items()
        }
        return WeightStore(tensors=tensors, config=self.config, version=self.version)


def _is_bias(name: str) -> bool:
    return name.endswith(".bias") or name.endswith(".b_f") or name.endswith(".b_r")


# ---------------------------------------------------------------------------
# Container encoding
# ---------------------------------------------------------------------------


def encode_container(tensors: Mapping[str, np.ndarray], config: Mapping[str, Any] | None = None) -> bytes:
    entries: List[Tuple[str, np.ndarray]] = []
    if config is not None:
        blob = json.dumps(dict(config), sort_keys=True).encode("utf-8")
        entries.append((CONFIG_TENSOR, np.frombuffer(blob, dtype="u1")))
    for name, value in tensors.items():
        array = np.asarray(value)
        if array.dtype.kind == "f":
            array = array.astype("<f4", copy=False)
        elif array.dtype != np.dtype("u1"):
            raise FormatError(f"Tensor {name!r} has unsupported dtype {array.dtype}")
        entries.append((name, array))

    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(entries))]
    for name, array in entries:
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise FormatError(f"Tensor name too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _CODES[array.dtype], array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes, source: str) -> None:
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise FormatError(
                f"Truncated container {self.source}: need {size} bytes for {what} at offset {self.offset}"
            )
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_container(payload: bytes, source: str = "<bytes>") -> Tuple[Dict[str, np.ndarray], Optional[Dict[str, Any]]]:
    reader = _Reader(payload, source)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{source} is not an RTFS container (magic {magic!r})")
    version, count = reader.unpack("<II", "header")
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported container version {version} in {source} (expected {FORMAT_VERSION})")

    tensors: Dict[str, np.ndarray] = {}
    config: Optional[Dict[str, Any]] = None
    for index in range(count):
        (name_len,) = reader.unpack("<H", f"name length of tensor #{index}")
        try:
            name = reader.take(name_len, f"name of tensor #{index}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"Tensor #{index} in {source} has an invalid UTF-8 name") from exc
        code, rank = reader.unpack("<BB", f"dtype of {name!r}")
        if code not in _DTYPES:
            raise FormatError(f"Tensor {name!r} in {source} has unknown dtype code {code}")
        dims = reader.unpack(f"<{rank}I", f"dims of {name!r}")
        dtype = _DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        raw = reader.take(size, f"payload of {name!r}")
        array = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
        if name in tensors or (name == CONFIG_TENSOR and config is not None):
            raise FormatError(f"Duplicate tensor {name!r} in {source}")
        if name == CONFIG_TENSOR:
            try:
                config = json.loads(array.tobytes().decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise FormatError(f"Config blob in {source} is not valid JSON") from exc
        else:
            tensors[name] = array.astype(np.float32, copy=False) if code == 0 else array
    if reader.offset != len(payload):
        raise FormatError(f"{len(payload) - reader.offset} trailing bytes after the last tensor in {source}")
    return tensors, config


def read_container(path: str | Path) -> Tuple[Dict[str, np.ndarray], Optional[Dict[str, Any]]]:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"Cannot read container {path}: {exc.strerror or exc}") from exc
    logger.debug("read %d bytes from %s", len(payload), path)
    return decode_container(payload, str(path))


def write_container(path: str | Path, tensors: Mapping[str, np.ndarray], config: Mapping[str, Any] | None = None) -> None:
    path = Path(path)
    payload = encode_container(tensors, config)
    path.write_bytes(payload)
    logger.debug("wrote %d tensors (%d bytes) to %s", len(tensors), len(payload), path)


def save_weights(store: WeightStore, path: str | Path) -> None:
    config = store.config.to_dict() if store.config is not None else None
    write_container(path, store.tensors, config)


def read_store(path: str | Path) -> WeightStore:
    """Read a container as a store without checking it against a graph."""

    tensors, config = read_container(path)
    model_config = ModelConfig.from_mapping(config) if config is not None else None
    return WeightStore(tensors=tensors, config=model_config)

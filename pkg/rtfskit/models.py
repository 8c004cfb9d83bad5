"""Dataclasses shared across modules."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigError

MASK_MODES = ("s3", "mask")


@dataclass(frozen=True)
class ModelConfig:
    """Full hyperparameter record of one network instance.

    Defaults are the published R=4 hyperparameters.
    """

    sample_rate: int = 16000
    window: int = 256
    hop: int = 128
    c_a: int = 256
    d: int = 64
    q: int = 2
    h_a: int = 32
    sru_layers: int = 4
    sru_bidirectional: bool = True
    unfold_kernel: int = 8
    unfold_stride: int = 1
    attn_heads: int = 4
    attn_qk: int = 4
    tfar_kernel: int = 4
    caf_heads: int = 4
    c_v: int = 512
    vp_hidden: int = 64
    vp_q: int = 4
    vp_heads: int = 8
    vp_ffn: int = 128
    vp_kernel: int = 4
    r: int = 4
    share_blocks: bool = True
    mask_mode: str = "s3"
    eps: float = 1e-5

    @property
    def freq_bins(self) -> int:
        return self.window // 2 + 1

    @property
    def sru_directions(self) -> int:
        return 2 if self.sru_bidirectional else 1

    def validate(self) -> "ModelConfig":
        for item in fields(self):
            value = getattr(self, item.name)
            if item.type in ("int", "float") and not value > 0:
                raise ConfigError(f"{item.name} must be positive, got {value!r}")
        if self.c_a % 2:
            raise ConfigError(f"c_a must be even, got {self.c_a}")
        if self.c_v % self.c_a:
            raise ConfigError(f"c_v ({self.c_v}) must be divisible by c_a ({self.c_a})")
        if self.d >= self.c_a:
            raise ConfigError(f"d ({self.d}) must be smaller than c_a ({self.c_a})")
        if self.d % self.attn_heads:
            raise ConfigError(f"d ({self.d}) must be divisible by attn_heads ({self.attn_heads})")
        if self.vp_hidden % self.vp_heads:
            raise ConfigError(
                f"vp_hidden ({self.vp_hidden}) must be divisible by vp_heads ({self.vp_heads})"
            )
        if self.window % 2 or self.hop > self.window:
            raise ConfigError(f"window {self.window} / hop {self.hop} is not a valid framing")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any] | None) -> "ModelConfig":
        return cls().with_overrides(values or {})

    def with_overrides(self, values: Mapping[str, Any]) -> "ModelConfig":
        known = {item.name: item for item in fields(self)}
        updates: Dict[str, Any] = {}
        for raw_key, value in values.items():
            key = str(raw_key).strip().lower()
            if key not in known:
                raise ConfigError(f"Unknown config key: {raw_key}")
            updates[key] = _coerce(key, known[key].type, value)
        return replace(self, **updates).validate()


def _coerce(key: str, type_name: Any, value: Any) -> Any:
    try:
        if type_name == "bool":
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered in {"true", "1", "yes"}:
                    return True
                if lowered in {"false", "0", "no"}:
                    return False
                raise ValueError(value)
            return bool(value)
        if type_name == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if type_name == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid value for {key}: {value!r}") from exc


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    @property
    def length(self) -> int:
        return int(self.samples.shape[-1])


@dataclass
class ComplexSpectrogram:
    """One-sided STFT, ``real``/``imag`` laid out as (T_a, F)."""

    real: Any
    imag: Any
    window: int = 256
    hop: int = 128

    @property
    def frames(self) -> int:
        return int(self.real.shape[0])

    @property
    def bins(self) -> int:
        return int(self.real.shape[1])


@dataclass(frozen=True)
class TensorSpec:
    """One named tensor the graph requires.

    ``row`` is the ledger row the tensor is reported under.
    """

    name: str
    shape: Tuple[int, ...]
    role: str
    row: str
    fan_in: int = 1

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def trainable(self) -> bool:
        return self.role not in ("running_mean", "running_var")


@dataclass
class CostRow:
    module: str
    params: int = 0
    macs: int = 0
    applications: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "module": self.module,
            "params": self.params,
            "macs": self.macs,
            "applications": self.applications,
        }


@dataclass
class CostReport:
    rows: List[CostRow]
    input_samples: int
    sample_rate: int
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def total_params(self) -> int:
        return sum(row.params for row in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(row.macs for row in self.rows)

    @property
    def seconds(self) -> float:
        return self.input_samples / self.sample_rate

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input": {
                "samples": self.input_samples,
                "sample_rate": self.sample_rate,
                "seconds": self.seconds,
            },
            "config": self.config,
            "rows": [row.to_dict() for row in self.rows],
            "total": {"params": self.total_params, "macs": self.total_macs},
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "CostReport":
        rows = [CostRow(**row) for row in payload["rows"]]
        report = cls(
            rows=rows,
            input_samples=int(payload["input"]["samples"]),
            sample_rate=int(payload["input"]["sample_rate"]),
            config=dict(payload.get("config", {})),
        )
        total = payload.get("total")
        if total and (total["params"] != report.total_params or total["macs"] != report.total_macs):
            raise ValueError("Report totals do not match the sum of its rows")
        return report


@dataclass
class MetricResult:
    si_snr: float
    si_snri: float
    sdr: float
    sdri: float
    capped: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "si_snr": self.si_snr,
            "si_snri": self.si_snri,
            "sdr": self.sdr,
            "sdri": self.sdri,
            "capped": self.capped,
        }


@dataclass
class BlockAudit:
    block: str
    rel_error: Optional[float]
    attempts: int
    near_kink_fraction: float
    tolerance: float

    @property
    def skipped(self) -> bool:
        return self.rel_error is None

    @property
    def passed(self) -> bool:
        return self.rel_error is not None and self.rel_error < self.tolerance


@dataclass
class AuditReport:
    seed: int
    blocks: List[BlockAudit]

    @property
    def passed(self) -> bool:
        return all(block.passed for block in self.blocks)

    def failing(self) -> List[str]:
        return [block.block for block in self.blocks if not block.passed]

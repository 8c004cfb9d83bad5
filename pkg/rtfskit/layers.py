"""Weight-bearing building blocks shared by the network blocks.

Each layer knows the tensors it needs (``entries``), how to pick them out of
a :class:`WeightStore` (``load``) and how to run (``__call__``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import tensor as T
from .models import TensorSpec
from .tensor import ConvSpec
from .weights import WeightStore

NORM_KINDS = ("gln", "cln", "bn")


@dataclass(frozen=True)
class ConvLayer:
    spec: ConvSpec
    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    @staticmethod
    def entries(prefix: str, spec: ConvSpec, row: str) -> List[TensorSpec]:
        out = [TensorSpec(f"{prefix}.weight", spec.weight_shape, "weight", row, spec.fan_in)]
        if spec.has_bias:
            out.append(TensorSpec(f"{prefix}.bias", (spec.out_channels,), "bias", row, spec.fan_in))
        return out

    @classmethod
    def load(cls, store: WeightStore, prefix: str, spec: ConvSpec) -> "ConvLayer":
        bias = store[f"{prefix}.bias"] if spec.has_bias else None
        return cls(spec=spec, weight=store[f"{prefix}.weight"], bias=bias)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.conv(x, self.spec, self.weight, self.bias)


@dataclass(frozen=True)
class Norm:
    kind: str
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None
    eps: float = T.EPS

    @staticmethod
    def entries(prefix: str, channels: int, kind: str, row: str) -> List[TensorSpec]:
        out = [
            TensorSpec(f"{prefix}.gamma", (channels,), "gamma", row),
            TensorSpec(f"{prefix}.beta", (channels,), "beta", row),
        ]
        if kind == "bn":
            out.append(TensorSpec(f"{prefix}.running_mean", (channels,), "running_mean", row))
            out.append(TensorSpec(f"{prefix}.running_var", (channels,), "running_var", row))
        return out

    @classmethod
    def load(cls, store: WeightStore, prefix: str, kind: str, eps: float = T.EPS) -> "Norm":
        if kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {kind!r}")
        stats = {}
        if kind == "bn":
            stats = {
                "running_mean": store[f"{prefix}.running_mean"],
                "running_var": store[f"{prefix}.running_var"],
            }
        return cls(kind=kind, gamma=store[f"{prefix}.gamma"], beta=store[f"{prefix}.beta"], eps=eps, **stats)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        if self.kind == "gln":
            return T.gln(x, self.gamma, self.beta, self.eps)
        if self.kind == "cln":
            return T.channel_ln(x, self.gamma, self.beta, self.eps)
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)


@dataclass(frozen=True)
class ConvNorm:
    """Convolution followed by a normalization layer (``<prefix>.norm``)."""

    conv: ConvLayer
    norm: Norm

    @staticmethod
    def entries(prefix: str, spec: ConvSpec, kind: str, row: str) -> List[TensorSpec]:
        return ConvLayer.entries(prefix, spec, row) + Norm.entries(f"{prefix}.norm", spec.out_channels, kind, row)

    @classmethod
    def load(cls, store: WeightStore, prefix: str, spec: ConvSpec, kind: str, eps: float = T.EPS) -> "ConvNorm":
        return cls(conv=ConvLayer.load(store, prefix, spec), norm=Norm.load(store, f"{prefix}.norm", kind, eps))

    @property
    def spec(self) -> ConvSpec:
        return self.conv.spec

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return self.norm(self.conv(x))


def slope_entry(name: str, channels: int, row: str) -> TensorSpec:
    return TensorSpec(name, (channels,), "slope", row)


def depthwise_same(channels: int, kernel: Sequence[int]) -> ConvSpec:
    """Stride-1 depth-wise conv that keeps the spatial dims."""

    kernel = tuple(kernel)
    return ConvSpec.make(
        channels,
        channels,
        kernel,
        stride=1,
        padding=tuple(T.same_padding(k) for k in kernel),
        groups=channels,
    )

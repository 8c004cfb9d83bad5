"""Spectral source separation: mask generation and complex mask application.

Channel halves of a (C_a, T, F) map are read as the real and imaginary parts
of C_a/2 complex features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import ConvLayer, slope_entry
from .models import ModelConfig, TensorSpec
from .tensor import ConvSpec
from .weights import WeightStore

ROW = "mask"


def mask_spec(config: ModelConfig) -> ConvSpec:
    return ConvSpec.make(config.c_a, config.c_a, (1, 1))


def entries(config: ModelConfig, prefix: str = "mask") -> List[TensorSpec]:
    return [slope_entry(f"{prefix}.slope", config.c_a, ROW)] + ConvLayer.entries(
        f"{prefix}.conv", mask_spec(config), ROW
    )


@dataclass(frozen=True)
class MaskWeights:
    slope: np.ndarray
    conv: ConvLayer

    @classmethod
    def load(cls, store: WeightStore, config: ModelConfig, prefix: str = "mask") -> "MaskWeights":
        return cls(slope=store[f"{prefix}.slope"], conv=ConvLayer.load(store, f"{prefix}.conv", mask_spec(config)))


def make_mask(a_r: T.Tensor, w: MaskWeights) -> T.Tensor:
    """ReLU(conv(PReLU(a_R))); nonnegative everywhere."""

    return T.relu(w.conv(T.prelu(a_r, w.slope)))


def split_halves(x: T.Tensor) -> Tuple[T.Tensor, T.Tensor]:
    channels = x.shape[0]
    if channels % 2:
        raise ShapeError(f"complex features need an even channel count, got {channels}")
    half = channels // 2
    return x[:half], x[half:]


def s3_apply(m: T.Tensor, a0: T.Tensor) -> T.Tensor:
    """Complex product of mask and encoded mixture, re-stacked as real || imag."""

    if m.shape != a0.shape:
        raise ShapeError(f"mask shape {m.shape} != feature shape {a0.shape}")
    m_r, m_i = split_halves(m)
    e_r, e_i = split_halves(a0)
    z_r = m_r * e_r - m_i * e_i
    z_i = m_r * e_i + m_i * e_r
    return T.concat([z_r, z_i], axis=0)


def mask_apply_baseline(m: T.Tensor, a0: T.Tensor) -> T.Tensor:
    """Plain elementwise masking."""

    if m.shape != a0.shape:
        raise ShapeError(f"mask shape {m.shape} != feature shape {a0.shape}")
    return m * a0

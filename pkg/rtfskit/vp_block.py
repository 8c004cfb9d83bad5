"""Visual preprocessing: a 1D RTFS-style block over (C_v, T_v) lip features.

Normalisation is inference-mode batch norm throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

from . import tensor as T
from .errors import ShapeError
from .layers import ConvLayer, ConvNorm, Norm, depthwise_same
from .models import ModelConfig, TensorSpec
from .rtfs_block import TfArUnit, tf_ar_unit
from .tensor import ConvSpec
from .weights import WeightStore

DOWNSAMPLE_KERNEL = 4
FFN_KERNEL = 5
NORM = "bn"


def specs(config: ModelConfig) -> Dict[str, ConvSpec]:
    h, ffn = config.vp_hidden, config.vp_ffn
    return {
        "reduce": ConvSpec.make(config.c_v, h, 1),
        "down": ConvSpec.make(h, h, DOWNSAMPLE_KERNEL, stride=2, padding=1, groups=h),
        "qkv": ConvSpec.make(h, h, 1),
        "ffn_in": ConvSpec.make(h, ffn, 1),
        "ffn_dw": ConvSpec.make(ffn, ffn, FFN_KERNEL, padding=FFN_KERNEL // 2, groups=ffn),
        "ffn_out": ConvSpec.make(ffn, h, 1),
        "tfar": depthwise_same(h, (config.vp_kernel,)),
        "restore": ConvSpec.make(h, config.c_v, 1),
    }


@dataclass(frozen=True)
class TransformerWeights:
    norm: Norm
    query: ConvLayer
    key: ConvLayer
    value: ConvLayer
    out: ConvLayer
    ffn_in: ConvNorm
    ffn_dw: ConvLayer
    ffn_out: ConvNorm
    heads: int


@dataclass(frozen=True)
class VpWeights:
    reduce: ConvNorm
    down: List[ConvNorm]
    attn: TransformerWeights
    fuse: List[TfArUnit]
    concat: List[TfArUnit]
    restore: ConvLayer

    @classmethod
    def load(cls, store: WeightStore, config: ModelConfig, prefix: str = "vp") -> "VpWeights":
        s = specs(config)
        eps = config.eps
        attn = TransformerWeights(
            norm=Norm.load(store, f"{prefix}.attn.norm", NORM, eps),
            query=ConvLayer.load(store, f"{prefix}.attn.query", s["qkv"]),
            key=ConvLayer.load(store, f"{prefix}.attn.key", s["qkv"]),
            value=ConvLayer.load(store, f"{prefix}.attn.value", s["qkv"]),
            out=ConvLayer.load(store, f"{prefix}.attn.out", s["qkv"]),
            ffn_in=ConvNorm.load(store, f"{prefix}.ffn.in", s["ffn_in"], NORM, eps),
            ffn_dw=ConvLayer.load(store, f"{prefix}.ffn.dw", s["ffn_dw"]),
            ffn_out=ConvNorm.load(store, f"{prefix}.ffn.out", s["ffn_out"], NORM, eps),
            heads=config.vp_heads,
        )
        return cls(
            reduce=ConvNorm.load(store, f"{prefix}.reduce", s["reduce"], NORM, eps),
            down=[ConvNorm.load(store, f"{prefix}.down.{i}", s["down"], NORM, eps) for i in range(config.vp_q)],
            attn=attn,
            fuse=[TfArUnit.load(store, f"{prefix}.fuse.{i}", s["tfar"], NORM, eps) for i in range(config.vp_q + 1)],
            concat=[TfArUnit.load(store, f"{prefix}.concat.{i}", s["tfar"], NORM, eps) for i in range(config.vp_q)],
            restore=ConvLayer.load(store, f"{prefix}.restore", s["restore"]),
        )


def entries(config: ModelConfig, prefix: str = "vp") -> List[TensorSpec]:
    s = specs(config)
    compress, attention, rebuild = f"{prefix}.compress", f"{prefix}.attention", f"{prefix}.reconstruct"
    out = ConvNorm.entries(f"{prefix}.reduce", s["reduce"], NORM, compress)
    for i in range(config.vp_q):
        out += ConvNorm.entries(f"{prefix}.down.{i}", s["down"], NORM, compress)
    out += Norm.entries(f"{prefix}.attn.norm", config.vp_hidden, NORM, attention)
    for name in ("query", "key", "value", "out"):
        out += ConvLayer.entries(f"{prefix}.attn.{name}", s["qkv"], attention)
    out += ConvNorm.entries(f"{prefix}.ffn.in", s["ffn_in"], NORM, attention)
    out += ConvLayer.entries(f"{prefix}.ffn.dw", s["ffn_dw"], attention)
    out += ConvNorm.entries(f"{prefix}.ffn.out", s["ffn_out"], NORM, attention)
    for i in range(config.vp_q + 1):
        out += TfArUnit.entries(f"{prefix}.fuse.{i}", s["tfar"], NORM, rebuild)
    for i in range(config.vp_q):
        out += TfArUnit.entries(f"{prefix}.concat.{i}", s["tfar"], NORM, rebuild)
    out += ConvLayer.entries(f"{prefix}.restore", s["restore"], f"{prefix}.restore")
    return out


def mhsa_weights(x: T.Tensor, w: TransformerWeights) -> Tuple[T.Tensor, T.Tensor]:
    """Per-head attention matrices (H, T, T) and values (H, T, dh) for a normalised input."""

    frames = x.shape[-1]
    dh = x.shape[0] // w.heads
    q = w.query(x).reshape(w.heads, dh, frames).transpose(0, 2, 1)
    k = w.key(x).reshape(w.heads, dh, frames)
    v = w.value(x).reshape(w.heads, dh, frames).transpose(0, 2, 1)
    attn = T.softmax(T.matmul(q, k) / math.sqrt(dh), axis=-1)
    return attn, v


def transformer(x: T.Tensor, w: TransformerWeights) -> T.Tensor:
    """Pre-norm multi-head self-attention over time, then a convolutional FFN."""

    attn, v = mhsa_weights(w.norm(x), w)
    mixed = T.matmul(attn, v).transpose(0, 2, 1).reshape(x.shape)
    x = x + w.out(mixed)
    hidden = w.ffn_dw(T.relu(w.ffn_in(x)))
    return x + w.ffn_out(hidden)


def vp_forward(v0: T.Tensor, w: VpWeights) -> T.Tensor:
    """(C_v, T_v) -> (C_v, T_v)."""

    if v0.ndim != 2 or v0.shape[0] != w.reduce.spec.in_channels:
        raise ShapeError(f"visual features must be ({w.reduce.spec.in_channels}, T_v), got {v0.shape}")
    minimum = 2 ** len(w.down)
    if v0.shape[1] < minimum:
        raise ShapeError(f"T_v={v0.shape[1]} too short for {len(w.down)} downsamplings (needs >= {minimum})")

    scales = [w.reduce(v0)]
    for down in w.down:
        scales.append(down(scales[-1]))
    target = scales[-1].shape[1:]
    v_g = T.adaptive_avg_pool(scales[0], target)
    for scale in scales[1:]:
        v_g = v_g + T.adaptive_avg_pool(scale, target)

    v_bar = transformer(v_g, w.attn)

    fused = [tf_ar_unit(scale, v_bar, unit) for scale, unit in zip(scales, w.fuse)]
    out = fused[-1]
    for j in range(len(scales) - 2, -1, -1):
        out = tf_ar_unit(fused[j], out, w.concat[j]) + scales[j]
    return w.restore(out) + v0


def vp_macs(config: ModelConfig, frames: int) -> Dict[str, int]:
    s = specs(config)
    lengths = [(frames,)]
    compress = s["reduce"].macs(lengths[0])
    for _ in range(config.vp_q):
        compress += s["down"].macs(lengths[-1])
        lengths.append(s["down"].out_spatial(lengths[-1]))
    coarse = lengths[-1]
    (n,) = coarse
    attention = 4 * s["qkv"].macs(coarse) + 2 * n * n * config.vp_hidden
    attention += s["ffn_in"].macs(coarse) + s["ffn_dw"].macs(coarse) + s["ffn_out"].macs(coarse)
    tfar = s["tfar"]
    rebuild = sum(tfar.macs(length) + 2 * tfar.macs(coarse) for length in lengths)
    rebuild += sum(tfar.macs(lengths[j]) + 2 * tfar.macs(lengths[j + 1]) for j in range(len(lengths) - 1))
    return {
        "compress": compress,
        "attention": attention,
        "reconstruct": rebuild,
        "restore": s["restore"].macs(lengths[0]),
    }

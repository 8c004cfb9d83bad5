"""The RTFS block: compress the TF grid, model frequency then time, attend, reconstruct.

Feature maps are (C, T, F).  The block output is restored to C_a channels;
the skip connection around the block belongs to the pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import ConvLayer, ConvNorm, Norm, depthwise_same, slope_entry
from .models import ModelConfig, TensorSpec
from .sru import SruStack, sru_forward, sru_macs
from .tensor import ConvSpec
from .weights import WeightStore

DOWNSAMPLE_KERNEL = 4

FREQ_AXIS = 2
TIME_AXIS = 1


def specs(config: ModelConfig) -> Dict[str, ConvSpec]:
    d, k, s = config.d, config.unfold_kernel, config.unfold_stride
    rnn_out = config.sru_directions * config.h_a
    return {
        "reduce": ConvSpec.make(config.c_a, d, (1, 1)),
        "down": ConvSpec.make(d, d, (DOWNSAMPLE_KERNEL,) * 2, stride=2, padding=1, groups=d),
        "freq_proj": ConvSpec.make(rnn_out, d, (1, k), stride=(1, s), transposed=True),
        "time_proj": ConvSpec.make(rnn_out, d, (k, 1), stride=(s, 1), transposed=True),
        "query": ConvSpec.make(d, config.attn_qk, (1, 1)),
        "key": ConvSpec.make(d, config.attn_qk, (1, 1)),
        "value": ConvSpec.make(d, d // config.attn_heads, (1, 1)),
        "concat": ConvSpec.make(d, d, (1, 1)),
        "tfar": depthwise_same(d, (config.tfar_kernel,) * 2),
        "restore": ConvSpec.make(d, config.c_a, (1, 1)),
    }


# ---------------------------------------------------------------------------
# Weight containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProjAct:
    """1x1 conv, PReLU, channel layer norm."""

    conv: ConvLayer
    slope: np.ndarray
    norm: Norm

    @staticmethod
    def entries(prefix: str, spec: ConvSpec, row: str) -> List[TensorSpec]:
        return (
            ConvLayer.entries(prefix, spec, row)
            + [slope_entry(f"{prefix}.slope", spec.out_channels, row)]
            + Norm.entries(f"{prefix}.norm", spec.out_channels, "cln", row)
        )

    @classmethod
    def load(cls, store: WeightStore, prefix: str, spec: ConvSpec, eps: float) -> "ProjAct":
        return cls(
            conv=ConvLayer.load(store, prefix, spec),
            slope=store[f"{prefix}.slope"],
            norm=Norm.load(store, f"{prefix}.norm", "cln", eps),
        )

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return self.norm(T.prelu(self.conv(x), self.slope))


@dataclass(frozen=True)
class AttentionHead:
    query: ProjAct
    key: ProjAct
    value: ProjAct


@dataclass(frozen=True)
class TfAttentionWeights:
    heads: List[AttentionHead]
    concat: ProjAct

    @staticmethod
    def entries(prefix: str, config: ModelConfig, row: str) -> List[TensorSpec]:
        layer_specs = specs(config)
        out: List[TensorSpec] = []
        for index in range(config.attn_heads):
            for part in ("query", "key", "value"):
                out += ProjAct.entries(f"{prefix}.head.{index}.{part}", layer_specs[part], row)
        return out + ProjAct.entries(f"{prefix}.concat", layer_specs["concat"], row)

    @classmethod
    def load(cls, store: WeightStore, prefix: str, config: ModelConfig) -> "TfAttentionWeights":
        layer_specs = specs(config)
        heads = [
            AttentionHead(
                *(
                    ProjAct.load(store, f"{prefix}.head.{index}.{part}", layer_specs[part], config.eps)
                    for part in ("query", "key", "value")
                )
            )
            for index in range(config.attn_heads)
        ]
        return cls(heads=heads, concat=ProjAct.load(store, f"{prefix}.concat", layer_specs["concat"], config.eps))


@dataclass(frozen=True)
class PathWeights:
    """One recurrent path: unfold, channel LN, SRU, transposed projection."""

    norm: Norm
    sru: SruStack
    proj: ConvLayer
    kernel: int
    stride: int

    @staticmethod
    def entries(prefix: str, config: ModelConfig, proj_spec: ConvSpec, row: str) -> List[TensorSpec]:
        width = config.unfold_kernel * config.d
        return (
            Norm.entries(f"{prefix}.norm", width, "cln", row)
            + SruStack.entries(f"{prefix}.sru", width, config.h_a, config.sru_layers, config.sru_bidirectional, row)
            + ConvLayer.entries(f"{prefix}.proj", proj_spec, row)
        )

    @classmethod
    def load(cls, store: WeightStore, prefix: str, config: ModelConfig, proj_spec: ConvSpec) -> "PathWeights":
        width = config.unfold_kernel * config.d
        return cls(
            norm=Norm.load(store, f"{prefix}.norm", "cln", config.eps),
            sru=SruStack.load(
                store, f"{prefix}.sru", width, config.h_a, config.sru_layers, config.sru_bidirectional
            ),
            proj=ConvLayer.load(store, f"{prefix}.proj", proj_spec),
            kernel=config.unfold_kernel,
            stride=config.unfold_stride,
        )


@dataclass(frozen=True)
class TfArUnit:
    """I(m, n) = interp(sigmoid(W1 n)) * W2 m + interp(W3 n)."""

    w1: ConvNorm
    w2: ConvNorm
    w3: ConvNorm

    @staticmethod
    def entries(prefix: str, spec: ConvSpec, kind: str, row: str) -> List[TensorSpec]:
        out: List[TensorSpec] = []
        for name in ("w1", "w2", "w3"):
            out += ConvNorm.entries(f"{prefix}.{name}", spec, kind, row)
        return out

    @classmethod
    def load(cls, store: WeightStore, prefix: str, spec: ConvSpec, kind: str, eps: float) -> "TfArUnit":
        return cls(*(ConvNorm.load(store, f"{prefix}.{name}", spec, kind, eps) for name in ("w1", "w2", "w3")))


@dataclass(frozen=True)
class RtfsWeights:
    reduce: ConvNorm
    down: List[ConvNorm]
    freq: PathWeights
    time: PathWeights
    attn: TfAttentionWeights
    fuse: List[TfArUnit]
    concat: List[TfArUnit]
    restore: ConvLayer

    @property
    def q(self) -> int:
        return len(self.down) + 1

    @classmethod
    def load(cls, store: WeightStore, config: ModelConfig, prefix: str = "rtfs") -> "RtfsWeights":
        s = specs(config)
        eps = config.eps
        return cls(
            reduce=ConvNorm.load(store, f"{prefix}.reduce", s["reduce"], "gln", eps),
            down=[ConvNorm.load(store, f"{prefix}.down.{i}", s["down"], "gln", eps) for i in range(config.q - 1)],
            freq=PathWeights.load(store, f"{prefix}.freq", config, s["freq_proj"]),
            time=PathWeights.load(store, f"{prefix}.time", config, s["time_proj"]),
            attn=TfAttentionWeights.load(store, f"{prefix}.attn", config),
            fuse=[TfArUnit.load(store, f"{prefix}.fuse.{i}", s["tfar"], "gln", eps) for i in range(config.q)],
            concat=[TfArUnit.load(store, f"{prefix}.concat.{i}", s["tfar"], "gln", eps) for i in range(config.q - 1)],
            restore=ConvLayer.load(store, f"{prefix}.restore", s["restore"]),
        )


def entries(config: ModelConfig, prefix: str = "rtfs") -> List[TensorSpec]:
    s = specs(config)
    rows = {part: f"{prefix}.{part}" for part in ("compress", "freq_path", "time_path", "attention", "reconstruct", "restore")}
    out = ConvNorm.entries(f"{prefix}.reduce", s["reduce"], "gln", rows["compress"])
    for i in range(config.q - 1):
        out += ConvNorm.entries(f"{prefix}.down.{i}", s["down"], "gln", rows["compress"])
    out += PathWeights.entries(f"{prefix}.freq", config, s["freq_proj"], rows["freq_path"])
    out += PathWeights.entries(f"{prefix}.time", config, s["time_proj"], rows["time_path"])
    out += TfAttentionWeights.entries(f"{prefix}.attn", config, rows["attention"])
    for i in range(config.q):
        out += TfArUnit.entries(f"{prefix}.fuse.{i}", s["tfar"], "gln", rows["reconstruct"])
    for i in range(config.q - 1):
        out += TfArUnit.entries(f"{prefix}.concat.{i}", s["tfar"], "gln", rows["reconstruct"])
    out += ConvLayer.entries(f"{prefix}.restore", s["restore"], rows["restore"])
    return out


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def compress(a: T.Tensor, w: RtfsWeights) -> Tuple[List[T.Tensor], T.Tensor]:
    """Multi-scale set A_0..A_{q-1} and the pooled global features A_G."""

    if a.ndim != 3:
        raise ShapeError(f"RTFS block expects (C, T, F), got {a.shape}")
    minimum = 2 ** (w.q - 1)
    if min(a.shape[1:]) < minimum:
        raise ShapeError(f"grid {a.shape[1:]} too small for q={w.q} (needs >= {minimum})")
    scales = [w.reduce(a)]
    for down in w.down:
        scales.append(down(scales[-1]))
    target = scales[-1].shape[1:]
    pooled = [T.adaptive_avg_pool(scale, target) for scale in scales]
    a_g = pooled[0]
    for item in pooled[1:]:
        a_g = a_g + item
    return scales, a_g


def recurrent_path(x: T.Tensor, w: PathWeights, axis: int) -> T.Tensor:
    """Unfold along ``axis``, run the SRU across it, project back to the input length."""

    length = x.shape[axis]
    unfolded = w.norm(T.unfold(x, w.kernel, w.stride, axis))
    if axis == FREQ_AXIS:
        out = sru_forward(unfolded.transpose(1, 0, 2), w.sru).transpose(1, 0, 2)
    else:
        out = sru_forward(unfolded.transpose(2, 0, 1), w.sru).transpose(1, 2, 0)
    out = w.proj(out)
    crop = [slice(None)] * 3
    crop[axis] = slice(0, length)
    return out[tuple(crop)]


def attention_weights(q: T.Tensor, k: T.Tensor) -> T.Tensor:
    """Frame-to-frame attention from (E, T, F) queries and keys, rows sum to 1."""

    frames = q.shape[1]
    width = q.shape[0] * q.shape[2]
    q_flat = q.transpose(1, 0, 2).reshape(frames, width)
    k_flat = k.transpose(1, 0, 2).reshape(frames, width)
    scores = T.matmul(q_flat, k_flat.transpose(1, 0)) / math.sqrt(width)
    return T.softmax(scores, axis=-1)


def tf_attention(x: T.Tensor, w: TfAttentionWeights) -> T.Tensor:
    """Multi-head self-attention across frames, frequency folded into the embedding."""

    if x.shape[0] % len(w.heads):
        raise ShapeError(f"{x.shape[0]} channels not divisible by {len(w.heads)} heads")
    frames, bins = x.shape[1], x.shape[2]
    outputs = []
    for head in w.heads:
        attn = attention_weights(head.query(x), head.key(x))
        v = head.value(x)
        v_flat = v.transpose(1, 0, 2).reshape(frames, v.shape[0] * bins)
        mixed = T.matmul(attn, v_flat).reshape(frames, v.shape[0], bins)
        outputs.append(mixed.transpose(1, 0, 2))
    return w.concat(T.concat(outputs, axis=0))


def dual_path(a_g: T.Tensor, w: RtfsWeights) -> T.Tensor:
    r_f = recurrent_path(a_g, w.freq, FREQ_AXIS) + a_g
    r_t = recurrent_path(r_f, w.time, TIME_AXIS) + r_f
    return tf_attention(r_t, w.attn) + r_t


def tf_ar_unit(m: T.Tensor, n: T.Tensor, w: TfArUnit) -> T.Tensor:
    if m.shape[0] != n.shape[0]:
        raise ShapeError(f"TF-AR channel mismatch: {m.shape[0]} vs {n.shape[0]}")
    if any(ns > ms for ns, ms in zip(n.shape[1:], m.shape[1:])):
        raise ShapeError(f"TF-AR source {n.shape} larger than target {m.shape}")
    size = m.shape[1:]
    gate = T.interp_nearest(T.sigmoid(w.w1(n)), size)
    return gate * w.w2(m) + T.interp_nearest(w.w3(n), size)


def reconstruct(scales: Sequence[T.Tensor], a_bar: T.Tensor, w: RtfsWeights) -> T.Tensor:
    """Coarse-to-fine accumulation of the attended scales back to full resolution."""

    fused = [tf_ar_unit(scale, a_bar, unit) for scale, unit in zip(scales, w.fuse)]
    out = fused[-1]
    for j in range(len(scales) - 2, -1, -1):
        out = tf_ar_unit(fused[j], out, w.concat[j]) + scales[j]
    return out


def rtfs_forward(a: T.Tensor, w: RtfsWeights) -> T.Tensor:
    scales, a_g = compress(a, w)
    a_bar = dual_path(a_g, w)
    return w.restore(reconstruct(scales, a_bar, w))


# ---------------------------------------------------------------------------
# Cost
# ---------------------------------------------------------------------------


def rtfs_macs(config: ModelConfig, grid: Tuple[int, int]) -> Dict[str, int]:
    """MACs of one block application on a (T, F) grid, keyed by ledger row suffix."""

    s = specs(config)
    shapes = [tuple(grid)]
    compress_macs = s["reduce"].macs(shapes[0])
    for _ in range(config.q - 1):
        compress_macs += s["down"].macs(shapes[-1])
        shapes.append(s["down"].out_spatial(shapes[-1]))
    frames, bins = shapes[-1]
    width = config.unfold_kernel * config.d

    def path(batch: int, length: int, proj: ConvSpec, spatial) -> int:
        steps = T.unfold_length(length, config.unfold_kernel, config.unfold_stride)
        rnn = sru_macs(width, config.h_a, config.sru_layers, config.sru_bidirectional, steps) * batch
        return rnn + proj.macs(spatial(steps))

    freq = path(frames, bins, s["freq_proj"], lambda n: (frames, n))
    time = path(bins, frames, s["time_proj"], lambda n: (n, bins))

    coarse = (frames, bins)
    per_head = s["query"].macs(coarse) + s["key"].macs(coarse) + s["value"].macs(coarse)
    per_head += frames * frames * config.attn_qk * bins
    per_head += frames * frames * (config.d // config.attn_heads) * bins
    attention = config.attn_heads * per_head + s["concat"].macs(coarse)

    tfar = s["tfar"]
    reconstruct_macs = 0
    for shape in shapes:
        reconstruct_macs += tfar.macs(shape) + 2 * tfar.macs(coarse)
    for j in range(len(shapes) - 1):
        reconstruct_macs += tfar.macs(shapes[j]) + 2 * tfar.macs(shapes[j + 1])

    return {
        "compress": compress_macs,
        "freq_path": freq,
        "time_path": time,
        "attention": attention,
        "reconstruct": reconstruct_macs,
        "restore": s["restore"].macs(shapes[0]),
    }

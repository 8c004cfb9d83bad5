"""Cross-dimensional attention fusion of visual cues into the audio features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

from . import tensor as T
from .errors import ShapeError
from .layers import ConvNorm
from .models import ModelConfig, TensorSpec
from .tensor import ConvSpec
from .weights import WeightStore

ROW = "caf"


def specs(config: ModelConfig) -> Dict[str, ConvSpec]:
    c_a, c_v, heads = config.c_a, config.c_v, config.caf_heads
    return {
        "p1": ConvSpec.make(c_a, c_a, (1, 1), groups=c_a),
        "p2": ConvSpec.make(c_a, c_a, (1, 1), groups=c_a),
        "f1": ConvSpec.make(c_v, c_a * heads, 1, groups=c_a),
        "f2": ConvSpec.make(c_v, c_a, 1, groups=c_a),
    }


def entries(config: ModelConfig, prefix: str = "caf") -> List[TensorSpec]:
    out: List[TensorSpec] = []
    for name, spec in specs(config).items():
        out += ConvNorm.entries(f"{prefix}.{name}", spec, "gln", ROW)
    return out


@dataclass(frozen=True)
class CafWeights:
    p1: ConvNorm
    p2: ConvNorm
    f1: ConvNorm
    f2: ConvNorm
    heads: int

    @classmethod
    def load(cls, store: WeightStore, config: ModelConfig, prefix: str = "caf") -> "CafWeights":
        layers = {
            name: ConvNorm.load(store, f"{prefix}.{name}", spec, "gln", config.eps)
            for name, spec in specs(config).items()
        }
        return cls(heads=config.caf_heads, **layers)


def visual_attention(v1: T.Tensor, w: CafWeights, frames: int) -> T.Tensor:
    """Head-averaged channel attention, resized to ``frames``: (C_a, T_a)."""

    v_h = w.f1(v1)
    c_a = w.f2.spec.out_channels
    v_m = T.mean(v_h.reshape(c_a, w.heads, v_h.shape[-1]), axis=1)
    return T.interp_nearest(T.softmax(v_m, axis=0), (frames,))


def caf_forward(a1: T.Tensor, v1: T.Tensor, w: CafWeights) -> T.Tensor:
    """Fuse ``v1`` (C_v, T_v) into ``a1`` (C_a, T_a, F); output has a1's shape."""

    if a1.ndim != 3 or v1.ndim != 2:
        raise ShapeError(f"caf expects (C_a, T, F) audio and (C_v, T_v) video, got {a1.shape} / {v1.shape}")
    frames = a1.shape[1]

    a_val = w.p1(a1)
    a_gate = T.relu(w.p2(a1))

    v_attn = visual_attention(v1, w, frames)
    f1 = v_attn[:, :, None] * a_val

    v_key = T.interp_nearest(w.f2(v1), (frames,))
    f2 = a_gate * v_key[:, :, None]
    return f1 + f2


def caf_macs(config: ModelConfig, audio: Tuple[int, int], video_frames: int) -> int:
    layer_specs = specs(config)
    return (
        layer_specs["p1"].macs(audio)
        + layer_specs["p2"].macs(audio)
        + layer_specs["f1"].macs((video_frames,))
        + layer_specs["f2"].macs((video_frames,))
    )

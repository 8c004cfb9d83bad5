"""Simple Recurrent Unit stacks.

Per step, with (x~, f^, r^) = W x_t::

    f_t = sigmoid(f^ + v_f * c_{t-1} + b_f)
    c_t = f_t * c_{t-1} + (1 - f_t) * x~
    r_t = sigmoid(r^ + v_r * c_t + b_r)
    h_t = r_t * c_t + (1 - r_t) * hw(x_t)

``hw`` is the identity when the layer input width equals the hidden size and a
learned projection P (h x d_in) otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .models import TensorSpec
from .weights import WeightStore

DIRECTIONS = ("fwd", "bwd")


@dataclass(frozen=True)
class SruLayerWeights:
    W: np.ndarray
    v_f: np.ndarray
    v_r: np.ndarray
    b_f: np.ndarray
    b_r: np.ndarray
    P: Optional[np.ndarray] = None
    reverse: bool = False

    @property
    def hidden(self) -> int:
        return int(self.v_f.shape[0])

    @property
    def input_size(self) -> int:
        return int(self.W.shape[1])

    def check(self) -> None:
        h, d_in = self.hidden, self.input_size
        if self.W.shape != (3 * h, d_in):
            raise ShapeError(f"SRU W has shape {self.W.shape}, expected {(3 * h, d_in)}")
        for name in ("v_r", "b_f", "b_r"):
            if getattr(self, name).shape != (h,):
                raise ShapeError(f"SRU {name} has shape {getattr(self, name).shape}, expected {(h,)}")
        if (self.P is None) != (d_in == h):
            raise ShapeError(f"SRU highway projection required iff input size {d_in} != hidden {h}")
        if self.P is not None and self.P.shape != (h, d_in):
            raise ShapeError(f"SRU P has shape {self.P.shape}, expected {(h, d_in)}")


@dataclass(frozen=True)
class SruStack:
    """``layers`` is flat: depth-major, forward direction first."""

    layers: List[SruLayerWeights]
    bidirectional: bool = True

    @property
    def directions(self) -> int:
        return 2 if self.bidirectional else 1

    @property
    def num_layers(self) -> int:
        return len(self.layers) // self.directions

    @property
    def hidden(self) -> int:
        return self.layers[0].hidden

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def output_size(self) -> int:
        return self.directions * self.hidden

    def depth(self, index: int) -> Sequence[SruLayerWeights]:
        start = index * self.directions
        return self.layers[start : start + self.directions]

    @staticmethod
    def layer_inputs(d_in: int, hidden: int, num_layers: int, bidirectional: bool) -> List[int]:
        width = (2 if bidirectional else 1) * hidden
        return [d_in] + [width] * (num_layers - 1)

    @classmethod
    def entries(
        cls, prefix: str, d_in: int, hidden: int, num_layers: int, bidirectional: bool, row: str
    ) -> List[TensorSpec]:
        out: List[TensorSpec] = []
        for depth, size in enumerate(cls.layer_inputs(d_in, hidden, num_layers, bidirectional)):
            for direction in DIRECTIONS[: 2 if bidirectional else 1]:
                base = f"{prefix}.{depth}.{direction}"
                out.append(TensorSpec(f"{base}.W", (3 * hidden, size), "weight", row, size))
                if size != hidden:
                    out.append(TensorSpec(f"{base}.P", (hidden, size), "weight", row, size))
                out.append(TensorSpec(f"{base}.v_f", (hidden,), "weight", row, hidden))
                out.append(TensorSpec(f"{base}.v_r", (hidden,), "weight", row, hidden))
                out.append(TensorSpec(f"{base}.b_f", (hidden,), "bias", row, size))
                out.append(TensorSpec(f"{base}.b_r", (hidden,), "bias", row, size))
        return out

    @classmethod
    def load(
        cls, store: WeightStore, prefix: str, d_in: int, hidden: int, num_layers: int, bidirectional: bool
    ) -> "SruStack":
        layers = []
        for depth, size in enumerate(cls.layer_inputs(d_in, hidden, num_layers, bidirectional)):
            for direction in DIRECTIONS[: 2 if bidirectional else 1]:
                base = f"{prefix}.{depth}.{direction}"
                layer = SruLayerWeights(
                    W=store[f"{base}.W"],
                    v_f=store[f"{base}.v_f"],
                    v_r=store[f"{base}.v_r"],
                    b_f=store[f"{base}.b_f"],
                    b_r=store[f"{base}.b_r"],
                    P=store[f"{base}.P"] if size != hidden else None,
                    reverse=direction == "bwd",
                )
                layer.check()
                layers.append(layer)
        return cls(layers=layers, bidirectional=bidirectional)


def sru_layer(x: T.Tensor, w: SruLayerWeights) -> T.Tensor:
    """One direction of one layer over a (B, d_in, N) batch."""

    if w.reverse:
        x = T.flip(x, -1)
    x = T.contiguous(x)
    h = w.hidden
    projected = T.matmul(w.W, x)
    highway = x if w.P is None else T.matmul(w.P, x)
    candidate, forget, reset = projected[:, :h], projected[:, h : 2 * h], projected[:, 2 * h :]

    c = np.zeros((x.shape[0], h), dtype=T.primal(projected).dtype)
    steps = []
    for n in range(x.shape[-1]):
        f = T.sigmoid(forget[..., n] + w.v_f * c + w.b_f)
        c = f * c + (1.0 - f) * candidate[..., n]
        r = T.sigmoid(reset[..., n] + w.v_r * c + w.b_r)
        steps.append(r * c + (1.0 - r) * highway[..., n])
    out = T.stack(steps, axis=-1)
    return T.flip(out, -1) if w.reverse else out


def sru_forward(seq: T.Tensor, stack: SruStack) -> T.Tensor:
    """Run the stack over (d_in, N) or a batch (B, d_in, N); returns (…, dirs*h, N)."""

    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq[None]
    if seq.ndim != 3:
        raise ShapeError(f"SRU input must be (d_in, N) or (B, d_in, N), got {seq.shape}")
    if seq.shape[1] != stack.input_size:
        raise ShapeError(f"SRU input width {seq.shape[1]} != {stack.input_size}")
    if seq.shape[2] == 0:
        raise ShapeError("SRU input sequence is empty")

    x = seq
    for depth in range(stack.num_layers):
        x = T.concat([sru_layer(x, w) for w in stack.depth(depth)], axis=1)
    return x[0] if squeeze else x


def sru_macs(d_in: int, hidden: int, num_layers: int, bidirectional: bool, steps: int) -> int:
    """Input projections (and highway projections) per step; recurrences are elementwise."""

    total = 0
    directions = 2 if bidirectional else 1
    for size in SruStack.layer_inputs(d_in, hidden, num_layers, bidirectional):
        per_step = 3 * hidden * size + (hidden * size if size != hidden else 0)
        total += directions * per_step * steps
    return total

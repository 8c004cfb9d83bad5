"""Dense tensor primitives every block is built from.

Tensors are plain ``numpy`` arrays in (channel, time, frequency) layout, or
:class:`DualTensor` pairs carrying a forward-mode tangent.  Every primitive
accepts both; linear maps push the tangent through the same map without its
bias, nonlinear ones register a tangent rule with :func:`functools.singledispatch`.
"""

from __future__ import annotations

import contextlib
import contextvars
import functools
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError, ShapeError

EPS = 1e-5
# Reductions longer than this accumulate in float64.
WIDE_REDUCTION = 4096


class DualTensor:
    """A primal value paired with a tangent of the same shape."""

    __slots__ = ("primal", "tangent")
    # Make ndarray <op> DualTensor defer to the reflected DualTensor operator.
    __array_ufunc__ = None

    def __init__(self, primal, tangent) -> None:
        primal = np.asarray(primal)
        tangent = np.asarray(tangent)
        if tangent.shape != primal.shape:
            tangent = np.broadcast_to(tangent, primal.shape)
        self.primal = primal
        self.tangent = tangent

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.primal.shape

    @property
    def ndim(self) -> int:
        return self.primal.ndim

    @property
    def dtype(self):
        return self.primal.dtype

    def __repr__(self) -> str:
        return f"DualTensor(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        if isinstance(other, DualTensor):
            primal = self.primal + other.primal
            return DualTensor(primal, self.tangent + other.tangent)
        return DualTensor(self.primal + other, self.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, DualTensor):
            return DualTensor(self.primal - other.primal, self.tangent - other.tangent)
        return DualTensor(self.primal - other, self.tangent)

    def __rsub__(self, other):
        return DualTensor(other - self.primal, -self.tangent)

    def __neg__(self):
        return DualTensor(-self.primal, -self.tangent)

    def __mul__(self, other):
        if isinstance(other, DualTensor):
            return DualTensor(
                self.primal * other.primal,
                self.tangent * other.primal + self.primal * other.tangent,
            )
        return DualTensor(self.primal * other, self.tangent * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DualTensor):
            raise TypeError("division by a DualTensor is not supported")
        return DualTensor(self.primal / other, self.tangent / other)

    def __getitem__(self, index):
        return DualTensor(self.primal[index], self.tangent[index])

    def reshape(self, *shape):
        return DualTensor(self.primal.reshape(*shape), self.tangent.reshape(*shape))

    def transpose(self, *axes):
        return DualTensor(self.primal.transpose(*axes), self.tangent.transpose(*axes))

    def astype(self, dtype):
        return DualTensor(self.primal.astype(dtype), self.tangent.astype(dtype))


Tensor = Union[np.ndarray, DualTensor]


def primal(x: Tensor) -> np.ndarray:
    return x.primal if isinstance(x, DualTensor) else x


def tangent(x: Tensor) -> np.ndarray:
    """Tangent of ``x``; plain arrays have a zero tangent."""

    return x.tangent if isinstance(x, DualTensor) else np.zeros_like(x)


def _check_finite(values: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(values).all():
        raise NumericalError(f"{op} produced non-finite values")
    return values


def _finite(out: Tensor, op: str) -> Tensor:
    if isinstance(out, DualTensor):
        _check_finite(out.primal, op)
        _check_finite(out.tangent, f"{op} (tangent)")
    else:
        _check_finite(out, op)
    return out


def linear_map(fn: Callable[..., np.ndarray], x: Tensor, *args, bias=None, **kwargs) -> Tensor:
    """Apply an affine map; the tangent goes through the linear part only."""

    if isinstance(x, DualTensor):
        return DualTensor(
            fn(x.primal, *args, bias=bias, **kwargs),
            fn(x.tangent, *args, bias=None, **kwargs),
        )
    return fn(x, *args, bias=bias, **kwargs)


def _linear_many(fn: Callable[[List[np.ndarray]], np.ndarray], xs: Sequence[Tensor]) -> Tensor:
    if any(isinstance(x, DualTensor) for x in xs):
        return DualTensor(fn([primal(x) for x in xs]), fn([tangent(x) for x in xs]))
    return fn(list(xs))


# ---------------------------------------------------------------------------
# Structural helpers (all linear)
# ---------------------------------------------------------------------------


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    return _linear_many(lambda arrays: np.concatenate(arrays, axis=axis), xs)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    return _linear_many(lambda arrays: np.stack(arrays, axis=axis), xs)


def flip(x: Tensor, axis: int) -> Tensor:
    return linear_map(lambda a, bias=None: np.flip(a, axis=axis), x)


def contiguous(x: Tensor) -> Tensor:
    """C-ordered copy of ``x``, primal and tangent alike; BLAS needs it for matmul."""

    return linear_map(lambda a, bias=None: np.ascontiguousarray(a), x)


def mean(x: Tensor, axis, keepdims: bool = False) -> Tensor:
    return linear_map(lambda a, bias=None: a.mean(axis=axis, keepdims=keepdims), x)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

Padding = Tuple[Tuple[int, int], ...]


def _as_tuple(value, rank: int) -> Tuple[int, ...]:
    if isinstance(value, int):
        return (value,) * rank
    return tuple(int(v) for v in value)


def _as_padding(value, rank: int) -> Padding:
    if isinstance(value, int):
        return ((value, value),) * rank
    out = []
    for item in value:
        if isinstance(item, int):
            out.append((item, item))
        else:
            out.append((int(item[0]), int(item[1])))
    return tuple(out)


def same_padding(kernel: int) -> Tuple[int, int]:
    """Shape-preserving padding for stride 1; even kernels pad one more after."""

    return ((kernel - 1) // 2, kernel // 2)


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one 1D or 2D convolution (``len(kernel)`` is the rank).

    Transposed specs store weights as (C_in, C_out/groups, *kernel) and crop
    ``padding`` from the full output, so ``padding`` inverts the forward map.
    """

    in_channels: int
    out_channels: int
    kernel: Tuple[int, ...]
    stride: Tuple[int, ...] = (1,)
    padding: Padding = ((0, 0),)
    groups: int = 1
    has_bias: bool = True
    transposed: bool = False

    @classmethod
    def make(
        cls,
        in_channels: int,
        out_channels: int,
        kernel,
        stride=1,
        padding=0,
        groups: int = 1,
        has_bias: bool = True,
        transposed: bool = False,
    ) -> "ConvSpec":
        kernel = _as_tuple(kernel, 1)
        rank = len(kernel)
        spec = cls(
            in_channels=int(in_channels),
            out_channels=int(out_channels),
            kernel=kernel,
            stride=_as_tuple(stride, rank),
            padding=_as_padding(padding, rank),
            groups=int(groups),
            has_bias=has_bias,
            transposed=transposed,
        )
        spec.check()
        return spec

    @property
    def rank(self) -> int:
        return len(self.kernel)

    def check(self) -> None:
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels {self.in_channels}->{self.out_channels} not divisible by groups {self.groups}"
            )
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ShapeError(f"invalid kernel {self.kernel} / stride {self.stride}")
        if len(self.stride) != self.rank or len(self.padding) != self.rank:
            raise ShapeError("kernel, stride and padding ranks differ")
        if any(p < 0 for pair in self.padding for p in pair):
            raise ShapeError(f"negative padding {self.padding}")

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        if self.transposed:
            return (self.in_channels, self.out_channels // self.groups, *self.kernel)
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    @property
    def fan_in(self) -> int:
        shape = self.weight_shape
        return int(np.prod(shape[1:]))

    @property
    def param_count(self) -> int:
        count = int(np.prod(self.weight_shape))
        return count + (self.out_channels if self.has_bias else 0)

    def out_spatial(self, spatial: Sequence[int]) -> Tuple[int, ...]:
        if len(spatial) != self.rank:
            raise ShapeError(f"expected {self.rank} spatial dims, got {tuple(spatial)}")
        out = []
        for n, k, s, (before, after) in zip(spatial, self.kernel, self.stride, self.padding):
            if self.transposed:
                size = (n - 1) * s + k - before - after
            else:
                size = (n + before + after - k) // s + 1
            if size <= 0:
                raise ShapeError(
                    f"convolution over {tuple(spatial)} with kernel {self.kernel} has empty output"
                )
            out.append(size)
        return tuple(out)

    def macs(self, spatial: Sequence[int]) -> int:
        """Multiply-accumulates for an input with the given spatial dims."""

        taps = int(np.prod(self.kernel))
        if self.transposed:
            elements = int(np.prod(spatial)) * self.in_channels
            return elements * (self.out_channels // self.groups) * taps
        elements = int(np.prod(self.out_spatial(spatial))) * self.out_channels
        return elements * (self.in_channels // self.groups) * taps


def _conv2d_array(x, weight, bias=None, *, stride, padding, groups):
    c_out, c_in_g, kh, kw = weight.shape
    sh, sw = stride
    (pt, pb), (pl, pr) = padding
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr)))
    h_out = (x.shape[1] - kh) // sh + 1
    w_out = (x.shape[2] - kw) // sw + 1
    g = groups
    xg = x.reshape(g, c_in_g, x.shape[1], x.shape[2])
    wg = weight.reshape(g, c_out // g, c_in_g, kh, kw)
    out = np.zeros((g, c_out // g, h_out, w_out), dtype=np.result_type(x, weight))
    for a in range(kh):
        for b in range(kw):
            window = xg[:, :, a : a + (h_out - 1) * sh + 1 : sh, b : b + (w_out - 1) * sw + 1 : sw]
            if g == 1:
                out[0] += np.tensordot(wg[0, :, :, a, b], window[0], axes=(1, 0))
            else:
                out += np.einsum("goi,gihw->gohw", wg[:, :, :, a, b], window)
    out = out.reshape(c_out, h_out, w_out)
    if bias is not None:
        out = out + bias[:, None, None]
    return out


def _conv_transpose2d_array(x, weight, bias=None, *, stride, padding, groups):
    c_in, c_out_g, kh, kw = weight.shape
    sh, sw = stride
    (pt, pb), (pl, pr) = padding
    h, w = x.shape[1], x.shape[2]
    g = groups
    full = np.zeros((g, c_out_g, (h - 1) * sh + kh, (w - 1) * sw + kw), dtype=np.result_type(x, weight))
    xg = x.reshape(g, c_in // g, h, w)
    wg = weight.reshape(g, c_in // g, c_out_g, kh, kw)
    for a in range(kh):
        for b in range(kw):
            if g == 1:
                contrib = np.tensordot(wg[0, :, :, a, b], xg[0], axes=(0, 0))[None]
            else:
                contrib = np.einsum("gio,gihw->gohw", wg[:, :, :, a, b], xg)
            full[:, :, a : a + (h - 1) * sh + 1 : sh, b : b + (w - 1) * sw + 1 : sw] += contrib
    full = full.reshape(g * c_out_g, full.shape[2], full.shape[3])
    out = full[:, pt : full.shape[1] - pb, pl : full.shape[2] - pr]
    if bias is not None:
        out = out + bias[:, None, None]
    return out


def _check_conv_args(x: Tensor, spec: ConvSpec, weight, bias, rank: int, op: str) -> None:
    if spec.rank != rank:
        raise ShapeError(f"{op} needs a rank-{rank} ConvSpec, got kernel {spec.kernel}")
    if x.ndim != rank + 1:
        raise ShapeError(f"{op} expects a {rank + 1}-D tensor, got shape {x.shape}")
    if x.shape[0] != spec.in_channels:
        raise ShapeError(f"{op} expects {spec.in_channels} input channels, got {x.shape[0]}")
    if tuple(weight.shape) != spec.weight_shape:
        raise ShapeError(f"{op} weight shape {tuple(weight.shape)} != {spec.weight_shape}")
    if bias is not None and tuple(bias.shape) != (spec.out_channels,):
        raise ShapeError(f"{op} bias shape {tuple(bias.shape)} != ({spec.out_channels},)")
    spec.out_spatial(x.shape[1:])


def conv2d(x: Tensor, spec: ConvSpec, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> Tensor:
    """Cross-correlation over (C, T, F); ``spec.transposed`` selects the transposed map."""

    _check_conv_args(x, spec, weight, bias, 2, "conv2d")
    fn = _conv_transpose2d_array if spec.transposed else _conv2d_array
    out = linear_map(fn, x, weight, bias=bias, stride=spec.stride, padding=spec.padding, groups=spec.groups)
    return _finite(out, "conv2d")


def _lift_1d(fn):
    def apply(x, weight, bias=None, *, stride, padding, groups):
        out = fn(
            x[:, :, None],
            weight[..., None],
            bias,
            stride=(stride[0], 1),
            padding=(padding[0], (0, 0)),
            groups=groups,
        )
        return out[:, :, 0]

    return apply


_conv1d_array = _lift_1d(_conv2d_array)
_conv_transpose1d_array = _lift_1d(_conv_transpose2d_array)


def conv1d(x: Tensor, spec: ConvSpec, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> Tensor:
    _check_conv_args(x, spec, weight, bias, 1, "conv1d")
    fn = _conv_transpose1d_array if spec.transposed else _conv1d_array
    out = linear_map(fn, x, weight, bias=bias, stride=spec.stride, padding=spec.padding, groups=spec.groups)
    return _finite(out, "conv1d")


def conv(x: Tensor, spec: ConvSpec, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> Tensor:
    return conv1d(x, spec, weight, bias) if spec.rank == 1 else conv2d(x, spec, weight, bias)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def _channel_view(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((-1,) + (1,) * (ndim - 1))


def _moments(x: np.ndarray, axis) -> Tuple[np.ndarray, np.ndarray]:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    if count > WIDE_REDUCTION:
        mu = x.mean(axis=axis, keepdims=True, dtype=np.float64)
        var = ((x - mu) ** 2).mean(axis=axis, keepdims=True, dtype=np.float64)
        return mu.astype(x.dtype), var.astype(x.dtype)
    mu = x.mean(axis=axis, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=axis, keepdims=True)
    return mu, var


def _check_affine(x: Tensor, gamma: np.ndarray, beta: np.ndarray, op: str) -> None:
    if gamma.shape != (x.shape[0],) or beta.shape != (x.shape[0],):
        raise ShapeError(f"{op} affine shapes {gamma.shape}/{beta.shape} do not match {x.shape[0]} channels")


def _normalize_dual(x: DualTensor, axis, gamma, beta, eps) -> DualTensor:
    p, t = x.primal, x.tangent
    mu, var = _moments(p, axis)
    scale = np.sqrt(var + eps)
    centered = p - mu
    dmu = t.mean(axis=axis, keepdims=True)
    dcentered = t - dmu
    dvar = 2.0 * (centered * dcentered).mean(axis=axis, keepdims=True)
    dscale = dvar / (2.0 * scale)
    g = _channel_view(gamma, p.ndim)
    out = g * centered / scale + _channel_view(beta, p.ndim)
    dout = g * (dcentered / scale - centered * dscale / scale**2)
    return DualTensor(out, dout)


@functools.singledispatch
def gln(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Global layer norm: statistics over every axis, per-channel affine."""

    _check_affine(x, gamma, beta, "gLN")
    mu, var = _moments(x, None)
    out = _channel_view(gamma, x.ndim) * (x - mu) / np.sqrt(var + eps) + _channel_view(beta, x.ndim)
    return _check_finite(out, "gLN")


@gln.register
def _(x: DualTensor, gamma: np.ndarray, beta: np.ndarray, eps: float = EPS) -> DualTensor:
    _check_affine(x, gamma, beta, "gLN")
    return _finite(_normalize_dual(x, None, gamma, beta, eps), "gLN")


@functools.singledispatch
def channel_ln(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Layer norm across channels at every remaining position."""

    _check_affine(x, gamma, beta, "channelLN")
    mu, var = _moments(x, 0)
    out = _channel_view(gamma, x.ndim) * (x - mu) / np.sqrt(var + eps) + _channel_view(beta, x.ndim)
    return _check_finite(out, "channelLN")


@channel_ln.register
def _(x: DualTensor, gamma: np.ndarray, beta: np.ndarray, eps: float = EPS) -> DualTensor:
    _check_affine(x, gamma, beta, "channelLN")
    return _finite(_normalize_dual(x, 0, gamma, beta, eps), "channelLN")


def batch_norm(
    x: Tensor,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = EPS,
) -> Tensor:
    """Inference-mode batch norm, a per-channel affine map."""

    _check_affine(x, gamma, beta, "batchnorm")
    scale = gamma / np.sqrt(running_var + eps)
    shift = beta - running_mean * scale

    def apply(a, bias=None):
        out = a * _channel_view(scale, a.ndim)
        if bias is not None:
            out = out + _channel_view(bias, a.ndim)
        return out

    return _finite(linear_map(apply, x, bias=shift), "batchnorm")


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def nearest_indices(source: int, target: int) -> np.ndarray:
    if target <= 0:
        raise ShapeError("interpolation target length must be positive")
    return (np.arange(target, dtype=np.int64) * source) // target


def interp_nearest(x: Tensor, sizes: Sequence[int]) -> Tensor:
    """Nearest-neighbour resize of the trailing ``len(sizes)`` axes."""

    sizes = tuple(sizes)
    first = x.ndim - len(sizes)

    def apply(a, bias=None):
        for offset, target in enumerate(sizes):
            axis = first + offset
            if a.shape[axis] != target:
                a = np.take(a, nearest_indices(a.shape[axis], target), axis=axis)
        return a

    if any(s <= 0 for s in sizes):
        raise ShapeError(f"interpolation target {sizes} must be positive")
    return linear_map(apply, x)


def pool_matrix(source: int, target: int, dtype=np.float32) -> np.ndarray:
    """(target, source) averaging matrix with floor/ceil bin edges."""

    if target <= 0 or source <= 0:
        raise ShapeError(f"cannot pool length {source} to {target}")
    matrix = np.zeros((target, source), dtype=dtype)
    for i in range(target):
        start = (i * source) // target
        stop = -((-(i + 1) * source) // target)
        matrix[i, start:stop] = 1.0 / (stop - start)
    return matrix


def adaptive_avg_pool(x: Tensor, sizes: Sequence[int]) -> Tensor:
    sizes = tuple(sizes)
    first = x.ndim - len(sizes)

    def apply(a, bias=None):
        for offset, target in enumerate(sizes):
            axis = first + offset
            if a.shape[axis] == target:
                continue
            matrix = pool_matrix(a.shape[axis], target, dtype=a.dtype)
            a = np.moveaxis(np.tensordot(matrix, np.moveaxis(a, axis, 0), axes=(1, 0)), 0, axis)
        return a

    return linear_map(apply, x)


def unfold_padding(length: int, kernel: int, stride: int) -> int:
    return (stride - (length - kernel) % stride) % stride


def unfold_length(length: int, kernel: int, stride: int) -> int:
    pad = unfold_padding(length, kernel, stride)
    if length + pad < kernel:
        raise ShapeError(f"unfold kernel {kernel} exceeds padded length {length + pad}")
    return (length + pad - kernel) // stride + 1


def unfold(x: Tensor, kernel: int, stride: int, axis: int) -> Tensor:
    """Slide a window along ``axis`` of (C, T, F) and stack it into channels.

    Output channel ``c * kernel + k`` holds tap ``k`` of input channel ``c``.
    """

    length = x.shape[axis]
    unfold_length(length, kernel, stride)
    pad = unfold_padding(length, kernel, stride)

    def apply(a, bias=None):
        if pad:
            widths = [(0, 0)] * a.ndim
            widths[axis] = (0, pad)
            a = np.pad(a, widths)
        windows = sliding_window_view(a, kernel, axis=axis)
        index = [slice(None)] * windows.ndim
        index[axis] = slice(None, None, stride)
        windows = windows[tuple(index)]
        moved = np.moveaxis(windows, -1, 1)
        return np.ascontiguousarray(moved).reshape((a.shape[0] * kernel,) + moved.shape[2:])

    return linear_map(apply, x)


def unfold_freq(x: Tensor, kernel: int, stride: int) -> Tensor:
    return unfold(x, kernel, stride, axis=x.ndim - 1)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


@dataclass
class KinkTape:
    """Records which side of the kink every ReLU/PReLU element sits on.

    In ``replay`` mode the recorded masks are reused in call order, so a
    finite-difference evaluation stays on the linear piece of the probe point.
    """

    mode: str = "record"
    masks: List[np.ndarray] = field(default_factory=list)
    threshold: float = 1e-4
    near: int = 0
    total: int = 0
    cursor: int = 0

    def positive(self, pre: np.ndarray) -> np.ndarray:
        if self.mode == "replay":
            mask = self.masks[self.cursor]
            self.cursor += 1
            return mask
        mask = pre >= 0
        self.masks.append(mask)
        self.near += int(np.count_nonzero(np.abs(pre) < self.threshold))
        self.total += int(pre.size)
        return mask

    def replay(self) -> "KinkTape":
        return KinkTape(mode="replay", masks=self.masks, threshold=self.threshold)

    @property
    def near_fraction(self) -> float:
        return self.near / self.total if self.total else 0.0


_TAPE: contextvars.ContextVar[Optional[KinkTape]] = contextvars.ContextVar("kink_tape", default=None)


@contextlib.contextmanager
def kink_tape(tape: KinkTape) -> Iterator[KinkTape]:
    token = _TAPE.set(tape)
    try:
        yield tape
    finally:
        _TAPE.reset(token)


def _positive(pre: np.ndarray) -> np.ndarray:
    tape = _TAPE.get()
    if tape is None:
        return pre >= 0
    return tape.positive(pre)


@functools.singledispatch
def relu(x: np.ndarray) -> np.ndarray:
    return np.where(_positive(x), x, 0).astype(x.dtype, copy=False)


@relu.register
def _(x: DualTensor) -> DualTensor:
    mask = _positive(x.primal)
    zero = x.primal.dtype.type(0)
    return DualTensor(np.where(mask, x.primal, zero), np.where(mask, x.tangent, zero))


@functools.singledispatch
def prelu(x: np.ndarray, slope: np.ndarray) -> np.ndarray:
    """Leaky ReLU with a learned slope per channel (axis 0)."""

    s = _channel_view(slope, x.ndim)
    return np.where(_positive(x), x, s * x).astype(x.dtype, copy=False)


@prelu.register
def _(x: DualTensor, slope: np.ndarray) -> DualTensor:
    s = _channel_view(slope, x.ndim)
    mask = _positive(x.primal)
    return DualTensor(np.where(mask, x.primal, s * x.primal), np.where(mask, x.tangent, s * x.tangent))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@functools.singledispatch
def sigmoid(x: np.ndarray) -> np.ndarray:
    return _sigmoid(x)


@sigmoid.register
def _(x: DualTensor) -> DualTensor:
    y = _sigmoid(x.primal)
    return DualTensor(y, y * (1.0 - y) * x.tangent)


@functools.singledispatch
def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


@tanh.register
def _(x: DualTensor) -> DualTensor:
    y = np.tanh(x.primal)
    return DualTensor(y, (1.0 - y * y) * x.tangent)


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = np.exp(x - x.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


@functools.singledispatch
def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return _check_finite(_softmax(x, axis), "softmax")


@softmax.register
def _(x: DualTensor, axis: int = -1) -> DualTensor:
    y = _softmax(x.primal, axis)
    dy = y * (x.tangent - (y * x.tangent).sum(axis=axis, keepdims=True))
    return _finite(DualTensor(y, dy), "softmax")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``numpy.matmul`` with the product rule when either side is dual."""

    if isinstance(a, DualTensor) or isinstance(b, DualTensor):
        pa, pb = primal(a), primal(b)
        out = np.matmul(pa, pb)
        dout = np.zeros_like(out)
        if isinstance(a, DualTensor):
            dout = dout + np.matmul(a.tangent, pb)
        if isinstance(b, DualTensor):
            dout = dout + np.matmul(pa, b.tangent)
        return _finite(DualTensor(out, dout), "matmul")
    return _check_finite(np.matmul(a, b), "matmul")

"""Waveform <-> TF-domain boundary: STFT/iSTFT, audio encoder and decoder."""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import List

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .errors import ShapeError
from .layers import ConvLayer
from .models import ComplexSpectrogram, ModelConfig, TensorSpec, Waveform
from .tensor import ConvSpec
from .weights import WeightStore

logger = logging.getLogger(__name__)


@functools.lru_cache(maxsize=8)
def hann(window: int) -> np.ndarray:
    """Periodic Hann window (read-only, shared between calls)."""

    n = np.arange(window, dtype=np.float64)
    values = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window)
    values.setflags(write=False)
    return values


def frame_count(length: int, hop: int) -> int:
    return length // hop + 1


def _out_dtype(x: np.ndarray):
    return x.dtype if x.dtype in (np.float32, np.float64) else np.float32


def _stft_planes(samples: np.ndarray, bias=None, *, window: int, hop: int) -> np.ndarray:
    half = window // 2
    padded = np.pad(samples.astype(np.float64, copy=False), half, mode="reflect")
    frames = sliding_window_view(padded, window)[::hop]
    spectrum = np.fft.rfft(frames * hann(window), axis=-1)
    return np.stack([spectrum.real, spectrum.imag]).astype(_out_dtype(samples))


def stft(x: Waveform | T.Tensor, window: int = 256, hop: int = 128) -> ComplexSpectrogram:
    """One-sided STFT with centred, reflect-padded Hann frames.

    ``T_a = L_a // hop + 1`` frames of ``window // 2 + 1`` bins.
    """

    samples = x.samples if isinstance(x, Waveform) else x
    if samples.ndim != 1:
        raise ShapeError(f"stft expects a mono 1-D signal, got shape {samples.shape}")
    if samples.shape[0] < 1:
        raise ShapeError("stft of an empty signal")
    planes = T.linear_map(_stft_planes, samples, window=window, hop=hop)
    return ComplexSpectrogram(real=planes[0], imag=planes[1], window=window, hop=hop)


def synthesis_length(frames: int, window: int, hop: int) -> int:
    """Longest output the overlap-add of ``frames`` frames covers."""

    return (frames - 1) * hop + window // 2


def _istft_planes(planes: np.ndarray, bias=None, *, window: int, hop: int, out_len: int) -> np.ndarray:
    frames = planes.shape[1]
    spectrum = planes[0].astype(np.float64) + 1j * planes[1].astype(np.float64)
    w = hann(window)
    chunks = np.fft.irfft(spectrum, n=window, axis=-1) * w
    total = (frames - 1) * hop + window
    signal = np.zeros(total, dtype=np.float64)
    norm = np.zeros(total, dtype=np.float64)
    for t in range(frames):
        start = t * hop
        signal[start : start + window] += chunks[t]
        norm[start : start + window] += w * w
    covered = norm > 1e-10
    signal[covered] /= norm[covered]
    half = window // 2
    return signal[half : half + out_len].astype(_out_dtype(planes))


def istft(spec: ComplexSpectrogram, out_len: int) -> T.Tensor:
    """Overlap-add synthesis normalised by the summed squared window."""

    if spec.real.shape != spec.imag.shape:
        raise ShapeError(f"real/imag shapes differ: {spec.real.shape} vs {spec.imag.shape}")
    if spec.bins != spec.window // 2 + 1:
        raise ShapeError(f"{spec.bins} bins do not match window {spec.window}")
    limit = synthesis_length(spec.frames, spec.window, spec.hop)
    if out_len < 1 or out_len > limit:
        raise ShapeError(f"cannot synthesise {out_len} samples from {spec.frames} frames (max {limit})")
    planes = T.stack([spec.real, spec.imag])
    return T.linear_map(_istft_planes, planes, window=spec.window, hop=spec.hop, out_len=out_len)


# ---------------------------------------------------------------------------
# Encoder / decoder
# ---------------------------------------------------------------------------


def encoder_spec(config: ModelConfig) -> ConvSpec:
    return ConvSpec.make(2, config.c_a, (3, 3), stride=1, padding=1)


def decoder_spec(config: ModelConfig) -> ConvSpec:
    return ConvSpec.make(config.c_a, 2, (3, 3), stride=1, padding=1, transposed=True)


def encoder_entries(config: ModelConfig, prefix: str = "encoder") -> List[TensorSpec]:
    return ConvLayer.entries(f"{prefix}.conv", encoder_spec(config), prefix)


def decoder_entries(config: ModelConfig, prefix: str = "decoder") -> List[TensorSpec]:
    return ConvLayer.entries(f"{prefix}.conv", decoder_spec(config), prefix)


@dataclass(frozen=True)
class EncoderWeights:
    conv: ConvLayer

    @classmethod
    def load(cls, store: WeightStore, config: ModelConfig, prefix: str = "encoder") -> "EncoderWeights":
        return cls(conv=ConvLayer.load(store, f"{prefix}.conv", encoder_spec(config)))


@dataclass(frozen=True)
class DecoderWeights:
    conv: ConvLayer

    @classmethod
    def load(cls, store: WeightStore, config: ModelConfig, prefix: str = "decoder") -> "DecoderWeights":
        return cls(conv=ConvLayer.load(store, f"{prefix}.conv", decoder_spec(config)))


def encode_audio(spec: ComplexSpectrogram, weights: EncoderWeights) -> T.Tensor:
    """Re || Im on a channel axis, then a 3x3 conv to C_a channels: (C_a, T_a, F)."""

    planes = T.stack([spec.real, spec.imag])
    return weights.conv(planes)


def decode_audio(z: T.Tensor, weights: DecoderWeights, out_len: int, window: int = 256, hop: int = 128) -> T.Tensor:
    """Transposed 3x3 conv to (real, imag) planes, then iSTFT trimmed to ``out_len``."""

    expected = frame_count(out_len, hop)
    if z.shape[1] != expected:
        raise ShapeError(f"{z.shape[1]} frames cannot decode to {out_len} samples (expected {expected} frames)")
    planes = weights.conv(z)
    spec = ComplexSpectrogram(real=planes[0], imag=planes[1], window=window, hop=hop)
    return istft(spec, out_len)

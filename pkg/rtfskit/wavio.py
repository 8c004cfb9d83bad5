"""WAV reading and writing (16 kHz mono, PCM_16 or FLOAT)."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import soundfile as sf

from .errors import FormatError
from .models import Waveform

logger = logging.getLogger(__name__)

SUPPORTED_SUBTYPES = ("PCM_16", "FLOAT")
# WAVEX is WAVE_FORMAT_EXTENSIBLE, the same RIFF layout with a longer fmt chunk.
SUPPORTED_CONTAINERS = ("WAV", "WAVEX")


def read_wav(path: str | Path, sample_rate: int = 16000) -> Waveform:
    """Read a mono WAV file; other rates or channel counts are rejected, never resampled."""

    path = Path(path)
    try:
        info = sf.info(str(path))
    except RuntimeError as exc:
        raise FormatError(f"Cannot open WAV file {path}: {exc}") from exc
    if info.format not in SUPPORTED_CONTAINERS:
        raise FormatError(f"{path} is a {info.format} file, expected WAV")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise FormatError(f"{path} uses sample format {info.subtype}; supported: {', '.join(SUPPORTED_SUBTYPES)}")
    if info.channels != 1:
        raise FormatError(f"{path} has {info.channels} channels; only mono input is supported")
    if info.samplerate != sample_rate:
        raise FormatError(f"{path} has sample rate {info.samplerate} Hz; expected {sample_rate} Hz")
    data, rate = sf.read(str(path), dtype="float32", always_2d=False)
    if data.size == 0:
        raise FormatError(f"{path} contains no samples")
    if not np.isfinite(data).all():
        raise FormatError(f"{path} contains non-finite samples")
    logger.debug("read %s: %d samples, %s", path, data.shape[0], info.subtype)
    return Waveform(samples=np.ascontiguousarray(data, dtype=np.float32), sample_rate=int(rate))


def write_wav(path: str | Path, wave: Waveform, subtype: str = "FLOAT") -> None:
    if subtype not in SUPPORTED_SUBTYPES:
        raise FormatError(f"Unsupported output sample format {subtype}")
    samples = np.asarray(wave.samples, dtype=np.float32)
    if samples.ndim != 1:
        raise FormatError(f"Only mono output is supported, got shape {samples.shape}")
    if subtype == "PCM_16":
        samples = np.clip(samples, -1.0, 1.0)
    sf.write(str(path), samples, wave.sample_rate, subtype=subtype, format="WAV")
    logger.debug("wrote %s: %d samples, %s", path, samples.shape[0], subtype)

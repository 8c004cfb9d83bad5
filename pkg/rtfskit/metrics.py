"""Separation quality: SI-SNR, SDR and their improvements over the mixture.

All energies are accumulated in float64.  A ratio whose error energy falls
below ``1e-12`` of the signal energy is reported as ``CAP_DB`` with the
``capped`` flag set instead of an infinity.
"""

from __future__ import annotations

from typing import Tuple, Union

import numpy as np

from .errors import FormatError, NumericalError
from .models import MetricResult, Waveform

CAP_DB = 120.0
CAP_RATIO = 1e-12

Signal = Union[Waveform, np.ndarray]


def _samples(x: Signal) -> np.ndarray:
    data = x.samples if isinstance(x, Waveform) else x
    return np.asarray(data, dtype=np.float64).reshape(-1)


def _pair(s: Signal, sh: Signal) -> Tuple[np.ndarray, np.ndarray]:
    ref, est = _samples(s), _samples(sh)
    if ref.shape != est.shape:
        raise FormatError(f"length mismatch: reference has {ref.size} samples, estimate {est.size}")
    if not (np.all(np.isfinite(ref)) and np.all(np.isfinite(est))):
        raise NumericalError("metric inputs contain NaN or Inf")
    if not np.any(ref):
        raise NumericalError("reference signal is all zeros")
    return ref, est


def _ratio_db(signal_energy: float, error_energy: float) -> Tuple[float, bool]:
    if error_energy < CAP_RATIO * signal_energy:
        return CAP_DB, True
    if signal_energy == 0.0:
        return -CAP_DB, False
    return min(CAP_DB, 10.0 * float(np.log10(signal_energy / error_energy))), False


def si_snr_capped(s: Signal, sh: Signal) -> Tuple[float, bool]:
    ref, est = _pair(s, sh)
    omega = np.dot(est, ref) / np.dot(ref, ref)
    target = omega * ref
    return _ratio_db(float(np.dot(target, target)), float(np.sum((est - target) ** 2)))


def si_snr(s: Signal, sh: Signal) -> float:
    """Scale-invariant SNR of estimate ``sh`` against reference ``s`` in dB."""

    return si_snr_capped(s, sh)[0]


def sdr_capped(s: Signal, sh: Signal) -> Tuple[float, bool]:
    ref, est = _pair(s, sh)
    return _ratio_db(float(np.dot(ref, ref)), float(np.sum((ref - est) ** 2)))


def sdr(s: Signal, sh: Signal) -> float:
    """Plain signal-to-error ratio in dB; not scale invariant."""

    return sdr_capped(s, sh)[0]


def improvements(x: Signal, s: Signal, sh: Signal) -> MetricResult:
    """Metrics of the estimate and their gain over using the mixture ``x`` as the estimate."""

    est_si, capped_si = si_snr_capped(s, sh)
    base_si, _ = si_snr_capped(s, x)
    est_sdr, capped_sdr = sdr_capped(s, sh)
    base_sdr, _ = sdr_capped(s, x)
    return MetricResult(
        si_snr=est_si,
        si_snri=est_si - base_si,
        sdr=est_sdr,
        sdri=est_sdr - base_sdr,
        capped=capped_si or capped_sdr,
    )

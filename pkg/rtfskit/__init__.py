"""rtfskit package initializer."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import ConfigError, FormatError, NumericalError, RtfsError, ShapeError, UsageError, WeightError
from .ledger import analyze, build_report, count_macs, count_params
from .metrics import improvements, sdr, si_snr
from .models import CostReport, MetricResult, ModelConfig, Waveform
from .numcheck import jvp, smoothness_audit
from .pipeline import ModelGraph, build, forward, forward_trace, init_random, load_weights, save_weights

__all__ = [
    "__version__",
    # 配置与数据
    "ModelConfig",
    "Waveform",
    "CostReport",
    "MetricResult",
    # 推理
    "ModelGraph",
    "build",
    "forward",
    "forward_trace",
    "init_random",
    "load_weights",
    "save_weights",
    # 分析
    "analyze",
    "build_report",
    "count_macs",
    "count_params",
    "si_snr",
    "sdr",
    "improvements",
    "jvp",
    "smoothness_audit",
    # 错误
    "RtfsError",
    "UsageError",
    "ConfigError",
    "FormatError",
    "WeightError",
    "ShapeError",
    "NumericalError",
]

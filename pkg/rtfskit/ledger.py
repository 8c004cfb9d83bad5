"""Static parameter and MAC accounting per module.

Parameters are counted from the tensor schema the graph loads, so the ledger
and the weight store can never disagree.  MACs cover weight-bearing ops and
the attention matmuls only; norms, activations, interpolation and the STFT
pair are free.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from . import pipeline
from .caf import caf_macs
from .errors import ConfigError
from .models import CostReport, CostRow, ModelConfig
from .rtfs_block import rtfs_macs
from .s3 import mask_spec
from .stft import decoder_spec, encoder_spec, frame_count
from .vp_block import vp_macs

logger = logging.getLogger(__name__)

VIDEO_FPS = 25
DEFAULT_SECONDS = 2.0

GraphLike = Union["pipeline.ModelGraph", ModelConfig]


def _config_of(graph: GraphLike) -> ModelConfig:
    return graph if isinstance(graph, ModelConfig) else graph.config


def video_frames(samples: int, sample_rate: int) -> int:
    """Lip frames accompanying ``samples`` of audio at 25 fps."""

    return max(1, round(samples * VIDEO_FPS / sample_rate))


def visual_frames(config: ModelConfig, samples: int) -> int:
    """Video frames for ``samples``, at least enough for every VP downsampling."""

    return max(video_frames(samples, config.sample_rate), 2**config.vp_q)


def count_params(graph: GraphLike) -> List[CostRow]:
    """Trainable parameters per ledger row, in graph order; shared weights counted once."""

    config = _config_of(graph)
    rows: "OrderedDict[str, CostRow]" = OrderedDict()
    for spec in pipeline.required_tensors(config):
        row = rows.setdefault(spec.row, CostRow(module=spec.row))
        if spec.trainable:
            row.params += spec.size
    return list(rows.values())


def count_macs(graph: GraphLike, samples: int) -> List[CostRow]:
    """MACs per ledger row for ``samples`` of input; every RTFS application accrues."""

    config = _config_of(graph)
    if samples < 1:
        raise ConfigError(f"input length must be positive, got {samples}")
    grid = (frame_count(samples, config.hop), config.freq_bins)
    frames_v = visual_frames(config, samples)

    macs: Dict[str, int] = {}
    applications: Dict[str, int] = {}

    def add(row: str, value: int) -> None:
        macs[row] = macs.get(row, 0) + int(value)
        applications[row] = applications.get(row, 0) + 1

    add("encoder", encoder_spec(config).macs(grid))
    block = rtfs_macs(config, grid)
    for prefix in pipeline.rtfs_prefixes(config):
        for part, value in block.items():
            add(f"{prefix}.{part}", value)
    for part, value in vp_macs(config, frames_v).items():
        add(f"vp.{part}", value)
    add("caf", caf_macs(config, grid, frames_v))
    add("mask", mask_spec(config).macs(grid))
    add("decoder", decoder_spec(config).macs(grid))

    return [CostRow(module=row, macs=macs[row], applications=applications[row]) for row in macs]


def build_report(graph: GraphLike, samples: int) -> CostReport:
    """Merge param and MAC rows in graph order into one report."""

    config = _config_of(graph)
    mac_rows = {row.module: row for row in count_macs(config, samples)}
    rows: List[CostRow] = []
    for row in count_params(config):
        mac_row = mac_rows.pop(row.module, None)
        if mac_row is not None:
            row.macs, row.applications = mac_row.macs, mac_row.applications
        rows.append(row)
    rows.extend(mac_rows.values())
    report = CostReport(rows=rows, input_samples=samples, sample_rate=config.sample_rate, config=config.to_dict())
    logger.debug("ledger: %d rows, %d params, %d MACs", len(rows), report.total_params, report.total_macs)
    return report


def analyze(config: ModelConfig, seconds: float = DEFAULT_SECONDS) -> CostReport:
    if seconds <= 0:
        raise ConfigError(f"--seconds must be positive, got {seconds}")
    return build_report(config.validate(), int(round(seconds * config.sample_rate)))


def sweep(config: ModelConfig, key: str, values: Sequence[object], seconds: float = DEFAULT_SECONDS) -> List[CostReport]:
    """One report per value of ``key``; the depth/compression trade-off table."""

    return [analyze(config.with_overrides({key: value}), seconds) for value in values]


def affine_fit(points: Iterable[tuple]) -> tuple:
    """Least-squares ``y = b + c x`` over (x, y) pairs; returns (b, c, max relative residual)."""

    xs, ys = (np.asarray(column, dtype=np.float64) for column in zip(*points))
    if xs.size < 2:
        raise ConfigError("an affine fit needs at least two points")
    slope, intercept = np.polyfit(xs, ys, 1)
    residual = float(np.max(np.abs(intercept + slope * xs - ys) / np.abs(ys)))
    return float(intercept), float(slope), residual

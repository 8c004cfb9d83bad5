"""Model assembly, weight initialisation/validation and the inference forward pass."""

from __future__ import annotations

import contextlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .caf import CafWeights, caf_forward
from .caf import entries as caf_entries
from .errors import FormatError, ShapeError, WeightError
from .models import ModelConfig, TensorSpec, Waveform
from .rtfs_block import RtfsWeights, rtfs_forward
from .rtfs_block import entries as rtfs_entries
from .s3 import MaskWeights, make_mask, mask_apply_baseline, s3_apply
from .s3 import entries as mask_entries
from .stft import DecoderWeights, EncoderWeights, decode_audio, decoder_entries, encode_audio, encoder_entries, stft
from .vp_block import VpWeights, vp_forward
from .vp_block import entries as vp_entries
from .weights import WeightStore, read_container, read_store, save_weights

logger = logging.getLogger(__name__)

__all__ = [
    "ModelGraph",
    "Trace",
    "build",
    "forward",
    "forward_trace",
    "init_random",
    "load_visual",
    "load_weights",
    "required_tensors",
    "run",
    "save_weights",
    "validate_store",
]

SLOPE_INIT = 0.25


def rtfs_prefixes(config: ModelConfig) -> List[str]:
    """Weight prefix used by each of the R block applications, AP block first."""

    if config.share_blocks:
        return ["rtfs"] * config.r
    return [f"rtfs.{j}" for j in range(config.r)]


def required_tensors(config: ModelConfig) -> List[TensorSpec]:
    """Every tensor the graph needs, in graph order; shared blocks appear once."""

    prefixes = rtfs_prefixes(config)
    out = encoder_entries(config) + rtfs_entries(config, prefixes[0]) + vp_entries(config) + caf_entries(config)
    seen = {prefixes[0]}
    for prefix in prefixes[1:]:
        if prefix not in seen:
            out += rtfs_entries(config, prefix)
            seen.add(prefix)
    return out + mask_entries(config) + decoder_entries(config)


@dataclass(frozen=True)
class ModelGraph:
    """Bound network: ``rtfs`` holds one entry per application (shared entries are the same object)."""

    config: ModelConfig
    store: WeightStore
    encoder: EncoderWeights
    rtfs: List[RtfsWeights]
    vp: VpWeights
    caf: CafWeights
    mask: MaskWeights
    decoder: DecoderWeights

    @property
    def required_tensors(self) -> List[TensorSpec]:
        return required_tensors(self.config)

    def astype(self, dtype) -> "ModelGraph":
        return build(self.config, self.store.astype(dtype))


def validate_store(store: WeightStore, config: ModelConfig) -> None:
    """Every required tensor present with its exact shape, and nothing else."""

    required = required_tensors(config)
    expected = {spec.name: spec.shape for spec in required}
    for spec in required:
        if spec.name not in store:
            raise WeightError(f"Missing tensor {spec.name!r} (expected shape {spec.shape})", spec.name)
        actual = tuple(store[spec.name].shape)
        if actual != spec.shape:
            raise WeightError(f"Tensor {spec.name!r} has shape {actual}, expected {spec.shape}", spec.name)
    for name in store:
        if name not in expected:
            raise WeightError(f"Unexpected tensor {name!r} for this configuration", name)


def build(config: ModelConfig, store: Optional[WeightStore] = None, seed: int = 0) -> ModelGraph:
    """Bind a store to the graph; without one, a seeded random store is created."""

    config.validate()
    if store is None:
        store = init_random(config, seed)
    validate_store(store, config)
    blocks: Dict[str, RtfsWeights] = {}
    for prefix in rtfs_prefixes(config):
        if prefix not in blocks:
            blocks[prefix] = RtfsWeights.load(store, config, prefix)
    graph = ModelGraph(
        config=config,
        store=store,
        encoder=EncoderWeights.load(store, config),
        rtfs=[blocks[prefix] for prefix in rtfs_prefixes(config)],
        vp=VpWeights.load(store, config),
        caf=CafWeights.load(store, config),
        mask=MaskWeights.load(store, config),
        decoder=DecoderWeights.load(store, config),
    )
    logger.debug("built graph: R=%d, %d distinct RTFS weight sets", config.r, len(blocks))
    return graph


def init_random(config: ModelConfig, seed: int) -> WeightStore:
    """Seeded init: weights/biases uniform in +-1/sqrt(fan_in), unit norms, PReLU slope 0.25."""

    config.validate()
    rng = np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for spec in required_tensors(config):
        if spec.role in ("weight", "bias"):
            bound = 1.0 / np.sqrt(max(spec.fan_in, 1))
            value = rng.uniform(-bound, bound, size=spec.shape)
        elif spec.role in ("gamma", "running_var"):
            value = np.ones(spec.shape)
        elif spec.role == "slope":
            value = np.full(spec.shape, SLOPE_INIT)
        else:
            value = np.zeros(spec.shape)
        tensors[spec.name] = value.astype(np.float32)
    return WeightStore(tensors=tensors, config=config)


def load_weights(path: str | Path, overrides: Optional[Dict[str, object]] = None) -> WeightStore:
    """Read a container and check it against the configuration it carries."""

    store = read_store(path)
    if store.config is None:
        raise FormatError(f"{path} has no embedded configuration")
    if overrides:
        store.config = store.config.with_overrides(overrides)
    validate_store(store, store.config)
    return store


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


@dataclass
class Trace:
    """Intermediate features and per-stage wall-clock seconds of one forward call."""

    tensors: Dict[str, T.Tensor] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    keep: bool = True

    @contextlib.contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        yield
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start

    def record(self, name: str, value: T.Tensor) -> T.Tensor:
        if self.keep:
            self.tensors[name] = value
        return value


def run(graph: ModelGraph, samples: T.Tensor, v0: T.Tensor, trace: Optional[Trace] = None) -> T.Tensor:
    """Forward pass on raw arrays (or dual tensors) of shape (L_a,) and (C_v, T_v)."""

    config = graph.config
    trace = trace or Trace(keep=False)
    if samples.ndim != 1:
        raise ShapeError(f"expected a mono waveform, got shape {samples.shape}")
    if v0.ndim != 2 or v0.shape[0] != config.c_v:
        raise ShapeError(f"visual features must be ({config.c_v}, T_v), got {v0.shape}")
    length = samples.shape[0]

    with trace.stage("encoder"):
        a0 = trace.record("a0", encode_audio(stft(samples, config.window, config.hop), graph.encoder))
    with trace.stage("rtfs"):
        a = trace.record("a1", rtfs_forward(a0, graph.rtfs[0]))
    with trace.stage("vp"):
        v1 = trace.record("v1", vp_forward(v0, graph.vp))
    with trace.stage("caf"):
        a = trace.record("a2", caf_forward(a, v1, graph.caf))
    for j in range(1, config.r):
        block_input = a if j == 1 else a + a0
        with trace.stage("rtfs"):
            a = trace.record(f"a{j + 2}", rtfs_forward(block_input, graph.rtfs[j]))
    with trace.stage("mask"):
        m = trace.record("m", make_mask(a, graph.mask))
        apply = s3_apply if config.mask_mode == "s3" else mask_apply_baseline
        z = trace.record("z", apply(m, a0))
    with trace.stage("decoder"):
        out = trace.record("out", decode_audio(z, graph.decoder, length, config.window, config.hop))
    return out


def forward(graph: ModelGraph, x: Waveform, v0: np.ndarray, trace: Optional[Trace] = None) -> Waveform:
    if x.sample_rate != graph.config.sample_rate:
        raise FormatError(f"input sample rate {x.sample_rate} Hz != {graph.config.sample_rate} Hz")
    samples = np.asarray(x.samples, dtype=np.float32)
    out = run(graph, samples, np.asarray(v0, dtype=np.float32), trace)
    logger.debug("forward: %d samples in, %d out", samples.shape[0], out.shape[0])
    return Waveform(samples=out, sample_rate=x.sample_rate)


def trainable_count(store: WeightStore, config: ModelConfig) -> int:
    names: Sequence[str] = [spec.name for spec in required_tensors(config) if spec.trainable]
    return store.element_count(names)


def forward_trace(graph: ModelGraph, x: Waveform, v0: np.ndarray) -> Tuple[Waveform, Trace]:
    """Forward pass that also returns every intermediate feature map and stage timings."""

    trace = Trace()
    return forward(graph, x, v0, trace), trace


VISUAL_TENSOR = "v0"


def load_visual(path: str | Path, config: ModelConfig) -> np.ndarray:
    """Read precomputed lip features stored as tensor ``v0`` of shape (C_v, T_v)."""

    tensors, _ = read_container(path)
    if VISUAL_TENSOR not in tensors:
        raise WeightError(f"Missing tensor {VISUAL_TENSOR!r} in visual container {path}", VISUAL_TENSOR)
    v0 = tensors[VISUAL_TENSOR]
    if v0.ndim != 2 or v0.shape[0] != config.c_v:
        raise ShapeError(f"visual tensor 'v0' has shape {v0.shape}, expected ({config.c_v}, T_v)")
    return v0.astype(np.float32, copy=False)

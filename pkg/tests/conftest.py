"""Shared fixtures: seeded generators and a small network that runs in milliseconds."""

from __future__ import annotations

import numpy as np
import pytest

from rtfskit.models import ModelConfig, Waveform
from rtfskit.pipeline import build, init_random
from rtfskit.weights import WeightStore

SMALL_LENGTH = 400
SMALL_FRAMES = 4

SMALL_OVERRIDES = {
    "window": 32,
    "hop": 16,
    "c_a": 8,
    "d": 4,
    "q": 2,
    "h_a": 4,
    "sru_layers": 1,
    "sru_bidirectional": True,
    "unfold_kernel": 2,
    "unfold_stride": 1,
    "attn_heads": 2,
    "attn_qk": 2,
    "tfar_kernel": 3,
    "caf_heads": 2,
    "c_v": 16,
    "vp_hidden": 8,
    "vp_q": 2,
    "vp_heads": 2,
    "vp_ffn": 8,
    "vp_kernel": 3,
    "r": 3,
}


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_config():
    return ModelConfig().with_overrides(SMALL_OVERRIDES)


@pytest.fixture
def small_store(small_config):
    return init_random(small_config, seed=0)


@pytest.fixture
def small_graph(small_config, small_store):
    return build(small_config, small_store)


@pytest.fixture
def small_inputs(small_config, rng):
    """A (mixture, visual features) pair sized for ``small_graph``."""

    x = Waveform((0.1 * rng.standard_normal(SMALL_LENGTH)).astype(np.float32), small_config.sample_rate)
    v0 = rng.standard_normal((small_config.c_v, SMALL_FRAMES)).astype(np.float32)
    return x, v0


def zeroed(store: WeightStore, *prefixes: str) -> WeightStore:
    """Copy of ``store`` with every tensor under one of ``prefixes`` set to zero."""

    tensors = {
        name: np.zeros_like(value) if name.startswith(prefixes) else value
        for name, value in store.tensors.items()
    }
    return WeightStore(tensors=tensors, config=store.config)


@pytest.fixture
def zero_prefixes():
    return zeroed

"""Forward-mode directional derivatives checked against central differences.

Every block of a graph is probed at the feature maps a random input produces
there.  The audit runs on a float64 copy of the weights.  ReLU/PReLU
activation patterns recorded at the probe point are replayed for the
finite-difference evaluations, and probe points with too many
pre-activations close to a kink are redrawn.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .caf import caf_forward
from .ledger import visual_frames
from .models import AuditReport, BlockAudit
from .pipeline import ModelGraph, Trace, run
from .rtfs_block import rtfs_forward
from .s3 import make_mask, mask_apply_baseline, s3_apply
from .stft import decode_audio, encode_audio, stft
from .tensor import DualTensor, KinkTape, kink_tape
from .vp_block import vp_forward

logger = logging.getLogger(__name__)

TOLERANCE = 1e-2
STEP = 1e-3
KINK_THRESHOLD = 1e-4
KINK_FRACTION_LIMIT = 1e-3
MAX_ATTEMPTS = 5
AUDIT_SAMPLES = 8000

ArrayOrTuple = Union[np.ndarray, Sequence[np.ndarray]]


def _as_tuple(x: ArrayOrTuple) -> Tuple[np.ndarray, ...]:
    if isinstance(x, (tuple, list)):
        return tuple(np.asarray(item) for item in x)
    return (np.asarray(x),)


def jvp(f: Callable[..., T.Tensor], x: ArrayOrTuple, d: ArrayOrTuple) -> Tuple[np.ndarray, np.ndarray]:
    """``(f(x), J_f(x) d)``; tuple ``x``/``d`` feed a multi-argument ``f``."""

    xs, ds = _as_tuple(x), _as_tuple(d)
    if len(xs) != len(ds):
        raise ValueError(f"{len(xs)} inputs but {len(ds)} directions")
    out = f(*(DualTensor(xi, di) for xi, di in zip(xs, ds)))
    return np.asarray(T.primal(out)), np.asarray(T.tangent(out))


def central_difference(
    f: Callable[..., T.Tensor], x: ArrayOrTuple, d: ArrayOrTuple, step: float = STEP, tape: KinkTape | None = None
) -> np.ndarray:
    xs, ds = _as_tuple(x), _as_tuple(d)

    def evaluate(sign: float) -> np.ndarray:
        args = [xi + sign * step * di for xi, di in zip(xs, ds)]
        if tape is None:
            return np.asarray(f(*args))
        with kink_tape(tape.replay()):
            return np.asarray(f(*args))

    return (evaluate(1.0) - evaluate(-1.0)) / (2.0 * step)


def relative_error(reference: np.ndarray, estimate: np.ndarray) -> float:
    return float(np.linalg.norm(estimate - reference) / (np.linalg.norm(reference) + 1e-8))


def _rms(x: np.ndarray) -> float:
    value = float(np.sqrt(np.mean(np.square(x))))
    return value if value > 0 else 1.0


def check_block(
    f: Callable[..., T.Tensor], inputs: Sequence[np.ndarray], rng: np.random.Generator
) -> Tuple[float, float]:
    """(relative error, near-kink fraction) at one probe point along a random direction."""

    direction = tuple(rng.standard_normal(x.shape) * _rms(x) for x in inputs)
    tape = KinkTape(threshold=KINK_THRESHOLD)
    with kink_tape(tape):
        _, exact = jvp(f, tuple(inputs), direction)
    if tape.near_fraction > KINK_FRACTION_LIMIT:
        return float("nan"), tape.near_fraction
    numeric = central_difference(f, tuple(inputs), direction, STEP, tape)
    return relative_error(exact, numeric), tape.near_fraction


@dataclass(frozen=True)
class BlockProbe:
    name: str
    fn: Callable[..., T.Tensor]
    inputs: Callable[[Trace, np.ndarray, np.ndarray], Tuple[np.ndarray, ...]]


def block_probes(graph: ModelGraph, samples: int) -> List[BlockProbe]:
    """Each auditable block in graph order, with where its inputs come from."""

    config = graph.config
    apply = s3_apply if config.mask_mode == "s3" else mask_apply_baseline
    last = f"a{config.r + 1}"

    def t(trace: Trace, name: str) -> np.ndarray:
        return np.asarray(trace.tensors[name])

    probes = [
        BlockProbe(
            "encoder",
            lambda x: encode_audio(stft(x, config.window, config.hop), graph.encoder),
            lambda trace, x, v: (x,),
        ),
        BlockProbe("rtfs", lambda a: rtfs_forward(a, graph.rtfs[0]), lambda trace, x, v: (t(trace, "a0"),)),
        BlockProbe("vp", lambda v: vp_forward(v, graph.vp), lambda trace, x, v: (v,)),
        BlockProbe(
            "caf", lambda a, v: caf_forward(a, v, graph.caf), lambda trace, x, v: (t(trace, "a1"), t(trace, "v1"))
        ),
    ]
    if not config.share_blocks and config.r > 1:
        # the first block after fusion has its own weights
        probes.append(
            BlockProbe("rtfs_post", lambda a: rtfs_forward(a, graph.rtfs[1]), lambda trace, x, v: (t(trace, "a2"),))
        )
    return probes + [
        BlockProbe("mask", lambda a: make_mask(a, graph.mask), lambda trace, x, v: (t(trace, last),)),
        BlockProbe("s3", apply, lambda trace, x, v: (t(trace, "m"), t(trace, "a0"))),
        BlockProbe(
            "decoder",
            lambda z: decode_audio(z, graph.decoder, samples, config.window, config.hop),
            lambda trace, x, v: (t(trace, "z"),),
        ),
        BlockProbe("end_to_end", lambda x, v: run(graph, x, v), lambda trace, x, v: (x, v)),
    ]


def probe_inputs(graph: ModelGraph, rng: np.random.Generator, samples: int) -> Tuple[np.ndarray, np.ndarray, Trace]:
    """A random mixture and visual map plus every intermediate they produce."""

    config = graph.config
    x = 0.1 * rng.standard_normal(samples)
    v0 = rng.standard_normal((config.c_v, visual_frames(config, samples)))
    trace = Trace()
    run(graph, x, v0, trace)
    return x, v0, trace


def smoothness_audit(graph: ModelGraph, seed: int, samples: int = AUDIT_SAMPLES) -> AuditReport:
    """Compare JVPs with central differences for every block and end to end."""

    graph64 = graph.astype(np.float64)
    rng = np.random.default_rng(seed)
    probes = block_probes(graph64, samples)
    results: Dict[str, BlockAudit] = {}
    pending = [probe.name for probe in probes]

    for attempt in range(1, MAX_ATTEMPTS + 1):
        if not pending:
            break
        x, v0, trace = probe_inputs(graph64, rng, samples)
        for probe in probes:
            if probe.name not in pending:
                continue
            error, fraction = check_block(probe.fn, probe.inputs(trace, x, v0), rng)
            kinked = np.isnan(error)
            results[probe.name] = BlockAudit(
                block=probe.name,
                rel_error=None if kinked else error,
                attempts=attempt,
                near_kink_fraction=fraction,
                tolerance=TOLERANCE,
            )
            if not kinked:
                pending.remove(probe.name)
            logger.debug("audit %s attempt %d: error=%s kink=%.2e", probe.name, attempt, error, fraction)

    report = AuditReport(seed=seed, blocks=[results[probe.name] for probe in probes])
    if not report.passed:
        logger.warning("smoothness audit (seed %d) failing blocks: %s", seed, ", ".join(report.failing()))
    return report

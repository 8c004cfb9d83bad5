"""自检模块: 运行时环境 + 数值不变量套件"""

from __future__ import annotations

import platform
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import psutil

from . import ledger
from .errors import RtfsError
from .fingerprint import array_fingerprint, transcript_fingerprint
from .models import ModelConfig, Waveform
from .numcheck import smoothness_audit
from .pipeline import build, forward, init_random
from .s3 import s3_apply
from .stft import istft, stft
from .ui import print_error, print_info, print_success, print_warning

ROUNDTRIP_SIGNALS = 20
ROUNDTRIP_SECONDS = 2.0
ROUNDTRIP_TOLERANCE = 1e-6
ORACLE_PAIRS = 10
ORACLE_TOLERANCE = 1e-6
POLAR_TOLERANCE = 1e-5
# Below this modulus the phase of a complex feature is undefined.
PHASE_FLOOR = 1e-6
SHAPE_LENGTHS = (16000, 32000, 48000)
ZERO_TOLERANCE = 1e-6

Check = Tuple[str, bool, str]


class SelfTest:
    """不变量检测器; ``checks`` 的文字记录只依赖于 seed 与配置"""

    def __init__(self, config: ModelConfig, seed: int = 0, lengths: Sequence[int] = SHAPE_LENGTHS):
        self.config = config
        self.seed = seed
        self.lengths = tuple(lengths)
        self.environment: List[Check] = []
        self.checks: List[Check] = []
        self._graph = None

    @property
    def graph(self):
        if self._graph is None:
            self._graph = build(self.config, init_random(self.config, self.seed))
        return self._graph

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])

    # ------------------------------------------------------------------
    # 环境 (不进入 transcript 摘要)
    # ------------------------------------------------------------------

    def check_environment(self) -> None:
        memory = psutil.virtual_memory()
        self.environment.append(("Python", True, f"{platform.python_version()} on {platform.system()}"))
        self.environment.append(("numpy", True, np.__version__))
        self.environment.append(
            ("memory", True, f"{memory.available / 1024 ** 3:.1f}GB free / {memory.total / 1024 ** 3:.1f}GB")
        )
        self.environment.append(("cpu", True, f"{psutil.cpu_count(logical=True)} logical cores"))

    # ------------------------------------------------------------------
    # 不变量
    # ------------------------------------------------------------------

    def check_stft_roundtrip(self) -> Check:
        rng = self.rng(1)
        length = int(ROUNDTRIP_SECONDS * self.config.sample_rate)
        worst = 0.0
        for _ in range(ROUNDTRIP_SIGNALS):
            x = rng.standard_normal(length)
            spec = stft(x, self.config.window, self.config.hop)
            y = istft(spec, length)
            worst = max(worst, float(np.sqrt(np.mean((x - y) ** 2))))
        return "stft round-trip", worst < ROUNDTRIP_TOLERANCE, f"max rms error {worst:.3e}"

    def check_s3_oracle(self) -> Check:
        rng = self.rng(2)
        worst = modulus = phase = 0.0
        for _ in range(ORACLE_PAIRS):
            m = rng.standard_normal((8, 5, 6))
            a = rng.standard_normal((8, 5, 6))
            fast = s3_apply(m, a)
            worst = max(worst, float(np.max(np.abs(fast - s3_reference(m, a)))))
            pair_modulus, pair_phase = s3_polar_deviation(m, a, fast)
            modulus, phase = max(modulus, pair_modulus), max(phase, pair_phase)
        ok = worst <= ORACLE_TOLERANCE and modulus <= POLAR_TOLERANCE and phase <= POLAR_TOLERANCE
        detail = f"max abs deviation {worst:.3e}, modulus {modulus:.3e}, phase {phase:.3e}"
        return "s3 oracle", ok, detail

    def check_shapes(self) -> Check:
        rng = self.rng(3)
        got = []
        for length in self.lengths:
            x, v0 = self._inputs(rng, length)
            got.append(forward(self.graph, x, v0).length)
        ok = got == list(self.lengths)
        return "output length", ok, ", ".join(f"{n}->{m}" for n, m in zip(self.lengths, got))

    def check_determinism(self) -> Check:
        x, v0 = self._inputs(self.rng(4), self.lengths[0])
        first = array_fingerprint(forward(self.graph, x, v0).samples)
        second = array_fingerprint(forward(self.graph, x, v0).samples)
        return "determinism", first == second, first[:16]

    def check_zero_input(self) -> Check:
        graph = build(self.config, self.graph.store.zero_biases())
        length = self.lengths[0]
        _, v0 = self._inputs(self.rng(5), length)
        out = forward(graph, Waveform(np.zeros(length, dtype=np.float32), self.config.sample_rate), v0)
        peak = float(np.max(np.abs(out.samples)))
        return "zero input", peak <= ZERO_TOLERANCE, f"peak {peak:.3e}"

    def check_audit(self) -> Check:
        report = smoothness_audit(self.graph, self.seed)
        errors = [block.rel_error for block in report.blocks if block.rel_error is not None]
        detail = f"max rel error {max(errors):.3e}" if errors else "no probe point"
        if not report.passed:
            detail += f"; failing: {', '.join(report.failing())}"
        return "smoothness audit", report.passed, detail

    def check_ledger(self) -> Check:
        base = ledger.analyze(self.config, 2.0)
        longer = ledger.analyze(self.config, 4.0)
        ratio = longer.total_macs / base.total_macs
        deeper = ledger.analyze(self.config.with_overrides({"r": self.config.r + 2}), 2.0)
        shared_ok = (deeper.total_params == base.total_params) == self.config.share_blocks
        ok = 1.9 <= ratio <= 2.1 and shared_ok
        return "ledger", ok, f"{base.total_params} params, {base.total_macs} MACs, 2x duration ratio {ratio:.3f}"

    def _inputs(self, rng: np.random.Generator, length: int) -> Tuple[Waveform, np.ndarray]:
        x = Waveform((0.1 * rng.standard_normal(length)).astype(np.float32), self.config.sample_rate)
        v0 = rng.standard_normal((self.config.c_v, ledger.visual_frames(self.config, length))).astype(np.float32)
        return x, v0

    # ------------------------------------------------------------------

    def suites(self) -> List[Callable[[], Check]]:
        return [
            self.check_stft_roundtrip,
            self.check_s3_oracle,
            self.check_shapes,
            self.check_determinism,
            self.check_zero_input,
            self.check_audit,
            self.check_ledger,
        ]

    def run_all_checks(self, include_environment: bool = True) -> bool:
        """运行所有检查; 任何一个失败则返回 False"""
        self.checks.clear()
        self.environment.clear()
        if include_environment:
            self.check_environment()
        for suite in self.suites():
            name = suite.__name__.replace("check_", "").replace("_", " ")
            try:
                self.checks.append(suite())
            except RtfsError as exc:
                self.checks.append((name, False, f"{type(exc).__name__}: {exc}"))
        return all(ok for _, ok, _ in self.checks)

    def transcript(self) -> List[str]:
        return [f"{name}: {'PASS' if ok else 'FAIL'} ({detail})" for name, ok, detail in self.checks]

    def digest(self) -> str:
        return transcript_fingerprint(self.transcript())

    def print_results(self) -> None:
        """打印检查结果"""
        for name, _, detail in self.environment:
            print_info(f"{name}: {detail}")
        for name, passed, detail in self.checks:
            if passed:
                print_success(f"{name}: {detail}")
            else:
                print_error(f"{name}: {detail}")
        summary = self.get_summary()
        if summary["failed"]:
            print_warning(f"{summary['failed']} of {summary['total']} checks failed")

    def get_summary(self) -> Dict[str, int]:
        """获取检查摘要"""
        passed = sum(1 for _, ok, _ in self.checks if ok)
        return {"total": len(self.checks), "passed": passed, "failed": len(self.checks) - passed}


def s3_reference(m: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Element-by-element complex product of the channel halves."""

    half = m.shape[0] // 2
    out = np.empty_like(a)
    for c in range(half):
        for t in range(m.shape[1]):
            for f in range(m.shape[2]):
                product = complex(m[c, t, f], m[c + half, t, f]) * complex(a[c, t, f], a[c + half, t, f])
                out[c, t, f] = product.real
                out[c + half, t, f] = product.imag
    return out


def s3_polar_deviation(m: np.ndarray, a: np.ndarray, out: np.ndarray) -> Tuple[float, float]:
    """Worst |out| vs |m|·|a| gap and worst phase gap from arg m + arg a, over the complex halves."""

    def complex_halves(x: np.ndarray) -> np.ndarray:
        half = x.shape[0] // 2
        return x[:half] + 1j * x[half:]

    mc, ac, oc = complex_halves(m), complex_halves(a), complex_halves(out)
    modulus = float(np.max(np.abs(np.abs(oc) - np.abs(mc) * np.abs(ac))))
    defined = (np.abs(mc) > PHASE_FLOOR) & (np.abs(ac) > PHASE_FLOOR) & (np.abs(oc) > PHASE_FLOOR)
    if not defined.any():
        return modulus, 0.0
    # angle(out * conj(m * a)) is the phase gap wrapped to (-pi, pi]
    gap = np.angle(oc[defined] * np.conj(mc[defined] * ac[defined]))
    return modulus, float(np.max(np.abs(gap)))

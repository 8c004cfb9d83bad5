"""CLI entrypoint for rtfskit."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List

from . import __version__
from .config_loader import PRESETS, load_model_config, parse_scalar
from .errors import NumericalError, RtfsError, UsageError
from .exporter import FORMATS, export_table, sweep_table
from .fingerprint import array_fingerprint, payload_fingerprint
from .ledger import analyze, sweep
from .metrics import improvements
from .models import ModelConfig
from .pipeline import Trace, build, forward, init_random, load_visual, load_weights, save_weights
from .selftest import SHAPE_LENGTHS, SelfTest
from .ui import emit, print_error, print_info, print_key_value, print_success, print_table, print_warning, setup_logging
from .wavio import read_wav, write_wav
from .weights import read_container

logger = logging.getLogger(__name__)

IO_EXIT_CODE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtfskit",
        description="RTFS audio-visual speech separation: inference, cost ledger and self-test",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    subparsers = parser.add_subparsers(dest="command")

    # separate 命令 - 推理
    separate_parser = subparsers.add_parser("separate", help="extract the target speaker from a mixture")
    separate_parser.add_argument("--mix", required=True, help="16 kHz mono mixture WAV")
    separate_parser.add_argument("--visual", required=True, help="container holding tensor 'v0' (C_v, T_v)")
    separate_parser.add_argument("--weights", required=True, help="weight container")
    separate_parser.add_argument("--out", required=True, help="output WAV path")
    _add_config_arguments(separate_parser, presets=False)
    separate_parser.add_argument("--subtype", choices=("FLOAT", "PCM_16"), default="FLOAT", help="output sample format")
    separate_parser.add_argument("--time", action="store_true", help="report wall-clock seconds per stage")
    separate_parser.set_defaults(func=_separate_command)

    # analyze 命令 - 参数量与 MACs
    analyze_parser = subparsers.add_parser("analyze", help="parameter and MAC ledger for a configuration")
    _add_config_arguments(analyze_parser)
    analyze_parser.add_argument("--seconds", type=float, default=2.0, help="input duration (default 2)")
    analyze_parser.add_argument("--format", choices=FORMATS, default="text")
    analyze_parser.add_argument("--sweep", metavar="KEY=V1,V2,...", help="one summary row per value of KEY")
    analyze_parser.add_argument("--out", help="also write the table to this file")
    analyze_parser.set_defaults(func=_analyze_command)

    # metrics 命令
    metrics_parser = subparsers.add_parser("metrics", help="SI-SNR(i) and SDR(i) of an estimate")
    metrics_parser.add_argument("--mix", required=True)
    metrics_parser.add_argument("--ref", required=True)
    metrics_parser.add_argument("--est", required=True)
    metrics_parser.set_defaults(func=_metrics_command)

    # selftest 命令
    selftest_parser = subparsers.add_parser("selftest", help="run the invariant suites")
    _add_config_arguments(selftest_parser)
    selftest_parser.add_argument("--seed", type=int, default=0)
    selftest_parser.add_argument(
        "--lengths", type=int, nargs="+", default=None, help="input lengths for the shape check"
    )
    selftest_parser.set_defaults(func=_selftest_command)

    # init-weights 命令
    init_parser = subparsers.add_parser("init-weights", help="write a seeded random weight container")
    _add_config_arguments(init_parser)
    init_parser.add_argument("--seed", type=int, default=0)
    init_parser.add_argument("--out", required=True)
    init_parser.set_defaults(func=_init_weights_command)

    # inspect 命令
    inspect_parser = subparsers.add_parser("inspect", help="list the tensors of a container")
    inspect_parser.add_argument("path")
    inspect_parser.add_argument("--format", choices=("text", "json"), default="text")
    inspect_parser.set_defaults(func=_inspect_command)

    return parser


def _add_config_arguments(parser: argparse.ArgumentParser, presets: bool = True) -> None:
    parser.add_argument("--config", help="JSON or YAML model configuration")
    if presets:
        parser.add_argument("--preset", choices=sorted(PRESETS), default="default")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable), e.g. --set R=12",
    )


def main(argv: List[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    setup_logging(args.verbose)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return UsageError.exit_code

    try:
        return args.func(args)
    except RtfsError as exc:
        print_error(str(exc))
        logger.debug("command failed", exc_info=True)
        return exc.exit_code
    except OSError as exc:
        print_error(f"{exc.filename or 'I/O'}: {exc.strerror or exc}")
        logger.debug("command failed", exc_info=True)
        return IO_EXIT_CODE


def _config_from_args(args: argparse.Namespace) -> ModelConfig:
    return load_model_config(
        args.config,
        _parse_key_value_pairs(args.overrides),
        getattr(args, "preset", "default"),
    )


def _separate_command(args: argparse.Namespace) -> int:
    store = load_weights(args.weights)
    config = store.config
    if args.config:
        config = load_model_config(args.config)
    overrides = _parse_key_value_pairs(args.overrides)
    if overrides:
        config = config.with_overrides(overrides)
    graph = build(config, store)

    mix = read_wav(args.mix, config.sample_rate)
    v0 = load_visual(args.visual, config)
    trace = Trace(keep=False)
    estimate = forward(graph, mix, v0, trace)
    write_wav(args.out, estimate, subtype=args.subtype)

    digest = array_fingerprint(estimate.samples)
    logger.info("output sha256 %s", digest)
    if args.time:
        for stage, seconds in trace.timings.items():
            print_info(f"{stage}: {seconds:.3f} s")
        print_info(f"total: {sum(trace.timings.values()):.3f} s")
    print_success(f"wrote {args.out} ({estimate.length} samples, sha256 {digest[:16]})")
    return 0


def _analyze_command(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if args.sweep:
        key, raw_values = _split_pair(args.sweep)
        values = [parse_scalar(item.strip()) for item in raw_values.split(",") if item.strip()]
        table = sweep_table(key, values, sweep(config, key, values, args.seconds), args.format)
        if args.out:
            Path(args.out).write_text(table, encoding="utf-8")
    else:
        table = export_table(analyze(config, args.seconds), args.format, args.out)
    emit(table)
    return 0


def _metrics_command(args: argparse.Namespace) -> int:
    mix, ref, est = (read_wav(path) for path in (args.mix, args.ref, args.est))
    result = improvements(mix, ref, est)
    if result.capped:
        print_warning("error energy below resolution; values capped at +120 dB")
    emit(json.dumps(result.to_dict()))
    return 0


def _selftest_command(args: argparse.Namespace) -> int:
    tester = SelfTest(_config_from_args(args), args.seed, args.lengths or SHAPE_LENGTHS)
    passed = tester.run_all_checks()
    tester.print_results()
    emit("\n".join(tester.transcript() + [f"digest: {tester.digest()}"]))
    return 0 if passed else NumericalError.exit_code


def _init_weights_command(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    store = init_random(config, args.seed)
    save_weights(store, args.out)
    logger.info("config sha256 %s", payload_fingerprint(config.to_dict()))
    print_success(f"wrote {len(store)} tensors ({store.element_count()} values) to {args.out}")
    return 0


def _inspect_command(args: argparse.Namespace) -> int:
    tensors, config = read_container(args.path)
    if args.format == "json":
        payload: Dict[str, Any] = {
            "config": config,
            "tensors": [
                {"name": name, "dtype": str(value.dtype), "shape": list(value.shape)}
                for name, value in tensors.items()
            ],
        }
        emit(json.dumps(payload, indent=2))
        return 0
    rows = [
        [name, str(value.dtype), "x".join(map(str, value.shape)) or "scalar", str(value.size)]
        for name, value in tensors.items()
    ]
    print_table(Path(args.path).name, ["Tensor", "dtype", "shape", "values"], rows)
    for key, value in sorted((config or {}).items()):
        print_key_value(key, value)
    total = sum(int(value.size) for value in tensors.values())
    print_info(f"{len(tensors)} tensors, {total} values; config {'present' if config else 'absent'}")
    return 0


def _parse_key_value_pairs(pairs: Iterable[str] | None) -> Dict[str, Any]:
    result: Dict[str, Any] = {}
    if not pairs:
        return result
    for item in pairs:
        key, value = _split_pair(item)
        result[key.strip().lower()] = parse_scalar(value.strip())
    return result


def _split_pair(payload: str) -> tuple[str, str]:
    if "=" not in payload:
        raise UsageError(f"Expected key=value format, got: {payload}")
    key, value = payload.split("=", 1)
    if not key.strip():
        raise UsageError(f"Invalid key for pair: {payload}")
    return key, value


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

#!/usr/bin/env python3
"""
Command-line interface for the hex-resnet engine.

Every subcommand echoes its resolved configuration first. Exit status is 0 on
success, 1 on runtime errors and failed verifications, 2 on usage errors.
"""

import argparse
import logging
import sys
import traceback
from pathlib import Path
from typing import Any, List, Mapping, Optional

from .bench import bench
from .checkpoint import load_checkpoint
from .cifar import load_batches
from .config import ArchConfig, DataConfig, EngineSettings, ShortcutMode, TrainConfig, build_config
from .errors import ConfigError, HexResNetError, VerificationError
from .logging_config import setup_logging
from .metrics import compare_histories, load_history, read_json, summarize
from .resnet import build_network, count_parameters, expected_parameter_count, parameter_report
from .tensor import make_rng, resolve_dtype
from .trainer import RUN_CONFIG_FILE, evaluate, prepare_data, train
from .verify import gradcheck, verify_hexconv

logger = logging.getLogger(__name__)

DESK_EPOCHS = 5
DESK_TRAIN_SUBSET = 5_000


def echo_config(command: str, values: Mapping[str, Any]) -> None:
    print(f"# {command} configuration")
    for key, value in values.items():
        if isinstance(value, Mapping):
            for sub_key, sub_value in value.items():
                print(f"{key}.{sub_key} = {_plain(sub_value)}")
        else:
            print(f"{key} = {_plain(value)}")


def _plain(value: Any) -> Any:
    return value.value if isinstance(value, ShortcutMode) else value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be a non-negative integer, got {text}")
    return value


def _settings(args) -> EngineSettings:
    return build_config(
        EngineSettings,
        data_dir=getattr(args, "data_dir", None),
        output_dir=getattr(args, "output_dir", None),
        precision=getattr(args, "precision", None),
        num_workers=getattr(args, "workers", None),
        log_level=args.log_level,
        log_file=args.log_file,
    )


def train_command(args) -> int:
    settings = _settings(args)
    resume = load_checkpoint(args.resume) if args.resume else None
    arch = resume.arch if resume else build_config(ArchConfig, depth=args.depth, shortcut_mode=args.shortcut)
    if resume:
        # a resumed run keeps its stored hyperparameters; only the epoch target may move
        train_cfg = resume.train
        if args.epochs is not None:
            train_cfg = build_config(TrainConfig, **{**train_cfg.model_dump(), "epochs": args.epochs})
    elif args.full:
        if args.train_subset is not None or args.validation_size is not None:
            raise ConfigError("--full trains on the 45k/5k split; drop --train-subset and --validation-size")
        train_cfg = build_config(
            TrainConfig, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed
        )
    else:
        train_cfg = build_config(
            TrainConfig,
            epochs=args.epochs if args.epochs is not None else DESK_EPOCHS,
            batch_size=args.batch_size,
            lr=args.lr,
            seed=args.seed,
            train_subset=args.train_subset if args.train_subset is not None else DESK_TRAIN_SUBSET,
            validation_size=args.validation_size,
        )
    data_cfg = DataConfig.from_env(settings.data_dir)
    workers = settings.num_workers if data_cfg.prefetch else 0
    echo_config(
        "train",
        {
            "arch": arch.model_dump(),
            "train": train_cfg.model_dump(),
            "data_dir": str(data_cfg.data_dir),
            "output_dir": settings.output_dir,
            "precision": settings.precision,
            "workers": workers,
            "resume": args.resume,
        },
    )

    data = prepare_data(load_batches(data_cfg.data_dir), train_cfg, data_cfg)
    model = build_network(arch, make_rng(train_cfg.seed), dtype=resolve_dtype(settings.precision))
    result = train(model, arch, data, train_cfg, output_dir=settings.output_dir, resume_from=resume, workers=workers)

    final = result.records[-1]
    print(f"epochs: {final.epoch}")
    print(f"iterations: {final.iteration}")
    print(f"val_loss: {final.val_loss:.4f}")
    print(f"val_top1: {final.val_top1:.2f}")
    print(f"val_top5: {final.val_top5:.2f}")
    print(f"checkpoint: {Path(settings.output_dir) / 'checkpoint.bin'}")
    return 0


def eval_command(args) -> int:
    settings = _settings(args)
    ckpt = load_checkpoint(args.checkpoint)
    data_cfg = DataConfig.from_env(settings.data_dir)
    echo_config(
        "eval",
        {
            "checkpoint": args.checkpoint,
            "arch": ckpt.arch.model_dump(),
            "split": args.split,
            "data_dir": str(data_cfg.data_dir),
            "precision": settings.precision,
        },
    )
    model = build_network(ckpt.arch, make_rng(ckpt.train.seed), dtype=resolve_dtype(settings.precision))
    ckpt.restore(model)
    data = prepare_data(load_batches(data_cfg.data_dir), ckpt.train, data_cfg)
    split = data.test if args.split == "test" else data.validation
    result = evaluate(model, split.images, split.labels, data.means, data.stds)
    print(f"samples: {result.count}")
    print(f"loss: {result.loss:.4f}")
    print(f"top1: {result.top1:.2f}")
    print(f"top5: {result.top5:.2f}")
    return 0


def verify_hexconv_command(args) -> int:
    echo_config("verify-hexconv", {"cases": args.cases, "seed": args.seed, "tolerance": args.tolerance})
    report = verify_hexconv(cases=args.cases, seed=args.seed, tolerance=args.tolerance)
    print(f"cases: {report.cases}")
    print(f"max_deviation: {report.max_deviation:.3e}")
    print(f"worst_case (N, C_in, C_out, H, W): {report.worst_case}")
    if not report.passed:
        raise VerificationError(f"max deviation {report.max_deviation:.3e} is not below {args.tolerance:g}")
    print("PASS")
    return 0


def gradcheck_command(args) -> int:
    echo_config("gradcheck", {"seed": args.seed, "depth": args.depth, "precision": "float64"})
    report = gradcheck(seed=args.seed, depth=args.depth)
    for name, err in report.layer_errors.items():
        print(f"{name:<24} {err:.3e}")
    print(f"{'model':<24} {report.model_error:.3e}")
    if not report.passed:
        raise VerificationError(f"gradient check failed for: {', '.join(report.failures)}")
    print("PASS")
    return 0


def count_params_command(args) -> int:
    arch = build_config(ArchConfig, depth=args.depth, shortcut_mode=args.shortcut)
    echo_config("count-params", {"arch": arch.model_dump(), "compare": args.compare})
    count = count_parameters(build_network(arch, make_rng(0)))
    if count != expected_parameter_count(arch):
        raise VerificationError(f"built network has {count} parameters, closed form gives {expected_parameter_count(arch)}")
    print(count)
    if args.compare:
        for line in parameter_report(arch.depth).lines():
            print(line)
    return 0


def bench_command(args) -> int:
    echo_config(
        "bench",
        {
            "in_channels": args.in_channels,
            "out_channels": args.out_channels,
            "spatial": args.spatial,
            "batch": args.batch,
            "repeats": args.repeats,
            "seed": args.seed,
        },
    )
    report = bench(
        in_channels=args.in_channels,
        out_channels=args.out_channels,
        spatial=args.spatial,
        repeats=args.repeats,
        batch=args.batch,
        seed=args.seed,
    )
    for line in report.lines():
        print(line)
    return 0


def _run_label(metrics_path: Path) -> str:
    """``<shortcut>-<depth>`` from the run's stored configuration, else the run directory name."""
    config = read_json(metrics_path.parent / RUN_CONFIG_FILE)
    if config and "arch" in config:
        arch = config["arch"]
        return f"{arch.get('shortcut_mode')}-{arch.get('depth')}"
    return metrics_path.parent.name or metrics_path.stem


def report_command(args) -> int:
    echo_config("report", {"metrics": ", ".join(args.metrics)})
    histories = {}
    for path in map(Path, args.metrics):
        label = base = _run_label(path)
        suffix = 2
        while label in histories:
            label = f"{base}#{suffix}"
            suffix += 1
        histories[label] = load_history(path)

    for label, history in histories.items():
        print(f"## {label}")
        for key, value in summarize(history).items():
            print(f"{key}: {value}")
    table = compare_histories(histories)
    print("## per-epoch validation")
    print(table.to_string(float_format=lambda v: f"{v:.3f}") if not table.empty else "(no records)")
    return 0


def _add_arch_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--depth", type=_positive_int, default=20, help="network depth 6n+2 (default: 20)")
    p.add_argument(
        "--shortcut",
        choices=[m.value for m in ShortcutMode],
        default=ShortcutMode.HEX_PROJECTION.value,
        help="shortcut of the dimension-changing blocks (default: hex_projection)",
    )


def _add_runtime_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", help="directory with the CIFAR-10 binary batches (env: HEXRESNET_DATA_DIR)")
    p.add_argument("--output-dir", help="metrics and checkpoint directory (env: HEXRESNET_OUTPUT_DIR)")
    p.add_argument("--precision", choices=["float32", "float64"], help="compute precision (env: HEXRESNET_PRECISION)")


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hex-resnet",
        description="Hexagonal-convolution ResNets on CIFAR-10",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  hex-resnet count-params --depth 20 --shortcut projection_1x1 --compare
  hex-resnet verify-hexconv --cases 200 --seed 7
  hex-resnet gradcheck
  hex-resnet train --data-dir ./data/cifar-10-batches-bin --epochs 5 --train-subset 5000
  hex-resnet eval --checkpoint ./runs/checkpoint.bin
  hex-resnet bench --in-channels 16 --out-channels 32 --spatial 32 --repeats 100
        """,
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="detailed log lines and tracebacks")
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        default="INFO",
        help="log level (default: INFO)",
    )
    parser.add_argument("--log-file", help="also log to this file")

    subparsers = parser.add_subparsers(dest="command", help="available commands")

    p = subparsers.add_parser("train", help="train a network")
    _add_arch_flags(p)
    _add_runtime_flags(p)
    p.add_argument("--epochs", type=_non_negative_int, help=f"epochs (default: {DESK_EPOCHS}, 182 with --full)")
    p.add_argument("--batch-size", type=_positive_int, default=128)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=_non_negative_int, default=0)
    p.add_argument("--train-subset", type=_positive_int, help=f"training images used (default: {DESK_TRAIN_SUBSET})")
    p.add_argument("--validation-size", type=_positive_int, help="held-out training images (default: 5000)")
    p.add_argument("--workers", type=_non_negative_int, help="prefetch threads (env: HEXRESNET_NUM_WORKERS)")
    p.add_argument("--resume", help="continue from this checkpoint with its stored hyperparameters (--epochs may extend the run)")
    p.add_argument("--full", action="store_true", help="full protocol: 45k/5k split, 182 epochs")
    p.set_defaults(func=train_command)

    p = subparsers.add_parser("eval", help="evaluate a checkpoint")
    _add_runtime_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["test", "validation"], default="test")
    p.set_defaults(func=eval_command)

    p = subparsers.add_parser("verify-hexconv", help="compare the fast hex convolution with the direct gather")
    p.add_argument("--cases", type=_positive_int, default=200)
    p.add_argument("--seed", type=_non_negative_int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=verify_hexconv_command)

    p = subparsers.add_parser("gradcheck", help="finite-difference gradient checks in float64")
    p.add_argument("--seed", type=_non_negative_int, default=0)
    p.add_argument("--depth", type=_positive_int, default=8)
    p.set_defaults(func=gradcheck_command)

    p = subparsers.add_parser("count-params", help="count trainable parameters")
    _add_arch_flags(p)
    p.add_argument("--compare", action="store_true", help="also print the published reference counts")
    p.set_defaults(func=count_params_command)

    p = subparsers.add_parser("bench", help="time hex convolution against a square 3x3 convolution")
    p.add_argument("--in-channels", type=int, default=16)
    p.add_argument("--out-channels", type=int, default=32)
    p.add_argument("--spatial", type=int, default=32)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--seed", type=_non_negative_int, default=0)
    p.set_defaults(func=bench_command)

    p = subparsers.add_parser("report", help="summarize metrics streams and compare runs per epoch")
    p.add_argument("--metrics", required=True, nargs="+", help="metrics.jsonl streams written by train, one per run")
    p.set_defaults(func=report_command)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 2

    setup_logging(log_level=args.log_level, log_file=args.log_file, detailed=args.verbose)

    try:
        return args.func(args)
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (HexResNetError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"Error: {e}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())

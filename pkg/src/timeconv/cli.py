"""Command-line entry point: ``timeconv <subcommand> ...``.

Every subcommand accepts ``--seed`` and writes a JSON report (``--report``;
each subcommand has a default next to its main output). Exit status is 0 on
success, 1 on a handled failure and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .architectures import ArchId, build_network, count_params
from .bench import bench_inference, stream_simulate, threaded_source
from .checkpoint import load_checkpoint, load_checkpoint_with_meta, save_checkpoint
from .container import FormatError
from .data import DatasetArchive, WindowSpec, build_archive, generate_synthetic, load_manifest
from .gradcheck import CASES, run_grad_checks
from .tensor import NumericError
from .trainer import AugmentConfig, TrainConfig, evaluate, split_indices, train, write_metrics

log = logging.getLogger("timeconv")


def _write_report(report: dict, path) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")
        log.info("report written to %s", path)


def cmd_synth(args) -> dict:
    archive = generate_synthetic(args.per_class, args.seed, noise=args.noise)
    archive.save(args.out)
    return {"command": "synth", "out": args.out, "seed": args.seed, **archive.stats()}


def cmd_build_dataset(args) -> dict:
    overrides = {}
    if args.stride is not None:
        overrides["stride"] = args.stride
    if args.skip_head is not None:
        overrides["skip_head"] = args.skip_head
    if args.width is not None:
        overrides["width"] = args.width
    archive, stats = build_archive(load_manifest(args.manifest), args.out, overrides or None, args.workers)
    return {"command": "build-dataset", "out": args.out, "seed": args.seed, **stats}


def cmd_train(args) -> dict:
    archive = DatasetArchive.load(args.data)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        augment=AugmentConfig.off() if args.no_augment else AugmentConfig(),
        seed=args.seed,
    )

    def progress(record):
        log.info("epoch %d lr=%.2g loss=%.4f acc=%.3f val_loss=%.4f val_acc=%.3f", record.epoch, record.lr,
                 record.train_loss, record.train_acc, record.val_loss, record.val_acc)

    result = train(args.arch, archive, config, on_epoch=progress)
    save_checkpoint(result.network, args.out, extra={"seed": args.seed, "best_epoch": result.best_epoch,
                                                     "ratios": list(config.ratios)})
    metrics_path = args.metrics or f"{args.out}.metrics.tsv"
    write_metrics(metrics_path, result.metrics)
    last = result.metrics[-1]
    return {"command": "train", "arch": str(args.arch), "out": args.out, "metrics": metrics_path,
            "seed": args.seed, "best_epoch": result.best_epoch, "epochs": args.epochs,
            "final_train_loss": last.train_loss, "final_train_acc": last.train_acc,
            "params": count_params(result.network)}


def cmd_eval(args) -> dict:
    net, extra = load_checkpoint_with_meta(args.model)
    archive = DatasetArchive.load(args.data)
    seed = args.seed if args.seed is not None else extra.get("seed", 0)
    ratios = tuple(extra.get("ratios", (0.7, 0.1, 0.2)))
    idx = split_indices(archive, args.split, ratios, seed)
    result = evaluate(net, archive, idx)
    print(f"{net.arch_id} {args.split}: accuracy {result.accuracy:.4f} on {len(idx)} samples")
    for name, row in zip(result.label_names, result.confusion):
        print(f"  {name:>9} " + " ".join(f"{v:5d}" for v in row))
    return {"command": "eval", "arch": net.arch_id.value, "split": args.split, "seed": seed, **result.to_dict()}


def _bench_network(args):
    if args.model:
        return load_checkpoint(args.model)
    return build_network(args.arch, args.seed)


def cmd_bench(args) -> dict:
    net = _bench_network(args)
    report = bench_inference(net, args.runs, args.warmup, seed=args.seed)
    print(f"{report.arch_id}: mean {report.mean_ms:.3f} ms, median {report.median_ms:.3f} ms, "
          f"p95 {report.p95_ms:.3f} ms over {report.runs} runs")
    return {"command": "bench", "seed": args.seed, **report.to_dict()}


def _stream_frames(args):
    if args.frames:
        from .data.pipeline import load_frames

        return list(load_frames(args.frames))
    clips = generate_synthetic(1, args.seed).stacks
    seq = np.concatenate(list(clips))
    reps = -(-args.synthetic_frames // len(seq))
    return list((np.tile(seq, (reps, 1, 1))[: args.synthetic_frames] * 255).round().astype(np.uint8))


def cmd_stream(args) -> dict:
    net = _bench_network(args)
    frames = _stream_frames(args)
    window = WindowSpec(args.width, args.stride, args.skip_head)
    report = stream_simulate(threaded_source(frames), net, window, args.fps)
    print(f"{report.arch_id}: {len(report.predictions)} predictions over {report.frames} frames, "
          f"{report.fps:.1f} fps")
    return {"command": "stream", "seed": args.seed, **report.to_dict()}


def cmd_grad_check(args) -> dict:
    names = list(CASES) if args.layers == ["all"] else args.layers
    unknown = set(names) - set(CASES)
    if unknown:
        raise ValueError(f"unknown layer types: {sorted(unknown)}")
    worst = run_grad_checks(names, range(args.seed, args.seed + args.seeds), args.eps)
    ok = all(v < args.tolerance for v in worst.values())
    for name, err in worst.items():
        print(f"{'PASS' if err < args.tolerance else 'FAIL'} {name}: max relative error {err:.3e}")
    return {"command": "grad-check", "seed": args.seed, "eps": args.eps, "tolerance": args.tolerance,
            "max_rel_error": worst, "passed": ok}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timeconv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--report", help="JSON report path ('-' for stdout)")
        return p

    p = add("synth", cmd_synth, "generate the synthetic paired-trajectory archive")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True)

    p = add("build-dataset", cmd_build_dataset, "build a TCVX archive from a clip manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--width", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--skip-head", type=int)

    p = add("train", cmd_train, "train an architecture on an archive")
    p.add_argument("--arch", type=ArchId, choices=list(ArchId), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="metrics TSV path (default: <out>.metrics.tsv)")

    p = add("eval", cmd_eval, "top-1 accuracy and confusion matrix on a split")
    p.set_defaults(seed=None)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")

    for name, func, help_ in (("bench", cmd_bench, "batch-1 inference latency"),
                              ("stream", cmd_stream, "ring-buffer streaming simulation")):
        p = add(name, func, help_)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--model")
        src.add_argument("--arch", type=ArchId, choices=list(ArchId), help="benchmark a freshly initialised network")
        if name == "bench":
            p.add_argument("--runs", type=int, default=1000)
            p.add_argument("--warmup", type=int, default=50)
        else:
            frames = p.add_mutually_exclusive_group()
            frames.add_argument("--frames", help=".npy (T, H, W) or a directory of images")
            frames.add_argument("--synthetic-frames", type=int, default=100)
            p.add_argument("--fps", type=float, default=25.0)
            p.add_argument("--width", type=int, default=5)
            p.add_argument("--stride", type=int, default=1)
            p.add_argument("--skip-head", type=int, default=0)

    p = add("grad-check", cmd_grad_check, "finite-difference gradient checks per layer type")
    p.add_argument("--layers", nargs="+", default=["all"])
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _default_report(args) -> str:
    if args.command in ("synth", "build-dataset", "train"):
        return f"{args.out}.report.json"
    if args.command in ("eval", "bench", "stream") and getattr(args, "model", None):
        return f"{args.model}.{args.command}.json"
    return "-"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        report = args.func(args)
        _write_report(report, args.report or _default_report(args))
    except (FormatError, NumericError, ValueError, KeyError, OSError) as exc:
        print(f"timeconv {args.command}: error: {exc}", file=sys.stderr)
        return 1
    if args.command == "grad-check" and not report["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

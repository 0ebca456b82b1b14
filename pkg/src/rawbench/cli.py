"""rawbench command line: gen, convert, train, bench, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, bench, datagen, formats, plotting, report
from .isp import IspError, convert
from .nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn.layers import NumericalError
from .nn.models import Architecture, ModelError, Variant, build_classifier
from .nn.train import (DEFAULT_BATCH, DEFAULT_EPOCHS, DEFAULT_LR, DEFAULT_MOMENTUM,
                       DEFAULT_WEIGHT_DECAY, TrainConfig, TrainingError, evaluate, train,
                       write_history)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_REPEATS = 10
DATA_ERRORS = (datagen.DatasetError, formats.FormatError, CheckpointError, IspError, OSError)
NUMERIC_ERRORS = (NumericalError, TrainingError)

log = logging.getLogger("rawbench")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _selection(value: str, enum_cls) -> list:
    return list(enum_cls) if value == "all" else [enum_cls(value)]


def _checkpoint_path(out: Path, arch: str, variant: str, seed: int) -> Path:
    return out / "checkpoints" / arch / variant / f"seed{seed}.ckpt"


def cmd_gen(args) -> int:
    config = formats.load_config(args.isp_config) if args.isp_config else datagen.DATASET_CONFIG
    profiles = (datagen.profiles_from_text(Path(args.profiles).read_text())
                if args.profiles else datagen.DEFAULT_PROFILES)
    manifest = datagen.generate_dataset(args.n, args.seed, args.out, profiles=profiles,
                                        imbalance=args.imbalance, config=config, force=args.force)
    counts = manifest.counts()
    print(f"{'Class':<12}{'Train':>8}{'Val':>8}{'Test':>8}{'Total':>8}")
    totals = [0, 0, 0]
    for name in datagen.CLASS_NAMES:
        row = [counts[name][s] for s in datagen.SPLITS]
        totals = [a + b for a, b in zip(totals, row)]
        print(f"{name:<12}" + "".join(f"{v:>8}" for v in row) + f"{sum(row):>8}")
    print(f"{'Total':<12}" + "".join(f"{v:>8}" for v in totals) + f"{sum(totals):>8}")
    if manifest.meta.get("up_to_date"):
        print(f"{args.out}: up to date")
    else:
        print(f"{args.out}: wrote {len(manifest.records)} paired samples")
    return EXIT_OK


def cmd_convert(args) -> int:
    cfg = formats.load_config(args.isp_config) if args.isp_config else datagen.DATASET_CONFIG
    cfg = replace(cfg, out_depth=args.depth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for src in args.inputs:
        dst = out / (Path(src).stem + ".ppm")
        if dst.resolve() == Path(src).resolve():
            raise UsageError(f"refusing to overwrite input {src}")
        formats.write_ppm(dst, convert(formats.read_craw(src), cfg))
    print(f"converted {len(args.inputs)} mosaic(s) to {args.depth}-bit PPM in {out}")
    return EXIT_OK


def _train_config(args, seed: int) -> TrainConfig:
    try:
        return TrainConfig(args.lr, args.wd, args.momentum, args.batch, args.epochs, seed, args.precision)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    if args.repeats < 1:
        raise UsageError("--repeats must be at least 1")
    manifest = datagen.load_manifest(args.data)
    out = Path(args.out)
    seeds = [args.seed + r for r in range(args.repeats)]
    _train_config(args, seeds[0])
    cache: dict[str, tuple] = {}
    rows = []
    for arch in _selection(args.arch, Architecture):
        for variant in _selection(args.variant, Variant):
            fmt = variant.data_format
            if fmt not in cache:
                cache[fmt] = tuple(datagen.load_batch(manifest, s, fmt) for s in datagen.SPLITS)
            tr, va, te = cache[fmt]
            for seed in seeds:
                cfg = _train_config(args, seed)
                model = build_classifier(variant, arch, seed=seed, dtype=cfg.dtype)
                log.info("training %s/%s seed %d", arch.value, variant.value, seed)
                result = train(model, tr, va, cfg)
                model.load_state_dict(result.best_state)
                acc = evaluate(model, te[0].astype(cfg.dtype), te[1])
                ckpt = _checkpoint_path(out, arch.value, variant.value, seed)
                ckpt.parent.mkdir(parents=True, exist_ok=True)
                save_checkpoint(ckpt, model, result.best_state, extra={
                    "train": {"learning_rate": cfg.learning_rate, "weight_decay": cfg.weight_decay,
                              "momentum": cfg.momentum, "batch_size": cfg.batch_size,
                              "epochs": cfg.epochs, "seed": seed, "precision": cfg.precision},
                    "best_epoch": result.best_epoch, "test_acc": acc, "version": __version__,
                })
                hist = out / "history" / arch.value / variant.value / f"seed{seed}.csv"
                hist.parent.mkdir(parents=True, exist_ok=True)
                write_history(hist, result.history)
                rows.append(report.AccuracyRow(variant.value, arch.value, seed, result.best_epoch,
                                               result.best_val_loss, acc))
                print(f"{arch.value:<12} {variant.value:<13} seed {seed:<4} "
                      f"best epoch {result.best_epoch:<3} test top-1 {100 * acc:.2f}%", flush=True)
    merged = report.merge_accuracy(report.read_accuracy(out / "accuracy.csv"), rows)
    report.write_accuracy(out / "accuracy.csv", merged)
    summary = report.summarize_accuracy(merged)
    report.write_summary(out / "accuracy_summary.csv", summary)
    report.write_provenance(out / "train.provenance.json", report.provenance("train", {
        "data": str(args.data), "data_sha256": report.file_sha256(manifest.root / "provenance.json")
        if (manifest.root / "provenance.json").exists() else None,
        "arch": args.arch, "variant": args.variant, "seeds": seeds, "epochs": args.epochs,
        "lr": args.lr, "wd": args.wd, "momentum": args.momentum, "batch": args.batch,
        "precision": args.precision,
    }))
    for (variant, arch), (n, mean, sd) in summary.items():
        print(f"summary {arch:<12} {variant:<13} n={n} mean {100 * mean:.2f}% stddev {100 * sd:.2f}%")
    return EXIT_OK


def _bench_mosaics(manifest, count: int):
    recs = (manifest.split("test") + manifest.split("val") + manifest.split("train"))[:count]
    if len(recs) < count:
        raise DataError(f"dataset holds {len(recs)} samples, fewer than the batch of {count}")
    return [formats.read_craw(manifest.path(r.craw_path)) for r in recs]


def cmd_bench(args) -> int:
    if args.runs < bench.MIN_RUNS or args.warmup < 0:
        raise UsageError(f"--runs must be at least {bench.MIN_RUNS} and --warmup non-negative")
    manifest = datagen.load_manifest(args.data)
    out = Path(args.out)
    wanted = [(v, a) for a in _selection(args.arch, Architecture) for v in _selection(args.variant, Variant)]
    models, missing = {}, []
    for v, a in wanted:
        if args.init_only:
            models[(v.value, a.value)] = build_classifier(v, a, seed=args.seed, dtype=np.float32)
            continue
        path = _checkpoint_path(out, a.value, v.value, args.seed)
        if path.exists():
            models[(v.value, a.value)], _ = load_checkpoint(path)
        else:
            missing.append(str(path))
    if missing and not args.partial:
        raise DataError("missing checkpoints:\n  " + "\n  ".join(missing))
    if not models:
        raise DataError("no checkpoints to benchmark")
    mosaics = _bench_mosaics(manifest, args.bench_batch)
    cfg = datagen.dataset_config(manifest)
    reports = bench.run_benchmark(models, mosaics, replace(cfg, out_depth=8), replace(cfg, out_depth=16),
                                  n_runs=args.runs, warmup=args.warmup)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(bench.reports_to_csv(reports))
    (out / "bench_samples.jsonl").write_text(bench.reports_to_jsonl(reports))
    tables = bench.render_tables(reports, len(mosaics))
    header = (f"# rawbench {__version__} runs={args.runs} warmup={args.warmup} "
              f"batch={len(mosaics)} weights={'init' if args.init_only else f'seed{args.seed}'}\n")
    (out / "bench_tables.txt").write_text(header + tables)
    report.write_provenance(out / "bench.provenance.json", report.provenance("bench", {
        "data": str(args.data), "runs": args.runs, "warmup": args.warmup, "batch": len(mosaics),
        "seed": args.seed, "init_only": args.init_only, "missing": missing,
    }))
    print(header + tables, end="")
    if missing:
        print("skipped (no checkpoint): " + ", ".join(missing))
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.out)
    summary_path, samples_path = run / "accuracy_summary.csv", run / "bench_samples.jsonl"
    if not summary_path.exists() and not samples_path.exists():
        raise DataError(f"{run} has neither accuracy_summary.csv nor bench_samples.jsonl")
    inputs = {}
    summary, reports = {}, None
    if summary_path.exists():
        summary = report.read_summary(summary_path)
        inputs[summary_path.name] = report.file_sha256(summary_path)
    if samples_path.exists():
        reports = bench.reports_from_jsonl(samples_path.read_text())
        inputs[samples_path.name] = report.file_sha256(samples_path)
    figdir = run / "figures"
    figdir.mkdir(exist_ok=True)
    figures = []
    if summary:
        plotting.accuracy_figure(summary, figdir / "accuracy.svg")
        figures.append("figures/accuracy.svg")
    if reports:
        plotting.timing_figure(reports, figdir / "timing.svg")
        figures.append("figures/timing.svg")
    meta, batch_size = {}, None
    prov_path = run / "bench.provenance.json"
    if reports and prov_path.exists():
        cfg = json.loads(prov_path.read_text())["config"]
        batch_size = cfg["batch"]
        meta = {"timed runs": cfg["runs"], "warmup runs": cfg["warmup"], "batch": batch_size}
    text = report.render_report(summary, reports, inputs, figures, meta, batch_size)
    (run / "report.md").write_text(text)
    report.write_provenance(run / "report.provenance.json", report.provenance("report", {"inputs": inputs}))
    print(f"wrote {run / 'report.md'} and {len(figures)} figure(s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = Parser(prog="rawbench", description="RAW vs RGB classification benchmark.", formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"rawbench {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    g = sub.add_parser("gen", help="generate the paired synthetic dataset", formatter_class=fmt)
    g.add_argument("--n", type=int, default=datagen.DEFAULT_N_PER_CLASS, help="samples per class")
    g.add_argument("--seed", type=int, default=0, help="root seed")
    g.add_argument("--out", default="data", help="dataset directory")
    g.add_argument("--imbalance", choices=("none", "paper"), default="none",
                   help="'paper' scales classes to the reference class proportions")
    g.add_argument("--isp-config", help="key=value conversion config (default: built-in)")
    g.add_argument("--profiles", help="class profile file (default: built-in)")
    g.add_argument("--force", action="store_true", help="regenerate even when up to date")
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("convert", help="convert .craw mosaics to PPM", formatter_class=fmt)
    c.add_argument("inputs", nargs="+", help=".craw files")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--depth", type=int, choices=(8, 16), default=8, help="output bit depth")
    c.add_argument("--isp-config", help="key=value conversion config (default: dataset config)")
    c.set_defaults(func=cmd_convert)

    variants = ["all"] + [v.value for v in Variant]
    archs = ["all"] + [a.value for a in Architecture]
    t = sub.add_parser("train", help="train variants over repeated seeds", formatter_class=fmt)
    t.add_argument("--data", default="data", help="dataset directory")
    t.add_argument("--out", default="runs", help="run directory")
    t.add_argument("--variant", choices=variants, default="all", help="input representation")
    t.add_argument("--arch", choices=archs, default="all", help="backbone architecture")
    t.add_argument("--repeats", type=int, default=DEFAULT_REPEATS,
                   help="seeds per variant (seed, seed+1, ...); reference protocol trains 10")
    t.add_argument("--seed", type=int, default=0, help="first seed")
    t.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS, help="fixed epoch budget")
    t.add_argument("--lr", type=float, default=DEFAULT_LR, help="SGD learning rate (reference value)")
    t.add_argument("--wd", type=float, default=DEFAULT_WEIGHT_DECAY, help="weight decay (reference value)")
    t.add_argument("--momentum", type=float, default=DEFAULT_MOMENTUM, help="SGD momentum (reference value)")
    t.add_argument("--batch", type=int, default=DEFAULT_BATCH, help="mini-batch size (reference protocol: 256 on a larger dataset)")
    t.add_argument("--precision", type=int, choices=(32, 64), default=32, help="float width")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="time conversion and classification", formatter_class=fmt)
    b.add_argument("--data", default="data", help="dataset directory")
    b.add_argument("--out", default="runs", help="run directory holding checkpoints/")
    b.add_argument("--variant", choices=variants, default="all", help="input representation")
    b.add_argument("--arch", choices=archs, default="all", help="backbone architecture")
    b.add_argument("--seed", type=int, default=0, help="which seed's checkpoints to time")
    b.add_argument("--runs", type=int, default=bench.DEFAULT_RUNS, help="timed runs (reference: 50)")
    b.add_argument("--warmup", type=int, default=bench.DEFAULT_WARMUP, help="untimed warmup runs")
    b.add_argument("--bench-batch", type=int, default=bench.BATCH_SIZE, help="samples per timed run")
    b.add_argument("--partial", action="store_true", help="time the checkpoints present, skip missing")
    b.add_argument("--init-only", action="store_true",
                   help="time freshly initialized models instead of checkpoints")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="render report.md and SVG figures", formatter_class=fmt)
    r.add_argument("--out", default="runs", help="run directory")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ModelError) as exc:
        print(f"rawbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"rawbench: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, bench.BenchError, *DATA_ERRORS) as exc:
        print(f"rawbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

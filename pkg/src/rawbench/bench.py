"""Latency harness: conversion, classification and end-to-end totals.

All timed regions run on one thread (BLAS pinned via threadpoolctl) and use
``time.perf_counter``. Inputs are materialized before timing starts.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .isp import CfaMosaic, ConversionConfig, convert, linearize
from .nn.models import Architecture, Classifier, Variant
from .nn.train import INFERENCE_CHUNK

DEFAULT_RUNS = 50
DEFAULT_WARMUP = 5
BATCH_SIZE = 457
UNSTABLE_CV = 0.25
MIN_RUNS = 5


class BenchError(RuntimeError):
    pass


@dataclass
class TimingReport:
    stage: str
    n_runs: int
    warmup_runs: int
    mean: float
    stddev: float
    samples: list[float] = field(repr=False)
    variant: str = "-"
    arch: str = "-"
    flags: tuple[str, ...] = ()

    @property
    def cv(self) -> float:
        return self.stddev / self.mean if self.mean > 0 else 0.0

    @property
    def unstable(self) -> bool:
        return "unstable" in self.flags

    def to_json(self) -> dict:
        return {
            "variant": self.variant, "arch": self.arch, "stage": self.stage,
            "n_runs": self.n_runs, "warmup_runs": self.warmup_runs,
            "mean": self.mean, "stddev": self.stddev, "flags": list(self.flags),
            "samples": self.samples,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TimingReport":
        return cls(d["stage"], d["n_runs"], d["warmup_runs"], d["mean"], d["stddev"],
                   list(d["samples"]), d["variant"], d["arch"], tuple(d["flags"]))


def _flags(mean: float, stddev: float) -> tuple[str, ...]:
    flags = []
    if mean > 0 and stddev / mean >= UNSTABLE_CV:
        flags.append("unstable")
    if time.get_clock_info("perf_counter").resolution > 0.01 * mean:
        flags.append("coarse-timer")
    return tuple(flags)


def report_from_samples(stage: str, samples, warmup: int, **labels) -> TimingReport:
    samples = [float(s) for s in samples]
    mean = statistics.fmean(samples)
    stddev = statistics.stdev(samples) if len(samples) > 1 else 0.0
    return TimingReport(stage, len(samples), warmup, mean, stddev, samples,
                        flags=_flags(mean, stddev), **labels)


def time_stage(workload, n_runs: int = DEFAULT_RUNS, warmup: int = DEFAULT_WARMUP,
               stage: str = "stage", **labels) -> TimingReport:
    """Run ``workload()`` ``warmup`` times untimed, then ``n_runs`` times timed."""
    if n_runs < MIN_RUNS:
        raise BenchError(f"n_runs must be at least {MIN_RUNS}")
    samples = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            workload()
        for _ in range(n_runs):
            t0 = time.perf_counter()
            workload()
            samples.append(time.perf_counter() - t0)
    return report_from_samples(stage, samples, warmup, **labels)


def bench_conversion(mosaics: list[CfaMosaic], cfg8: ConversionConfig, cfg16: ConversionConfig,
                     n_runs: int = DEFAULT_RUNS, warmup: int = DEFAULT_WARMUP):
    """Wall time of converting every mosaic of the batch, for 8- and 16-bit output."""
    if cfg8.out_depth != 8 or cfg16.out_depth != 16:
        raise BenchError("cfg8/cfg16 must target 8- and 16-bit output")
    reports = []
    for variant, cfg in ((Variant.RGB8, cfg8), (Variant.RGB16, cfg16)):
        def work(cfg=cfg):
            for m in mosaics:
                convert(m, cfg)
        reports.append(time_stage(work, n_runs, warmup, "conversion", variant=variant.value))
    return tuple(reports)


def bench_classification(variant, batch: np.ndarray, model: Classifier,
                         n_runs: int = DEFAULT_RUNS, warmup: int = DEFAULT_WARMUP,
                         chunk: int = INFERENCE_CHUNK) -> TimingReport:
    """Forward-pass-only time over ``batch``; packing/BCA run inside the model."""
    variant = Variant(variant)
    if model.variant is not variant:
        raise BenchError(f"model was built for {model.variant.value}, not {variant.value}")
    if batch.shape[1:] != model.input_shape:
        raise BenchError(f"batch shape {batch.shape[1:]} does not match model input {model.input_shape}")
    dtype = next(model.named_params())[1].data.dtype
    x = np.ascontiguousarray(batch, dtype=dtype)

    def work():
        for i in range(0, len(x), chunk):
            model.forward(x[i:i + chunk], train=False)

    return time_stage(work, n_runs, warmup, "classification",
                      variant=variant.value, arch=model.arch.value)


def bench_total(classification: TimingReport, conversion: TimingReport | None = None) -> TimingReport:
    """Capture-to-result time: classification, plus the conversion mean for RGB.

    The total mean is exactly ``conversion.mean + classification.mean``;
    the stddev combines both as independent sources.
    """
    variant = Variant(classification.variant)
    if variant.conversion_required:
        if conversion is None or conversion.variant != variant.value:
            raise BenchError(f"{variant.value} total needs its conversion report")
        mean = conversion.mean + classification.mean
        stddev = math.sqrt(conversion.stddev ** 2 + classification.stddev ** 2)
        n = min(len(conversion.samples), len(classification.samples))
        samples = [a + b for a, b in zip(conversion.samples[:n], classification.samples[:n])]
    else:
        mean, stddev, samples = classification.mean, classification.stddev, list(classification.samples)
    return replace(classification, stage="total", mean=mean, stddev=stddev, samples=samples,
                   flags=_flags(mean, stddev))


def raw_batch(mosaics: list[CfaMosaic]) -> np.ndarray:
    return np.stack([linearize(m).values for m in mosaics])[:, None]


def rgb_batch(mosaics: list[CfaMosaic], cfg: ConversionConfig) -> np.ndarray:
    scale = float((1 << cfg.out_depth) - 1)
    return np.stack([convert(m, cfg).pixels.transpose(2, 0, 1) / scale for m in mosaics])


def run_benchmark(models: dict, mosaics: list[CfaMosaic], cfg8: ConversionConfig,
                  cfg16: ConversionConfig, n_runs: int = DEFAULT_RUNS,
                  warmup: int = DEFAULT_WARMUP) -> list[TimingReport]:
    """Time every ``(variant, arch) -> model`` entry; returns conversion,
    classification and total reports."""
    batches = {
        "raw": raw_batch(mosaics),
        "rgb8": rgb_batch(mosaics, cfg8),
        "rgb16": rgb_batch(mosaics, cfg16),
    }
    conv8, conv16 = bench_conversion(mosaics, cfg8, cfg16, n_runs, warmup)
    conversions = {Variant.RGB8: conv8, Variant.RGB16: conv16}
    reports = [conv8, conv16]
    for (variant, arch), model in sorted(models.items(), key=lambda kv: _order_key(*kv[0])):
        variant = Variant(variant)
        cls = bench_classification(variant, batches[variant.data_format], model, n_runs, warmup)
        reports += [cls, bench_total(cls, conversions.get(variant))]
    return reports


VARIANT_ORDER = tuple(Variant)
ARCH_ORDER = (Architecture.TINY_RESNET, Architecture.TINY_VGG)
VARIANT_LABELS = {
    Variant.ORIGINAL_RAW: "Original RAW",
    Variant.PACKED_RAW: "Packed RAW",
    Variant.BCA_RAW: "BCA RAW",
    Variant.RGB8: "8-bit RGB",
    Variant.RGB16: "16-bit RGB",
}
STAGE_ORDER = ("conversion", "classification", "total")


def _order_key(variant, arch):
    arch_idx = ARCH_ORDER.index(Architecture(arch)) if arch != "-" else -1
    return (arch_idx, VARIANT_ORDER.index(Variant(variant)))


def _report_key(r: TimingReport):
    return (STAGE_ORDER.index(r.stage), *_order_key(r.variant, r.arch))


def speedups(reports: list[TimingReport], include_bca: bool = True) -> list[tuple[str, str, str, float]]:
    """``(arch, raw_variant, rgb_variant, total(rgb) / total(raw))`` rows."""
    totals = {(r.variant, r.arch): r for r in reports if r.stage == "total"}
    rows = []
    for arch in ARCH_ORDER:
        for raw in (Variant.ORIGINAL_RAW, Variant.PACKED_RAW, Variant.BCA_RAW):
            if raw is Variant.BCA_RAW and not include_bca:
                continue
            for rgb in (Variant.RGB8, Variant.RGB16):
                a, b = totals.get((raw.value, arch.value)), totals.get((rgb.value, arch.value))
                if a and b and a.mean > 0:
                    rows.append((arch.value, raw.value, rgb.value, b.mean / a.mean))
    return rows


def speedup_line(reports: list[TimingReport], include_bca: bool = True) -> str:
    ratios = [s for *_, s in speedups(reports, include_bca)]
    if not ratios:
        return "RAW vs RGB: n/a"
    return f"RAW vs RGB: {min(ratios):.2f}x to {max(ratios):.2f}x"


CSV_FIELDS = ("variant", "arch", "stage", "n", "mean_s", "stddev_s")


def reports_to_csv(reports: list[TimingReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in sorted(reports, key=_report_key):
        w.writerow([r.variant, r.arch, r.stage, r.n_runs, repr(r.mean), repr(r.stddev)])
    return buf.getvalue()


def reports_to_jsonl(reports: list[TimingReport]) -> str:
    return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in sorted(reports, key=_report_key))


def reports_from_jsonl(text: str) -> list[TimingReport]:
    return [TimingReport.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


def _table(reports, stage: str, title: str, row_name: str) -> list[str]:
    by_key = {(r.variant, r.arch): r for r in reports if r.stage == stage}
    width = 14
    lines = [title, " " * 12 + "".join(VARIANT_LABELS[v].rjust(width) for v in VARIANT_ORDER)]
    for arch in ARCH_ORDER:
        lines.append(f"-- {arch.value} --")
        means, sds = [], []
        for v in VARIANT_ORDER:
            r = by_key.get((v.value, arch.value))
            means.append(f"{r.mean:.4f} s" if r else "absent")
            sds.append(f"{r.stddev:.4f} s" if r else "absent")
        lines.append(row_name.ljust(12) + "".join(m.rjust(width) for m in means))
        lines.append("Std. dev.".ljust(12) + "".join(s.rjust(width) for s in sds))
    return lines


def render_tables(reports: list[TimingReport], batch_size: int | None = None) -> str:
    """Text tables shaped like the classification-time and total-time tables."""
    n = batch_size if batch_size is not None else BATCH_SIZE
    lines = _table(reports, "classification", f"Mean computation times for classifying {n} samples",
                   "Mean")
    conv = [r for r in reports if r.stage == "conversion"]
    if conv:
        lines.append("Conversion of the batch: " + ", ".join(
            f"{VARIANT_LABELS[Variant(r.variant)]} {r.mean:.4f} s (sd {r.stddev:.4f})"
            for r in sorted(conv, key=_report_key)))
    lines.append("")
    lines += _table(reports, "total", "Mean computation times from capture to classification results",
                    "Total")
    lines.append("")
    lines.append(speedup_line(reports))
    lines.append(speedup_line(reports, include_bca=False).replace("RAW vs RGB", "RAW (no BCA) vs RGB"))
    unstable = [f"{r.variant}/{r.arch}/{r.stage}" for r in sorted(reports, key=_report_key) if r.unstable]
    if unstable:
        lines.append("unstable (stddev/mean >= 0.25): " + ", ".join(unstable))
    return "\n".join(lines) + "\n"

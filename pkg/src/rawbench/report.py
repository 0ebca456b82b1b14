"""Run-directory artifacts: accuracy tables, provenance and the markdown report."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import statistics
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .bench import ARCH_ORDER, VARIANT_LABELS, VARIANT_ORDER, TimingReport, render_tables
from .nn.models import build_classifier, count_params

ACCURACY_FIELDS = ("variant", "arch", "seed", "best_epoch", "best_val_loss", "test_acc")
SUMMARY_FIELDS = ("variant", "arch", "n", "mean_top1", "stddev_top1")


@dataclass(frozen=True)
class AccuracyRow:
    variant: str
    arch: str
    seed: int
    best_epoch: int
    best_val_loss: float
    test_acc: float


def _row_key(r: AccuracyRow):
    return (r.arch, [v.value for v in VARIANT_ORDER].index(r.variant), r.seed)


def read_accuracy(path) -> list[AccuracyRow]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as f:
        return [AccuracyRow(d["variant"], d["arch"], int(d["seed"]), int(d["best_epoch"]),
                            float(d["best_val_loss"]), float(d["test_acc"]))
                for d in csv.DictReader(f)]


def write_accuracy(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ACCURACY_FIELDS)
        for r in sorted(rows, key=_row_key):
            w.writerow([r.variant, r.arch, r.seed, r.best_epoch, repr(r.best_val_loss), repr(r.test_acc)])


def merge_accuracy(old, new) -> list[AccuracyRow]:
    """Rows of ``new`` replace rows of ``old`` with the same (variant, arch, seed)."""
    merged = {(r.variant, r.arch, r.seed): r for r in old}
    merged.update({(r.variant, r.arch, r.seed): r for r in new})
    return sorted(merged.values(), key=_row_key)


def summarize_accuracy(rows) -> dict[tuple[str, str], tuple[int, float, float]]:
    """``(variant, arch) -> (n, mean, sample stddev)`` of test top-1 over seeds."""
    groups: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        groups.setdefault((r.variant, r.arch), []).append(r.test_acc)
    return {
        k: (len(v), statistics.fmean(v), statistics.stdev(v) if len(v) > 1 else 0.0)
        for k, v in groups.items()
    }


def write_summary(path, summary) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for arch in ARCH_ORDER:
            for v in VARIANT_ORDER:
                if (v.value, arch.value) in summary:
                    n, mean, sd = summary[(v.value, arch.value)]
                    w.writerow([v.value, arch.value, n, repr(mean), repr(sd)])


def read_summary(path) -> dict[tuple[str, str], tuple[int, float, float]]:
    with open(path, newline="") as f:
        return {(d["variant"], d["arch"]): (int(d["n"]), float(d["mean_top1"]), float(d["stddev_top1"]))
                for d in csv.DictReader(f)}


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def provenance(command: str, config: dict) -> dict:
    """Provenance record: tool version plus a hash of the canonical config."""
    canon = json.dumps(config, sort_keys=True, default=str)
    return {
        "tool": "rawbench",
        "version": __version__,
        "command": command,
        "config": json.loads(canon),
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
    }


def write_provenance(path, record: dict) -> None:
    Path(path).write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")


def _pct(x: float) -> str:
    return f"{100 * x:.2f}%"


def accuracy_table(summary) -> str:
    """Markdown table: mean/stddev top-1 and parameter counts per arch and variant."""
    header = "| | " + " | ".join(VARIANT_LABELS[v] for v in VARIANT_ORDER) + " |"
    lines = [header, "|---" * (len(VARIANT_ORDER) + 1) + "|"]
    for arch in ARCH_ORDER:
        means, sds, params = [], [], []
        for v in VARIANT_ORDER:
            entry = summary.get((v.value, arch.value))
            means.append(_pct(entry[1]) if entry else "absent")
            sds.append(_pct(entry[2]) if entry else "absent")
            params.append(str(count_params(build_classifier(v, arch))))
        lines.append(f"| **{arch.value}** mean top-1 | " + " | ".join(means) + " |")
        lines.append(f"| {arch.value} stddev | " + " | ".join(sds) + " |")
        lines.append(f"| {arch.value} trainable parameters | " + " | ".join(params) + " |")
    return "\n".join(lines)


def render_report(summary, reports: list[TimingReport] | None, inputs: dict[str, str],
                  figures: list[str], meta: dict | None = None, batch_size: int | None = None) -> str:
    """Markdown report; missing data renders as explicit "absent" markers."""
    buf = io.StringIO()
    buf.write("# rawbench report\n\n")
    buf.write(f"Tool version: {__version__}\n\n")
    buf.write("## Inputs\n\n| file | sha256 |\n|---|---|\n")
    for name, digest in sorted(inputs.items()):
        buf.write(f"| {name} | `{digest}` |\n")
    if meta:
        buf.write("\n" + "\n".join(f"- {k}: {v}" for k, v in sorted(meta.items())) + "\n")
    buf.write("\n## Accuracy\n\n")
    if summary:
        counts = sorted({n for n, _, _ in summary.values()})
        buf.write(f"Mean and standard deviation of test top-1 over {', '.join(map(str, counts))} seed(s).\n\n")
    else:
        buf.write("No accuracy summary in this run directory (absent).\n\n")
    buf.write(accuracy_table(summary) + "\n\n")
    buf.write("## Timing\n\n")
    if reports:
        buf.write("```\n" + render_tables(reports, batch_size) + "```\n\n")
    else:
        buf.write("No timing samples in this run directory (absent).\n\n")
    if figures:
        buf.write("## Figures\n\n")
        for fig in figures:
            buf.write(f"![{Path(fig).stem}]({fig})\n\n")
    return buf.getvalue()

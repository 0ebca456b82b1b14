import time
from dataclasses import replace

import numpy as np
import pytest

from rawbench import bench
from rawbench.bench import (BenchError, TimingReport, bench_classification, bench_conversion, bench_total,
                            render_tables, report_from_samples, reports_from_jsonl, reports_to_csv,
                            reports_to_jsonl, speedup_line, time_stage)
from rawbench.datagen import DATASET_CONFIG, DEFAULT_PROFILES, make_sample
from rawbench.nn.models import Architecture, Variant, build_classifier


def spin(seconds):
    end = time.perf_counter() + seconds
    while time.perf_counter() < end:
        pass


def mosaics(n):
    return [make_sample(DEFAULT_PROFILES[i % 5], 0, i) for i in range(n)]


CFG8 = replace(DATASET_CONFIG, out_depth=8)
CFG16 = replace(DATASET_CONFIG, out_depth=16)


def fake_reports():
    reports = [
        report_from_samples("conversion", [0.2, 0.22, 0.21, 0.2, 0.19], 5, variant="rgb8"),
        report_from_samples("conversion", [0.21, 0.23, 0.22, 0.21, 0.2], 5, variant="rgb16"),
    ]
    base = {"original-raw": 0.15, "packed-raw": 0.05, "bca-raw": 0.3, "rgb8": 0.14, "rgb16": 0.145}
    conv = {r.variant: r for r in reports}
    for arch in ("tiny-resnet", "tiny-vgg"):
        for variant, t in base.items():
            cls = report_from_samples("classification", [t, t * 1.02, t * 0.98, t * 1.01, t * 0.99], 5,
                                      variant=variant, arch=arch)
            reports += [cls, bench_total(cls, conv.get(variant))]
    return reports


class TestTimeStage:
    def test_spin_wait_calibration(self):
        r = time_stage(lambda: spin(0.010), n_runs=20, warmup=2)
        assert 0.009 <= r.mean <= 0.012

    def test_constant_stub_is_stable(self):
        r = time_stage(lambda: spin(0.002), n_runs=30, warmup=3)
        assert r.cv < 0.2 and not r.unstable

    def test_records_exact_sample_count(self):
        calls = []
        r = time_stage(lambda: calls.append(1), n_runs=50, warmup=5)
        assert r.n_runs == 50 and len(r.samples) == 50 and len(calls) == 55 and r.warmup_runs == 5

    def test_too_few_runs(self):
        with pytest.raises(BenchError):
            time_stage(lambda: None, n_runs=2)

    def test_unstable_flag(self):
        r = report_from_samples("s", [1.0, 1.0, 3.0, 1.0, 1.0], 0)
        assert r.cv >= 0.25 and r.unstable

    def test_mean_and_sample_stddev(self):
        r = report_from_samples("s", [1.0, 2.0, 3.0, 4.0, 5.0], 0)
        assert r.mean == 3.0 and r.stddev == pytest.approx(np.std([1, 2, 3, 4, 5], ddof=1))


class TestConversion:
    def test_empty_batch(self):
        r8, r16 = bench_conversion([], CFG8, CFG16, n_runs=5, warmup=1)
        assert r8.mean < 1e-3 and r16.mean < 1e-3

    def test_doubling_batch_doubles_time(self):
        m = mosaics(40)
        one = bench_conversion(m[:20], CFG8, CFG16, n_runs=9, warmup=2)[0]
        two = bench_conversion(m, CFG8, CFG16, n_runs=9, warmup=2)[0]
        # medians resist the odd scheduler hiccup on shared machines
        ratio = np.median(two.samples) / np.median(one.samples)
        assert 1.4 <= ratio <= 2.6

    def test_labels(self):
        r8, r16 = bench_conversion(mosaics(2), CFG8, CFG16, n_runs=5, warmup=0)
        assert (r8.variant, r16.variant, r8.stage) == ("rgb8", "rgb16", "conversion")

    def test_wrong_depths(self):
        with pytest.raises(BenchError):
            bench_conversion([], CFG16, CFG8)


class TestClassification:
    def test_report_labels(self):
        model = build_classifier("packed-raw", "tiny-vgg", seed=0, width_multiplier=0.25)
        r = bench_classification("packed-raw", np.zeros((4, 1, 40, 40)), model, n_runs=5, warmup=1)
        assert (r.variant, r.arch, r.stage, r.n_runs) == ("packed-raw", "tiny-vgg", "classification", 5)

    def test_variant_mismatch(self):
        model = build_classifier("rgb8", "tiny-vgg", seed=0, width_multiplier=0.25)
        with pytest.raises(BenchError):
            bench_classification("rgb16", np.zeros((2, 3, 40, 40)), model, n_runs=5)

    def test_shape_mismatch(self):
        model = build_classifier("rgb8", "tiny-vgg", seed=0, width_multiplier=0.25)
        with pytest.raises(BenchError):
            bench_classification("rgb8", np.zeros((2, 1, 40, 40)), model, n_runs=5)


class TestTotals:
    def test_rgb_total_is_exact_sum(self):
        conv = report_from_samples("conversion", [0.3, 0.31, 0.29, 0.3, 0.3], 5, variant="rgb8")
        cls = report_from_samples("classification", [0.1, 0.11, 0.12, 0.1, 0.1], 5, variant="rgb8",
                                  arch="tiny-vgg")
        total = bench_total(cls, conv)
        assert total.mean == conv.mean + cls.mean and total.stage == "total"

    def test_raw_total_is_classification(self):
        cls = report_from_samples("classification", [0.1, 0.2, 0.1, 0.1, 0.1], 5, variant="packed-raw",
                                  arch="tiny-vgg")
        assert bench_total(cls).mean == cls.mean

    def test_rgb_total_needs_conversion(self):
        cls = report_from_samples("classification", [0.1] * 5, 5, variant="rgb16", arch="tiny-vgg")
        with pytest.raises(BenchError):
            bench_total(cls)

    def test_speedup_definition(self):
        reports = fake_reports()
        rows = bench.speedups(reports, include_bca=False)
        totals = {(r.variant, r.arch): r.mean for r in reports if r.stage == "total"}
        for arch, raw, rgb, s in rows:
            assert s == totals[(rgb, arch)] / totals[(raw, arch)]
        assert len(rows) == 8

    def test_speedup_line_format(self):
        line = speedup_line(fake_reports())
        assert line.startswith("RAW vs RGB: ") and line.endswith("x")
        lo, hi = (float(p.rstrip("x")) for p in line.split(": ")[1].split(" to "))
        assert lo <= hi

    def test_speedup_line_without_reports(self):
        assert speedup_line([]) == "RAW vs RGB: n/a"


class TestReportOutput:
    def test_ten_rows_per_table(self):
        reports = fake_reports()
        for stage in ("classification", "total"):
            assert len([r for r in reports if r.stage == stage]) == 10
        text = render_tables(reports)
        assert text.count("-- tiny-resnet --") == 2 and "absent" not in text
        assert "457 samples" in text

    def test_missing_entries_marked_absent(self):
        reports = [r for r in fake_reports() if r.variant != "bca-raw"]
        assert "absent" in render_tables(reports)

    def test_jsonl_round_trip_is_byte_identical(self):
        reports = fake_reports()
        back = reports_from_jsonl(reports_to_jsonl(reports))
        assert render_tables(back) == render_tables(reports)
        assert reports_to_csv(back) == reports_to_csv(reports)
        assert reports_to_jsonl(back) == reports_to_jsonl(reports)

    def test_csv_header_and_rows(self):
        lines = reports_to_csv(fake_reports()).splitlines()
        assert lines[0] == "variant,arch,stage,n,mean_s,stddev_s"
        assert len(lines) == 1 + 2 + 10 + 10

    def test_report_json_fields(self):
        r = report_from_samples("conversion", [1.0] * 5, 5, variant="rgb8")
        assert TimingReport.from_json(r.to_json()) == r


class TestRunBenchmark:
    def test_small_matrix(self):
        models = {(v.value, a.value): build_classifier(v, a, seed=0, width_multiplier=0.25)
                  for v in Variant for a in Architecture}
        reports = bench.run_benchmark(models, mosaics(4), CFG8, CFG16, n_runs=5, warmup=1)
        assert len(reports) == 2 + 2 * 10
        text = render_tables(reports, batch_size=4)
        assert "classifying 4 samples" in text and "absent" not in text

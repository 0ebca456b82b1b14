"""Synthetic five-class grain dataset of paired RAW mosaics and RGB conversions.

Each sample is one anti-aliased, rotated ellipse on a dark background. The
scene is rendered in linear RGB, sampled through a Bayer CFA with inverse
white-balance gains and sensor noise, stored as ``.craw``, and converted to
8- and 16-bit PPM with a fixed ISP config.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .isp import (
    CfaMosaic,
    CfaPattern,
    ConversionConfig,
    GammaCurve,
    LinearImage,
    ToneCurve,
    color_index_map,
    convert,
    linearize,
)

CLASS_NAMES = ("arborio", "basmati", "brown", "jasmine", "parboiled")
SPLITS = ("train", "val", "test")
IMAGE_SIZE = 40
BACKGROUND_MAX = 0.05
# class totals of the reference capture (22,887 samples), used by --imbalance paper
REFERENCE_CLASS_TOTALS = (3569, 5142, 4856, 4864, 4456)
DEFAULT_N_PER_CLASS = 1000

SENSOR_PATTERN = CfaPattern.RGGB
SENSOR_BIT_DEPTH = 16
SENSOR_BLACK = 1024
SENSOR_WHITE = 60000
SHOT_NOISE = 2e-4
READ_NOISE = 2e-3

DATASET_CONFIG = ConversionConfig(
    wb_gains=(2.0, 1.0, 1.6),
    color_matrix=((1.5, -0.3, -0.2), (-0.2, 1.4, -0.2), (-0.1, -0.4, 1.5)),
    tone=ToneCurve("reinhard", 1.0),
    gamma=GammaCurve("srgb"),
    out_depth=8,
)


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassProfile:
    class_id: int
    name: str
    length: tuple[float, float]          # major axis mean, sd (pixels)
    elongation: tuple[float, float]      # major/minor ratio mean, sd
    albedo: tuple[float, float, float]   # linear RGB
    albedo_jitter: float = 0.04          # sd of per-sample multiplicative brightness
    texture: float = 0.05                # amplitude of the low-frequency texture

    def __post_init__(self):
        if not all(0 < a < 1 for a in self.albedo):
            raise DatasetError(f"{self.name}: albedo must lie in (0, 1)")
        if self.length[0] <= 0 or self.elongation[0] < 1 or min(self.length[1], self.elongation[1]) < 0:
            raise DatasetError(f"{self.name}: invalid shape distribution")
        if self.texture < 0 or self.albedo_jitter < 0:
            raise DatasetError(f"{self.name}: texture and jitter must be non-negative")


DEFAULT_PROFILES = (
    ClassProfile(0, "arborio", (19.0, 1.5), (1.8, 0.15), (0.78, 0.76, 0.68), 0.04, 0.06),
    ClassProfile(1, "basmati", (29.0, 1.5), (4.2, 0.35), (0.76, 0.70, 0.54), 0.04, 0.04),
    ClassProfile(2, "brown", (24.5, 1.5), (3.0, 0.25), (0.42, 0.30, 0.17), 0.05, 0.12),
    ClassProfile(3, "jasmine", (25.0, 1.5), (3.1, 0.25), (0.80, 0.78, 0.72), 0.04, 0.03),
    ClassProfile(4, "parboiled", (24.0, 1.5), (2.9, 0.25), (0.78, 0.58, 0.28), 0.05, 0.05),
)


def profiles_to_text(profiles=DEFAULT_PROFILES) -> str:
    def fmt(values):
        return ", ".join(repr(float(v)) for v in values)

    lines = []
    for p in profiles:
        lines += [
            f"{p.name}.length = {fmt(p.length)}",
            f"{p.name}.elongation = {fmt(p.elongation)}",
            f"{p.name}.albedo = {fmt(p.albedo)}",
            f"{p.name}.albedo_jitter = {p.albedo_jitter!r}",
            f"{p.name}.texture = {p.texture!r}",
        ]
    return "\n".join(lines) + "\n"


def profiles_from_text(text: str) -> tuple[ClassProfile, ...]:
    """Override default profiles from ``<class>.<field> = value`` lines."""
    kv = formats.parse_keyvalue(text)
    by_name = {p.name: p for p in DEFAULT_PROFILES}
    sizes = {"length": 2, "elongation": 2, "albedo": 3, "albedo_jitter": 1, "texture": 1}
    for key, value in kv.items():
        name, _, fld = key.partition(".")
        if name not in by_name or fld not in sizes:
            raise formats.FormatError(f"unknown profile key {key!r}")
        nums = formats._floats(value, sizes[fld], key)
        by_name[name] = replace(by_name[name], **{fld: nums[0] if sizes[fld] == 1 else nums})
    return tuple(by_name[n] for n in CLASS_NAMES)


def _texture_field(rng: np.random.Generator, yy, xx) -> np.ndarray:
    """Smooth field in [-1, 1]: mean of three random low-frequency gratings."""
    out = np.zeros_like(yy)
    for _ in range(3):
        theta = rng.uniform(0, math.pi)
        freq = rng.uniform(0.15, 0.45)
        phase = rng.uniform(0, 2 * math.pi)
        out += np.cos(freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)
    return out / 3.0


def render_scene(profile: ClassProfile, rng: np.random.Generator, size: int = IMAGE_SIZE,
                 supersample: int = 4) -> LinearImage:
    """One grain on a dark background, scene-linear RGB in [0, 1]."""
    length = max(4.0, rng.normal(*profile.length))
    elong = max(1.05, rng.normal(*profile.elongation))
    a, b = length / 2.0, length / (2.0 * elong)
    theta = rng.uniform(0, math.pi)
    cy, cx = size / 2 + rng.uniform(-1.5, 1.5, size=2)
    brightness = max(0.5, rng.normal(1.0, profile.albedo_jitter))

    s = supersample
    coords = (np.arange(size * s) + 0.5) / s
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    u = (xx - cx) * math.cos(theta) + (yy - cy) * math.sin(theta)
    v = -(xx - cx) * math.sin(theta) + (yy - cy) * math.cos(theta)
    r2 = (u / a) ** 2 + (v / b) ** 2
    inside = r2 <= 1.0
    tex = 1.0 + profile.texture * _texture_field(rng, yy, xx)

    def down(arr):
        return arr.reshape(size, s, size, s).mean(axis=(1, 3))

    coverage = down(inside.astype(np.float64))
    intensity = down(inside * tex) * brightness
    bg = 0.02 + 0.01 * _texture_field(rng, yy[::s, ::s], xx[::s, ::s])
    albedo = np.asarray(profile.albedo)
    scene = bg[..., None] * (1.0 - coverage[..., None]) + intensity[..., None] * albedo
    return LinearImage(np.clip(scene, 0.0, 1.0))


def scene_to_mosaic(scene: LinearImage, pattern=SENSOR_PATTERN, bit_depth: int = SENSOR_BIT_DEPTH,
                    black: int = SENSOR_BLACK, white: int = SENSOR_WHITE,
                    noise_seed: int | np.random.Generator | None = None,
                    wb_gains=DATASET_CONFIG.wb_gains) -> CfaMosaic:
    """Sample ``scene`` through the CFA: inverse white balance, noise, quantization.

    ``noise_seed=None`` disables noise. Noise is Gaussian with
    ``sd = sqrt(SHOT_NOISE * v + READ_NOISE**2)`` in normalized units,
    truncated at 4 sd.
    """
    h, w = scene.height, scene.width
    colors = color_index_map(pattern, h, w)
    site = np.take_along_axis(scene.values, colors[..., None], axis=2)[..., 0]
    v = site / np.asarray(wb_gains, dtype=np.float64)[colors]
    if noise_seed is not None:
        rng = noise_seed if isinstance(noise_seed, np.random.Generator) else np.random.default_rng(noise_seed)
        sd = np.sqrt(SHOT_NOISE * np.maximum(v, 0.0) + READ_NOISE ** 2)
        v = v + sd * np.clip(rng.standard_normal(v.shape), -4.0, 4.0)
    counts = np.floor(black + v * (white - black) + 0.5)
    counts = np.clip(counts, 0, (1 << bit_depth) - 1).astype(np.uint16)
    return CfaMosaic(counts, pattern, bit_depth, black, white)


def split_counts(n: int) -> tuple[int, int, int]:
    """(train, val, test) sizes for one class: floor 70%, round 20%, rest, each within one sample."""
    n_train = (7 * n) // 10
    n_val = (2 * n + 5) // 10
    n_test = n - n_train - n_val
    if 10 * n_test > n + 10:
        # floor on train can leave test more than one sample over 10%
        n_train, n_test = n_train + 1, n_test - 1
    if n_test < 1:
        raise DatasetError(f"{n} samples per class leave no test split")
    return n_train, n_val, n_test


def class_sizes(n_per_class: int, imbalance: str | None = None) -> tuple[int, ...]:
    if imbalance in (None, "", "none"):
        return (n_per_class,) * len(CLASS_NAMES)
    if imbalance != "paper":
        raise DatasetError(f"unknown imbalance mode {imbalance!r}")
    total = n_per_class * len(CLASS_NAMES)
    ref = sum(REFERENCE_CLASS_TOTALS)
    return tuple(max(10, round(total * t / ref)) for t in REFERENCE_CLASS_TOTALS)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    label: int
    split: str
    craw_path: str
    rgb8_path: str
    rgb16_path: str

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.label]


@dataclass
class SplitManifest:
    root: Path
    records: list[SampleRecord]
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[SampleRecord]:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def counts(self) -> dict[str, dict[str, int]]:
        table = {c: {s: 0 for s in SPLITS} for c in CLASS_NAMES}
        for r in self.records:
            table[r.class_name][r.split] += 1
        return table

    def path(self, rel: str) -> Path:
        return self.root / rel


MANIFEST_FIELDS = ("id", "class", "split", "craw_path", "rgb8_path", "rgb16_path")


def write_manifest_csv(path, records) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            w.writerow([r.id, r.class_name, r.split, r.craw_path, r.rgb8_path, r.rgb16_path])


def load_manifest(root) -> SplitManifest:
    root = Path(root)
    path = root / "manifest.csv"
    if not path.exists():
        raise DatasetError(f"no manifest at {path}")
    records = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise DatasetError(f"manifest header must be {','.join(MANIFEST_FIELDS)}")
        for row in reader:
            if row["class"] not in CLASS_NAMES or row["split"] not in SPLITS:
                raise DatasetError(f"bad manifest row {row}")
            rec = SampleRecord(row["id"], CLASS_NAMES.index(row["class"]), row["split"],
                               row["craw_path"], row["rgb8_path"], row["rgb16_path"])
            if any(Path(p).stem != rec.id for p in (rec.craw_path, rec.rgb8_path, rec.rgb16_path)):
                raise DatasetError(f"pairing violation: paths of {rec.id} do not share its id")
            records.append(rec)
    meta = {}
    prov = root / "provenance.json"
    if prov.exists():
        meta = json.loads(prov.read_text())
    return SplitManifest(root, records, meta=meta)


def _sample_streams(seed: int, index: int):
    scene_ss, noise_ss = np.random.SeedSequence([seed, index]).spawn(2)
    return np.random.default_rng(scene_ss), np.random.default_rng(noise_ss)


def make_sample(profile: ClassProfile, seed: int, index: int) -> CfaMosaic:
    """Mosaic of sample ``index``; a pure function of (profile, seed, index)."""
    scene_rng, noise_rng = _sample_streams(seed, index)
    return scene_to_mosaic(render_scene(profile, scene_rng), noise_seed=noise_rng)


def _assign_splits(sizes, seed: int) -> list[tuple[int, str]]:
    """(label, split) for every sample index, classes laid out consecutively."""
    out = []
    for label, n in enumerate(sizes):
        n_train, n_val, _ = split_counts(n)
        order = np.random.default_rng([seed, 0x5917, label]).permutation(n)
        tags = np.empty(n, dtype=object)
        tags[order[:n_train]] = "train"
        tags[order[n_train:n_train + n_val]] = "val"
        tags[order[n_train + n_val:]] = "test"
        out += [(label, str(t)) for t in tags]
    return out


def _generator_params(n_per_class, seed, imbalance, profiles, config) -> dict:
    return {
        "n_per_class": n_per_class,
        "seed": seed,
        "imbalance": imbalance or "none",
        "profiles": profiles_to_text(profiles),
        "conversion": formats.config_to_text(config),
        "sensor": [int(SENSOR_PATTERN), SENSOR_BIT_DEPTH, SENSOR_BLACK, SENSOR_WHITE],
    }


def _digest_files(root: Path, records) -> str:
    h = hashlib.sha256()
    for r in records:
        for rel in (r.craw_path, r.rgb8_path, r.rgb16_path):
            h.update(rel.encode())
            h.update(hashlib.sha256((root / rel).read_bytes()).digest())
    return h.hexdigest()


def dataset_up_to_date(out_dir, params: dict) -> bool:
    root = Path(out_dir)
    prov = root / "provenance.json"
    if not prov.exists() or not (root / "manifest.csv").exists():
        return False
    try:
        meta = json.loads(prov.read_text())
        if meta.get("params") != params:
            return False
        manifest = load_manifest(root)
        return _digest_files(root, manifest.records) == meta.get("files_sha256")
    except (OSError, ValueError, DatasetError):
        return False


def generate_dataset(n_per_class: int = DEFAULT_N_PER_CLASS, seed: int = 0, out_dir="data",
                     profiles=DEFAULT_PROFILES, imbalance: str | None = None,
                     config: ConversionConfig = DATASET_CONFIG, force: bool = False) -> SplitManifest:
    """Write paired ``.craw`` / 8-bit PPM / 16-bit PPM samples plus ``manifest.csv``.

    Returns the existing manifest untouched (``meta["up_to_date"] = True``)
    when the directory already holds this exact dataset.
    """
    if n_per_class < 10:
        raise DatasetError("n_per_class must be at least 10")
    sizes = class_sizes(n_per_class, imbalance)
    params = _generator_params(n_per_class, seed, imbalance, profiles, config)
    root = Path(out_dir)
    if not force and dataset_up_to_date(root, params):
        manifest = load_manifest(root)
        manifest.meta["up_to_date"] = True
        return manifest
    try:
        for sub in ("raw", "rgb8", "rgb16"):
            (root / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot write to {root}: {exc}") from exc

    cfg8, cfg16 = replace(config, out_depth=8), replace(config, out_depth=16)
    records = []
    for index, (label, split) in enumerate(_assign_splits(sizes, seed)):
        sid = f"s{index:05d}"
        mosaic = make_sample(profiles[label], seed, index)
        rec = SampleRecord(sid, label, split, f"raw/{sid}.craw", f"rgb8/{sid}.ppm", f"rgb16/{sid}.ppm")
        formats.write_craw(root / rec.craw_path, mosaic)
        formats.write_ppm(root / rec.rgb8_path, convert(mosaic, cfg8))
        formats.write_ppm(root / rec.rgb16_path, convert(mosaic, cfg16))
        records.append(rec)
    write_manifest_csv(root / "manifest.csv", records)
    (root / "isp.cfg").write_text(formats.config_to_text(config))
    (root / "profiles.cfg").write_text(profiles_to_text(profiles))
    meta = {"params": params, "files_sha256": _digest_files(root, records)}
    (root / "provenance.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    manifest = SplitManifest(root, records, meta=meta)
    manifest.meta["up_to_date"] = False
    return manifest


def dataset_config(manifest: SplitManifest) -> ConversionConfig:
    cfg_path = manifest.root / "isp.cfg"
    return formats.load_config(cfg_path) if cfg_path.exists() else DATASET_CONFIG


def verify_pairing(manifest: SplitManifest, records=None) -> list[str]:
    """Ids whose stored PPMs differ from a fresh conversion of their mosaic."""
    cfg = dataset_config(manifest)
    cfg8, cfg16 = replace(cfg, out_depth=8), replace(cfg, out_depth=16)
    bad = []
    for r in records if records is not None else manifest.records:
        mosaic = formats.read_craw(manifest.path(r.craw_path))
        if (formats.encode_ppm(convert(mosaic, cfg8)) != manifest.path(r.rgb8_path).read_bytes()
                or formats.encode_ppm(convert(mosaic, cfg16)) != manifest.path(r.rgb16_path).read_bytes()):
            bad.append(r.id)
    return bad


def _load_one(manifest: SplitManifest, rec: SampleRecord, fmt: str) -> np.ndarray:
    try:
        if fmt == "raw":
            return linearize(formats.read_craw(manifest.path(rec.craw_path))).values[None]
        img = formats.read_ppm(manifest.path(rec.rgb8_path if fmt == "rgb8" else rec.rgb16_path))
    except FileNotFoundError as exc:
        raise DatasetError(f"missing file for sample {rec.id}: {exc.filename}") from exc
    except formats.FormatError as exc:
        raise DatasetError(f"corrupt file for sample {rec.id}: {exc}") from exc
    expected = 8 if fmt == "rgb8" else 16
    if img.depth != expected:
        raise DatasetError(f"pairing violation: {rec.id} {fmt} file is {img.depth}-bit")
    scale = 255.0 if expected == 8 else 65535.0
    return img.pixels.transpose(2, 0, 1).astype(np.float64) / scale


def load_batch(manifest: SplitManifest, split: str, fmt: str, indices=None):
    """``(x, labels)`` for records ``indices`` of ``split`` (all when None).

    RAW loads as (N, 1, H, W) black/white-normalized values (no ISP); RGB loads
    as (N, 3, H, W) scaled by 1/255 or 1/65535.
    """
    if fmt not in ("raw", "rgb8", "rgb16"):
        raise DatasetError(f"unknown format {fmt!r}")
    recs = manifest.split(split)
    if indices is None:
        indices = range(len(recs))
    chosen = []
    for i in indices:
        if not 0 <= i < len(recs):
            raise DatasetError(f"index {i} outside split {split!r} of size {len(recs)}")
        chosen.append(recs[i])
    if not chosen:
        return np.empty((0, 1 if fmt == "raw" else 3, IMAGE_SIZE, IMAGE_SIZE)), np.empty(0, dtype=np.intp)
    arrays = [_load_one(manifest, r, fmt) for r in chosen]
    if len({a.shape for a in arrays}) > 1:
        raise DatasetError("samples differ in shape")
    return np.stack(arrays), np.array([r.label for r in chosen], dtype=np.intp)


def load_mosaics(manifest: SplitManifest, split: str, count: int | None = None) -> list[CfaMosaic]:
    recs = manifest.split(split)[:count]
    return [formats.read_craw(manifest.path(r.craw_path)) for r in recs]


def mean_color_features(manifest: SplitManifest, split: str, fmt: str = "rgb8") -> tuple[np.ndarray, np.ndarray]:
    x, y = load_batch(manifest, split, fmt)
    return x.mean(axis=(2, 3)), y


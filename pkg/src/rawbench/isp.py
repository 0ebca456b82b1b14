"""RAW to RGB conversion pipeline.

The pipeline is a fixed chain of pure stages::

    linearize -> white_balance -> demosaic_bilinear -> color_correct
              -> tone_map -> gamma_encode -> quantize

All intermediate values are float64 and clamped to [0, 1] after every stage,
so quantization is the only lossy step.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class IspError(ValueError):
    """Invalid image, mosaic or conversion parameters."""


class CfaPattern(enum.IntEnum):
    RGGB = 0
    BGGR = 1
    GRBG = 2
    GBRG = 3


# Color index (0=R, 1=G, 2=B) of each site in the 2x2 quad anchored at even coordinates.
_QUAD_COLORS = {
    CfaPattern.RGGB: ((0, 1), (1, 2)),
    CfaPattern.BGGR: ((2, 1), (1, 0)),
    CfaPattern.GRBG: ((1, 0), (2, 1)),
    CfaPattern.GBRG: ((1, 2), (0, 1)),
}


def parse_pattern(value) -> CfaPattern:
    if isinstance(value, CfaPattern):
        return value
    if isinstance(value, str):
        try:
            return CfaPattern[value.upper()]
        except KeyError:
            raise IspError(f"unknown CFA pattern {value!r}") from None
    return CfaPattern(int(value))


def quad_colors(pattern) -> np.ndarray:
    """2x2 array of color indices for ``pattern``."""
    return np.array(_QUAD_COLORS[parse_pattern(pattern)], dtype=np.intp)


def color_index_map(pattern, height: int, width: int) -> np.ndarray:
    """Per-site color index (0=R, 1=G, 2=B) for a ``height x width`` mosaic."""
    quad = quad_colors(pattern)
    return quad[np.arange(height)[:, None] % 2, np.arange(width)[None, :] % 2]


@dataclass(frozen=True, eq=False)
class CfaMosaic:
    """Single-channel Bayer sensor readout."""

    samples: np.ndarray
    pattern: CfaPattern = CfaPattern.RGGB
    bit_depth: int = 16
    black_level: int = 0
    white_level: int = 65535

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise IspError(f"mosaic must be 2-D, got shape {samples.shape}")
        h, w = samples.shape
        if h == 0 or w == 0 or h % 2 or w % 2:
            raise IspError(f"mosaic dimensions must be even and nonzero, got {w}x{h}")
        if not 10 <= self.bit_depth <= 16:
            raise IspError(f"bit_depth must be in [10, 16], got {self.bit_depth}")
        max_code = (1 << self.bit_depth) - 1
        if not 0 <= self.black_level < self.white_level <= max_code:
            raise IspError(
                f"need 0 <= black_level < white_level <= {max_code}, "
                f"got black={self.black_level} white={self.white_level}"
            )
        if samples.dtype != np.uint16:
            if np.any(samples < 0) or np.any(samples > 65535):
                raise IspError("samples do not fit in 16 bits")
            samples = samples.astype(np.uint16)
        if samples.size and int(samples.max()) > max_code:
            raise IspError(f"sample exceeds {self.bit_depth}-bit range")
        samples = np.ascontiguousarray(samples)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "pattern", parse_pattern(self.pattern))

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    def __eq__(self, other):
        if not isinstance(other, CfaMosaic):
            return NotImplemented
        return (
            self.pattern == other.pattern
            and self.bit_depth == other.bit_depth
            and self.black_level == other.black_level
            and self.white_level == other.white_level
            and np.array_equal(self.samples, other.samples)
        )


@dataclass(frozen=True, eq=False)
class LinearImage:
    """Scene-linear float64 image, shape (H, W) for one channel or (H, W, 3)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim not in (2, 3) or (values.ndim == 3 and values.shape[2] != 3):
            raise IspError(f"LinearImage must be (H, W) or (H, W, 3), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise IspError("LinearImage values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.values.ndim == 2 else 3


@dataclass(frozen=True, eq=False)
class RgbImage:
    """Interleaved RGB image at 8 or 16 bits per channel, shape (H, W, 3)."""

    pixels: np.ndarray
    depth: int = 8

    def __post_init__(self):
        if self.depth not in (8, 16):
            raise IspError(f"depth must be 8 or 16, got {self.depth}")
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise IspError(f"RgbImage must be (H, W, 3), got {pixels.shape}")
        dtype = np.uint8 if self.depth == 8 else np.uint16
        if pixels.dtype != dtype:
            if pixels.size and (pixels.min() < 0 or pixels.max() > (1 << self.depth) - 1):
                raise IspError(f"pixel values exceed {self.depth}-bit range")
            pixels = pixels.astype(dtype)
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, RgbImage):
            return NotImplemented
        return self.depth == other.depth and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class ToneCurve:
    """``kind`` is "identity" or "reinhard"; ``scale`` is used by reinhard only."""

    kind: str = "identity"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "reinhard"):
            raise IspError(f"unknown tone curve {self.kind!r}")
        if self.kind == "reinhard" and not self.scale > 0:
            raise IspError(f"reinhard scale must be positive, got {self.scale}")

    def __str__(self):
        return "identity" if self.kind == "identity" else f"reinhard:{self.scale!r}"


@dataclass(frozen=True)
class GammaCurve:
    """``kind`` is "srgb" or "power"; ``gamma`` is used by power only."""

    kind: str = "srgb"
    gamma: float = 2.2

    def __post_init__(self):
        if self.kind not in ("srgb", "power"):
            raise IspError(f"unknown gamma curve {self.kind!r}")
        if self.kind == "power" and not self.gamma > 0:
            raise IspError(f"gamma must be positive, got {self.gamma}")

    def __str__(self):
        return "srgb" if self.kind == "srgb" else f"power:{self.gamma!r}"


IDENTITY_MATRIX = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


@dataclass(frozen=True)
class ConversionConfig:
    wb_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    color_matrix: tuple[tuple[float, float, float], ...] = IDENTITY_MATRIX
    tone: ToneCurve = field(default_factory=ToneCurve)
    gamma: GammaCurve = field(default_factory=GammaCurve)
    out_depth: int = 8

    def __post_init__(self):
        gains = tuple(float(g) for g in self.wb_gains)
        if len(gains) != 3:
            raise IspError("wb_gains needs exactly 3 values")
        _check_gains(gains)
        matrix = tuple(tuple(float(v) for v in row) for row in self.color_matrix)
        _check_matrix(np.array(matrix))
        if self.out_depth not in (8, 16):
            raise IspError(f"out_depth must be 8 or 16, got {self.out_depth}")
        object.__setattr__(self, "wb_gains", gains)
        object.__setattr__(self, "color_matrix", matrix)


def _check_gains(gains) -> None:
    if any(not g > 0 for g in gains):
        raise IspError(f"white-balance gains must be positive, got {tuple(gains)}")


def _check_matrix(matrix: np.ndarray) -> None:
    if matrix.shape != (3, 3):
        raise IspError(f"color matrix must be 3x3, got {matrix.shape}")
    sums = matrix.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise IspError(f"color matrix rows must each sum to 1, got {sums.tolist()}")


def linearize(m: CfaMosaic) -> LinearImage:
    if m.black_level >= m.white_level:
        raise IspError("black_level must be below white_level")
    span = float(m.white_level - m.black_level)
    values = (m.samples.astype(np.float64) - m.black_level) / span
    return LinearImage(np.clip(values, 0.0, 1.0))


def white_balance(img: LinearImage, pattern, gains) -> LinearImage:
    if img.channels != 1:
        raise IspError("white_balance expects a 1-channel mosaic image")
    gains = np.asarray(gains, dtype=np.float64)
    _check_gains(gains)
    gain_map = gains[color_index_map(pattern, img.height, img.width)]
    return LinearImage(np.clip(img.values * gain_map, 0.0, 1.0))


def demosaic_bilinear(img: LinearImage, pattern) -> LinearImage:
    """Bilinear CFA interpolation over the 3x3 neighbourhood.

    The native color of each site is copied. Each missing color is the mean of
    the same-colored sites inside the 3x3 window, with reflect padding at the
    borders (reflection keeps the CFA phase of every padded site intact).
    Neighbours are accumulated in row-major window order.
    """
    if img.channels != 1:
        raise IspError("demosaic expects a 1-channel mosaic image")
    h, w = img.height, img.width
    if h % 2 or w % 2:
        raise IspError(f"mosaic dimensions must be even, got {w}x{h}")
    values = img.values
    padded = np.pad(values, 1, mode="reflect")
    colors = color_index_map(pattern, h + 2, w + 2)
    # reflect padding of width 1 maps index -1 -> 1, so padded site (i, j) has the
    # phase of source site (i - 1, j - 1); shift the quad lookup accordingly
    colors = np.roll(colors, (1, 1), axis=(0, 1))
    out = np.empty((h, w, 3))
    native = color_index_map(pattern, h, w)
    for c in range(3):
        mask = (colors == c).astype(np.float64)
        weighted = padded * mask
        acc = np.zeros((h, w))
        cnt = np.zeros((h, w))
        for dy in range(3):
            for dx in range(3):
                acc += weighted[dy:dy + h, dx:dx + w]
                cnt += mask[dy:dy + h, dx:dx + w]
        out[..., c] = np.where(native == c, values, acc / np.maximum(cnt, 1.0))
    return LinearImage(np.clip(out, 0.0, 1.0))


def color_correct(img: LinearImage, matrix) -> LinearImage:
    if img.channels != 3:
        raise IspError("color_correct expects a 3-channel image")
    matrix = np.asarray(matrix, dtype=np.float64)
    _check_matrix(matrix)
    return LinearImage(np.clip(img.values @ matrix.T, 0.0, 1.0))


def tone_map(img: LinearImage, curve: ToneCurve) -> LinearImage:
    if curve.kind == "identity":
        return LinearImage(img.values.copy())
    s = curve.scale
    if not s > 0:
        raise IspError("reinhard scale must be positive")
    v = img.values
    mapped = (s * v) / (1.0 + s * v) / (s / (1.0 + s))
    return LinearImage(np.clip(mapped, 0.0, 1.0))


def gamma_encode(img: LinearImage, curve: GammaCurve) -> LinearImage:
    v = img.values
    if curve.kind == "srgb":
        encoded = np.where(
            v <= 0.0031308,
            12.92 * v,
            1.055 * np.power(np.maximum(v, 0.0031308), 1.0 / 2.4) - 0.055,
        )
    else:
        encoded = np.power(v, 1.0 / curve.gamma)
    return LinearImage(np.clip(encoded, 0.0, 1.0))


def quantize(img: LinearImage, depth: int) -> RgbImage:
    if depth not in (8, 16):
        raise IspError(f"depth must be 8 or 16, got {depth}")
    if img.channels != 3:
        raise IspError("quantize expects a 3-channel image")
    max_code = (1 << depth) - 1
    # values are non-negative, so floor(x + 0.5) is round-half-away-from-zero
    codes = np.floor(np.clip(img.values, 0.0, 1.0) * max_code + 0.5)
    return RgbImage(codes.astype(np.uint8 if depth == 8 else np.uint16), depth)


def convert(m: CfaMosaic, cfg: ConversionConfig) -> RgbImage:
    img = linearize(m)
    img = white_balance(img, m.pattern, cfg.wb_gains)
    img = demosaic_bilinear(img, m.pattern)
    img = color_correct(img, cfg.color_matrix)
    img = tone_map(img, cfg.tone)
    img = gamma_encode(img, cfg.gamma)
    return quantize(img, cfg.out_depth)

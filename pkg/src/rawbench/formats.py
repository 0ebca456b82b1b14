"""On-disk formats: ``.craw`` mosaics, binary PPM and key=value config files."""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .isp import CfaMosaic, ConversionConfig, GammaCurve, IspError, RgbImage, ToneCurve

CRAW_MAGIC = b"CRAW"
CRAW_VERSION = 1
_CRAW_HEADER = struct.Struct("<4sBBBBIIHH")


class FormatError(ValueError):
    """A file could not be decoded."""


def encode_craw(m: CfaMosaic) -> bytes:
    header = _CRAW_HEADER.pack(
        CRAW_MAGIC, CRAW_VERSION, int(m.pattern), m.bit_depth, 0,
        m.width, m.height, m.black_level, m.white_level,
    )
    return header + m.samples.astype("<u2").tobytes()


def decode_craw(data: bytes) -> CfaMosaic:
    if len(data) < _CRAW_HEADER.size:
        raise FormatError("truncated .craw header")
    magic, version, pattern, bit_depth, _reserved, width, height, black, white = (
        _CRAW_HEADER.unpack_from(data)
    )
    if magic != CRAW_MAGIC:
        raise FormatError(f"bad .craw magic {magic!r}")
    if version != CRAW_VERSION:
        raise FormatError(f"unsupported .craw version {version}")
    if pattern > 3:
        raise FormatError(f"bad CFA pattern code {pattern}")
    expected = _CRAW_HEADER.size + 2 * width * height
    if len(data) != expected:
        raise FormatError(f".craw payload is {len(data)} bytes, expected {expected}")
    samples = np.frombuffer(data, dtype="<u2", offset=_CRAW_HEADER.size)
    try:
        return CfaMosaic(
            samples.reshape(height, width).astype(np.uint16), pattern, bit_depth, black, white
        )
    except IspError as exc:
        raise FormatError(f"invalid .craw contents: {exc}") from exc


def write_craw(path, m: CfaMosaic) -> None:
    with open(path, "wb") as f:
        f.write(encode_craw(m))


def read_craw(path) -> CfaMosaic:
    with open(path, "rb") as f:
        return decode_craw(f.read())


def encode_ppm(img: RgbImage) -> bytes:
    maxval = 255 if img.depth == 8 else 65535
    header = f"P6\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    body = img.pixels.astype(np.uint8 if img.depth == 8 else ">u2").tobytes()
    return header + body


def _ppm_tokens(stream: io.BytesIO, count: int) -> list[bytes]:
    tokens = []
    while len(tokens) < count:
        line = stream.readline()
        if not line:
            raise FormatError("truncated PPM header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    return tokens


def decode_ppm(data: bytes) -> RgbImage:
    stream = io.BytesIO(data)
    tokens = _ppm_tokens(stream, 4)
    if len(tokens) != 4 or tokens[0] != b"P6":
        raise FormatError("not a binary P6 PPM (or header/data not newline separated)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("malformed PPM header") from None
    if maxval == 255:
        depth, dtype = 8, np.uint8
    elif maxval == 65535:
        depth, dtype = 16, np.dtype(">u2")
    else:
        raise FormatError(f"unsupported PPM maxval {maxval}")
    body = stream.read()
    expected = width * height * 3 * np.dtype(dtype).itemsize
    if len(body) != expected:
        raise FormatError(f"PPM body is {len(body)} bytes, expected {expected}")
    pixels = np.frombuffer(body, dtype=dtype).reshape(height, width, 3)
    return RgbImage(pixels.astype(np.uint8 if depth == 8 else np.uint16), depth)


def write_ppm(path, img: RgbImage) -> None:
    with open(path, "wb") as f:
        f.write(encode_ppm(img))


def read_ppm(path) -> RgbImage:
    with open(path, "rb") as f:
        return decode_ppm(f.read())


def parse_keyvalue(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _floats(value: str, n: int, key: str) -> tuple[float, ...]:
    try:
        parts = tuple(float(v) for v in value.replace(",", " ").split())
    except ValueError:
        raise FormatError(f"{key}: expected {n} numbers, got {value!r}") from None
    if len(parts) != n:
        raise FormatError(f"{key}: expected {n} numbers, got {len(parts)}")
    return parts


def _parse_tone(value: str) -> ToneCurve:
    kind, _, arg = value.partition(":")
    kind = kind.strip().lower()
    if kind == "reinhard":
        return ToneCurve("reinhard", float(arg) if arg else 1.0)
    return ToneCurve(kind)


def _parse_gamma(value: str) -> GammaCurve:
    kind, _, arg = value.partition(":")
    kind = kind.strip().lower()
    if kind == "power":
        return GammaCurve("power", float(arg) if arg else 2.2)
    return GammaCurve(kind)


def config_from_text(text: str) -> ConversionConfig:
    """Build a ConversionConfig from key=value text.

    Keys: ``wb_gains``, ``matrix_r``, ``matrix_g``, ``matrix_b``, ``tone``
    (``identity`` or ``reinhard:<scale>``), ``gamma`` (``srgb`` or
    ``power:<gamma>``) and ``depth``. Missing keys take the defaults.
    """
    kv = parse_keyvalue(text)
    known = {"wb_gains", "matrix_r", "matrix_g", "matrix_b", "tone", "gamma", "depth"}
    unknown = set(kv) - known
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}")
    default = ConversionConfig()
    kwargs = {}
    if "wb_gains" in kv:
        kwargs["wb_gains"] = _floats(kv["wb_gains"], 3, "wb_gains")
    rows = list(default.color_matrix)
    for i, key in enumerate(("matrix_r", "matrix_g", "matrix_b")):
        if key in kv:
            rows[i] = _floats(kv[key], 3, key)
    kwargs["color_matrix"] = tuple(rows)
    try:
        if "tone" in kv:
            kwargs["tone"] = _parse_tone(kv["tone"])
        if "gamma" in kv:
            kwargs["gamma"] = _parse_gamma(kv["gamma"])
        if "depth" in kv:
            kwargs["out_depth"] = int(kv["depth"])
        return ConversionConfig(**kwargs)
    except (IspError, ValueError) as exc:
        raise FormatError(f"invalid conversion config: {exc}") from exc


def config_to_text(cfg: ConversionConfig) -> str:
    def fmt(values):
        return ", ".join(repr(float(v)) for v in values)

    lines = [
        f"wb_gains = {fmt(cfg.wb_gains)}",
        f"matrix_r = {fmt(cfg.color_matrix[0])}",
        f"matrix_g = {fmt(cfg.color_matrix[1])}",
        f"matrix_b = {fmt(cfg.color_matrix[2])}",
        f"tone = {cfg.tone}",
        f"gamma = {cfg.gamma}",
        f"depth = {cfg.out_depth}",
    ]
    return "\n".join(lines) + "\n"


def load_config(path: str | os.PathLike) -> ConversionConfig:
    with open(path, encoding="utf-8") as f:
        return config_from_text(f.read())

"""RAW classifier inputs: Original (passthrough), Packed quads and BCA fusion.

Packing rearranges every 2x2 CFA quad anchored at even coordinates into four
channels ordered top-left, top-right, bottom-left, bottom-right. Under RGGB
that order is (R, G1, G2, B).

The BCA front-end gates each of two feature maps by a sigmoid of a 1x1
convolution of the *other* map::

    new_spatial = spatial * sigmoid(gate_color(color))
    new_color   = color   * sigmoid(gate_spatial(spatial))

Both gates read the prior maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .isp import CfaMosaic, CfaPattern, IspError, LinearImage, linearize, parse_pattern, quad_colors
from .nn import functional as F
from .nn.layers import Conv2d, Layer, ReLU, Sequential

QUAD_ORDER = ("top-left", "top-right", "bottom-left", "bottom-right")
_COLOR_NAMES = "RGB"


@dataclass(frozen=True, eq=False)
class PackedQuads:
    """Half-resolution 4-channel quads, ``values`` shaped (H/2, W/2, 4)."""

    values: np.ndarray
    pattern: CfaPattern = CfaPattern.RGGB

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[2] != 4:
            raise IspError(f"PackedQuads must be (H, W, 4), got {values.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "pattern", parse_pattern(self.pattern))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channel_colors(self) -> tuple[str, ...]:
        """Color letter of each channel, e.g. ('R', 'G', 'G', 'B') for RGGB."""
        return tuple(_COLOR_NAMES[c] for c in quad_colors(self.pattern).ravel())

    def __eq__(self, other):
        if not isinstance(other, PackedQuads):
            return NotImplemented
        return self.pattern == other.pattern and np.array_equal(self.values, other.values)


def pack_array(a: np.ndarray) -> np.ndarray:
    """Pack the last two axes: (..., H, W) -> (..., 4, H/2, W/2)."""
    h, w = a.shape[-2:]
    if h % 2 or w % 2:
        raise IspError(f"packing needs even dimensions, got {w}x{h}")
    quads = a.reshape(*a.shape[:-2], h // 2, 2, w // 2, 2)
    nd = a.ndim - 2
    lead = tuple(range(nd))
    out = quads.transpose(*lead, nd + 1, nd + 3, nd, nd + 2)
    return out.reshape(*a.shape[:-2], 4, h // 2, w // 2)


def unpack_array(p: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack_array`: (..., 4, h, w) -> (..., 2h, 2w)."""
    if p.shape[-3] != 4:
        raise IspError(f"expected 4 packed channels, got {p.shape[-3]}")
    h, w = p.shape[-2:]
    nd = p.ndim - 3
    lead = tuple(range(nd))
    quads = p.reshape(*p.shape[:-3], 2, 2, h, w)
    out = quads.transpose(*lead, nd + 2, nd, nd + 3, nd + 1)
    return out.reshape(*p.shape[:-3], 2 * h, 2 * w)


def pack(m: CfaMosaic | LinearImage, pattern=None) -> PackedQuads:
    if isinstance(m, CfaMosaic):
        values, pattern = m.samples.astype(np.float64), m.pattern
    else:
        if m.channels != 1:
            raise IspError("pack expects a 1-channel image")
        values = m.values
        pattern = CfaPattern.RGGB if pattern is None else pattern
    return PackedQuads(np.moveaxis(pack_array(values), 0, -1), pattern)


def unpack(p: PackedQuads) -> LinearImage:
    return LinearImage(unpack_array(np.moveaxis(p.values, -1, 0)))


class Pack(Layer):
    """In-network packing of an (N, 1, H, W) mosaic batch into (N, 4, H/2, W/2)."""

    def forward(self, x, train=False):
        if x.shape[1] != 1:
            raise F.ShapeError(f"Pack expects 1 input channel, got {x.shape[1]}")
        return np.ascontiguousarray(pack_array(x[:, 0]))

    def backward(self, dout):
        return np.ascontiguousarray(unpack_array(dout)[:, None])


class BcaFuse(Layer):
    """Bidirectional sigmoid gating of two equally shaped feature maps."""

    def __init__(self, channels: int, rng: np.random.Generator | None = None, gate_std: float = 0.01):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        for name in ("gate_spatial", "gate_color"):
            conv = Conv2d(channels, channels, k=1, pad=0, rng=rng)
            conv.params["weight"].data = rng.normal(0.0, gate_std, size=(channels, channels, 1, 1))
            self.children[name] = conv

    def forward_pair(self, spatial, color, train=False):
        if spatial.shape != color.shape:
            raise F.ShapeError(f"fusion maps differ in shape: {spatial.shape} vs {color.shape}")
        self._spatial, self._color = spatial, color
        self._gate_s = F.sigmoid(self.children["gate_color"].forward(color, train))
        self._gate_c = F.sigmoid(self.children["gate_spatial"].forward(spatial, train))
        return spatial * self._gate_s, color * self._gate_c

    def backward_pair(self, d_new_spatial, d_new_color):
        gs, gc = self._gate_s, self._gate_c
        d_spatial = d_new_spatial * gs
        d_color = d_new_color * gc
        dz_s = d_new_spatial * self._spatial * gs * (1 - gs)
        dz_c = d_new_color * self._color * gc * (1 - gc)
        d_color = d_color + self.children["gate_color"].backward(dz_s)
        d_spatial = d_spatial + self.children["gate_spatial"].backward(dz_c)
        return d_spatial, d_color


def bca_fuse(spatial: np.ndarray, color: np.ndarray, params: BcaFuse):
    """Return ``(new_spatial, new_color)``."""
    return params.forward_pair(spatial, color)


class BcaFrontend(Layer):
    """Mosaic (N, 1, H, W) -> fused features (N, merge_channels, H/2, W/2).

    Spatial branch: 3x3 conv + ReLU at full resolution, then a stride-2 3x3
    conv + ReLU down to the packed resolution. Color branch: pack, then 3x3
    conv + ReLU. The gated maps are concatenated and merged by a 3x3 conv + ReLU.
    """

    def __init__(self, features: int = 16, merge_channels: int = 16,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.features, self.merge_channels = features, merge_channels
        self.children["spatial_stem"] = Sequential(("conv", Conv2d(1, features, 3, rng=rng)), ("relu", ReLU()))
        self.children["downscale"] = Sequential(("conv", Conv2d(features, features, 3, stride=2, rng=rng)), ("relu", ReLU()))
        self.children["pack"] = Pack()
        self.children["color_stem"] = Sequential(("conv", Conv2d(4, features, 3, rng=rng)), ("relu", ReLU()))
        self.children["fuse"] = BcaFuse(features, rng=rng)
        self.children["merge"] = Sequential(("conv", Conv2d(2 * features, merge_channels, 3, rng=rng)), ("relu", ReLU()))

    def forward(self, x, train=False):
        c = self.children
        spatial = c["downscale"].forward(c["spatial_stem"].forward(x, train), train)
        color = c["color_stem"].forward(c["pack"].forward(x, train), train)
        new_s, new_c = c["fuse"].forward_pair(spatial, color, train)
        return c["merge"].forward(np.concatenate([new_s, new_c], axis=1), train)

    def backward(self, dout):
        c = self.children
        d = c["merge"].backward(dout)
        d_s, d_c = c["fuse"].backward_pair(d[:, :self.features], d[:, self.features:])
        dx = c["spatial_stem"].backward(c["downscale"].backward(d_s))
        return dx + c["pack"].backward(c["color_stem"].backward(d_c))


def bca_frontend(m: CfaMosaic | np.ndarray, params: BcaFrontend) -> np.ndarray:
    """Run the BCA front-end on one mosaic (linearized) or an (N, 1, H, W) batch."""
    if isinstance(m, CfaMosaic):
        x = linearize(m).values[None, None]
    else:
        x = np.asarray(m)
    dtype = next(params.named_params())[1].data.dtype
    return params.forward(x.astype(dtype))

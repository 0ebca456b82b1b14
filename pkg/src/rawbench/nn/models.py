"""Tiny VGG- and ResNet-style classifiers and the five input variants."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .layers import (
    BasicBlock,
    BatchNorm2d,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2x2,
    ReLU,
    Sequential,
)

VGG_WIDTHS = (16, 32, 64)
VGG_HIDDEN = 64
RESNET_WIDTHS = (16, 32, 64)
MIN_INPUT_SIZE = 8


class Architecture(str, enum.Enum):
    TINY_VGG = "tiny-vgg"
    TINY_RESNET = "tiny-resnet"


class Variant(str, enum.Enum):
    ORIGINAL_RAW = "original-raw"
    PACKED_RAW = "packed-raw"
    BCA_RAW = "bca-raw"
    RGB8 = "rgb8"
    RGB16 = "rgb16"

    @property
    def is_raw(self) -> bool:
        return self in (Variant.ORIGINAL_RAW, Variant.PACKED_RAW, Variant.BCA_RAW)

    @property
    def conversion_required(self) -> bool:
        return not self.is_raw

    @property
    def data_format(self) -> str:
        """Name of the on-disk representation the variant reads."""
        return {Variant.RGB8: "rgb8", Variant.RGB16: "rgb16"}.get(self, "raw")

    @property
    def input_channels(self) -> int:
        return 1 if self.is_raw else 3


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    architecture: Architecture = Architecture.TINY_VGG
    input_channels: int = 3
    input_size: int = 40
    num_classes: int = 5
    width_multiplier: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        if self.input_channels < 1 or self.num_classes < 2 or self.width_multiplier <= 0:
            raise ModelError(f"invalid model spec {self}")
        if self.input_size < MIN_INPUT_SIZE:
            raise ModelError(
                f"input_size {self.input_size} too small for the downsampling chain "
                f"(minimum {MIN_INPUT_SIZE})"
            )

    def widths(self) -> tuple[int, ...]:
        base = VGG_WIDTHS if self.architecture is Architecture.TINY_VGG else RESNET_WIDTHS
        return tuple(max(1, round(w * self.width_multiplier)) for w in base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"] = self.architecture.value
        return d


def _tiny_vgg(spec: ModelSpec, rng) -> Sequential:
    layers = []
    ch, size = spec.input_channels, spec.input_size
    for i, w in enumerate(spec.widths(), 1):
        layers += [
            (f"conv{i}", Conv2d(ch, w, 3, rng=rng)),
            (f"relu{i}", ReLU()),
            (f"pool{i}", MaxPool2x2()),
        ]
        ch, size = w, size // 2
    hidden = max(1, round(VGG_HIDDEN * spec.width_multiplier))
    layers += [
        ("flatten", Flatten()),
        ("fc1", Linear(ch * size * size, hidden, rng=rng)),
        ("relu_fc", ReLU()),
        ("fc2", Linear(hidden, spec.num_classes, rng=rng)),
    ]
    return Sequential(*layers)


def _tiny_resnet(spec: ModelSpec, rng) -> Sequential:
    w0, w1, w2 = spec.widths()
    return Sequential(
        ("stem", Conv2d(spec.input_channels, w0, 3, stride=2, bias=False, rng=rng)),
        ("stem_bn", BatchNorm2d(w0)),
        ("stem_relu", ReLU()),
        ("block1", BasicBlock(w0, w0, 1, rng=rng)),
        ("block2", BasicBlock(w0, w1, 2, rng=rng)),
        ("block3", BasicBlock(w1, w2, 2, rng=rng)),
        ("pool", GlobalAvgPool()),
        ("fc", Linear(w2, spec.num_classes, rng=rng)),
    )


def build_model(spec: ModelSpec, seed: int = 0) -> Sequential:
    """Backbone for ``spec`` with Kaiming fan-in init and zero biases.

    TinyVGG: three conv3x3-ReLU-maxpool stages and two fully connected layers.
    TinyResNet: stride-2 conv stem, three basic residual blocks, global average
    pooling and one fully connected layer.
    """
    rng = np.random.default_rng(seed)
    if spec.architecture is Architecture.TINY_VGG:
        return _tiny_vgg(spec, rng)
    return _tiny_resnet(spec, rng)


def expected_param_count(spec: ModelSpec) -> int:
    """Closed-form trainable parameter count for ``spec``."""
    c, k = spec.input_channels, 9
    classes = spec.num_classes
    if spec.architecture is Architecture.TINY_VGG:
        total, size = 0, spec.input_size
        for w in spec.widths():
            total += c * w * k + w
            c, size = w, size // 2
        hidden = max(1, round(VGG_HIDDEN * spec.width_multiplier))
        return total + (c * size * size) * hidden + hidden + hidden * classes + classes
    w0, w1, w2 = spec.widths()

    def block(cin, cout):
        n = cin * cout * k + 2 * cout + cout * cout * k + 2 * cout
        if cin != cout:
            n += cin * cout + 2 * cout
        return n

    # block2/3 are strided so they always project, even if widths coincide
    def strided_block(cin, cout):
        return cin * cout * k + cout * cout * k + 4 * cout + cin * cout + 2 * cout

    return (c * w0 * k + 2 * w0 + block(w0, w0) + strided_block(w0, w1)
            + strided_block(w1, w2) + w2 * classes + classes)


BCA_FEATURES = 16
BCA_MERGE_CHANNELS = 16


def backbone_spec(variant: Variant, arch: Architecture, image_size: int = 40,
                  num_classes: int = 5, width_multiplier: float = 1.0) -> ModelSpec:
    """The backbone spec a variant feeds: packing and BCA halve the resolution."""
    variant, arch = Variant(variant), Architecture(arch)
    if variant is Variant.PACKED_RAW:
        channels, size = 4, image_size // 2
    elif variant is Variant.BCA_RAW:
        channels, size = BCA_MERGE_CHANNELS, image_size // 2
    else:
        channels, size = variant.input_channels, image_size
    return ModelSpec(arch, channels, size, num_classes, width_multiplier)


class Classifier(Sequential):
    """Front-end (identity, pack or BCA) followed by a backbone."""

    def __init__(self, variant: Variant, arch: Architecture, image_size: int = 40,
                 num_classes: int = 5, width_multiplier: float = 1.0, seed: int = 0):
        from ..rawrep import BcaFrontend, Pack

        self.variant, self.arch = Variant(variant), Architecture(arch)
        self.image_size = image_size
        self.spec = backbone_spec(self.variant, self.arch, image_size, num_classes, width_multiplier)
        children = []
        if self.variant is Variant.PACKED_RAW:
            children.append(("frontend", Pack()))
        elif self.variant is Variant.BCA_RAW:
            # frontend draws from its own stream so the backbone init equals build_model(spec, seed)
            frontend_rng = np.random.default_rng([seed, 1])
            children.append(("frontend", BcaFrontend(BCA_FEATURES, BCA_MERGE_CHANNELS, rng=frontend_rng)))
        backbone = build_model(self.spec, seed)
        backbone.check_finite = True
        children.append(("backbone", backbone))
        super().__init__(*children, check_finite=True)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.variant.input_channels, self.image_size, self.image_size)

    def descriptor(self) -> dict:
        return {
            "variant": self.variant.value,
            "arch": self.arch.value,
            "image_size": self.image_size,
            "num_classes": self.spec.num_classes,
            "width_multiplier": self.spec.width_multiplier,
        }


def build_classifier(variant, arch, image_size: int = 40, num_classes: int = 5,
                     width_multiplier: float = 1.0, seed: int = 0, dtype=np.float64) -> Classifier:
    model = Classifier(variant, arch, image_size, num_classes, width_multiplier, seed)
    model.astype(dtype)
    return model


def count_params(layer: Layer) -> int:
    return layer.num_params()

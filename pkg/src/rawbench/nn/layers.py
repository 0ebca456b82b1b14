"""Layer objects with parameters, gradients and momentum buffers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F


class NumericalError(FloatingPointError):
    """NaN or Inf produced inside a layer."""


@dataclass(eq=False)
class Param:
    """A trainable tensor with its gradient accumulator and momentum buffer."""

    data: np.ndarray
    decay: bool = True
    grad: np.ndarray = field(init=False)
    velocity: np.ndarray = field(init=False)

    def __post_init__(self):
        self.grad = np.zeros_like(self.data)
        self.velocity = np.zeros_like(self.data)

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.velocity = self.velocity.astype(dtype)


def kaiming(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Layer:
    """Base class. Subclasses set ``self.params`` / ``self.buffers`` / ``self.children``."""

    def __init__(self):
        self.params: dict[str, Param] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.children: dict[str, Layer] = {}

    def forward(self, x, train: bool = False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def __call__(self, x, train: bool = False):
        return self.forward(x, train)

    def named_params(self, prefix: str = ""):
        for name, p in self.params.items():
            yield prefix + name, p
        for cname, child in self.children.items():
            yield from child.named_params(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = ""):
        for name in self.buffers:
            yield prefix + name, self, name
        for cname, child in self.children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def zero_grad(self) -> None:
        for _, p in self.named_params():
            p.grad[...] = 0

    def astype(self, dtype) -> "Layer":
        for _, p in self.named_params():
            p.astype(dtype)
        for _, owner, name in self.named_buffers():
            owner.buffers[name] = owner.buffers[name].astype(dtype)
        return self

    def num_params(self) -> int:
        return sum(p.data.size for _, p in self.named_params())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_params()}
        for name, owner, key in self.named_buffers():
            state[name] = owner.buffers[key].copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_params())
        buffers = {name: (owner, key) for name, owner, key in self.named_buffers()}
        missing = (set(params) | set(buffers)) - set(state)
        extra = set(state) - set(params) - set(buffers)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.data.shape}")
            p.data = state[name].astype(p.data.dtype, copy=True)
        for name, (owner, key) in buffers.items():
            owner.buffers[key] = state[name].astype(owner.buffers[key].dtype, copy=True)


class Conv2d(Layer):
    def __init__(self, in_ch: int, out_ch: int, k: int = 3, stride: int = 1, pad: int | None = None,
                 bias: bool = True, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.params["weight"] = Param(kaiming(rng, (out_ch, in_ch, k, k), in_ch * k * k))
        if bias:
            self.params["bias"] = Param(np.zeros(out_ch), decay=False)
        self._cache = None

    def forward(self, x, train=False):
        bias = self.params["bias"].data if "bias" in self.params else None
        out, self._cache = F.conv2d_forward(x, self.params["weight"].data, bias, self.stride, self.pad)
        return out

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._cache)
        self.params["weight"].grad += dw
        if db is not None:
            self.params["bias"].grad += db
        return dx


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = Param(kaiming(rng, (out_features, in_features), in_features))
        self.params["bias"] = Param(np.zeros(out_features), decay=False)
        self._x = None

    def forward(self, x, train=False):
        out, self._x = F.linear_forward(x, self.params["weight"].data, self.params["bias"].data)
        return out

    def backward(self, dout):
        dx, dw, db = F.linear_backward(dout, self._x, self.params["weight"].data)
        self.params["weight"].grad += dw
        self.params["bias"].grad += db
        return dx


class ReLU(Layer):
    def forward(self, x, train=False):
        out, self._mask = F.relu_forward(x)
        return out

    def backward(self, dout):
        return F.relu_backward(dout, self._mask)


class MaxPool2x2(Layer):
    def forward(self, x, train=False):
        out, self._cache = F.maxpool2x2_forward(x)
        return out

    def backward(self, dout):
        return F.maxpool2x2_backward(dout, self._cache)


class GlobalAvgPool(Layer):
    def forward(self, x, train=False):
        out, self._shape = F.global_avg_pool_forward(x)
        return out

    def backward(self, dout):
        return F.global_avg_pool_backward(dout, self._shape)


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class BatchNorm2d(Layer):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = Param(np.ones(channels), decay=False)
        self.params["beta"] = Param(np.zeros(channels), decay=False)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def forward(self, x, train=False):
        out, self._cache = F.batchnorm_forward(
            x, self.params["gamma"].data, self.params["beta"].data,
            self.buffers["running_mean"], self.buffers["running_var"],
            train, self.momentum, self.eps,
        )
        return out

    def backward(self, dout):
        dx, dgamma, dbeta = F.batchnorm_backward(dout, self._cache)
        self.params["gamma"].grad += dgamma
        self.params["beta"].grad += dbeta
        return dx


class Sequential(Layer):
    def __init__(self, *named_layers: tuple[str, Layer], check_finite: bool = False):
        super().__init__()
        self.children = dict(named_layers)
        self.check_finite = check_finite

    def forward(self, x, train=False):
        for name, layer in self.children.items():
            x = layer.forward(x, train)
            if self.check_finite and train and not np.all(np.isfinite(x)):
                raise NumericalError(f"non-finite activations after layer {name!r}")
        return x

    def backward(self, dout):
        for name, layer in reversed(self.children.items()):
            dout = layer.backward(dout)
            if self.check_finite and not np.all(np.isfinite(dout)):
                raise NumericalError(f"non-finite gradient in layer {name!r}")
        return dout


class BasicBlock(Layer):
    """conv3x3-BN-ReLU-conv3x3-BN plus shortcut, then ReLU.

    The shortcut is the identity when shape is preserved, otherwise a strided
    1x1 conv followed by BN.
    """

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.children["conv1"] = Conv2d(in_ch, out_ch, 3, stride, bias=False, rng=rng)
        self.children["bn1"] = BatchNorm2d(out_ch)
        self.children["relu1"] = ReLU()
        self.children["conv2"] = Conv2d(out_ch, out_ch, 3, 1, bias=False, rng=rng)
        self.children["bn2"] = BatchNorm2d(out_ch)
        self.projection = stride != 1 or in_ch != out_ch
        if self.projection:
            self.children["proj"] = Conv2d(in_ch, out_ch, 1, stride, pad=0, bias=False, rng=rng)
            self.children["proj_bn"] = BatchNorm2d(out_ch)
        self.children["relu_out"] = ReLU()

    _branch = ("conv1", "bn1", "relu1", "conv2", "bn2")

    def shortcut(self, x, train=False):
        if not self.projection:
            return x
        return self.children["proj_bn"].forward(self.children["proj"].forward(x, train), train)

    def forward(self, x, train=False):
        out = x
        for name in self._branch:
            out = self.children[name].forward(out, train)
        return self.children["relu_out"].forward(out + self.shortcut(x, train), train)

    def backward(self, dout):
        d = self.children["relu_out"].backward(dout)
        dx = d
        for name in reversed(self._branch):
            dx = self.children[name].backward(dx)
        if self.projection:
            dx = dx + self.children["proj"].backward(self.children["proj_bn"].backward(d))
        else:
            dx = dx + d
        return dx

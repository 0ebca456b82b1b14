"""Central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np


def numerical_gradient(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(a, b, floor: float = 1e-7) -> float:
    """Largest elementwise |a - b| / max(|a| + |b|, floor)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor), initial=0.0))


def check_layer(layer, x: np.ndarray, rng: np.random.Generator, eps: float = 1e-5,
                train: bool = True) -> dict[str, float]:
    """Relative errors of the analytic input and parameter gradients of ``layer``.

    The probe loss is ``sum(forward(x) * r)`` for a fixed random ``r``. Keys
    are ``"input"`` plus every parameter name.
    """
    # train-mode batchnorm updates running stats on each forward; they do not
    # feed the train-mode output, but are reset so the layer ends unchanged
    saved = [(owner, key, owner.buffers[key].copy()) for _, owner, key in layer.named_buffers()]

    def restore():
        for owner, key, value in saved:
            owner.buffers[key] = value.copy()

    r = rng.standard_normal(layer.forward(x, train).shape)

    def loss():
        restore()
        return float(np.sum(layer.forward(x, train) * r))

    layer.zero_grad()
    loss()
    dx = layer.backward(r)
    errors = {"input": relative_error(dx, numerical_gradient(loss, x, eps))}
    for name, p in layer.named_params():
        errors[name] = relative_error(p.grad, numerical_gradient(loss, p.data, eps))
    restore()
    return errors

"""Forward/backward kernels on NCHW numpy arrays.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes ``(dout, cache)``. Arrays keep the dtype of their inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((c, k, k, n, ho, wo), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * k * k, n * ho * wo)


# patch-per-row matrices multiply faster once there are enough input channels
ROW_LAYOUT_MIN_CHANNELS = 8


def _patch_rows(x, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """(N*Ho*Wo, k*k*C) patch matrix, each row ordered (ki, kj, c)."""
    n, c, h, w = x.shape
    xh = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    xh[:, pad:pad + h, pad:pad + w] = x.transpose(0, 2, 3, 1)
    win = sliding_window_view(xh, (k, k), axis=(1, 2))[:, :stride * ho:stride, :wo * stride:stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, k * k * c)


def conv2d_forward(x, weight, bias=None, stride: int = 1, pad: int = 0):
    """Cross-correlation. ``weight`` is (F, C, k, k); ``bias`` is (F,) or None."""
    n, c, h, w = x.shape
    f, wc, k, k2 = weight.shape
    if wc != c or k != k2:
        raise ShapeError(f"conv weight {weight.shape} does not match input {x.shape}")
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {h}x{w} too small for kernel {k} with pad {pad}")
    if k == 1 and stride == 1 and pad == 0:
        layout = "pointwise"
        cols = x.transpose(1, 0, 2, 3).reshape(c, -1)
    elif c >= ROW_LAYOUT_MIN_CHANNELS:
        layout = "rows"
        cols = _patch_rows(x, k, stride, pad, ho, wo)
    else:
        layout = "cols"
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        cols = _im2col(xp, k, stride, ho, wo)
    if layout == "rows":
        out = cols @ weight.transpose(2, 3, 1, 0).reshape(-1, f)
        if bias is not None:
            out += bias
        out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    else:
        out = weight.reshape(f, -1) @ cols
        if bias is not None:
            out += bias[:, None]
        out = out.reshape(f, n, ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), (x.shape, cols, weight, stride, pad, bias is not None, layout)


def conv2d_backward(dout, cache):
    """Returns ``(dx, dweight, dbias)``; ``dbias`` is None for bias-free convs."""
    x_shape, cols, weight, stride, pad, has_bias, layout = cache
    n, c, h, w = x_shape
    f, _, k, _ = weight.shape
    ho, wo = dout.shape[2:]
    if layout == "rows":
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
        dweight = (cols.T @ d2).reshape(k, k, c, f).transpose(3, 2, 0, 1)
        dbias = d2.sum(axis=0) if has_bias else None
        dcols = (d2 @ weight.transpose(2, 3, 1, 0).reshape(-1, f).T).reshape(n, ho, wo, k, k, c)
        dxh = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxh[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, i, j]
        dx = dxh[:, pad:pad + h, pad:pad + w].transpose(0, 3, 1, 2)
        return np.ascontiguousarray(dx), np.ascontiguousarray(dweight), dbias
    d2 = dout.transpose(1, 0, 2, 3).reshape(f, -1)
    dweight = (d2 @ cols.T).reshape(weight.shape)
    dbias = d2.sum(axis=1) if has_bias else None
    dcols = weight.reshape(f, -1).T @ d2
    if layout == "pointwise":
        dx = dcols.reshape(c, n, h, w).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(dx), dweight, dbias
    dcols = dcols.reshape(c, k, k, n, ho, wo)
    dxp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
    dx = dxp[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(dx), dweight, dbias


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, out


def relu_backward(dout, out):
    return dout * (out > 0)


def sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def maxpool2x2_forward(x):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    h, w = x.shape[2:]
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {h}x{w} too small for 2x2 pooling")
    a, b, c, d = (x[:, :, i:2 * ho:2, j:2 * wo:2] for i, j in _POOL_OFFSETS)
    out = np.maximum(np.maximum(a, b), np.maximum(c, d))
    return out, (x, out)


def maxpool2x2_backward(dout, cache):
    """Routes each gradient to the first maximal site of its window (row-major)."""
    x, out = cache
    ho, wo = out.shape[2:]
    dx = np.zeros_like(x, dtype=dout.dtype)
    free = np.ones(out.shape, dtype=bool)
    for i, j in _POOL_OFFSETS:
        hit = (x[:, :, i:2 * ho:2, j:2 * wo:2] == out) & free
        dx[:, :, i:2 * ho:2, j:2 * wo:2] = dout * hit
        free &= ~hit
    return dx


def global_avg_pool_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dout, x_shape):
    h, w = x_shape[2:]
    return np.broadcast_to(dout[:, :, None, None] / (h * w), x_shape).copy()


def linear_forward(x, weight, bias):
    """``weight`` is (out, in)."""
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear weight {weight.shape} does not match input {x.shape}")
    return x @ weight.T + bias, x


def linear_backward(dout, x, weight):
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool,
                      momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel batch norm over (N, H, W).

    In train mode the running statistics are updated in place
    (``running = (1 - momentum) * running + momentum * batch``, unbiased variance).
    """
    if train:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ShapeError("batchnorm needs more than one value per channel in train mode")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        # fixed statistics fold into one per-channel affine map
        inv_std = 1.0 / np.sqrt(running_var + eps)
        scale = (gamma * inv_std).astype(x.dtype)
        out = x * scale[:, None, None]
        out += (beta - running_mean * gamma * inv_std)[:, None, None]
        return out, (x, running_mean.copy(), inv_std, gamma, train)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
    out = gamma[:, None, None] * xhat + beta[:, None, None]
    return out, (xhat, None, inv_std, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, mean, inv_std, gamma, train = cache
    if not train:
        xhat = (xhat - mean[:, None, None]) * inv_std[:, None, None]
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dxhat = dout * gamma[:, None, None]
    if not train:
        return dxhat * inv_std[:, None, None], dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = (inv_std[:, None, None] / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3))[:, None, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[:, None, None]
    )
    return dx, dgamma, dbeta


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    n = logits.shape[0]
    if n == 0:
        raise ShapeError("empty batch")
    labels = np.asarray(labels, dtype=np.intp)
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n

"""Tensor primitives with hand-written backward passes.

Activations are stored channel-major, ``(C, B, H, W)``: channel, batch, height
(depth), width (scanline). This lets every convolution run as a single matrix
product over ``B * H * W`` columns.
"""

import numpy as np

__all__ = [
    "conv2d",
    "conv2d_backward",
    "batchnorm",
    "batchnorm_backward",
    "relu",
    "relu_backward",
    "loss_mse",
    "to_channel_major",
    "from_channel_major",
]


def to_channel_major(x):
    """``(C, H, W)`` or ``(B, C, H, W)`` to ``(C, B, H, W)``."""
    x = np.asarray(x)
    if x.ndim == 3:
        return x[:, None]
    if x.ndim == 4:
        return np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    raise ValueError(f"expected a 3-D or 4-D tensor, got shape {x.shape}")


def from_channel_major(x, batched):
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3)) if batched else x[:, 0]


def conv2d(x, weight, bias):
    """Stride-1 cross-correlation with 'same' zero padding.

    Parameters
    ----------
    x : ndarray, shape (Cin, B, H, W)
    weight : ndarray, shape (Cout, Cin, k, k), k odd
    bias : ndarray, shape (Cout,)

    Returns
    -------
    out : ndarray, shape (Cout, B, H, W)
    cache : tuple
        Needed by :func:`conv2d_backward`.
    """
    cin, B, H, W = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(f"input has {cin} channels, kernel expects {wcin}")
    if kh != kw or kh % 2 == 0:
        raise ValueError("kernels must be square with odd size")
    wmat = weight.reshape(cout, -1)
    if kh == 1:
        cols = x.reshape(cin, -1)
    else:
        p = kh // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = np.empty((cin, kh, kw, B, H, W), dtype=x.dtype)
        for a in range(kh):
            for b in range(kw):
                cols[:, a, b] = xp[:, :, a:a + H, b:b + W]
        cols = cols.reshape(cin * kh * kw, -1)
    out = wmat @ cols
    out += bias[:, None]
    return out.reshape(cout, B, H, W), (cols, x.shape, weight)


def conv2d_backward(grad_out, cache):
    """Gradients of :func:`conv2d` with respect to input, weight and bias."""
    cols, xshape, weight = cache
    cin, B, H, W = xshape
    cout, _, kh, kw = weight.shape
    g = grad_out.reshape(cout, -1)
    grad_w = (g @ cols.T).reshape(weight.shape)
    grad_b = g.sum(axis=1)
    gcols = weight.reshape(cout, -1).T @ g
    if kh == 1:
        return gcols.reshape(xshape), grad_w, grad_b
    p = kh // 2
    gcols = gcols.reshape(cin, kh, kw, B, H, W)
    gxp = np.zeros((cin, B, H + 2 * p, W + 2 * p), dtype=grad_out.dtype)
    for a in range(kh):
        for b in range(kw):
            gxp[:, :, a:a + H, b:b + W] += gcols[:, a, b]
    return gxp[:, :, p:p + H, p:p + W], grad_w, grad_b


def batchnorm(x, gamma, beta, running_mean, running_var, train, eps=1e-5, momentum=0.9):
    """Per-channel batch normalization.

    In training mode the batch statistics normalize ``x`` and the running
    statistics are returned updated as ``momentum * old + (1 - momentum) * new``
    (the variance estimate is unbiased). In evaluation mode the running
    statistics are used and returned unchanged.

    Returns
    -------
    out, (running_mean, running_var), cache
    """
    C = x.shape[0]
    flat = x.reshape(C, -1)
    count = flat.shape[1]
    if count == 0:
        raise ValueError("batchnorm needs at least one feature per channel")
    if train:
        if count < 2:
            raise ValueError("training-mode batchnorm needs at least 2 values per channel")
        mean = flat.mean(axis=1)
        centred = flat - mean[:, None]
        var = np.mean(centred * centred, axis=1)
        unbiased = var * (count / (count - 1))
        running_mean = momentum * running_mean + (1 - momentum) * mean
        running_var = momentum * running_var + (1 - momentum) * unbiased
    else:
        mean, var = running_mean, running_var
        centred = flat - mean[:, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std[:, None]
    out = gamma[:, None] * xhat + beta[:, None]
    cache = (xhat, inv_std, gamma, train)
    return out.reshape(x.shape).astype(x.dtype, copy=False), (running_mean, running_var), cache


def batchnorm_backward(grad_out, cache):
    """Returns ``(grad_x, grad_gamma, grad_beta)``."""
    xhat, inv_std, gamma, train = cache
    C = grad_out.shape[0]
    g = grad_out.reshape(C, -1)
    grad_beta = g.sum(axis=1)
    grad_gamma = np.sum(g * xhat, axis=1)
    if train:
        count = g.shape[1]
        gx = (gamma * inv_std / count)[:, None] * (
            count * g - grad_beta[:, None] - xhat * grad_gamma[:, None])
    else:
        gx = (gamma * inv_std)[:, None] * g
    return gx.reshape(grad_out.shape).astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


def relu(x):
    return np.maximum(x, 0), x > 0


def relu_backward(grad_out, mask):
    return grad_out * mask


def loss_mse(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    return loss, (2.0 / diff.size) * diff

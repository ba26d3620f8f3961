"""Finite-difference verification of the analytic gradients."""

import numpy as np

from .layers import loss_mse
from .network import Network

__all__ = ["relative_error", "numerical_gradient", "gradient_check"]


def relative_error(analytic, numeric, floor=1e-7):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numerical_gradient(f, x, eps):
    """Central differences of scalar ``f()`` with respect to ``x``, modified in place."""
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        fp = f()
        flat[k] = old - eps
        fm = f()
        flat[k] = old
        g[k] = (fp - fm) / (2 * eps)
    return grad


def gradient_check(net, eps=1e-3, x=None, target=None, seed=0, batch=2, width=8, dtype=np.float64):
    """Worst relative error between backprop and central-difference parameter gradients.

    The network is copied and cast to ``dtype``; batch normalization runs with
    batch statistics and leaves the running statistics untouched. Where a step
    of ``eps`` would flip a ReLU, the step for that coordinate is shrunk until
    the activation pattern is unchanged, since differences across a kink do
    not estimate the derivative.

    Parameters
    ----------
    net : Network
        A small network (a handful of layers and channels).
    eps : float
        Finite-difference step, must be positive.
    x, target : ndarray, optional
        Input ``(B, C, 3, W)`` and target; random when omitted.
    """
    if not eps > 0:
        raise ValueError("finite-difference step must be positive")
    cfg = net.config
    work = Network(cfg, [type(l)(**{k: None if v is None else np.array(v, dtype=dtype)
                                    for k, v in vars(l).items()}) for l in net.layers])
    work.train()
    rng = np.random.default_rng(seed)
    if x is None:
        x = rng.standard_normal((batch, cfg.input_channels, cfg.depth_window, width))
    if target is None:
        target = rng.standard_normal((len(x), cfg.output_channels) + x.shape[2:])
    x = np.asarray(x, dtype=dtype)
    target = np.asarray(target, dtype=dtype)

    def pattern():
        return [c["relu"] for c in work._caches if "relu" in c]

    def loss():
        return loss_mse(work.forward(x, update_stats=False), target)[0]

    _, grad = loss_mse(work.forward(x, update_stats=False), target)
    base = pattern()
    grads, _ = work.backward(grad)
    worst = 0.0
    for key, param in work.named_parameters():
        flat = param.reshape(-1)
        numeric = np.zeros(flat.size)
        for k in range(flat.size):
            numeric[k] = _central_difference(loss, pattern, base, flat, k, eps)
        worst = max(worst, relative_error(grads[key].reshape(-1), numeric))
    return worst


def _central_difference(f, pattern, base, flat, k, eps, max_halvings=12):
    # A step that flips a ReLU crosses a kink; shrink it until the pattern holds.
    old = flat[k]
    step = eps
    for _ in range(max_halvings):
        flat[k] = old + step
        fp = f()
        same = all(np.array_equal(a, b) for a, b in zip(pattern(), base))
        flat[k] = old - step
        fm = f()
        same = same and all(np.array_equal(a, b) for a, b in zip(pattern(), base))
        flat[k] = old
        if same:
            break
        step /= 4
    return (fp - fm) / (2 * step)

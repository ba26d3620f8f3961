"""Samples, SGD training and whole-frame inference for the deep beamformer."""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..beamform import TimeAlignedCube
from ..postproc import IQImage
from .layers import loss_mse

__all__ = [
    "TrainConfig",
    "Sample",
    "Checkpoint",
    "TrainingDiverged",
    "NonFiniteGradientError",
    "window_scale",
    "target_gain",
    "extract_window",
    "make_sample",
    "stack_samples",
    "lr_schedule",
    "sgd_step",
    "train",
    "window_starts",
    "infer_frame",
]

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    pass


class TrainingDiverged(FloatingPointError):
    """Raised when an epoch loss is not finite; carries the last good checkpoint."""

    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters.

    Defaults are the published recipe (decay 1e-4, learning rate 1e-4 down to
    1e-7, 200 epochs). ``samples_per_epoch`` optionally caps each epoch to a
    random subset of the dataset.
    """

    weight_decay: float = 1e-4
    lr_initial: float = 1e-4
    lr_final: float = 1e-7
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    samples_per_epoch: int = 0

    def __post_init__(self):
        if not 0 < self.lr_final <= self.lr_initial:
            raise ValueError("need 0 < lr_final <= lr_initial")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Sample:
    """One training pair: ``input`` (J, 3, L) and ``target`` (2, 3, L)."""

    input: np.ndarray
    target: np.ndarray


@dataclass(eq=False)
class Checkpoint:
    network: object
    epoch_losses: list
    train_config: TrainConfig = None


def window_scale(window):
    """RMS of the non-zero entries of a channel-data window (1 if all zero)."""
    w = np.asarray(window, dtype=np.float64)
    nz = w[w != 0]
    if nz.size == 0:
        return 1.0
    return float(np.sqrt(np.mean(nz * nz)))


def extract_window(cube, start, depth=3):
    """Depths ``start .. start+depth-1`` of a cube as a ``(J, depth, L)`` tensor."""
    y = cube.data if isinstance(cube, TimeAlignedCube) else cube
    return np.ascontiguousarray(y[:, :, start:start + depth].transpose(1, 2, 0))


def target_gain(num_channels):
    """Fixed gain on normalized targets.

    The channel mean of aligned speckle is about ``sqrt(J)`` below the
    per-channel RMS; this brings targets to unit order.
    """
    return float(np.sqrt(num_channels))


def make_sample(masked_cube, iq, start, depth=3, dtype=np.float32):
    """Normalized training pair for the window starting at depth ``start``.

    The input is divided by its :func:`window_scale` ``s``; the target by
    ``s / target_gain(J)``.
    """
    x = extract_window(masked_cube, start, depth)
    s = window_scale(x)
    g = target_gain(x.shape[0])
    target = np.stack([iq.i[:, start:start + depth].T, iq.q[:, start:start + depth].T])
    return Sample((x / s).astype(dtype), (target * (g / s)).astype(dtype))


def stack_samples(dataset):
    if isinstance(dataset, tuple):
        return dataset
    inputs = np.stack([s.input for s in dataset])
    targets = np.stack([s.target for s in dataset])
    return inputs, targets


def lr_schedule(tc):
    """Per-epoch learning rates, geometric from ``lr_initial`` to ``lr_final``."""
    if tc.epochs == 1:
        return np.array([tc.lr_initial])
    return np.geomspace(tc.lr_initial, tc.lr_final, tc.epochs)


def sgd_step(net, grads, lr, weight_decay):
    """In-place SGD update; weight decay applies to convolution weights only."""
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for layer {key[0]} {key[1]}")
    for (i, name), g in grads.items():
        layer = net.layers[i]
        p = getattr(layer, name)
        if name == "weight" and weight_decay:
            g = g + weight_decay * p
        p -= (lr * g).astype(p.dtype, copy=False)


def train(dataset, net, tc, progress=None):
    """Minimize the mean squared I/Q error with mini-batch SGD.

    Parameters
    ----------
    dataset : list of Sample or (inputs, targets) arrays
    net : Network
        Trained in place.
    tc : TrainConfig
    progress : callable, optional
        Called as ``progress(epoch, loss, lr)`` after every epoch.

    Returns
    -------
    Checkpoint
    """
    inputs, targets = stack_samples(dataset)
    count = len(inputs)
    if count == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(tc.seed)
    rates = lr_schedule(tc)
    losses = []
    net.train()
    good = net.copy()
    per_epoch = min(tc.samples_per_epoch or count, count)
    for epoch, lr in enumerate(rates):
        order = rng.permutation(count)[:per_epoch]
        total, seen = 0.0, 0
        for start in range(0, per_epoch, tc.batch_size):
            idx = np.sort(order[start:start + tc.batch_size])
            pred = net.forward(inputs[idx])
            loss, grad = loss_mse(pred, targets[idx])
            if not np.isfinite(loss):
                break
            grads, _ = net.backward(grad)
            try:
                sgd_step(net, grads, lr, tc.weight_decay)
            except NonFiniteGradientError:
                loss = float("nan")
                break
            total += loss * len(idx)
            seen += len(idx)
        epoch_loss = total / seen if seen == per_epoch else float("nan")
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(
                f"loss diverged in epoch {epoch}",
                Checkpoint(good.eval(), list(losses), tc))
        losses.append(epoch_loss)
        good = net.copy()
        log.info("epoch %d lr %.3g loss %.6g", epoch, lr, epoch_loss)
        if progress is not None:
            progress(epoch, epoch_loss, lr)
    net.eval()
    return Checkpoint(net, losses, tc)


def window_starts(N, depth=3):
    """Start indices of depth windows: stride ``depth``, last one clamped to the end."""
    if N < depth:
        raise ValueError(f"need at least {depth} depth samples, got {N}")
    starts = list(range(0, N - depth + 1, depth))
    if starts[-1] + depth < N:
        starts.append(N - depth)
    return starts


def infer_frame(net, cube, batch_size=256):
    """Beamform a whole aligned (and possibly masked) cube with the network.

    Windows of three depths are processed independently; where the final,
    clamped window overlaps its predecessor, the later window wins.

    Returns
    -------
    IQImage
    """
    y = cube.data if isinstance(cube, TimeAlignedCube) else np.asarray(cube)
    L, J, N = y.shape
    depth = net.config.depth_window
    starts = window_starts(N, depth)
    net.eval()
    i_img = np.zeros((L, N))
    q_img = np.zeros((L, N))
    for b in range(0, len(starts), batch_size):
        chunk = starts[b:b + batch_size]
        wins = np.stack([extract_window(y, s, depth) for s in chunk])
        scales = np.array([window_scale(w) for w in wins])
        out = net.forward((wins / scales[:, None, None, None]).astype(np.float32))
        out = out.astype(np.float64) * (scales / target_gain(J))[:, None, None, None]
        for k, s in enumerate(chunk):
            i_img[:, s:s + depth] = out[k, 0].T
            q_img[:, s:s + depth] = out[k, 1].T
    return IQImage(i_img, q_img)

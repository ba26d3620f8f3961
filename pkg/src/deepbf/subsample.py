"""Receive-channel subsampling masks (variable or fixed across depth)."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beamform import TimeAlignedCube

__all__ = ["SamplingMask", "SCHEMES", "STANDARD_RATES", "make_mask", "apply_mask",
           "write_mask", "read_mask"]

SCHEMES = ("variable", "fixed")
STANDARD_RATES = (64, 32, 24, 16, 8, 4)


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Boolean keep pattern ``keep[n, j]``.

    For the fixed scheme ``keep`` has shape ``(J,)`` and applies to every
    depth plane.
    """

    keep: np.ndarray
    n_keep: int
    scheme: str = "variable"

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        if keep.ndim not in (1, 2):
            raise ValueError("keep must be 1-D (fixed) or 2-D (variable)")
        counts = keep.sum(axis=-1)
        if np.any(counts != self.n_keep):
            raise ValueError("every depth plane must keep exactly n_keep channels")
        J = keep.shape[-1]
        if J >= 2 and not np.all(keep[..., J // 2 - 1] & keep[..., J // 2]):
            raise ValueError("the two centre channels must always be kept")
        keep.setflags(write=False)
        object.__setattr__(self, "keep", keep)

    @property
    def num_channels(self):
        return self.keep.shape[-1]

    def planes(self, num_depth):
        """Full ``(N, J)`` view of the mask."""
        if self.keep.ndim == 1:
            return np.broadcast_to(self.keep, (num_depth, self.num_channels))
        if self.keep.shape[0] != num_depth:
            raise ValueError(f"mask has {self.keep.shape[0]} planes, cube has {num_depth}")
        return self.keep


def make_mask(scheme, n_keep, J, N, seed):
    """Random receive mask that always keeps the two centre channels.

    The other ``n_keep - 2`` channels are drawn uniformly without replacement,
    once for the ``"fixed"`` scheme and independently per depth plane for
    ``"variable"``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if not 2 <= n_keep <= J:
        raise ValueError(f"n_keep must be in [2, {J}], got {n_keep}")
    centre = np.array([J // 2 - 1, J // 2])
    others = np.setdiff1d(np.arange(J), centre)
    rng = np.random.default_rng(seed)
    planes = 1 if scheme == "fixed" else N
    keep = np.zeros((planes, J), dtype=bool)
    keep[:, centre] = True
    extra = n_keep - 2
    if extra:
        # argsort of uniform keys gives an independent permutation per plane
        order = np.argsort(rng.random((planes, len(others))), axis=1)[:, :extra]
        np.put_along_axis(keep, others[order], True, axis=1)
    if scheme == "fixed":
        keep = keep[0]
    return SamplingMask(keep, int(n_keep), scheme)


def apply_mask(cube, mask):
    """Zero the channels dropped by ``mask``; dimensions are unchanged."""
    y = cube.data if isinstance(cube, TimeAlignedCube) else np.asarray(cube)
    L, J, N = y.shape
    if mask.num_channels != J:
        raise ValueError(f"mask has {mask.num_channels} channels, cube has {J}")
    keep = mask.planes(N).T  # (J, N)
    return TimeAlignedCube(np.where(keep[None], y, 0).astype(y.dtype, copy=False))


def write_mask(mask, path, num_depth=None):
    """One line per depth plane of '0'/'1' characters, channel 0 first."""
    planes = np.atleast_2d(mask.keep if num_depth is None else mask.planes(num_depth))
    lines = ["".join("1" if k else "0" for k in row) for row in planes]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mask(path, scheme=None):
    rows = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or any(set(r) - {"0", "1"} for r in rows):
        raise ValueError(f"{path}: mask lines must be made of 0/1 characters")
    keep = np.array([[c == "1" for c in r] for r in rows], dtype=bool)
    if scheme is None:
        scheme = "fixed" if len(keep) == 1 else "variable"
    if scheme == "fixed":
        if not np.all(keep == keep[0]):
            raise ValueError(f"{path}: fixed mask differs between planes")
        keep = keep[0]
    return SamplingMask(keep, int(np.atleast_2d(keep)[0].sum()), scheme)

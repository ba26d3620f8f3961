"""Time alignment and the classical beamformers (delay-and-sum, minimum variance).

All beamformers work on the time-aligned cube ``y[l, j, n]`` and return a
beamformed RF image ``z[l, n]`` prior to envelope detection.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "TimeAlignedCube",
    "MVParams",
    "MVDiagnostics",
    "time_align",
    "das",
    "mv_covariance",
    "mv_weights",
    "mv_beamform",
]


@dataclass(frozen=True, eq=False)
class TimeAlignedCube:
    """Focused channel data ``y[l, j, n]`` (scanline, channel, depth)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"cube must be 3-D (L, J, N), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("cube entries must be finite")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class MVParams:
    """Minimum-variance settings.

    Attributes
    ----------
    subaperture_len : int
        Subaperture length ``K``; ``1 <= K <= J/2``.
    temporal_halfwidth : int
        Half-width of the depth window over which covariances are averaged.
    loading_factor : float
        Diagonal loading, relative to ``trace(R) / K``.
    """

    subaperture_len: int = 32
    temporal_halfwidth: int = 1
    loading_factor: float = 1e-2

    def __post_init__(self):
        if self.subaperture_len < 1:
            raise ValueError("subaperture_len must be >= 1")
        if self.temporal_halfwidth < 0:
            raise ValueError("temporal_halfwidth must be >= 0")
        if not self.loading_factor >= 0:
            raise ValueError("loading_factor must be >= 0")

    def check(self, num_channels):
        if not 1 <= self.subaperture_len <= max(1, num_channels // 2):
            raise ValueError(
                f"subaperture_len {self.subaperture_len} outside [1, {num_channels // 2}]")

    @classmethod
    def for_channels(cls, num_channels, **kw):
        return cls(subaperture_len=max(1, num_channels // 2), **kw)


@dataclass
class MVDiagnostics:
    """Counts of samples where the loaded covariance could not be factorized."""

    fallbacks: int = 0
    samples: int = 0

    def merge(self, other):
        return MVDiagnostics(self.fallbacks + other.fallbacks, self.samples + other.samples)


def time_align(frame, delays):
    """Apply receive focusing: ``y[l, j, n] = x[l, j, n + tau[j, n]]``.

    Source indices past the end of the record read as zero.
    """
    x = frame.data if hasattr(frame, "data") else np.asarray(frame)
    tau = delays.tau if hasattr(delays, "tau") else np.asarray(delays)
    L, J, N = x.shape
    if tau.shape != (J, N):
        raise ValueError(f"delay table {tau.shape} does not match frame channels/depth {(J, N)}")
    src = np.arange(N)[None, :] + tau
    valid = src < N
    src = np.where(valid, src, 0)
    y = np.take_along_axis(x, np.broadcast_to(src, (L, J, N)), axis=2)
    y = np.where(valid[None], y, 0).astype(x.dtype, copy=False)
    return TimeAlignedCube(y)


def das(cube, weights=None):
    """Delay-and-sum.

    Parameters
    ----------
    cube : TimeAlignedCube
    weights : array_like, optional
        Apodization of length ``J`` or per-sample weights shaped ``(L, N, J)``.
        Uniform ``1/J`` when omitted.

    Returns
    -------
    ndarray, shape (L, N)
    """
    y = np.asarray(cube.data, dtype=np.float64)
    L, J, N = y.shape
    if weights is None:
        return y.mean(axis=1)
    w = np.asarray(weights, dtype=np.float64)
    if np.isnan(w).any():
        raise ValueError("weights contain NaN")
    if w.shape == (J,):
        return np.einsum("j,ljn->ln", w, y)
    if w.shape == (L, N, J):
        return np.einsum("lnj,ljn->ln", w, y)
    raise ValueError(f"weights shape {w.shape} incompatible with cube {y.shape}")


def _subapertures(y_l, K):
    # (N, K, P): column p holds channels p..p+K-1
    return sliding_window_view(y_l, K, axis=0).transpose(1, 2, 0)


def _window_average(R, hw):
    """Mean of ``R[m]`` over ``m`` in ``[n - hw, n + hw]`` clipped to the record."""
    if hw == 0:
        return R
    N = R.shape[0]
    csum = np.concatenate([np.zeros((1,) + R.shape[1:]), np.cumsum(R, axis=0)])
    n = np.arange(N)
    lo = np.maximum(n - hw, 0)
    hi = np.minimum(n + hw, N - 1) + 1
    return (csum[hi] - csum[lo]) / (hi - lo)[:, None, None]


def _load(R, loading_factor):
    K = R.shape[-1]
    if loading_factor == 0:
        return R
    level = loading_factor * np.trace(R, axis1=-2, axis2=-1) / K
    return R + level[..., None, None] * np.eye(K)


def _scanline_covariances(y_l, params):
    K = params.subaperture_len
    J = y_l.shape[0]
    S = _subapertures(y_l, K)
    R = np.matmul(S, S.transpose(0, 2, 1)) / (J - K + 1)
    R = _window_average(R, params.temporal_halfwidth)
    return _load(R, params.loading_factor), S


def mv_covariance(cube, l, n, params):
    """Smoothed, loaded spatial covariance ``R[l, n]`` of size ``K x K``."""
    y = np.asarray(cube.data, dtype=np.float64)
    L, J, N = y.shape
    params.check(J)
    hw = params.temporal_halfwidth
    lo, hi = max(n - hw, 0), min(n + hw, N - 1) + 1
    S = _subapertures(y[l, :, lo:hi], params.subaperture_len)
    R = np.matmul(S, S.transpose(0, 2, 1)).mean(axis=0) / (J - params.subaperture_len + 1)
    return _load(R, params.loading_factor)


def mv_weights(R):
    """Capon weights ``R^-1 a / (a^T R^-1 a)`` with all-ones steering ``a``.

    Works on a single matrix or a stack ``(..., K, K)``. Matrices whose
    Cholesky factorization fails get uniform weights ``a / K``; the boolean
    mask of those is returned alongside.
    """
    R = np.asarray(R, dtype=np.float64)
    single = R.ndim == 2
    R = R.reshape((-1,) + R.shape[-2:])
    K = R.shape[-1]
    w = np.full(R.shape[:-1], 1.0 / K)
    failed = np.zeros(len(R), dtype=bool)
    ones = np.ones((K, 1))
    try:
        chol = np.linalg.cholesky(R)
        good = np.ones(len(R), dtype=bool)
    except np.linalg.LinAlgError:
        chol = None
    if chol is None:
        # Locate the offending matrices one at a time.
        chol = np.zeros_like(R)
        good = np.zeros(len(R), dtype=bool)
        for i, Ri in enumerate(R):
            try:
                chol[i] = np.linalg.cholesky(Ri)
                good[i] = True
            except np.linalg.LinAlgError:
                pass
    if good.any():
        c = chol[good]
        u = np.linalg.solve(c, np.broadcast_to(ones, (len(c), K, 1)))
        u = np.linalg.solve(c.transpose(0, 2, 1), u)[..., 0]
        denom = u.sum(axis=-1)
        ok = np.isfinite(denom) & (np.abs(denom) > 0) & np.all(np.isfinite(u), axis=-1)
        idx = np.flatnonzero(good)
        w[idx[ok]] = u[ok] / denom[ok, None]
        good[idx[~ok]] = False
    failed = ~good
    if single:
        return w[0], failed[0]
    return w, failed


def mv_beamform(cube, params=None, diagnostics=None):
    """Minimum-variance beamformer with subaperture and temporal averaging.

    The output at ``(l, n)`` is the mean over the ``J - K + 1`` subapertures of
    ``w^T y_sub``, with ``w`` the Capon weights of the smoothed covariance.

    Parameters
    ----------
    cube : TimeAlignedCube
    params : MVParams, optional
        Defaults to ``K = J/2``, temporal half-width 1, loading 1e-2.
    diagnostics : MVDiagnostics, optional
        Updated in place with factorization fallbacks.

    Returns
    -------
    ndarray, shape (L, N)
    """
    y = np.asarray(cube.data, dtype=np.float64)
    L, J, N = y.shape
    if params is None:
        params = MVParams.for_channels(J)
    params.check(J)
    z = np.empty((L, N))
    total = MVDiagnostics()
    for l in range(L):
        R, S = _scanline_covariances(y[l], params)
        w, failed = mv_weights(R)
        z[l] = np.einsum("nk,nk->n", w, S.mean(axis=2))
        total = total.merge(MVDiagnostics(int(failed.sum()), N))
    if diagnostics is not None:
        diagnostics.fallbacks += total.fallbacks
        diagnostics.samples += total.samples
    return z

"""Image-quality metrics: CNR, GCNR, PSNR and SSIM, plus region bookkeeping."""

import csv
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Region",
    "SSIMParams",
    "cnr",
    "gcnr",
    "psnr",
    "ssim",
    "ssim_map",
    "CSV_COLUMNS",
    "write_metrics_csv",
    "read_metrics_csv",
]

CSV_COLUMNS = ("frame", "scheme", "n_keep", "method", "CNR", "GCNR", "PSNR", "SSIM")


@dataclass(frozen=True)
class Region:
    """Rectangle ``[l0, l1) x [n0, n1)`` or disk, in pixel indices ``[l, n]``.

    ``role`` is ``"B"`` (background) or ``"aS"`` (anechoic structure) and is
    informational only.
    """

    kind: str
    params: tuple
    role: str = "B"

    @classmethod
    def rect(cls, l0, n0, l1, n1, role="B"):
        return cls("rect", (int(l0), int(n0), int(l1), int(n1)), role)

    @classmethod
    def disk(cls, center_l, center_n, radius, role="aS"):
        return cls("disk", (float(center_l), float(center_n), float(radius)), role)

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        role = d.get("role", "B")
        if kind == "rect":
            return cls.rect(d["l0"], d["n0"], d["l1"], d["n1"], role)
        if kind == "disk":
            return cls.disk(d["center_l"], d["center_n"], d["radius"], role)
        raise ValueError(f"unknown region kind {kind!r}")

    def mask(self, shape):
        L, N = shape
        if self.kind == "rect":
            l0, n0, l1, n1 = self.params
            if not (0 <= l0 < l1 <= L and 0 <= n0 < n1 <= N):
                raise ValueError(f"rectangle {self.params} outside image of shape {shape}")
            m = np.zeros(shape, dtype=bool)
            m[l0:l1, n0:n1] = True
            return m
        if self.kind == "disk":
            cl, cn, r = self.params
            ll, nn = np.ogrid[:L, :N]
            m = (ll - cl) ** 2 + (nn - cn) ** 2 <= r * r
            if not m.any():
                raise ValueError(f"disk {self.params} selects no pixel of image {shape}")
            return m
        raise ValueError(f"unknown region kind {self.kind!r}")

    def pixels(self, img):
        img = np.asarray(img, dtype=np.float64)
        return img[self.mask(img.shape)]


@dataclass(frozen=True)
class SSIMParams:
    k1: float = 0.01
    k2: float = 0.03
    window_radius: int = 50
    r_max: float = 255.0

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if min(self.k1, self.k2, self.r_max) <= 0:
            raise ValueError("SSIM constants must be positive")

    @property
    def c1(self):
        return (self.k1 * self.r_max) ** 2

    @property
    def c2(self):
        return (self.k2 * self.r_max) ** 2


def _values(img, region):
    if isinstance(region, Region):
        vals = region.pixels(img)
    else:
        vals = np.asarray(img, dtype=np.float64)[np.asarray(region, dtype=bool)]
    if vals.size == 0:
        raise ValueError("region is empty")
    return vals


def cnr(img, background, structure):
    """``|mu_B - mu_aS| / sqrt(var_B + var_aS)`` with population variances."""
    b = _values(img, background)
    s = _values(img, structure)
    diff = abs(b.mean() - s.mean())
    spread = b.var() + s.var()
    if spread == 0:
        if diff == 0:
            return 0.0
        raise ValueError("degenerate contrast: both regions constant with different means")
    return float(diff / math.sqrt(spread))


def gcnr(img, background, structure, bins=256):
    """One minus the overlap of the two regions' intensity histograms.

    Both histograms use ``bins`` equal bins over the joint value range.
    """
    b = _values(img, background)
    s = _values(img, structure)
    lo = min(b.min(), s.min())
    hi = max(b.max(), s.max())
    if hi == lo:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    pb = np.histogram(b, edges)[0] / b.size
    ps = np.histogram(s, edges)[0] / s.size
    return float(1.0 - np.minimum(pb, ps).sum())


def psnr(ref, test, r_max=255.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"image shapes differ: {ref.shape} vs {test.shape}")
    err = np.sum((ref - test) ** 2)
    if err == 0:
        return math.inf
    return float(10.0 * math.log10(ref.size * r_max**2 / err))


def _box_mean(img, r):
    # Mean over the square window of half-width r, clipped at the borders.
    def axis_sums(a, axis):
        n = a.shape[axis]
        c = np.cumsum(a, axis=axis)
        c = np.concatenate([np.zeros_like(np.take(c, [0], axis=axis)), c], axis=axis)
        idx = np.arange(n)
        hi = np.minimum(idx + r, n - 1) + 1
        lo = np.maximum(idx - r, 0)
        return np.take(c, hi, axis=axis) - np.take(c, lo, axis=axis), hi - lo

    s0, n0 = axis_sums(img, 0)
    s1, n1 = axis_sums(s0, 1)
    return s1 / np.outer(n0, n1)


def ssim_map(ref, test, params=None):
    """Per-pixel SSIM over square windows of half-width ``window_radius``."""
    params = params or SSIMParams()
    x = np.asarray(ref, dtype=np.float64)
    y = np.asarray(test, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    r = params.window_radius
    mx, my = _box_mean(x, r), _box_mean(y, r)
    vx = _box_mean(x * x, r) - mx * mx
    vy = _box_mean(y * y, r) - my * my
    cxy = _box_mean(x * y, r) - mx * my
    c1, c2 = params.c1, params.c2
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim(ref, test, params=None):
    """Mean structural similarity over all pixels."""
    return float(np.mean(ssim_map(ref, test, params)))


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def _fmt(value):
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["n_keep"] = int(row["n_keep"])
        for c in ("CNR", "GCNR", "PSNR", "SSIM"):
            row[c] = float(row[c])
    return rows

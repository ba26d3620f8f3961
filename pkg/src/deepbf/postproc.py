"""Analytic signal, envelope detection, log compression and PGM output."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "IQImage",
    "BModeImage",
    "hilbert_analytic",
    "envelope",
    "log_compress",
    "write_pgm",
    "read_pgm",
    "DEFAULT_DYNAMIC_RANGE_DB",
]

DEFAULT_DYNAMIC_RANGE_DB = 60.0


@dataclass(frozen=True, eq=False)
class IQImage:
    """In-phase and quadrature components, each shaped ``(L, N)``."""

    i: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        i, q = np.asarray(self.i), np.asarray(self.q)
        if i.shape != q.shape:
            raise ValueError(f"I {i.shape} and Q {q.shape} differ in shape")
        if not (np.all(np.isfinite(i)) and np.all(np.isfinite(q))):
            raise ValueError("IQ samples must be finite")
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "q", q)

    @property
    def shape(self):
        return self.i.shape

    def complex(self):
        return self.i + 1j * self.q


@dataclass(frozen=True, eq=False)
class BModeImage:
    """8-bit B-mode image indexed ``[l, n]``."""

    pixels: np.ndarray
    dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.size and (px.min() < 0 or px.max() > 255):
            raise ValueError("pixels must lie in [0, 255]")
        if not self.dynamic_range_db > 0:
            raise ValueError("dynamic_range_db must be positive")
        object.__setattr__(self, "pixels", px.astype(np.uint8))


def hilbert_analytic(z):
    """Analytic signal of every scanline along depth, via the FFT.

    Negative-frequency bins are zeroed and strictly positive ones doubled;
    DC and (for even length) Nyquist are kept as is.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    N = z.shape[-1]
    if N < 2:
        raise ValueError("need at least 2 depth samples for the Hilbert transform")
    h = np.zeros(N)
    h[0] = 1.0
    if N % 2 == 0:
        h[N // 2] = 1.0
        h[1:N // 2] = 2.0
    else:
        h[1:(N + 1) // 2] = 2.0
    za = np.fft.ifft(np.fft.fft(z, axis=-1) * h, axis=-1)
    # The real part is the input up to round-off; keep it exact.
    return IQImage(z.copy(), za.imag)


def envelope(iq):
    return np.hypot(iq.i, iq.q)


def log_compress(env, dynamic_range_db=DEFAULT_DYNAMIC_RANGE_DB):
    """Map an envelope to 8-bit pixels over ``dynamic_range_db`` below its maximum."""
    env = np.asarray(env, dtype=np.float64)
    if not dynamic_range_db > 0:
        raise ValueError("dynamic_range_db must be positive")
    if np.any(env < 0):
        raise ValueError("envelope must be non-negative")
    peak = env.max() if env.size else 0.0
    if not peak > 0:
        raise ValueError("all-zero envelope has no reference level")
    floor = 10.0 ** (-dynamic_range_db / 20.0) * 1e-2 * peak
    db = 20.0 * np.log10(np.maximum(env, floor) / peak)
    pixels = np.rint(255.0 * np.clip(1.0 + db / dynamic_range_db, 0.0, 1.0))
    return BModeImage(pixels.astype(np.uint8), float(dynamic_range_db))


def write_pgm(image, path):
    """Binary PGM (P5), maxval 255; rows are depth samples, columns scanlines."""
    px = image.pixels if isinstance(image, BModeImage) else np.asarray(image, dtype=np.uint8)
    rows = np.ascontiguousarray(px.T)
    height, width = rows.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(rows.tobytes())


def read_pgm(path):
    """Read a P5 file written by :func:`write_pgm`; returns pixels indexed ``[l, n]``."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos + 1)
    return data.reshape(height, width).T.copy()

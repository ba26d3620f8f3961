"""Probe geometry, receive-focusing delays, RF channel-data synthesis and USRF I/O.

RF frames are stored as ``(L, J, N)`` float32 arrays: transmit event (scanline),
active receive channel, depth sample.

Geometry conventions
--------------------
Scanline ``l`` has its axis at lateral position ``(l - (L-1)/2) * pitch``. The
``J`` active receive elements of that scanline sit at lateral offsets
``(j - (J-1)/2) * pitch`` from the axis. Depth sample ``n`` corresponds to the
two-way range ``d_n = n * c / (2 fs)``. The transmit is modelled as a point
source on the scanline axis at the array surface.
"""

import dataclasses
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ProbeConfig",
    "Phantom",
    "RFFrame",
    "DelayTable",
    "RFFormatError",
    "BadMagicError",
    "TruncatedFileError",
    "DimensionOverflowError",
    "compute_delay_table",
    "focusing_delay",
    "element_offsets",
    "scanline_positions",
    "depth_axis",
    "pulse",
    "simulate_rf",
    "write_rf",
    "read_rf",
]

USRF_MAGIC = b"USRF"
USRF_VERSION = 1
# Refuse payloads above 2**31 samples (8 GiB of float32).
MAX_SAMPLES = 2**31

# Sub-sample phases used to place pulse arrivals between samples.
_PHASES = 8
# Pulse support, in Gaussian standard deviations on each side.
_PULSE_SIGMAS = 4.0
FRACTIONAL_BANDWIDTH = 0.6


@dataclass(frozen=True)
class ProbeConfig:
    """Linear-array probe and acquisition settings.

    Defaults follow the L3-12H probe (8.48 MHz carrier, 40 MHz sampling,
    192 elements, 96 transmit events, 64 active receivers, 0.2 mm pitch).
    """

    carrier_freq_hz: float = 8.48e6
    sampling_freq_hz: float = 40e6
    num_elements: int = 192
    num_tx_elements: int = 128
    num_te_events: int = 96
    num_rx_active: int = 64
    pitch_m: float = 0.2e-3
    element_width_m: float = 0.14e-3
    sound_speed_m_s: float = 1540.0
    num_depth_samples: int = 1024

    def __post_init__(self):
        for name in ("carrier_freq_hz", "sampling_freq_hz", "pitch_m",
                     "element_width_m", "sound_speed_m_s"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        for name in ("num_elements", "num_tx_elements", "num_te_events",
                     "num_rx_active", "num_depth_samples"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
            object.__setattr__(self, name, int(value))
        if self.num_rx_active > self.num_elements:
            raise ValueError("num_rx_active cannot exceed num_elements")

    @property
    def shape(self):
        return (self.num_te_events, self.num_rx_active, self.num_depth_samples)

    @property
    def sample_depth_m(self):
        """Depth increment of one sample (two-way travel)."""
        return self.sound_speed_m_s / (2.0 * self.sampling_freq_hz)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def scalars(self):
        return [float(getattr(self, f.name)) for f in dataclasses.fields(self)]


@dataclass(frozen=True)
class Phantom:
    """Point scatterers given as ``(lateral_m, depth_m, amplitude)`` triples."""

    scatterers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        arr = np.asarray(self.scatterers, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(arr)):
            raise ValueError("scatterer coordinates must be finite")
        if np.any(arr[:, 1] <= 0):
            raise ValueError("every scatterer must lie in front of the array (depth > 0)")
        arr.setflags(write=False)
        object.__setattr__(self, "scatterers", arr)

    def __len__(self):
        return len(self.scatterers)

    @classmethod
    def points(cls, *triples):
        return cls(np.array(triples, dtype=np.float64).reshape(-1, 3))

    @classmethod
    def cyst(cls, center, radius, extent_lateral, extent_depth, density_per_mm2, seed):
        """Uniform random speckle scatterers with an empty disk.

        Parameters
        ----------
        center : (float, float)
            Lateral and depth position of the anechoic disk [m].
        radius : float
            Disk radius [m].
        extent_lateral, extent_depth : (float, float)
            Bounding box of the scatterer field [m].
        density_per_mm2 : float
            Mean number of scatterers per square millimetre.
        seed : int
            Seed for positions and Gaussian amplitudes.
        """
        rng = np.random.default_rng(seed)
        (x0, x1), (z0, z1) = extent_lateral, extent_depth
        area_mm2 = (x1 - x0) * (z1 - z0) * 1e6
        count = int(round(density_per_mm2 * area_mm2))
        x = rng.uniform(x0, x1, count)
        z = rng.uniform(z0, z1, count)
        amp = rng.standard_normal(count)
        outside = (x - center[0]) ** 2 + (z - center[1]) ** 2 > radius**2
        return cls(np.column_stack([x[outside], z[outside], amp[outside]]))


@dataclass(frozen=True, eq=False)
class RFFrame:
    """Raw channel data ``x[l, j, n]`` with the probe that produced it."""

    data: np.ndarray
    probe: ProbeConfig

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.shape != self.probe.shape:
            raise ValueError(f"data shape {data.shape} does not match probe {self.probe.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("RF samples must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)


@dataclass(frozen=True, eq=False)
class DelayTable:
    """Receive focusing delays ``tau[j, n]`` in samples.

    ``tau[j, n]`` is the extra receive path of channel ``j`` relative to the
    scanline axis for a focal point at depth sample ``n``: the echo focused at
    ``n`` is recorded on channel ``j`` at sample ``n + tau[j, n]``.
    """

    tau: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau)
        if tau.ndim != 2 or not np.issubdtype(tau.dtype, np.integer):
            raise ValueError("tau must be a 2-D integer array")
        if np.any(tau < 0):
            raise ValueError("delays must be non-negative")
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)

    @property
    def shape(self):
        return self.tau.shape


def element_offsets(probe):
    """Lateral offsets of the active receive elements from the scanline axis [m]."""
    J = probe.num_rx_active
    return (np.arange(J) - (J - 1) / 2.0) * probe.pitch_m


def scanline_positions(probe):
    """Lateral positions of the scanline axes [m]."""
    L = probe.num_te_events
    return (np.arange(L) - (L - 1) / 2.0) * probe.pitch_m


def depth_axis(probe):
    """Depth of every sample index [m]."""
    return np.arange(probe.num_depth_samples) * probe.sample_depth_m


def focusing_delay(depth_m, offset_m, sampling_freq_hz, sound_speed_m_s):
    """Extra receive path, in (fractional) samples, of an element ``offset_m``
    off axis for a focal point at ``depth_m``."""
    d = np.asarray(depth_m, dtype=np.float64)
    x = np.asarray(offset_m, dtype=np.float64)
    return (np.sqrt(d * d + x * x) - d) * (sampling_freq_hz / sound_speed_m_s)


def compute_delay_table(probe):
    """Dynamic receive-focusing delays, rounded to whole samples.

    ``tau[j, n] = round(fs / c * (sqrt(d_n**2 + x_j**2) - d_n))``. The same
    table serves every scanline of a linear array.
    """
    extra = focusing_delay(depth_axis(probe)[None, :], element_offsets(probe)[:, None],
                           probe.sampling_freq_hz, probe.sound_speed_m_s)
    return DelayTable(np.rint(extra).astype(np.int64))


def pulse_sigma(probe):
    """Standard deviation [s] of the Gaussian envelope for the -6 dB bandwidth."""
    bandwidth = FRACTIONAL_BANDWIDTH * probe.carrier_freq_hz
    return math.sqrt(2.0 * math.log(2.0)) / (math.pi * bandwidth)


def pulse(t, probe):
    """Gaussian-enveloped carrier evaluated at times ``t`` [s]."""
    t = np.asarray(t, dtype=np.float64)
    sigma = pulse_sigma(probe)
    return np.exp(-0.5 * (t / sigma) ** 2) * np.cos(2.0 * np.pi * probe.carrier_freq_hz * t)


def _phase_bank_spectra(probe, half_width, nfft):
    # Kernel for phase q holds p((k - q/Q) / fs) for k in [-K, K], stored at k + K.
    fs = probe.sampling_freq_hz
    k = np.arange(-half_width, half_width + 1)
    q = np.arange(_PHASES)[:, None]
    kernels = pulse((k[None, :] - q / _PHASES) / fs, probe)
    return np.fft.rfft(kernels, n=nfft, axis=-1)


def _noise_stream(seed, l, j, n):
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(l, j))
    return np.random.Generator(np.random.PCG64(ss)).standard_normal(n)


def simulate_rf(probe, phantom, noise_std=0.0, seed=0):
    """Synthesize pulse-echo channel data for a point-scatterer phantom.

    Each scatterer adds ``amplitude / (d_tx * d_rx) * p(t - (d_tx + d_rx) / c)``
    to every receive channel, where ``d_tx`` is the range from the scanline
    axis on the array surface and ``d_rx`` the range to the receiving element.
    Arrivals between samples are resolved to 1/8 of a sample with linear
    interpolation between neighbouring sub-sample phases.

    Parameters
    ----------
    probe : ProbeConfig
    phantom : Phantom
    noise_std : float
        Standard deviation of additive white Gaussian noise per sample.
    seed : int
        Master seed; channel ``(l, j)`` draws its noise from its own stream.

    Returns
    -------
    RFFrame
    """
    if not noise_std >= 0:
        raise ValueError("noise_std must be non-negative")
    L, J, N = probe.shape
    fs, c = probe.sampling_freq_hz, probe.sound_speed_m_s
    out = np.zeros((L, J, N), dtype=np.float64)

    scat = phantom.scatterers
    if len(scat):
        K = int(math.ceil(_PULSE_SIGMAS * pulse_sigma(probe) * fs)) + 1
        span = N + 2 * K  # coarse bins cover arrivals m in [-K, N + K)
        nfft = 1 << int(math.ceil(math.log2(span + 2 * K + 1)))
        bank = _phase_bank_spectra(probe, K, nfft)
        xs, zs, amps = scat[:, 0], scat[:, 1], scat[:, 2]
        offsets = element_offsets(probe)
        zs2 = zs * zs
        for l, axis in enumerate(scanline_positions(probe)):
            d_tx = np.sqrt((xs - axis) ** 2 + zs2)
            d_rx = (xs[None, :] - (axis + offsets)[:, None]) ** 2
            d_rx += zs2
            np.sqrt(d_rx, out=d_rx)
            weight = amps[None, :] / (d_tx[None, :] * d_rx)
            fine = (d_tx[None, :] + d_rx) * (fs * _PHASES / c)
            i0 = np.floor(fine)
            frac = fine - i0
            # Fine-grid layout (j, m, q) flattens to j * span * Q + fine index.
            lin = i0.astype(np.int64) + (K * _PHASES + np.arange(J)[:, None] * (span * _PHASES))
            ok = i0 < (N + K) * _PHASES - 1
            lin, frac, weight_ok = lin[ok], frac[ok], np.broadcast_to(weight, ok.shape)[ok]
            size = J * span * _PHASES
            fine_grid = (np.bincount(lin, weight_ok * (1.0 - frac), minlength=size)
                         + np.bincount(lin + 1, weight_ok * frac, minlength=size))
            grid = fine_grid.reshape(J, span, _PHASES).transpose(0, 2, 1)
            spec = np.einsum("jqf,qf->jf", np.fft.rfft(grid, n=nfft, axis=-1), bank)
            out[l] = np.fft.irfft(spec, n=nfft, axis=-1)[:, 2 * K:2 * K + N]

    if noise_std > 0:
        for l in range(L):
            for j in range(J):
                out[l, j] += noise_std * _noise_stream(seed, l, j, N)
    return RFFrame(out.astype(np.float32), probe)


# -- USRF binary format -------------------------------------------------------

class RFFormatError(ValueError):
    """Malformed USRF file."""


class BadMagicError(RFFormatError):
    pass


class TruncatedFileError(RFFormatError):
    pass


class DimensionOverflowError(RFFormatError):
    pass


_HEADER = struct.Struct("<4sH3I")
_NUM_SCALARS = len(dataclasses.fields(ProbeConfig))
_SCALARS = struct.Struct("<%dd" % _NUM_SCALARS)


def write_rf(frame, path):
    """Write ``frame`` as USRF.

    Layout: ``b"USRF"``, u16 version, u32 L, J, N, the ProbeConfig fields as
    float64 in declaration order, then ``L*J*N`` float32 samples in
    ``[l][j][n]`` order. Everything little-endian.
    """
    L, J, N = frame.data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(USRF_MAGIC, USRF_VERSION, L, J, N))
        fh.write(_SCALARS.pack(*frame.probe.scalars()))
        fh.write(frame.data.astype("<f4", copy=False).tobytes(order="C"))


def read_rf(path):
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != USRF_MAGIC:
        raise BadMagicError(f"{path}: not a USRF file (magic {raw[:4]!r})")
    if len(raw) < _HEADER.size + _SCALARS.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, L, J, N = _HEADER.unpack_from(raw, 0)
    if version != USRF_VERSION:
        raise RFFormatError(f"{path}: unsupported USRF version {version}")
    count = L * J * N
    if count > MAX_SAMPLES:
        raise DimensionOverflowError(f"{path}: {L}x{J}x{N} samples exceeds limit")
    scalars = _SCALARS.unpack_from(raw, _HEADER.size)
    offset = _HEADER.size + _SCALARS.size
    if len(raw) - offset < 4 * count:
        raise TruncatedFileError(
            f"{path}: payload has {len(raw) - offset} bytes, header declares {4 * count}")
    names = [f.name for f in dataclasses.fields(ProbeConfig)]
    try:
        probe = ProbeConfig(**dict(zip(names, scalars)))
    except ValueError as exc:
        raise RFFormatError(f"{path}: invalid probe block: {exc}") from None
    if probe.shape != (L, J, N):
        raise RFFormatError(f"{path}: probe block disagrees with dimensions {(L, J, N)}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(L, J, N)
    return RFFrame(data.astype(np.float32), probe)

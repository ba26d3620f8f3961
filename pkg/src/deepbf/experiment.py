"""Desk-scale synthetic experiment: cyst phantoms, training sets and evaluation.

The pipeline per frame is: simulate RF -> time-align -> (mask) -> beamform ->
envelope -> log compression, cropped to the imaging depth range. The
reference image of every frame is full-aperture DAS.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .acquire import Phantom, ProbeConfig, compute_delay_table, simulate_rf
from .beamform import MVParams, TimeAlignedCube, das, mv_beamform, time_align
from .neural import NetworkConfig, TrainConfig, infer_frame, make_sample
from .postproc import DEFAULT_DYNAMIC_RANGE_DB, envelope, hilbert_analytic, log_compress
from .subsample import apply_mask, make_mask

__all__ = [
    "CystSpec",
    "DeskExperiment",
    "PreparedFrame",
    "frame_seed",
    "cyst_phantom",
    "prepare_frame",
    "simulate_prepared",
    "build_training_set",
    "reconstruct",
    "cyst_regions",
    "evaluate_frames",
    "summarize",
]

log = logging.getLogger(__name__)

METHODS = ("das", "mv", "deepbf")


@dataclass(frozen=True)
class CystSpec:
    """Speckle field with one anechoic disk (all lengths in metres)."""

    center_m: tuple = (0.0, 0.014)
    radius_m: float = 0.006
    lateral_extent_m: tuple = (-0.0105, 0.0105)
    depth_extent_m: tuple = (0.005, 0.025)
    density_per_mm2: float = 25.0


@dataclass(frozen=True)
class DeskExperiment:
    probe: ProbeConfig = field(default_factory=lambda: ProbeConfig(num_depth_samples=1300))
    cyst: CystSpec = field(default_factory=CystSpec)
    noise_std: float = 0.0
    crop_m: tuple = (0.006, 0.023)
    train_frames: int = 60
    test_frames: int = 20
    windows_per_frame: int = 120
    train_rates: tuple = (4, 8, 16, 24, 32, 64)
    eval_rates: tuple = (4, 8, 16, 24, 32, 64)
    schemes: tuple = ("variable",)
    methods: tuple = ("das", "deepbf")
    network: NetworkConfig = field(default_factory=NetworkConfig.desk)
    training: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr_initial=1e-1, lr_final=1e-3, epochs=20, batch_size=16, samples_per_epoch=3600))
    dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB
    seed: int = 0

    def crop_samples(self):
        dz = self.probe.sample_depth_m
        n0 = int(round(self.crop_m[0] / dz))
        n1 = min(int(round(self.crop_m[1] / dz)), self.probe.num_depth_samples)
        return n0, n1

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class PreparedFrame:
    """Aligned channel data and full-aperture DAS I/Q over the cropped depths."""

    cube: np.ndarray
    iq_i: np.ndarray
    iq_q: np.ndarray

    @property
    def iq(self):
        from .postproc import IQImage
        return IQImage(self.iq_i, self.iq_q)


def frame_seed(base, split, index):
    """Independent integer seed for frame ``index`` of ``split`` ("train"/"test")."""
    tag = {"train": 1, "test": 2}[split]
    return int(np.random.SeedSequence([base, tag, index]).generate_state(1)[0])


def cyst_phantom(spec, seed):
    return Phantom.cyst(spec.center_m, spec.radius_m, spec.lateral_extent_m,
                        spec.depth_extent_m, spec.density_per_mm2, seed)


def prepare_frame(frame, delays, crop):
    n0, n1 = crop
    cube = time_align(frame, delays).data
    iq = hilbert_analytic(das(TimeAlignedCube(cube)))
    return PreparedFrame(np.ascontiguousarray(cube[:, :, n0:n1]),
                         iq.i[:, n0:n1].copy(), iq.q[:, n0:n1].copy())


def simulate_prepared(exp, split, index):
    seed = frame_seed(exp.seed, split, index)
    frame = simulate_rf(exp.probe, cyst_phantom(exp.cyst, seed), exp.noise_std, seed)
    return prepare_frame(frame, compute_delay_table(exp.probe), exp.crop_samples())


def build_training_set(frames, rates, windows_per_frame, seed, depth=3):
    """Stack normalized samples drawn from ``frames``.

    Each window gets its own subsampling rate from ``rates`` and a variable
    mask; targets come from the unmasked data.
    """
    rng = np.random.default_rng(seed)
    inputs, targets = [], []
    for k, pf in enumerate(frames):
        L, J, N = pf.cube.shape
        starts = rng.choice(N - depth + 1, size=min(windows_per_frame, N - depth + 1),
                            replace=False)
        chosen = rng.choice(rates, size=len(starts))
        mask_seeds = rng.integers(0, 2**31, size=len(rates))
        masked = {}
        for r, ms in zip(rates, mask_seeds):
            if np.any(chosen == r):
                masked[r] = apply_mask(pf.cube, make_mask("variable", int(r), J, N, int(ms))).data
        iq = pf.iq
        for s, r in zip(starts, chosen):
            sample = make_sample(masked[r], iq, int(s), depth)
            inputs.append(sample.input)
            targets.append(sample.target)
    return np.stack(inputs), np.stack(targets)


def reconstruct(cube, method, net=None, mv_params=None, dynamic_range_db=DEFAULT_DYNAMIC_RANGE_DB):
    """Envelope and B-mode image of an aligned, possibly masked cube."""
    tac = cube if isinstance(cube, TimeAlignedCube) else TimeAlignedCube(cube)
    if method == "das":
        iq = hilbert_analytic(das(tac))
    elif method == "mv":
        iq = hilbert_analytic(mv_beamform(tac, mv_params))
    elif method == "deepbf":
        if net is None:
            raise ValueError("deepbf needs a trained network")
        iq = infer_frame(net, tac)
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    env = envelope(iq)
    return env, log_compress(env, dynamic_range_db)


def cyst_regions(exp):
    """Background and cyst-interior rectangles in cropped ``[l, n]`` pixels."""
    probe = exp.probe
    dz = probe.sample_depth_m
    n0, n1 = exp.crop_samples()
    L = probe.num_te_events
    cx, cz = exp.cyst.center_m
    r = exp.cyst.radius_m
    half = 0.6 * r
    lc = cx / probe.pitch_m + (L - 1) / 2.0
    nc = cz / dz - n0
    inner = metrics.Region.rect(
        math.ceil(lc - half / probe.pitch_m), math.ceil(nc - half / dz),
        math.floor(lc + half / probe.pitch_m) + 1, math.floor(nc + half / dz) + 1, role="aS")
    # background: scanlines left of the cyst, same depth band
    edge = int(math.floor(lc - (r + 0.6e-3) / probe.pitch_m))
    if edge < 2:
        raise ValueError("cyst leaves no room for a background region")
    background = metrics.Region.rect(0, inner.params[1], edge, inner.params[3], role="B")
    return background, inner


def evaluate_frames(frames, exp, net=None, frame_offset=0, mv_params=None, regions=None):
    """Metric rows for every frame x scheme x rate x method.

    PSNR and SSIM compare against the full-aperture DAS image of the frame,
    formed through the same cropped pipeline as the test images. ``regions``
    is an optional ``(background, structure)`` pair; by default they are
    placed from the cyst geometry.
    """
    background, inner = regions if regions is not None else cyst_regions(exp)
    rows = []
    for k, pf in enumerate(frames):
        fidx = frame_offset + k
        L, J, N = pf.cube.shape
        ref = reconstruct(pf.cube, "das", dynamic_range_db=exp.dynamic_range_db)[1]
        ref = ref.pixels.astype(np.float64)
        for scheme in exp.schemes:
            for rate in exp.eval_rates:
                mseed = frame_seed(exp.seed, "test", 10_000 + fidx * 101 + rate)
                masked = apply_mask(pf.cube, make_mask(scheme, int(rate), J, N, mseed))
                for method in exp.methods:
                    _, img = reconstruct(masked, method, net, mv_params, exp.dynamic_range_db)
                    px = img.pixels.astype(np.float64)
                    rows.append({
                        "frame": fidx, "scheme": scheme, "n_keep": int(rate), "method": method,
                        "CNR": metrics.cnr(px, background, inner),
                        "GCNR": metrics.gcnr(px, background, inner),
                        "PSNR": metrics.psnr(ref, px),
                        "SSIM": metrics.ssim(ref, px),
                    })
        log.info("evaluated frame %d", fidx)
    return rows


def summarize(rows):
    """Mean of each metric per (scheme, n_keep, method)."""
    groups = {}
    for row in rows:
        groups.setdefault((row["scheme"], row["n_keep"], row["method"]), []).append(row)
    out = {}
    for key, items in sorted(groups.items()):
        out[key] = {m: float(np.mean([r[m] for r in items])) for m in ("CNR", "GCNR", "PSNR", "SSIM")}
    return out

"""JSON experiment configuration.

A config file is one JSON object. Every section is optional; missing keys take
the defaults of the corresponding dataclass. Schema version 1::

    {
      "schema_version": 1,
      "output_dir": "run",                 # relative paths resolve against the config file
      "seed": 0,
      "probe": {ProbeConfig fields},
      "phantom": {"kind": "cyst", "center_m": [x, z], "radius_m": r,
                  "lateral_extent_m": [a, b], "depth_extent_m": [a, b],
                  "density_per_mm2": d}
               | {"kind": "points", "scatterers": [[x, z, amplitude], ...]},
      "noise_std": 0.0,
      "frames": {"train": 60, "test": 20},
      "subsample": {"schemes": ["variable"], "n_keep": [4, 8, 16, 24, 32, 64],
                    "train_rates": [4, 8, 16, 24, 32, 64]},
      "beamformer": {"method": "das", "dynamic_range_db": 60,
                     "mv": {MVParams fields}},
      "network": {NetworkConfig fields},
      "training": {TrainConfig fields, "windows_per_frame": 120},
      "evaluation": {"methods": ["das", "deepbf"], "crop_m": [z0, z1],
                     "regions": [region, region]}
    }

A region is ``{"kind": "rect", "l0", "n0", "l1", "n1", "role"}`` or
``{"kind": "disk", "center_l", "center_n", "radius", "role"}`` in pixels of the
cropped image; the first listed region is the background.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .acquire import Phantom, ProbeConfig
from .beamform import MVParams
from .experiment import METHODS, CystSpec, DeskExperiment
from .metrics import Region
from .neural import NetworkConfig, TrainConfig
from .subsample import SCHEMES

__all__ = ["SCHEMA_VERSION", "ConfigError", "RunConfig", "load_config", "parse_config"]

SCHEMA_VERSION = 1

_SECTIONS = {"schema_version", "output_dir", "seed", "probe", "phantom", "noise_std",
             "frames", "subsample", "beamformer", "network", "training", "evaluation"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    experiment: DeskExperiment = field(default_factory=DeskExperiment)
    output_dir: Path = Path("run")
    method: str = "das"
    mv: MVParams = None
    points: Phantom = None
    regions: tuple = None

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def phantom_for(self, seed):
        from .experiment import cyst_phantom
        return self.points if self.points is not None else cyst_phantom(self.experiment.cyst, seed)


def _build(cls, section, name):
    if section is None:
        return cls()
    if not isinstance(section, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in section.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r}: {exc}") from None


def _pop(d, key, default, name):
    if not isinstance(d, dict):
        raise ConfigError(f"section {name!r} must be an object")
    return d.pop(key, default)


def parse_config(data, base_dir=Path(".")):
    """Validate a decoded config object and build a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    unknown = set(data) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    probe = _build(ProbeConfig, data.get("probe"), "probe")

    points = None
    cyst = CystSpec()
    phantom = dict(data.get("phantom") or {"kind": "cyst"})
    kind = _pop(phantom, "kind", "cyst", "phantom")
    if kind == "cyst":
        cyst = _build(CystSpec, phantom, "phantom")
    elif kind == "points":
        try:
            points = Phantom(phantom.pop("scatterers"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid point phantom: {exc}") from None
        if phantom:
            raise ConfigError(f"unknown keys in 'phantom': {sorted(phantom)}")
    else:
        raise ConfigError(f"unknown phantom kind {kind!r}")

    frames = dict(data.get("frames") or {})
    sub = dict(data.get("subsample") or {})
    bf = dict(data.get("beamformer") or {})
    tr = dict(data.get("training") or {})
    ev = dict(data.get("evaluation") or {})
    defaults = DeskExperiment()
    train_frames = _pop(frames, "train", defaults.train_frames, "frames")
    test_frames = _pop(frames, "test", defaults.test_frames, "frames")
    schemes = tuple(_pop(sub, "schemes", defaults.schemes, "subsample"))
    rates = tuple(_pop(sub, "n_keep", defaults.eval_rates, "subsample"))
    train_rates = tuple(_pop(sub, "train_rates", defaults.train_rates, "subsample"))
    method = _pop(bf, "method", "das", "beamformer")
    dr = _pop(bf, "dynamic_range_db", defaults.dynamic_range_db, "beamformer")
    mv = _build(MVParams, bf.pop("mv", None), "beamformer.mv") if "mv" in bf else None
    windows = _pop(tr, "windows_per_frame", defaults.windows_per_frame, "training")
    methods = tuple(_pop(ev, "methods", defaults.methods, "evaluation"))
    crop = tuple(_pop(ev, "crop_m", defaults.crop_m, "evaluation"))
    regions = ev.pop("regions", None)
    for name, rest in (("frames", frames), ("subsample", sub), ("beamformer", bf), ("evaluation", ev)):
        if rest:
            raise ConfigError(f"unknown keys in {name!r}: {sorted(rest)}")

    J = probe.num_rx_active
    for s in schemes:
        if s not in SCHEMES:
            raise ConfigError(f"unknown subsampling scheme {s!r}")
    for r in rates + train_rates:
        if not isinstance(r, int) or not 2 <= r <= J:
            raise ConfigError(f"n_keep values must be integers in [2, {J}], got {r!r}")
    for m in methods + (method,):
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
    if regions is not None:
        if not isinstance(regions, list) or len(regions) != 2:
            raise ConfigError("evaluation.regions must list two regions (background, structure)")
        try:
            regions = tuple(Region.from_dict(r) for r in regions)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid region: {exc}") from None

    network = _build(NetworkConfig, {"input_channels": J, **(data.get("network") or {})}, "network")
    training = _build(TrainConfig, tr or None, "training") if tr else defaults.training
    if network.input_channels != J:
        raise ConfigError("network.input_channels must equal probe.num_rx_active")
    try:
        exp = DeskExperiment(
            probe=probe, cyst=cyst, noise_std=float(data.get("noise_std", 0.0)), crop_m=crop,
            train_frames=int(train_frames), test_frames=int(test_frames),
            windows_per_frame=int(windows), train_rates=train_rates, eval_rates=rates,
            schemes=schemes, methods=methods, network=network, training=training,
            dynamic_range_db=float(dr), seed=int(data.get("seed", 0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment settings: {exc}") from None
    n0, n1 = exp.crop_samples()
    if not 0 <= n0 < n1 - 2:
        raise ConfigError(f"crop {crop} leaves fewer than 3 depth samples")

    out = Path(data.get("output_dir", "run"))
    if not out.is_absolute():
        out = Path(base_dir) / out
    return RunConfig(exp, out, method, mv, points, regions)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(data, path.parent)

"""UDBF checkpoint files.

Layout (little-endian)::

    4 bytes   magic b"UDBF"
    u16       format version (1)
    u32       byte length M of the metadata block
    M bytes   UTF-8 JSON: {"network": NetworkConfig fields,
                           "train": TrainConfig fields or null,
                           "epoch_losses": [float, ...]}
    float32   parameter blobs, layer by layer in network order; for each layer
              weight (Cout, Cin, k, k), bias (Cout,), and for every layer but
              the last gamma, beta, running_mean, running_var (Cout,) each.

Blob shapes follow from the network configuration, so none are stored.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .network import ConvLayer, Network, NetworkConfig, xavier_init
from .training import Checkpoint, TrainConfig

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointFormatError"]

MAGIC = b"UDBF"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(checkpoint, path):
    net = checkpoint.network
    meta = {
        "network": net.config.to_dict(),
        "train": checkpoint.train_config.to_dict() if checkpoint.train_config else None,
        "epoch_losses": [float(x) for x in checkpoint.epoch_losses],
    }
    block = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(block)))
        fh.write(block)
        for _, arr in net.named_state():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a UDBF checkpoint")
    if len(raw) < _HEAD.size:
        raise CheckpointFormatError(f"{path}: truncated header")
    _, version, size = _HEAD.unpack_from(raw)
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    try:
        meta = json.loads(raw[_HEAD.size:_HEAD.size + size].decode())
        config = NetworkConfig(**meta["network"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: bad metadata block: {exc}") from None
    net = xavier_init(config, seed=0)
    offset = _HEAD.size + size
    layers = []
    for layer in net.layers:
        values = {}
        for name in layer.state_names():
            shape = getattr(layer, name).shape
            n = int(np.prod(shape))
            if offset + 4 * n > len(raw):
                raise CheckpointFormatError(f"{path}: parameter data truncated")
            values[name] = np.frombuffer(raw, "<f4", n, offset).reshape(shape).astype(np.float32)
            offset += 4 * n
        layers.append(ConvLayer(**values))
    if offset != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    train_cfg = TrainConfig(**meta["train"]) if meta.get("train") else None
    return Checkpoint(Network(config, layers, mode="eval"), meta.get("epoch_losses", []), train_cfg)

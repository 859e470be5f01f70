"""Portable checkpoint format.

Layout: 8-byte magic, little-endian uint32 schema version, uint32 header
length, UTF-8 JSON header, then one little-endian float32 blob per named
tensor in header order.
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..exceptions import CorruptHeader
from ..io import atomic_write_bytes, provenance
from .model import ModelConfig, ReconstructionModel, ReconstructionNet

MAGIC = b"ECRMODL\x00"
SCHEMA_VERSION = 1


def checkpoint_bytes(model, config=None):
    state = model.net.state_dict()
    tensors = []
    for name, t in state.items():
        tensors.append({"name": name, "shape": list(t.shape), "dtype": str(t.dtype)})
    header = {
        "config": model.config.to_dict(),
        "train_meta": model.train_meta,
        "tensors": tensors,
        "provenance": provenance(config),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", SCHEMA_VERSION, len(hb)), hb]
    for t in state.values():
        parts.append(t.detach().cpu().numpy().astype("<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model, path, config=None):
    atomic_write_bytes(path, checkpoint_bytes(model, config))


def checkpoint_from_bytes(data):
    if data[:8] != MAGIC:
        raise CorruptHeader("not a reconstruction checkpoint")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != SCHEMA_VERSION:
        raise CorruptHeader(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise CorruptHeader("unreadable checkpoint header") from exc
    cfg = ModelConfig.from_dict(header["config"])
    net = ReconstructionNet(cfg)
    state = {}
    off = 16 + hlen
    for spec in header["tensors"]:
        n = int(np.prod(spec["shape"], dtype=np.int64))
        end = off + 4 * n
        if end > len(data):
            raise CorruptHeader("checkpoint truncated")
        arr = np.frombuffer(data[off:end], dtype="<f4").reshape(spec["shape"])
        dtype = getattr(torch, spec["dtype"].replace("torch.", ""))
        state[spec["name"]] = torch.from_numpy(arr.copy()).to(dtype)
        off = end
    net.load_state_dict(state)
    net.eval()
    return ReconstructionModel(cfg, net, header.get("train_meta", {}))


def load_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())

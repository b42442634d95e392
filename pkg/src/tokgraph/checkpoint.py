"""Single-file checkpoints: text manifest, then raw little-endian payloads.

Layout::

    TOKGRAPH-CKPT
    <manifest byte length>
    <manifest JSON: version, config, meta, tensors[name, shape, dtype, offset, nbytes]>
    <payload bytes; offsets are relative to the payload start>
"""
from __future__ import annotations

import json
from collections import OrderedDict

import numpy as np

from . import config as config_mod
from .autodiff import Tensor

MAGIC = b"TOKGRAPH-CKPT\n"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, cfg=None, meta=None):
    entries, blobs, offset = [], [], 0
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data if isinstance(t, Tensor) else t)
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.newbyteorder("<").str,
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": None if cfg is None else config_mod.to_dict(cfg),
        "meta": meta or {},
        "tensors": entries,
    }
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(text)}\n".encode("ascii"))
        fh.write(text)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, requires_grad=True):
    """Return ``(params, cfg_or_None, meta)``."""
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        n = int(fh.readline().decode("ascii"))
        manifest = json.loads(fh.read(n).decode("utf-8"))
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {manifest.get('version')!r}")
        payload = fh.read()
    params = OrderedDict()
    for e in manifest["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ValueError(f"{path}: truncated payload for {e['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        params[e["name"]] = Tensor(arr.astype(np.float64), requires_grad=requires_grad)
    cfg = None if manifest["config"] is None else config_mod.from_dict(manifest["config"])
    return params, cfg, manifest["meta"]

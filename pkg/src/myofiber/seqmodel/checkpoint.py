"""Model checkpoints: JSON manifest + little-endian float32 blobs.

The manifest line carries the model kind, config, training history, and the
name/shape of every tensor; the blobs follow in manifest order. Parameters are
quantized to float32 on save, so save -> load -> save round trips are
bit-exact.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor
from .blstm import BlstmConfig
from .tae import TaeConfig


def quantize_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Snap parameter values to their float32 representation in place."""
    for p in params.values():
        p.data = p.data.astype(np.float32).astype(float)
    return params


def save_checkpoint(path, kind: str, model_cfg, params, history=None, extra=None):
    tensors = {
        name: (p.data if isinstance(p, Tensor) else np.asarray(p))
        for name, p in params.items()
    }
    names = sorted(tensors)
    manifest = {
        "kind": kind,
        "config": model_cfg.to_dict(),
        "history": history or [],
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
        "dtype": "f32",
    }
    if extra:
        manifest.update(extra)
    with open(path, "wb") as f:
        f.write((json.dumps(manifest) + "\n").encode("utf-8"))
        for n in names:
            f.write(np.ascontiguousarray(tensors[n], dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (kind, model config, params dict, history)."""
    with open(path, "rb") as f:
        manifest = json.loads(f.readline().decode("utf-8"))
        params: dict[str, Tensor] = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 4)
            if len(buf) != count * 4:
                raise ValueError(f"{path}: truncated blob for tensor '{entry['name']}'")
            arr = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(float)
            params[entry["name"]] = Tensor.param(arr)
    kind = manifest["kind"]
    cfg_cls = BlstmConfig if kind == "blstm" else TaeConfig
    cfg = cfg_cls.from_dict(manifest["config"])
    return kind, cfg, params, manifest.get("history", [])

"""Versioned model checkpoints: named arrays with shape headers (npz)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import tokenizer as tk
from .models import ConstraintModel, ImagePrimitiveModel, ModelConfig, PrimitiveModel

__all__ = ["save_checkpoint", "load_checkpoint", "CHECKPOINT_VERSION"]

CHECKPOINT_VERSION = 1
_META_KEY = "__meta__"


def save_checkpoint(model, path):
    meta = dict(model.meta())
    meta["format"] = "sketchforge-checkpoint"
    meta["version"] = CHECKPOINT_VERSION
    blob = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez_compressed(Path(path), **{_META_KEY: blob}, **model.state_arrays())


def load_checkpoint(path):
    path = Path(path)
    with np.load(path) as z:
        if _META_KEY not in z:
            raise ValueError(f"{path} is not a sketchforge checkpoint")
        meta = json.loads(bytes(z[_META_KEY]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {k: z[k] for k in z.files if k != _META_KEY}
    kind = meta["kind"]
    cfg = ModelConfig(**meta["config"])
    if kind == "primitive":
        model = PrimitiveModel(cfg)
    elif kind == "constraint":
        model = ConstraintModel(cfg, tok_cfg=tk.TokenizerConfig(**meta["tokenizer"]))
    elif kind == "image_conditional":
        model = ImagePrimitiveModel(
            cfg, patch_dim=meta["patch_dim"], patch_count=meta["patch_count"]
        )
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    model.load_state_arrays(arrays)
    return model

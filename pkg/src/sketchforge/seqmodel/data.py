"""Batch assembly for the sequence models.

The constraint model consumes padded primitive and constraint triples plus
the per-sketch designated token indices; targets are candidate positions
(reserved tokens map to themselves, a reference to flattened index k maps to
16 + rank of k among the sketch's designated indices).
"""

from __future__ import annotations

import numpy as np

from .. import tokenizer as tk
from ..core import PARAM_NAMES, Sketch
from .models import pad_triples

__all__ = [
    "tokenize_primitives",
    "noisy_primitive_triples",
    "primitive_batch",
    "constraint_example",
    "constraint_batch",
]


def tokenize_primitives(sketches, cfg: tk.TokenizerConfig = tk.DEFAULT_CONFIG):
    return [tk.encode_primitives(s, cfg) for s in sketches]


def _raw_rows(s: Sketch, sigma: float, rng: np.random.Generator):
    rows = []
    for p in s.primitives:
        params = np.asarray(p.params, dtype=float)
        if sigma > 0:
            params = params + rng.normal(0.0, sigma, size=params.shape)
            # keep radii in the quantizable band
            for i, name in enumerate(PARAM_NAMES[p.kind]):
                if name == "r":
                    params[i] = max(params[i], 1e-4)
        rows.append((p.kind, p.is_construction, tuple(params)))
    return rows


def noisy_primitive_triples(
    s: Sketch,
    sigma: float,
    rng: np.random.Generator,
    cfg: tk.TokenizerConfig = tk.DEFAULT_CONFIG,
) -> list[tk.TokenTriple]:
    """Primitive triples with independent Gaussian noise on the continuous
    params.  The token layout (and so every reference index) is unchanged."""
    return tk.encode_raw_primitives(_raw_rows(s, sigma, rng), cfg)


def primitive_batch(seqs: list[list[tk.TokenTriple]]):
    triples, real = pad_triples(seqs)
    return {"triples": triples, "real": real}


def constraint_example(
    s: Sketch,
    cfg: tk.TokenizerConfig = tk.DEFAULT_CONFIG,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """(primitive triples, constraint triples, designated indices, targets)
    for one normalized sketch."""
    if noise_sigma > 0 and rng is None:
        raise ValueError("noise injection needs an rng")
    if noise_sigma > 0:
        prim = noisy_primitive_triples(s, noise_sigma, rng, cfg)
    else:
        prim = tk.encode_primitives(s, cfg)
    con = tk.encode_constraints(s, cfg)
    designated = tk.designated_indices(s)
    rank = {k: i for i, k in enumerate(designated)}
    targets = []
    for t in con[1:]:
        v = t.value
        targets.append(v if v < tk.REF_BASE else tk.REF_BASE + rank[v - tk.REF_BASE])
    return prim, con, designated, targets


def constraint_batch(examples):
    """Pad a list of constraint_example outputs into one training batch."""
    prim_triples, prim_real = pad_triples([e[0] for e in examples])
    con_triples, con_real = pad_triples([e[1] for e in examples])
    rmax = max(len(e[2]) for e in examples)
    B = len(examples)
    designated = np.zeros((B, rmax), dtype=int)
    designated_real = np.zeros((B, rmax), dtype=bool)
    targets = np.zeros((B, con_triples.shape[1] - 1), dtype=int)
    target_mask = np.zeros((B, con_triples.shape[1] - 1), dtype=bool)
    for i, (_, con, des, tgt) in enumerate(examples):
        designated[i, : len(des)] = des
        designated_real[i, : len(des)] = True
        targets[i, : len(tgt)] = tgt
        target_mask[i, : len(tgt)] = True
    return {
        "prim_triples": prim_triples,
        "prim_real": prim_real,
        "con_triples": con_triples,
        "con_real": con_real,
        "designated": designated,
        "designated_real": designated_real,
        "targets": targets,
        "target_mask": target_mask,
    }

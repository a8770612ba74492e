"""Autoregressive generation for the primitive and constraint models.

Only value tokens are sampled; ID and position tokens are derived by a
grammar tracker that mirrors the codec layout.  If a sampled value violates
the band the grammar expects, generation stops and the sequence is flagged
malformed (reported, never raised).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import tokenizer as tk
from ..core import PARAM_NAMES, PrimitiveKind, Sketch
from .data import constraint_example
from .models import (
    ConstraintModel,
    ContextMismatch,
    ImagePrimitiveModel,
    PrimitiveModel,
    pad_triples,
)
from .sampling import SamplerConfig, nucleus_sample

__all__ = ["GenerationStats", "generate_primitives", "generate_constraints"]

_PARAM_ID = {"x1": 3, "y1": 4, "x_mid": 5, "y_mid": 6, "x2": 7, "y2": 8,
             "x": 9, "y": 10, "r": 11}


@dataclass
class GenerationStats:
    stop_sampled: bool = False
    malformed: bool = False
    steps: int = 0
    note: str = ""


def _pending_ids(kind: PrimitiveKind) -> list[int]:
    return [tk.ID_CONSTRUCTION] + [_PARAM_ID[n] for n in PARAM_NAMES[kind]]


def _replay_primitive_state(tokens) -> tuple[int, list[int]]:
    """Position counter and pending ID queue implied by an existing prefix."""
    pos = 0
    pending: list[int] = []
    for t in tokens[1:]:
        if not pending:
            if t.value in tk._PRIM_CODE_TO_KIND:
                pos += 1
                pending = _pending_ids(tk._PRIM_CODE_TO_KIND[t.value])
            # markers or garbage leave the state unchanged
        else:
            pending.pop(0)
    return pos, pending


def _expected_band_ok(v: int, expected_id: int, bits: int) -> bool:
    nbins = 1 << bits
    if expected_id == tk.ID_CONSTRUCTION:
        return v in (tk.BOOL_FALSE, tk.BOOL_TRUE)
    if expected_id == _PARAM_ID["r"]:
        return tk.NUM_BASE <= v < tk.NUM_BASE + nbins // 2
    return tk.NUM_BASE <= v < tk.NUM_BASE + nbins


def generate_primitives(
    model: PrimitiveModel | ImagePrimitiveModel,
    sampler: SamplerConfig,
    primer: list[tk.TokenTriple] | None = None,
    patches: np.ndarray | None = None,
    tok_cfg: tk.TokenizerConfig = tk.DEFAULT_CONFIG,
) -> tuple[list[tk.TokenTriple], GenerationStats]:
    """Sample primitive tokens until Stop or the length cap.

    ``primer`` is a fixed prefix (without trailing Stop); ``patches`` is the
    (64, 256) patch matrix for the image-conditional model.
    """
    if isinstance(model, ImagePrimitiveModel):
        if patches is None:
            raise ContextMismatch("image-conditional model needs patches")
        patches = np.asarray(patches, dtype=float)[None, ...]
    elif patches is not None:
        raise ContextMismatch("patch context given to a non-image model")

    rng = np.random.default_rng(sampler.seed)
    tokens = [tk.TokenTriple(tk.START, tk.ID_MARKER, 0)]
    if primer:
        tokens.extend(primer)
    pos, pending = _replay_primitive_state(tokens)
    stats = GenerationStats()
    max_len = tok_cfg.max_primitive_tokens

    while len(tokens) < max_len:
        triples, real = pad_triples([tokens])
        if isinstance(model, ImagePrimitiveModel):
            logits = model.forward(triples, real, patches)
        else:
            logits = model.forward(triples, real)
        v = nucleus_sample(logits.data[0, -1], sampler, rng)
        stats.steps += 1
        if pending:
            expected = pending.pop(0)
            tokens.append(tk.TokenTriple(v, expected, pos))
            if not _expected_band_ok(v, expected, tok_cfg.bits):
                stats.malformed = True
                stats.note = f"expected id {expected} band, sampled value {v}"
                break
        else:
            if v == tk.STOP:
                tokens.append(tk.TokenTriple(tk.STOP, tk.ID_MARKER, 0))
                stats.stop_sampled = True
                break
            if v in tk._PRIM_CODE_TO_KIND:
                if pos + 1 > tok_cfg.max_primitives:
                    stats.note = "primitive budget exhausted"
                    break
                pos += 1
                tokens.append(tk.TokenTriple(v, tk.ID_TYPE, pos))
                pending = _pending_ids(tk._PRIM_CODE_TO_KIND[v])
            else:
                tokens.append(tk.TokenTriple(v, tk.ID_TYPE, pos + 1))
                stats.malformed = True
                stats.note = f"expected type or Stop, sampled value {v}"
                break
    if not stats.stop_sampled and not stats.malformed:
        stats.note = stats.note or "length cap reached before Stop"
        stats.malformed = True
    return tokens, stats


def generate_constraints(
    model: ConstraintModel,
    sketch: Sketch,
    sampler: SamplerConfig,
    tok_cfg: tk.TokenizerConfig = tk.DEFAULT_CONFIG,
) -> tuple[list[tk.TokenTriple], GenerationStats]:
    """Sample a constraint token stream conditioned on a normalized sketch's
    primitives."""
    prim, _, designated, _ = constraint_example(sketch, tok_cfg)
    prim_triples, prim_real = pad_triples([prim])
    designated_arr = np.array([designated], dtype=int)
    designated_real = np.ones_like(designated_arr, dtype=bool)

    rng = np.random.default_rng(sampler.seed)
    tokens = [tk.TokenTriple(tk.START, tk.ID_MARKER, 0)]
    stats = GenerationStats()
    pos = 0
    open_kind: int | None = None
    nrefs = 0
    max_len = tok_cfg.max_constraint_tokens

    def close_allowed() -> bool:
        if open_kind is None:
            return True
        lo, _hi = tk.CONSTRAINT_ARITY[tk._CON_CODE_TO_KIND[open_kind]]
        return nrefs >= lo

    while len(tokens) < max_len:
        con_triples, con_real = pad_triples([tokens])
        logits, _ = model.forward(
            prim_triples, prim_real, con_triples, con_real,
            designated_arr, designated_real,
        )
        c = nucleus_sample(logits.data[0, -1], sampler, rng)
        stats.steps += 1
        v = c if c < tk.REF_BASE else tk.REF_BASE + designated[c - tk.REF_BASE]

        if v >= tk.REF_BASE:
            if open_kind is None or nrefs >= 2:
                tokens.append(tk.TokenTriple(v, tk.ID_REF1, pos + 1))
                stats.malformed = True
                stats.note = "reference sampled outside a constraint"
                break
            nrefs += 1
            tokens.append(
                tk.TokenTriple(v, tk.ID_REF1 if nrefs == 1 else tk.ID_REF2, pos)
            )
            if nrefs == 2:
                open_kind = None
                nrefs = 0
            continue
        if v == tk.STOP:
            tokens.append(tk.TokenTriple(tk.STOP, tk.ID_MARKER, 0))
            if not close_allowed():
                stats.malformed = True
                stats.note = "Stop sampled mid-constraint"
            stats.stop_sampled = True
            break
        if v in tk._CON_CODE_TO_KIND:
            if not close_allowed():
                tokens.append(tk.TokenTriple(v, tk.ID_TYPE, pos + 1))
                stats.malformed = True
                stats.note = "type sampled before the open constraint got a reference"
                break
            if pos + 1 > tok_cfg.max_constraints:
                stats.malformed = True
                stats.note = "constraint budget exhausted"
                break
            pos += 1
            tokens.append(tk.TokenTriple(v, tk.ID_TYPE, pos))
            open_kind = v
            nrefs = 0
            continue
        tokens.append(tk.TokenTriple(v, tk.ID_TYPE, pos + 1))
        stats.malformed = True
        stats.note = f"unusable reserved value {v} sampled"
        break
    if not stats.stop_sampled and not stats.malformed:
        stats.note = "length cap reached before Stop"
        stats.malformed = True
    return tokens, stats

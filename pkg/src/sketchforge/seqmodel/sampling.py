"""Nucleus (top-p) sampling over logits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SamplerConfig", "nucleus_sample", "nucleus_support"]

PRIMITIVE_NUCLEUS_P = 0.9
CONSTRAINT_NUCLEUS_P = 0.7


@dataclass(frozen=True)
class SamplerConfig:
    nucleus_p: float = PRIMITIVE_NUCLEUS_P
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.nucleus_p <= 1.0:
            raise ValueError(f"nucleus_p must be in (0, 1], got {self.nucleus_p}")


def nucleus_support(logits: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Kept token indices and their renormalized probabilities.

    Keeps the smallest probability-sorted prefix with cumulative mass >= p;
    ties break by ascending index (stable sort on descending probability).
    """
    logits = np.asarray(logits, dtype=float)
    m = logits.max()
    e = np.exp(logits - m)
    probs = e / e.sum()
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    k = int(np.searchsorted(cum, p)) + 1
    k = min(k, len(order))
    kept = order[:k]
    kp = probs[kept]
    return kept, kp / kp.sum()


def nucleus_sample(
    logits: np.ndarray,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> int:
    """Sample one token index under top-p truncation.

    Pass an rng to draw from an ongoing stream; otherwise a fresh generator
    is seeded from cfg.seed.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    kept, probs = nucleus_support(logits, cfg.nucleus_p)
    return int(rng.choice(kept, p=probs))

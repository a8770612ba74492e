"""Shared fixtures and random sketch generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from sketchforge.core import (
    CONSTRAINT_ARITY,
    VALID_SLOTS,
    Constraint,
    ConstraintKind,
    Primitive,
    PrimitiveKind,
    Reference,
    Sketch,
    dequantize,
    sort_constraints,
)
from sketchforge.pipeline import make_rectangle, rectangle_constraints


def random_arc_params(rng: np.random.Generator, bits: int = 6) -> tuple[float, ...]:
    """Arc through three quantization-bin centers with a wide collinearity
    margin, jittered within the bins so quantization is lossless."""
    while True:
        bins = rng.integers(4, 60, size=6)
        pts = [dequantize(int(b), bits) for b in bins]
        x1, y1, xm, ym, x2, y2 = pts
        area2 = (xm - x1) * (y2 - y1) - (ym - y1) * (x2 - x1)
        if abs(area2) > 3e-3:
            jitter = rng.uniform(-0.4, 0.4, size=6) / (1 << bits)
            return tuple(p + j for p, j in zip(pts, jitter))


def random_primitive(rng: np.random.Generator) -> Primitive:
    kind = [PrimitiveKind.ARC, PrimitiveKind.CIRCLE, PrimitiveKind.LINE,
            PrimitiveKind.POINT][rng.integers(4)]
    construction = bool(rng.random() < 0.15)
    if kind is PrimitiveKind.ARC:
        return Primitive(kind, random_arc_params(rng), construction)
    if kind is PrimitiveKind.CIRCLE:
        return Primitive(
            kind,
            (rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), rng.uniform(0.02, 0.45)),
            construction,
        )
    if kind is PrimitiveKind.LINE:
        return Primitive(kind, tuple(rng.uniform(-0.48, 0.48, 4)), construction)
    return Primitive(kind, tuple(rng.uniform(-0.48, 0.48, 2)), construction)


def random_constraints(rng: np.random.Generator, prims) -> tuple[Constraint, ...]:
    """Arbitrary structurally-valid constraints (not necessarily solvable)."""
    n = len(prims)
    out = []
    for _ in range(rng.integers(0, 2 * n + 1)):
        kind = list(ConstraintKind)[rng.integers(len(ConstraintKind))]
        lo, hi = CONSTRAINT_ARITY[kind]
        arity = int(rng.integers(lo, hi + 1))
        refs = []
        for _ in range(arity):
            pi = int(rng.integers(n))
            slots = sorted(VALID_SLOTS[prims[pi].kind], key=lambda s: s.value)
            refs.append(Reference(pi, slots[rng.integers(len(slots))]))
        out.append(Constraint(kind, tuple(refs)))
    return sort_constraints(out)


def random_sketch(
    rng: np.random.Generator,
    max_primitives: int = 8,
    with_constraints: bool = True,
) -> Sketch:
    """Random valid sketch with quantization-safe params in [-0.5, 0.5]."""
    n = int(rng.integers(1, max_primitives + 1))
    prims = tuple(random_primitive(rng) for _ in range(n))
    cons = random_constraints(rng, prims) if with_constraints else ()
    return Sketch(prims, cons)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def rectangle_fixture():
    """Unit-style axis-aligned rectangle with the full constraint set."""
    return make_rectangle(np.random.default_rng(7))


__all__ = [
    "random_arc_params",
    "random_primitive",
    "random_constraints",
    "random_sketch",
    "rectangle_constraints",
]

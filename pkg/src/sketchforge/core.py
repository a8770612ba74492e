"""Sketch domain model: primitives, constraints, normalization, quantization, DOF.

All types here are immutable values; every operation is a pure function, so
anything in this module is safe to share across threads.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field

__all__ = [
    "PrimitiveKind",
    "Slot",
    "ConstraintKind",
    "Primitive",
    "Reference",
    "Constraint",
    "Sketch",
    "DofReport",
    "SketchError",
    "DegenerateExtent",
    "arc",
    "circle",
    "line",
    "point",
    "arc_circumcircle",
    "primitive_bbox",
    "sketch_bbox",
    "normalize_sketch",
    "denormalize_sketch",
    "quantize",
    "dequantize",
    "quantize_params",
    "dequantize_params",
    "dedup_key",
    "degrees_of_freedom",
    "sort_constraints",
    "sketch_to_json",
    "sketch_from_json",
    "PARAM_COUNT",
    "PARAM_NAMES",
    "PRIMITIVE_DOF",
    "VALID_SLOTS",
    "CONSTRAINT_ARITY",
    "ARC_COLLINEAR_TOL",
]


class SketchError(ValueError):
    """Base class for invalid sketch data."""


class DegenerateExtent(SketchError):
    """Sketch geometry has zero spatial extent and cannot be normalized."""


class PrimitiveKind(str, enum.Enum):
    ARC = "arc"
    CIRCLE = "circle"
    LINE = "line"
    POINT = "point"


class Slot(str, enum.Enum):
    WHOLE = "whole"
    FIRST = "first"
    CENTER = "center"
    SECOND = "second"


class ConstraintKind(str, enum.Enum):
    COINCIDENT = "coincident"
    CONCENTRIC = "concentric"
    EQUAL = "equal"
    FIX = "fix"
    HORIZONTAL = "horizontal"
    MIDPOINT = "midpoint"
    NORMAL = "normal"
    OFFSET = "offset"
    PARALLEL = "parallel"
    PERPENDICULAR = "perpendicular"
    QUADRANT = "quadrant"
    TANGENT = "tangent"
    VERTICAL = "vertical"


PARAM_COUNT = {
    PrimitiveKind.ARC: 6,
    PrimitiveKind.CIRCLE: 3,
    PrimitiveKind.LINE: 4,
    PrimitiveKind.POINT: 2,
}

PARAM_NAMES = {
    PrimitiveKind.ARC: ("x1", "y1", "x_mid", "y_mid", "x2", "y2"),
    PrimitiveKind.CIRCLE: ("x", "y", "r"),
    PrimitiveKind.LINE: ("x1", "y1", "x2", "y2"),
    PrimitiveKind.POINT: ("x", "y"),
}

# Continuous degrees of freedom per primitive.  An arc counts 5 even though
# its parameter vector carries 6 numbers: the on-curve midpoint is dependent
# geometry.
PRIMITIVE_DOF = {
    PrimitiveKind.ARC: 5,
    PrimitiveKind.CIRCLE: 3,
    PrimitiveKind.LINE: 4,
    PrimitiveKind.POINT: 2,
}

VALID_SLOTS = {
    PrimitiveKind.ARC: frozenset({Slot.WHOLE, Slot.FIRST, Slot.CENTER, Slot.SECOND}),
    PrimitiveKind.CIRCLE: frozenset({Slot.WHOLE, Slot.CENTER}),
    PrimitiveKind.LINE: frozenset({Slot.WHOLE, Slot.FIRST, Slot.SECOND}),
    PrimitiveKind.POINT: frozenset({Slot.WHOLE}),
}

# (min_refs, max_refs) per constraint kind.
CONSTRAINT_ARITY = {
    kind: ((1, 2) if kind in (ConstraintKind.FIX, ConstraintKind.HORIZONTAL, ConstraintKind.VERTICAL) else (2, 2))
    for kind in ConstraintKind
}

ARC_COLLINEAR_TOL = 1e-9


@dataclass(frozen=True)
class Primitive:
    """A typed geometric element with canonical continuous parameters.

    Arc: (x1, y1, x_mid, y_mid, x2, y2) — start, on-curve midpoint, end.
    Circle: (x, y, r).  Line: (x1, y1, x2, y2).  Point: (x, y).
    """

    kind: PrimitiveKind
    params: tuple[float, ...]
    is_construction: bool = False

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        expected = PARAM_COUNT[self.kind]
        if len(self.params) != expected:
            raise SketchError(
                f"{self.kind.value} needs {expected} params, got {len(self.params)}"
            )
        if not all(math.isfinite(v) for v in self.params):
            raise SketchError(f"{self.kind.value} has non-finite params {self.params}")
        if self.kind is PrimitiveKind.CIRCLE and self.params[2] <= 0.0:
            raise SketchError(f"circle radius must be > 0, got {self.params[2]}")
        if self.kind is PrimitiveKind.ARC:
            x1, y1, xm, ym, x2, y2 = self.params
            area2 = (xm - x1) * (y2 - y1) - (ym - y1) * (x2 - x1)
            if abs(area2) <= ARC_COLLINEAR_TOL:
                raise SketchError(
                    f"degenerate arc: defining points are collinear (area {area2:g})"
                )


def arc(x1, y1, xm, ym, x2, y2, construction=False) -> Primitive:
    return Primitive(PrimitiveKind.ARC, (x1, y1, xm, ym, x2, y2), construction)


def circle(x, y, r, construction=False) -> Primitive:
    return Primitive(PrimitiveKind.CIRCLE, (x, y, r), construction)


def line(x1, y1, x2, y2, construction=False) -> Primitive:
    return Primitive(PrimitiveKind.LINE, (x1, y1, x2, y2), construction)


def point(x, y, construction=False) -> Primitive:
    return Primitive(PrimitiveKind.POINT, (x, y), construction)


@dataclass(frozen=True)
class Reference:
    """Points at a primitive, or a sub-primitive of it, by ordinal."""

    primitive: int
    slot: Slot = Slot.WHOLE

    def __post_init__(self):
        if self.primitive < 0:
            raise SketchError(f"negative primitive index {self.primitive}")


@dataclass(frozen=True)
class Constraint:
    """A categorical relation over one or two references."""

    kind: ConstraintKind
    refs: tuple[Reference, ...]

    def __post_init__(self):
        object.__setattr__(self, "refs", tuple(self.refs))
        lo, hi = CONSTRAINT_ARITY[self.kind]
        if not lo <= len(self.refs) <= hi:
            raise SketchError(
                f"{self.kind.value} takes {lo}..{hi} refs, got {len(self.refs)}"
            )

    def latest_member(self) -> int:
        return max(r.primitive for r in self.refs)


def sort_constraints(constraints) -> tuple[Constraint, ...]:
    """Canonical constraint order: stable sort by latest member primitive."""
    return tuple(sorted(constraints, key=lambda c: c.latest_member()))


@dataclass(frozen=True)
class Sketch:
    """Ordered primitives plus ordered constraints; the unit of everything."""

    primitives: tuple[Primitive, ...]
    constraints: tuple[Constraint, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        n = len(self.primitives)
        last = -1
        for ci, c in enumerate(self.constraints):
            for r in c.refs:
                if r.primitive >= n:
                    raise SketchError(
                        f"constraint {ci} references primitive {r.primitive} of {n}"
                    )
                kind = self.primitives[r.primitive].kind
                if r.slot not in VALID_SLOTS[kind]:
                    raise SketchError(
                        f"constraint {ci}: slot {r.slot.value!r} invalid for {kind.value}"
                    )
            m = c.latest_member()
            if m < last:
                raise SketchError(
                    f"constraint {ci} out of order: latest member {m} after {last}"
                )
            last = m


@dataclass(frozen=True)
class DofReport:
    total: int
    removed: int
    net: int


# ---------------------------------------------------------------------------
# Geometry helpers
# ---------------------------------------------------------------------------

def arc_circumcircle(params) -> tuple[float, float, float]:
    """Center and radius of the circle through an arc's three defining points."""
    x1, y1, xm, ym, x2, y2 = params
    d = 2.0 * (x1 * (ym - y2) + xm * (y2 - y1) + x2 * (y1 - ym))
    a2 = x1 * x1 + y1 * y1
    m2 = xm * xm + ym * ym
    b2 = x2 * x2 + y2 * y2
    ux = (a2 * (ym - y2) + m2 * (y2 - y1) + b2 * (y1 - ym)) / d
    uy = (a2 * (x2 - xm) + m2 * (x1 - x2) + b2 * (xm - x1)) / d
    r = math.hypot(x1 - ux, y1 - uy)
    return ux, uy, r


def arc_angles(params) -> tuple[float, float, float, float, float]:
    """(cx, cy, r, start angle, signed sweep) with the sweep passing through
    the arc's on-curve midpoint."""
    cx, cy, r = arc_circumcircle(params)
    x1, y1, xm, ym, x2, y2 = params
    t1 = math.atan2(y1 - cy, x1 - cx)
    tm = math.atan2(ym - cy, xm - cx)
    t2 = math.atan2(y2 - cy, x2 - cx)
    ccw_m = (tm - t1) % (2 * math.pi)
    ccw_2 = (t2 - t1) % (2 * math.pi)
    if ccw_m <= ccw_2:
        sweep = ccw_2  # counter-clockwise from t1 hits m before 2
    else:
        sweep = ccw_2 - 2 * math.pi  # clockwise
    return cx, cy, r, t1, sweep


def primitive_bbox(p: Primitive) -> tuple[float, float, float, float]:
    """Tight axis-aligned bounding box of the primitive's curve geometry."""
    if p.kind is PrimitiveKind.POINT:
        x, y = p.params
        return x, y, x, y
    if p.kind is PrimitiveKind.LINE:
        x1, y1, x2, y2 = p.params
        return min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2)
    if p.kind is PrimitiveKind.CIRCLE:
        x, y, r = p.params
        return x - r, y - r, x + r, y + r
    cx, cy, r, t1, sweep = arc_angles(p.params)
    xs = [p.params[0], p.params[4]]
    ys = [p.params[1], p.params[5]]
    # Include axis-aligned extremes of the circle that the sweep passes over.
    for k, (dx, dy) in enumerate(((1, 0), (0, 1), (-1, 0), (0, -1))):
        tk = k * math.pi / 2
        delta = (tk - t1) % (2 * math.pi)
        if sweep < 0:
            delta -= 2 * math.pi
            hit = delta >= sweep
        else:
            hit = delta <= sweep
        if hit:
            xs.append(cx + r * dx)
            ys.append(cy + r * dy)
    return min(xs), min(ys), max(xs), max(ys)


def sketch_bbox(s: Sketch) -> tuple[float, float, float, float]:
    if not s.primitives:
        raise DegenerateExtent("empty sketch has no extent")
    boxes = [primitive_bbox(p) for p in s.primitives]
    return (
        min(b[0] for b in boxes),
        min(b[1] for b in boxes),
        max(b[2] for b in boxes),
        max(b[3] for b in boxes),
    )


def _map_params(p: Primitive, fxy, fscale) -> Primitive:
    """Apply a similarity map to a primitive's params: fxy on coordinate pairs,
    fscale on the radius."""
    if p.kind is PrimitiveKind.CIRCLE:
        x, y = fxy(p.params[0], p.params[1])
        return Primitive(p.kind, (x, y, fscale(p.params[2])), p.is_construction)
    out = []
    for i in range(0, len(p.params), 2):
        out.extend(fxy(p.params[i], p.params[i + 1]))
    return Primitive(p.kind, tuple(out), p.is_construction)


def normalize_sketch(s: Sketch) -> tuple[Sketch, dict]:
    """Rescale and center so the square bounding box has side 1.0 at origin.

    Returns (normalized sketch, transform) with
    ``normalized = original * scale + offset``; invert with
    ``original = (normalized - offset) / scale``.
    """
    x0, y0, x1, y1 = sketch_bbox(s)
    side = max(x1 - x0, y1 - y0)
    if side <= 1e-12:
        raise DegenerateExtent(f"sketch extent is a single point (side {side:g})")
    scale = 1.0 / side
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    offset = (-cx * scale, -cy * scale)

    def fxy(x, y):
        return (x * scale + offset[0], y * scale + offset[1])

    prims = tuple(_map_params(p, fxy, lambda r: r * scale) for p in s.primitives)
    return Sketch(prims, s.constraints), {"scale": scale, "offset": offset}


def denormalize_sketch(s: Sketch, transform: dict) -> Sketch:
    """Invert a normalize_sketch transform."""
    scale = transform["scale"]
    ox, oy = transform["offset"]

    def fxy(x, y):
        return ((x - ox) / scale, (y - oy) / scale)

    prims = tuple(_map_params(p, fxy, lambda r: r / scale) for p in s.primitives)
    return Sketch(prims, s.constraints)


# ---------------------------------------------------------------------------
# Quantization
# ---------------------------------------------------------------------------

def quantize(x: float, bits: int = 6, is_radius: bool = False) -> int:
    """Uniform quantization: coordinates in [-0.5, 0.5] onto 2^bits bins,
    radii in [0, 0.5] onto 2^(bits-1) bins.  Out-of-range clamps."""
    n = 1 << bits
    if is_radius:
        b = math.floor(x * n)
        return max(0, min(n // 2 - 1, b))
    b = math.floor((x + 0.5) * n)
    return max(0, min(n - 1, b))


def dequantize(b: int, bits: int = 6, is_radius: bool = False) -> float:
    """Bin-center value of a quantization bin."""
    n = 1 << bits
    if is_radius:
        return (b + 0.5) / n
    return (b + 0.5) / n - 0.5


def _radius_mask(kind: PrimitiveKind) -> tuple[bool, ...]:
    return tuple(name == "r" for name in PARAM_NAMES[kind])


def quantize_params(p: Primitive, bits: int = 6) -> tuple[int, ...]:
    return tuple(
        quantize(v, bits, is_radius=m) for v, m in zip(p.params, _radius_mask(p.kind))
    )


def dequantize_params(kind: PrimitiveKind, bins, bits: int = 6) -> tuple[float, ...]:
    return tuple(
        dequantize(b, bits, is_radius=m) for b, m in zip(bins, _radius_mask(kind))
    )


def dedup_key(s: Sketch, bits: int = 6) -> str:
    """Stable hash of the normalized, quantized primitive sequence.

    Ordering matters; constraints are ignored; the construction flag is
    included because it changes rendered geometry style.
    """
    norm, _ = normalize_sketch(s)
    items = [
        (p.kind.value, p.is_construction, quantize_params(p, bits))
        for p in norm.primitives
    ]
    payload = json.dumps(items, separators=(",", ":")).encode()
    return hashlib.sha256(payload).hexdigest()


# ---------------------------------------------------------------------------
# Degrees of freedom
# ---------------------------------------------------------------------------

def _is_point_like(s: Sketch, r: Reference) -> bool:
    if r.slot is not Slot.WHOLE:
        return True
    return s.primitives[r.primitive].kind is PrimitiveKind.POINT


def _removed_by(s: Sketch, c: Constraint) -> int:
    k = c.kind
    if k is ConstraintKind.FIX:
        return PRIMITIVE_DOF[s.primitives[c.refs[0].primitive].kind]
    if k is ConstraintKind.COINCIDENT:
        # point-point removes 2; point-on-curve (and anything else) removes 1
        if all(_is_point_like(s, r) for r in c.refs):
            return 2
        return 1
    if k in (ConstraintKind.CONCENTRIC, ConstraintKind.MIDPOINT, ConstraintKind.QUADRANT):
        return 2
    return 1


def degrees_of_freedom(s: Sketch) -> DofReport:
    """Constraint-counting DOF accounting; a statistics convention, not solver
    behavior."""
    total = sum(PRIMITIVE_DOF[p.kind] for p in s.primitives)
    removed = sum(_removed_by(s, c) for c in s.constraints)
    return DofReport(total=total, removed=removed, net=max(total - removed, 0))


# ---------------------------------------------------------------------------
# JSON wire format
# ---------------------------------------------------------------------------

def sketch_to_json(s: Sketch) -> dict:
    return {
        "primitives": [
            {
                "kind": p.kind.value,
                "construction": p.is_construction,
                "params": list(p.params),
            }
            for p in s.primitives
        ],
        "constraints": [
            {
                "kind": c.kind.value,
                "refs": [
                    {"primitive": r.primitive, "slot": r.slot.value} for r in c.refs
                ],
            }
            for c in s.constraints
        ],
    }


def sketch_from_json(data: dict) -> Sketch:
    if not isinstance(data, dict):
        raise SketchError("sketch JSON must be an object")
    try:
        prims = tuple(
            Primitive(
                PrimitiveKind(d["kind"]),
                tuple(d["params"]),
                bool(d.get("construction", False)),
            )
            for d in data.get("primitives", [])
        )
        cons = tuple(
            Constraint(
                ConstraintKind(d["kind"]),
                tuple(
                    Reference(int(r["primitive"]), Slot(r.get("slot", "whole")))
                    for r in d["refs"]
                ),
            )
            for d in data.get("constraints", [])
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, SketchError):
            raise
        raise SketchError(f"malformed sketch JSON: {e}") from e
    return Sketch(prims, cons)

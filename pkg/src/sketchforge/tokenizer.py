"""Bidirectional codecs between sketches and (value, ID, position) triples.

Two token streams exist: the primitive stream and the constraint stream.
Both flatten to sequences of integer triples.  Value tokens carry either a
reserved code (markers, type codes), a quantized numeric bin, a boolean, or
— in the constraint stream — a pointer into the flattened primitive stream.

Primitive stream value bands (vocab size 73):
    0 Pad, 1 Start, 2 Stop, 3 Arc, 4 Circle, 5 Line, 6 Point,
    7..70 quantized bins 0..63, 71 construction=false, 72 construction=true.

Constraint stream value bands:
    0 Pad, 1 Start, 2 Stop, 3..15 constraint types (Coincident..Vertical),
    16+k pointer to flattened primitive-token index k.

ID codes (primitive stream, version 1):
    0 marker, 1 type, 2 construction, 3 x1, 4 y1, 5 x_mid, 6 y_mid,
    7 x2, 8 y2, 9 x, 10 y, 11 r.
ID codes (constraint stream, version 1): 0 marker, 1 type, 2 ref1, 3 ref2.

Position tokens are the 1-based ordinal of the owning primitive/constraint;
sequence markers carry position 0.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import (
    CONSTRAINT_ARITY,
    PARAM_COUNT,
    PARAM_NAMES,
    VALID_SLOTS,
    Constraint,
    ConstraintKind,
    Primitive,
    PrimitiveKind,
    Reference,
    Sketch,
    Slot,
    dequantize,
    quantize,
)

__all__ = [
    "TokenTriple",
    "TokenizerConfig",
    "TooLong",
    "MalformedSequence",
    "InvalidReference",
    "PAD",
    "START",
    "STOP",
    "PRIMITIVE_TYPE_CODES",
    "CONSTRAINT_TYPE_CODES",
    "NUM_BASE",
    "BOOL_FALSE",
    "BOOL_TRUE",
    "REF_BASE",
    "PRIMITIVE_VOCAB_SIZE",
    "PRIMITIVE_ID_SIZE",
    "CONSTRAINT_ID_SIZE",
    "SLOT_OFFSETS",
    "encode_raw_primitives",
    "encode_primitives",
    "decode_primitives",
    "encode_constraints",
    "decode_constraints",
    "flattened_length",
    "primitive_token_starts",
    "resolution_map",
    "designated_indices",
    "constraint_vocab_size",
    "dump_tokens",
    "parse_tokens",
]


class TooLong(ValueError):
    """Flattened sequence exceeds the configured maximum."""


class MalformedSequence(ValueError):
    """Token stream violates the sequence grammar."""

    def __init__(self, index: int, message: str):
        super().__init__(f"token {index}: {message}")
        self.index = index


class InvalidReference(ValueError):
    """Reference slot illegal for the target kind, or pointer to a
    non-designated token index."""


PAD, START, STOP = 0, 1, 2

PRIMITIVE_TYPE_CODES = {
    PrimitiveKind.ARC: 3,
    PrimitiveKind.CIRCLE: 4,
    PrimitiveKind.LINE: 5,
    PrimitiveKind.POINT: 6,
}
_PRIM_CODE_TO_KIND = {v: k for k, v in PRIMITIVE_TYPE_CODES.items()}

NUM_BASE = 7  # value NUM_BASE+b encodes bin b
BOOL_FALSE = 71
BOOL_TRUE = 72
PRIMITIVE_VOCAB_SIZE = 73

CONSTRAINT_TYPE_CODES = {
    ConstraintKind.COINCIDENT: 3,
    ConstraintKind.CONCENTRIC: 4,
    ConstraintKind.EQUAL: 5,
    ConstraintKind.FIX: 6,
    ConstraintKind.HORIZONTAL: 7,
    ConstraintKind.MIDPOINT: 8,
    ConstraintKind.NORMAL: 9,
    ConstraintKind.OFFSET: 10,
    ConstraintKind.PARALLEL: 11,
    ConstraintKind.PERPENDICULAR: 12,
    ConstraintKind.QUADRANT: 13,
    ConstraintKind.TANGENT: 14,
    ConstraintKind.VERTICAL: 15,
}
_CON_CODE_TO_KIND = {v: k for k, v in CONSTRAINT_TYPE_CODES.items()}

REF_BASE = 16  # value REF_BASE+k points at flattened primitive-token index k

ID_MARKER = 0
ID_TYPE = 1
ID_CONSTRUCTION = 2
_PARAM_ID = {
    "x1": 3, "y1": 4, "x_mid": 5, "y_mid": 6, "x2": 7, "y2": 8,
    "x": 9, "y": 10, "r": 11,
}
PRIMITIVE_ID_SIZE = 12

ID_REF1 = 2
ID_REF2 = 3
CONSTRAINT_ID_SIZE = 4

# Token offsets of designated sub-primitive slots, measured from the
# primitive's type token.  Offsets skip the construction-flag token at +1,
# so they land on the x coordinate of the designated point (or the type
# token for the whole primitive).
SLOT_OFFSETS = {
    PrimitiveKind.ARC: {Slot.WHOLE: 0, Slot.FIRST: 2, Slot.CENTER: 4, Slot.SECOND: 6},
    PrimitiveKind.CIRCLE: {Slot.WHOLE: 0, Slot.CENTER: 2},
    PrimitiveKind.LINE: {Slot.WHOLE: 0, Slot.FIRST: 2, Slot.SECOND: 4},
    PrimitiveKind.POINT: {Slot.WHOLE: 0},
}


@dataclass(frozen=True)
class TokenTriple:
    value: int
    id: int
    position: int


@dataclass(frozen=True)
class TokenizerConfig:
    bits: int = 6
    max_primitives: int = 16
    max_constraints: int = 64

    @property
    def max_primitive_tokens(self) -> int:
        # Start + Stop + per primitive: type + construction + params (arc worst)
        return 2 + self.max_primitives * (2 + PARAM_COUNT[PrimitiveKind.ARC])

    @property
    def max_constraint_tokens(self) -> int:
        return 2 + self.max_constraints * 3


DEFAULT_CONFIG = TokenizerConfig()


def _param_ids(kind: PrimitiveKind) -> tuple[int, ...]:
    return tuple(_PARAM_ID[name] for name in PARAM_NAMES[kind])


def flattened_length(s: Sketch) -> int:
    """Length of the flattened primitive token sequence, markers included."""
    return 2 + sum(2 + PARAM_COUNT[p.kind] for p in s.primitives)


def primitive_token_starts(s: Sketch) -> list[int]:
    """Flattened index of each primitive's type token (Start token is 0)."""
    starts = []
    cursor = 1
    for p in s.primitives:
        starts.append(cursor)
        cursor += 2 + PARAM_COUNT[p.kind]
    return starts


def constraint_vocab_size(cfg: TokenizerConfig = DEFAULT_CONFIG) -> int:
    return REF_BASE + cfg.max_primitive_tokens


# ---------------------------------------------------------------------------
# Primitive stream
# ---------------------------------------------------------------------------

def encode_raw_primitives(rows, cfg: TokenizerConfig = DEFAULT_CONFIG) -> list[TokenTriple]:
    """Flatten (kind, is_construction, params) rows into token triples.

    Params need not form valid primitives (quantization clamps), which lets
    noise-injected training inputs share the exact layout of the clean
    encoding.
    """
    rows = list(rows)
    n = 2 + sum(2 + PARAM_COUNT[kind] for kind, _, _ in rows)
    if n > cfg.max_primitive_tokens:
        raise TooLong(
            f"{n} primitive tokens exceed maximum {cfg.max_primitive_tokens}"
        )
    out = [TokenTriple(START, ID_MARKER, 0)]
    for pos, (kind, construction, params) in enumerate(rows, start=1):
        out.append(TokenTriple(PRIMITIVE_TYPE_CODES[kind], ID_TYPE, pos))
        out.append(
            TokenTriple(BOOL_TRUE if construction else BOOL_FALSE, ID_CONSTRUCTION, pos)
        )
        radius = tuple(name == "r" for name in PARAM_NAMES[kind])
        for v, pid, isr in zip(params, _param_ids(kind), radius):
            b = quantize(v, cfg.bits, is_radius=isr)
            out.append(TokenTriple(NUM_BASE + b, pid, pos))
    out.append(TokenTriple(STOP, ID_MARKER, 0))
    return out


def encode_primitives(s: Sketch, cfg: TokenizerConfig = DEFAULT_CONFIG) -> list[TokenTriple]:
    """Flatten a sketch's primitive sequence into token triples."""
    return encode_raw_primitives(
        ((p.kind, p.is_construction, p.params) for p in s.primitives), cfg
    )


def _expect(cond: bool, index: int, message: str):
    if not cond:
        raise MalformedSequence(index, message)


def decode_primitives(tokens, cfg: TokenizerConfig = DEFAULT_CONFIG) -> Sketch:
    """Inverse of encode_primitives; stops at the first Stop token.

    Raises MalformedSequence with the index of the first offending token.
    """
    tokens = list(tokens)
    _expect(len(tokens) >= 1, 0, "empty sequence")
    t0 = tokens[0]
    _expect(
        t0.value == START and t0.id == ID_MARKER and t0.position == 0,
        0,
        f"expected Start triple, got {t0}",
    )
    prims: list[Primitive] = []
    i = 1
    pos = 0
    nbins = 1 << cfg.bits
    while True:
        _expect(i < len(tokens), i - 1, "truncated sequence: no Stop")
        t = tokens[i]
        if t.value == STOP:
            _expect(t.id == ID_MARKER and t.position == 0, i, "malformed Stop triple")
            break
        _expect(t.value in _PRIM_CODE_TO_KIND, i, f"expected type token, got value {t.value}")
        kind = _PRIM_CODE_TO_KIND[t.value]
        pos += 1
        _expect(t.position == pos, i, f"position {t.position} != expected {pos}")
        _expect(t.id == ID_TYPE, i, f"type token carries id {t.id}")
        i += 1

        _expect(i < len(tokens), i - 1, "truncated primitive: missing construction flag")
        t = tokens[i]
        _expect(t.value in (BOOL_FALSE, BOOL_TRUE), i, f"expected construction flag, got {t.value}")
        _expect(t.id == ID_CONSTRUCTION and t.position == pos, i, "malformed construction triple")
        construction = t.value == BOOL_TRUE
        i += 1

        bins = []
        radius = tuple(name == "r" for name in PARAM_NAMES[kind])
        for pid, isr in zip(_param_ids(kind), radius):
            _expect(i < len(tokens), i - 1, "truncated primitive: missing parameter")
            t = tokens[i]
            _expect(
                NUM_BASE <= t.value < NUM_BASE + nbins,
                i,
                f"expected numeric token, got value {t.value}",
            )
            b = t.value - NUM_BASE
            if isr:
                _expect(b < nbins // 2, i, f"radius bin {b} out of range")
            _expect(t.id == pid, i, f"parameter id {t.id} != expected {pid}")
            _expect(t.position == pos, i, f"position {t.position} != expected {pos}")
            bins.append(b)
            i += 1

        params = []
        for b, isr in zip(bins, radius):
            params.append(dequantize(b, cfg.bits, is_radius=isr))
        try:
            prims.append(Primitive(kind, tuple(params), construction))
        except ValueError as e:
            raise MalformedSequence(i - len(bins), f"undecodable primitive: {e}") from e
    return Sketch(tuple(prims), ())


# ---------------------------------------------------------------------------
# Constraint stream
# ---------------------------------------------------------------------------

def resolution_map(s: Sketch) -> dict[int, Reference]:
    """Bijection from designated flattened token indices to references."""
    out: dict[int, Reference] = {}
    for pi, (p, start) in enumerate(zip(s.primitives, primitive_token_starts(s))):
        for slot, off in SLOT_OFFSETS[p.kind].items():
            out[start + off] = Reference(pi, slot)
    return out


def designated_indices(s: Sketch) -> list[int]:
    return sorted(resolution_map(s))


def _reference_index(s: Sketch, starts, r: Reference) -> int:
    kind = s.primitives[r.primitive].kind
    offsets = SLOT_OFFSETS[kind]
    if r.slot not in offsets:
        raise InvalidReference(f"slot {r.slot.value!r} illegal for {kind.value}")
    return starts[r.primitive] + offsets[r.slot]


def encode_constraints(s: Sketch, cfg: TokenizerConfig = DEFAULT_CONFIG) -> list[TokenTriple]:
    """Flatten a sketch's constraint sequence; references become pointers into
    the flattened primitive stream."""
    n = 2 + sum(1 + len(c.refs) for c in s.constraints)
    if n > cfg.max_constraint_tokens:
        raise TooLong(f"{n} constraint tokens exceed maximum {cfg.max_constraint_tokens}")
    starts = primitive_token_starts(s)
    out = [TokenTriple(START, ID_MARKER, 0)]
    for pos, c in enumerate(s.constraints, start=1):
        out.append(TokenTriple(CONSTRAINT_TYPE_CODES[c.kind], ID_TYPE, pos))
        for j, r in enumerate(c.refs):
            k = _reference_index(s, starts, r)
            out.append(TokenTriple(REF_BASE + k, ID_REF1 if j == 0 else ID_REF2, pos))
    out.append(TokenTriple(STOP, ID_MARKER, 0))
    return out


def decode_constraints(tokens, s: Sketch, cfg: TokenizerConfig = DEFAULT_CONFIG) -> tuple[Constraint, ...]:
    """Inverse of encode_constraints against the primitive layout of ``s``."""
    rmap = resolution_map(s)
    tokens = list(tokens)
    _expect(len(tokens) >= 1, 0, "empty sequence")
    t0 = tokens[0]
    _expect(
        t0.value == START and t0.id == ID_MARKER and t0.position == 0,
        0,
        f"expected Start triple, got {t0}",
    )
    out: list[Constraint] = []
    i = 1
    pos = 0
    while True:
        _expect(i < len(tokens), i - 1, "truncated sequence: no Stop")
        t = tokens[i]
        if t.value == STOP:
            _expect(t.id == ID_MARKER and t.position == 0, i, "malformed Stop triple")
            break
        _expect(t.value in _CON_CODE_TO_KIND, i, f"expected constraint type, got value {t.value}")
        kind = _CON_CODE_TO_KIND[t.value]
        pos += 1
        _expect(t.position == pos, i, f"position {t.position} != expected {pos}")
        _expect(t.id == ID_TYPE, i, f"type token carries id {t.id}")
        i += 1

        refs: list[Reference] = []
        while i < len(tokens) and tokens[i].value >= REF_BASE:
            t = tokens[i]
            _expect(t.position == pos, i, f"position {t.position} != expected {pos}")
            expected_id = ID_REF1 if not refs else ID_REF2
            _expect(t.id == expected_id, i, f"reference id {t.id} != expected {expected_id}")
            k = t.value - REF_BASE
            if k not in rmap:
                raise InvalidReference(
                    f"token {i}: pointer {k} is not a designated sub-primitive index"
                )
            refs.append(rmap[k])
            i += 1
            if len(refs) == 2:
                break
        lo, hi = CONSTRAINT_ARITY[kind]
        _expect(
            lo <= len(refs) <= hi,
            i - 1,
            f"{kind.value} decoded with {len(refs)} refs (allowed {lo}..{hi})",
        )
        out.append(Constraint(kind, tuple(refs)))
    return tuple(out)


# ---------------------------------------------------------------------------
# Token dump files
# ---------------------------------------------------------------------------

_DUMP_HEADER = (
    "# sketchforge-tokens v1 stream={stream} "
    "ids={ids}"
)
_STREAM_IDS = {
    "primitives": "marker,type,construction,x1,y1,x_mid,y_mid,x2,y2,x,y,r",
    "constraints": "marker,type,ref1,ref2",
}


def dump_tokens(tokens, stream: str) -> str:
    """Newline-delimited text, one "value id position" triple per line."""
    if stream not in _STREAM_IDS:
        raise ValueError(f"unknown stream {stream!r}")
    lines = [_DUMP_HEADER.format(stream=stream, ids=_STREAM_IDS[stream])]
    lines.extend(f"{t.value} {t.id} {t.position}" for t in tokens)
    return "\n".join(lines) + "\n"


def parse_tokens(text: str) -> list[TokenTriple]:
    out = []
    for ln, raw in enumerate(text.splitlines()):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 3:
            raise ValueError(f"line {ln + 1}: expected 'value id position', got {raw!r}")
        v, i, p = (int(x) for x in parts)
        out.append(TokenTriple(v, i, p))
    return out

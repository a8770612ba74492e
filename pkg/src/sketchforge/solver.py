"""Damped nonlinear least-squares constraint solver.

The solve step minimizes sum of squared constraint residuals plus a soft
anchor term ``w_anchor * ||x - x0||^2`` that keeps primitives near their
initial positions, then polishes the result on the constraint residuals
alone so satisfied systems reach violations at solver precision.

Residual functions are written in plain arithmetic (+, -, *, /, sqrt) so
block Jacobians come from complex-step differentiation, which is exact to
machine precision.  Discrete branches (tangent side, quadrant axis) are
frozen from the initial configuration for the whole solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    Constraint,
    ConstraintKind,
    PARAM_COUNT,
    Primitive,
    PrimitiveKind,
    Reference,
    Sketch,
    Slot,
    arc_angles,
)

__all__ = [
    "UnsupportedPair",
    "SolveOptions",
    "SolveReport",
    "ResidualBlock",
    "build_residual_blocks",
    "residual",
    "check_satisfied",
    "solve",
    "variable_offsets",
]

_CS_STEP = 1e-200  # complex-step size; exact derivatives for analytic fns


class UnsupportedPair(ValueError):
    """No residual is defined for this (kind, slot) combination."""


@dataclass(frozen=True)
class SolveOptions:
    max_iter: int = 100
    tol: float = 1e-8
    w_anchor: float = 1e-3
    violation_tol: float = 1e-6
    polish: bool = True
    canonicalize_arcs: bool = True


@dataclass(frozen=True)
class SolveReport:
    converged: bool
    iterations: int
    residual_norm: float
    max_constraint_violation: float
    objective_trace: tuple[float, ...] = field(default_factory=tuple)


@dataclass
class ResidualBlock:
    """One constraint's residual over the variables it touches.

    ``fn`` maps the local variable slice (possibly complex) to the residual
    vector; ``var_indices`` are the global variable indices it reads.
    """

    constraint_index: int
    var_indices: np.ndarray
    size: int
    fn: object  # Callable[[np.ndarray], np.ndarray]

    def jacobian(self, local: np.ndarray) -> np.ndarray:
        """Block Jacobian (size x len(var_indices)) via complex step."""
        out = np.empty((self.size, len(self.var_indices)))
        base = local.astype(complex)
        for j in range(len(self.var_indices)):
            z = base.copy()
            z[j] += 1j * _CS_STEP
            out[:, j] = np.imag(self.fn(z)) / _CS_STEP
        return out


def variable_offsets(s: Sketch) -> list[int]:
    """Start index of each primitive's params in the flat variable vector."""
    offs = []
    cursor = 0
    for p in s.primitives:
        offs.append(cursor)
        cursor += PARAM_COUNT[p.kind]
    return offs


def _flat_params(s: Sketch) -> np.ndarray:
    return np.array([v for p in s.primitives for v in p.params], dtype=float)


def _norm2(v):
    return np.sqrt(v[0] * v[0] + v[1] * v[1])


def _circumcenter(a, m, b):
    d = 2.0 * (a[0] * (m[1] - b[1]) + m[0] * (b[1] - a[1]) + b[0] * (a[1] - m[1]))
    a2 = a[0] * a[0] + a[1] * a[1]
    m2 = m[0] * m[0] + m[1] * m[1]
    b2 = b[0] * b[0] + b[1] * b[1]
    ux = (a2 * (m[1] - b[1]) + m2 * (b[1] - a[1]) + b2 * (a[1] - m[1])) / d
    uy = (a2 * (b[0] - m[0]) + m2 * (a[0] - b[0]) + b2 * (m[0] - a[0])) / d
    return np.array([ux, uy])


class _Entity:
    """Resolves geometry of one reference inside a block-local vector."""

    def __init__(self, kind: PrimitiveKind, slot: Slot, offset: int):
        self.kind = kind
        self.slot = slot
        self.offset = offset

    def seg(self, x, n):
        return x[self.offset : self.offset + n]

    @property
    def is_point(self) -> bool:
        if self.slot is not Slot.WHOLE:
            return True
        return self.kind is PrimitiveKind.POINT

    @property
    def is_line(self) -> bool:
        return self.slot is Slot.WHOLE and self.kind is PrimitiveKind.LINE

    @property
    def is_circular(self) -> bool:
        return self.slot is Slot.WHOLE and self.kind in (
            PrimitiveKind.CIRCLE,
            PrimitiveKind.ARC,
        )

    def params(self, x):
        return self.seg(x, PARAM_COUNT[self.kind])

    def pt(self, x):
        k, s = self.kind, self.slot
        if k is PrimitiveKind.POINT:
            return self.seg(x, 2)
        if k is PrimitiveKind.LINE:
            p = self.params(x)
            return p[0:2] if s is Slot.FIRST else p[2:4]
        if k is PrimitiveKind.CIRCLE:
            return self.params(x)[0:2]
        p = self.params(x)
        if s is Slot.FIRST:
            return p[0:2]
        if s is Slot.SECOND:
            return p[4:6]
        return _circumcenter(p[0:2], p[2:4], p[4:6])  # arc center

    def endpoints(self, x):
        p = self.params(x)
        return p[0:2], p[2:4]

    def direction(self, x):
        a, b = self.endpoints(x)
        d = b - a
        return d / _norm2(d)

    def center_radius(self, x):
        p = self.params(x)
        if self.kind is PrimitiveKind.CIRCLE:
            return p[0:2], p[2]
        c = _circumcenter(p[0:2], p[2:4], p[4:6])
        return c, _norm2(p[0:2] - c)


def _cross(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _signed_point_line(p, a, dhat):
    # positive when p lies left of the directed line through a
    return _cross(dhat, p - a)


def _length(e: _Entity, x):
    a, b = e.endpoints(x)
    return _norm2(b - a)


def _unsupported(c: Constraint, s: Sketch) -> UnsupportedPair:
    kinds = ",".join(
        f"{s.primitives[r.primitive].kind.value}.{r.slot.value}" for r in c.refs
    )
    return UnsupportedPair(f"no residual for {c.kind.value}({kinds})")


def _build_block(ci: int, c: Constraint, s: Sketch, x0: np.ndarray):
    """Residual closure for one constraint; branches frozen at x0."""
    offs = variable_offsets(s)
    prim_ids = []
    for r in c.refs:
        if r.primitive not in prim_ids:
            prim_ids.append(r.primitive)
    local_off = {}
    var_indices = []
    for pi in prim_ids:
        local_off[pi] = len(var_indices)
        var_indices.extend(range(offs[pi], offs[pi] + PARAM_COUNT[s.primitives[pi].kind]))
    var_indices = np.array(var_indices, dtype=int)

    ents = [
        _Entity(s.primitives[r.primitive].kind, r.slot, local_off[r.primitive])
        for r in c.refs
    ]
    x0_local = x0[var_indices]
    k = c.kind

    def order(pred_a, pred_b):
        """Return (entity matching pred_a, entity matching pred_b) or None."""
        if len(ents) != 2:
            return None
        a, b = ents
        if pred_a(a) and pred_b(b):
            return a, b
        if pred_a(b) and pred_b(a):
            return b, a
        return None

    if k is ConstraintKind.OFFSET:
        # Recognized no-op: the pipeline models only categorical constraints
        # without numerical parameters, so offset carries nothing to solve.
        return ResidualBlock(ci, var_indices, 0, lambda x: np.zeros(0, dtype=x.dtype))

    if k is ConstraintKind.FIX:
        takes = []
        for e in ents:
            if e.slot is Slot.WHOLE and e.kind is not PrimitiveKind.POINT:
                takes.append((e, "params", np.asarray(e.params(x0_local))))
            else:
                takes.append((e, "pt", np.asarray(e.pt(x0_local))))
        size = sum(len(t[2]) for t in takes)

        def fn(x):
            parts = []
            for e, mode, frozen in takes:
                cur = e.params(x) if mode == "params" else e.pt(x)
                parts.append(cur - frozen)
            return np.concatenate(parts)

        return ResidualBlock(ci, var_indices, size, fn)

    if k is ConstraintKind.COINCIDENT:
        pp = order(lambda e: e.is_point, lambda e: e.is_point)
        if pp:
            a, b = pp
            return ResidualBlock(ci, var_indices, 2, lambda x: a.pt(x) - b.pt(x))
        pl = order(lambda e: e.is_point, lambda e: e.is_line)
        if pl:
            p, l = pl

            def fn(x):
                a, _ = l.endpoints(x)
                return np.array([_signed_point_line(p.pt(x), a, l.direction(x))])

            return ResidualBlock(ci, var_indices, 1, fn)
        pc = order(lambda e: e.is_point, lambda e: e.is_circular)
        if pc:
            p, circ = pc

            def fn(x):
                cc, r = circ.center_radius(x)
                return np.array([_norm2(p.pt(x) - cc) - r])

            return ResidualBlock(ci, var_indices, 1, fn)
        raise _unsupported(c, s)

    if k is ConstraintKind.CONCENTRIC:
        if len(ents) == 2 and all(e.is_circular for e in ents):
            a, b = ents

            def fn(x):
                return a.center_radius(x)[0] - b.center_radius(x)[0]

            return ResidualBlock(ci, var_indices, 2, fn)
        raise _unsupported(c, s)

    if k in (ConstraintKind.HORIZONTAL, ConstraintKind.VERTICAL):
        axis = 1 if k is ConstraintKind.HORIZONTAL else 0
        if len(ents) == 1 and ents[0].is_line:
            e = ents[0]

            def fn(x):
                a, b = e.endpoints(x)
                return np.array([b[axis] - a[axis]])

            return ResidualBlock(ci, var_indices, 1, fn)
        if len(ents) == 2 and all(e.is_point for e in ents):
            a, b = ents

            def fn(x):
                return np.array([b.pt(x)[axis] - a.pt(x)[axis]])

            return ResidualBlock(ci, var_indices, 1, fn)
        raise _unsupported(c, s)

    if k in (ConstraintKind.PARALLEL, ConstraintKind.PERPENDICULAR):
        if len(ents) == 2 and all(e.is_line for e in ents):
            a, b = ents
            if k is ConstraintKind.PARALLEL:
                def fn(x):
                    return np.array([_cross(a.direction(x), b.direction(x))])
            else:
                def fn(x):
                    da, db = a.direction(x), b.direction(x)
                    return np.array([da[0] * db[0] + da[1] * db[1]])
            return ResidualBlock(ci, var_indices, 1, fn)
        raise _unsupported(c, s)

    if k is ConstraintKind.TANGENT:
        lc = order(lambda e: e.is_line, lambda e: e.is_circular)
        if lc:
            l, circ = lc
            c0, r0 = circ.center_radius(x0_local)
            a0, _ = l.endpoints(x0_local)
            d0 = _signed_point_line(c0, a0, l.direction(x0_local))
            sign = 1.0 if d0 >= 0 else -1.0

            def fn(x):
                cc, r = circ.center_radius(x)
                a, _ = l.endpoints(x)
                return np.array([sign * _signed_point_line(cc, a, l.direction(x)) - r])

            return ResidualBlock(ci, var_indices, 1, fn)
        if len(ents) == 2 and all(e.is_circular for e in ents):
            a, b = ents
            ca, ra = a.center_radius(x0_local)
            cb, rb = b.center_radius(x0_local)
            dist0 = _norm2(ca - cb)
            outer0 = abs(dist0 - (ra + rb))
            inner0 = abs(dist0 - abs(ra - rb))
            if outer0 <= inner0:
                def fn(x):
                    c1, r1 = a.center_radius(x)
                    c2, r2 = b.center_radius(x)
                    return np.array([_norm2(c1 - c2) - (r1 + r2)])
            else:
                rsign = 1.0 if (ra - rb) >= 0 else -1.0

                def fn(x):
                    c1, r1 = a.center_radius(x)
                    c2, r2 = b.center_radius(x)
                    return np.array([_norm2(c1 - c2) - rsign * (r1 - r2)])
            return ResidualBlock(ci, var_indices, 1, fn)
        raise _unsupported(c, s)

    if k is ConstraintKind.EQUAL:
        if len(ents) == 2 and all(e.is_line for e in ents):
            a, b = ents
            return ResidualBlock(
                ci, var_indices, 1, lambda x: np.array([_length(a, x) - _length(b, x)])
            )
        if len(ents) == 2 and all(e.is_circular for e in ents):
            a, b = ents

            def fn(x):
                return np.array([a.center_radius(x)[1] - b.center_radius(x)[1]])

            return ResidualBlock(ci, var_indices, 1, fn)
        raise _unsupported(c, s)

    if k is ConstraintKind.MIDPOINT:
        pl = order(lambda e: e.is_point, lambda e: e.is_line)
        if pl:
            p, l = pl

            def fn(x):
                a, b = l.endpoints(x)
                return p.pt(x) - (a + b) / 2.0

            return ResidualBlock(ci, var_indices, 2, fn)
        raise _unsupported(c, s)

    if k is ConstraintKind.NORMAL:
        lc = order(lambda e: e.is_line, lambda e: e.is_circular)
        if lc:
            l, circ = lc

            def fn(x):
                cc, _ = circ.center_radius(x)
                a, _b = l.endpoints(x)
                dhat = l.direction(x)
                t = (cc - a) @ dhat
                p_near = a + t * dhat
                return np.array([_cross(dhat, p_near - cc)])

            return ResidualBlock(ci, var_indices, 1, fn)
        raise _unsupported(c, s)

    if k is ConstraintKind.QUADRANT:
        pc = order(lambda e: e.is_point, lambda e: e.is_circular)
        if pc:
            p, circ = pc
            c0, _r0 = circ.center_radius(x0_local)
            d0 = np.asarray(p.pt(x0_local)) - np.asarray(c0)
            axes = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
            e_axis = np.array(max(axes, key=lambda e: d0[0] * e[0] + d0[1] * e[1]))

            def fn(x):
                cc, r = circ.center_radius(x)
                return p.pt(x) - (cc + r * e_axis)

            return ResidualBlock(ci, var_indices, 2, fn)
        raise _unsupported(c, s)

    raise _unsupported(c, s)


def build_residual_blocks(s: Sketch) -> list[ResidualBlock]:
    """One residual block per constraint, branches frozen at the sketch's
    current configuration."""
    x0 = _flat_params(s)
    return [_build_block(ci, c, s, x0) for ci, c in enumerate(s.constraints)]


def residual(c: Constraint, s: Sketch) -> np.ndarray:
    """Residual vector of one constraint at the sketch's current params;
    zero iff satisfied."""
    x0 = _flat_params(s)
    block = _build_block(0, c, s, x0)
    return np.asarray(block.fn(x0[block.var_indices]), dtype=float)


def check_satisfied(s: Sketch, tol: float = 1e-6) -> bool:
    """True iff every constraint's residual max-norm is below tol."""
    x = _flat_params(s)
    for block in build_residual_blocks(s):
        if block.size == 0:
            continue
        r = np.asarray(block.fn(x[block.var_indices]), dtype=float)
        if np.max(np.abs(r)) >= tol:
            return False
    return True


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------

def _violations(blocks, x) -> float:
    worst = 0.0
    for b in blocks:
        if b.size == 0:
            continue
        r = np.asarray(b.fn(x[b.var_indices]), dtype=float)
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


def _residual_vector(blocks, x, w_anchor, x0):
    parts = [np.asarray(b.fn(x[b.var_indices]), dtype=float) for b in blocks if b.size]
    if w_anchor > 0:
        parts.append(math.sqrt(w_anchor) * (x - x0))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def _jacobian(blocks, x, w_anchor, n):
    rows = sum(b.size for b in blocks) + (n if w_anchor > 0 else 0)
    J = np.zeros((rows, n))
    cursor = 0
    for b in blocks:
        if b.size == 0:
            continue
        Jb = b.jacobian(x[b.var_indices])
        J[cursor : cursor + b.size, b.var_indices] = Jb
        cursor += b.size
    if w_anchor > 0:
        J[cursor:, :] = math.sqrt(w_anchor) * np.eye(n)
    return J


def _degeneracy_floors(s: Sketch, offs, x0) -> list[tuple[int, int, float]]:
    """(offset, kind tag, floor) guards keeping primitives non-degenerate.

    Lines may not shrink below 1e-3 of their initial length and circles below
    1e-3 of their initial radius; otherwise an inconsistent system (e.g.
    horizontal + vertical on one line) could "converge" by collapsing the
    primitive.  Arcs keep the construction-time collinearity floor.
    """
    floors = []
    for p, off in zip(s.primitives, offs):
        if p.kind is PrimitiveKind.LINE:
            l0 = math.hypot(x0[off + 2] - x0[off], x0[off + 3] - x0[off + 1])
            floors.append((off, 0, 1e-3 * l0))
        elif p.kind is PrimitiveKind.CIRCLE:
            floors.append((off, 1, max(1e-9, 1e-3 * x0[off + 2])))
        elif p.kind is PrimitiveKind.ARC:
            floors.append((off, 2, 1e-9))
    return floors


def _feasible(floors, x) -> bool:
    for off, tag, floor in floors:
        if tag == 0:
            if math.hypot(x[off + 2] - x[off], x[off + 3] - x[off + 1]) < floor:
                return False
        elif tag == 1:
            if x[off + 2] < floor:
                return False
        else:
            x1, y1, xm, ym, x2, y2 = x[off : off + 6]
            area2 = (xm - x1) * (y2 - y1) - (ym - y1) * (x2 - x1)
            if abs(area2) <= floor:
                return False
    return True


def _lm_minimize(blocks, x, w_anchor, x0, floors, max_iter, tol, trace):
    """LM loop; returns (x, accepted step count).  Never accepts a step that
    increases the objective or breaks primitive feasibility."""
    n = len(x)
    r = _residual_vector(blocks, x, w_anchor, x0)
    cost = float(r @ r)
    trace.append(cost)
    lam = 1e-3
    accepted = 0
    it = 0
    while it < max_iter:
        it += 1
        J = _jacobian(blocks, x, w_anchor, n)
        g = J.T @ r
        if np.max(np.abs(g)) < 1e-14:
            break
        JtJ = J.T @ J
        stepped = False
        while lam <= 1e12:
            A = JtJ + lam * np.eye(n)
            try:
                delta = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = x + delta
            if _feasible(floors, x_new):
                r_new = _residual_vector(blocks, x_new, w_anchor, x0)
                cost_new = float(r_new @ r_new)
                if math.isfinite(cost_new) and cost_new < cost:
                    x, r, cost = x_new, r_new, cost_new
                    trace.append(cost)
                    accepted += 1
                    lam = max(lam / 10, 1e-12)
                    stepped = True
                    break
            lam *= 10
        if not stepped:
            break
        if np.linalg.norm(delta) <= tol * (1.0 + np.linalg.norm(x)):
            break
    return x, accepted


def _rebuild(s: Sketch, x) -> Sketch:
    offs = variable_offsets(s)
    prims = []
    for p, off in zip(s.primitives, offs):
        n = PARAM_COUNT[p.kind]
        prims.append(Primitive(p.kind, tuple(x[off : off + n]), p.is_construction))
    return Sketch(tuple(prims), s.constraints)


def _canonicalize_arcs(s: Sketch) -> Sketch:
    """Re-project each arc's on-curve midpoint to the angular midpoint of its
    sweep.  The circumcircle and endpoints are unchanged, so no residual
    moves; arcs pinned by a whole-primitive Fix are left alone."""
    fixed = {
        r.primitive
        for c in s.constraints
        if c.kind is ConstraintKind.FIX
        for r in c.refs
        if r.slot is Slot.WHOLE
    }
    prims = list(s.primitives)
    for i, p in enumerate(prims):
        if p.kind is not PrimitiveKind.ARC or i in fixed:
            continue
        cx, cy, r, t1, sweep = arc_angles(p.params)
        tm = t1 + sweep / 2.0
        xm, ym = cx + r * math.cos(tm), cy + r * math.sin(tm)
        try:
            prims[i] = Primitive(
                p.kind,
                (p.params[0], p.params[1], xm, ym, p.params[4], p.params[5]),
                p.is_construction,
            )
        except ValueError:
            pass  # keep the original midpoint if reprojection degenerates
    return Sketch(tuple(prims), s.constraints)


def solve(s: Sketch, opts: SolveOptions = SolveOptions()) -> tuple[Sketch, SolveReport]:
    """Solve the sketch's constraints, keeping primitives near their current
    positions.  Non-convergence is reported, never raised."""
    blocks = build_residual_blocks(s)
    offs = variable_offsets(s)
    x0 = _flat_params(s)

    if _violations(blocks, x0) < opts.violation_tol:
        r = _residual_vector(blocks, x0, 0.0, x0)
        return s, SolveReport(
            converged=True,
            iterations=0,
            residual_norm=float(np.linalg.norm(r)),
            max_constraint_violation=_violations(blocks, x0),
        )

    floors = _degeneracy_floors(s, offs, x0)
    trace: list[float] = []
    x, it1 = _lm_minimize(
        blocks, x0.copy(), opts.w_anchor, x0, floors, opts.max_iter, opts.tol, trace
    )
    it2 = 0
    if opts.polish and _violations(blocks, x) >= opts.violation_tol:
        x, it2 = _lm_minimize(
            blocks, x, 0.0, x0, floors, opts.max_iter, opts.tol, trace
        )

    solved = _rebuild(s, x)
    if opts.canonicalize_arcs:
        solved = _canonicalize_arcs(solved)
    final_x = _flat_params(solved)
    viol = _violations(blocks, final_x)
    r = _residual_vector(blocks, final_x, 0.0, x0)
    return solved, SolveReport(
        converged=viol < opts.violation_tol,
        iterations=it1 + it2,
        residual_norm=float(np.linalg.norm(r)),
        max_constraint_violation=viol,
        objective_trace=tuple(trace),
    )

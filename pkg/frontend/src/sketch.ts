// Pure sketch edits. Nothing here touches the network or the DOM; the
// store composes these with server round-trips.

import {
  CONSTRAINT_KINDS,
  ConstraintJson,
  ConstraintKind,
  ReferenceJson,
  SketchJson,
  VALID_SLOTS,
  cloneSketch,
} from "./types.js";

export interface Point {
  x: number;
  y: number;
}

export function latestMember(c: ConstraintJson): number {
  return Math.max(...c.refs.map((r) => r.primitive));
}

/** Canonical constraint order: stable sort by latest member primitive. */
export function sortConstraints(cons: ConstraintJson[]): ConstraintJson[] {
  return cons
    .map((c, i) => [latestMember(c), i, c] as const)
    .sort((a, b) => a[0] - b[0] || a[1] - b[1])
    .map(([, , c]) => c);
}

export function refsEqual(a: ReferenceJson, b: ReferenceJson): boolean {
  return a.primitive === b.primitive && a.slot === b.slot;
}

export function slotValid(s: SketchJson, ref: ReferenceJson): boolean {
  const prim = s.primitives[ref.primitive];
  return !!prim && VALID_SLOTS[prim.kind].includes(ref.slot);
}

/** Coordinates of a slot handle; arc "center" is the circumcenter. */
export function slotPosition(s: SketchJson, ref: ReferenceJson): Point {
  const prim = s.primitives[ref.primitive];
  const p = prim.params;
  switch (prim.kind) {
    case "point":
      return { x: p[0], y: p[1] };
    case "line":
      if (ref.slot === "second") return { x: p[2], y: p[3] };
      if (ref.slot === "first") return { x: p[0], y: p[1] };
      return { x: (p[0] + p[2]) / 2, y: (p[1] + p[3]) / 2 }; // whole: midpoint handle
    case "circle":
      return { x: p[0], y: p[1] };
    case "arc": {
      if (ref.slot === "first") return { x: p[0], y: p[1] };
      if (ref.slot === "second") return { x: p[4], y: p[5] };
      if (ref.slot === "center") return circumcenter(p);
      return { x: p[2], y: p[3] }; // whole: the on-curve midpoint handle
    }
  }
}

export function circumcenter(p: number[]): Point {
  const [x1, y1, xm, ym, x2, y2] = p;
  const d = 2 * (x1 * (ym - y2) + xm * (y2 - y1) + x2 * (y1 - ym));
  const a2 = x1 * x1 + y1 * y1;
  const m2 = xm * xm + ym * ym;
  const b2 = x2 * x2 + y2 * y2;
  return {
    x: (a2 * (ym - y2) + m2 * (y2 - y1) + b2 * (y1 - ym)) / d,
    y: (a2 * (x2 - xm) + m2 * (x1 - x2) + b2 * (xm - x1)) / d,
  };
}

/**
 * Move a slot to a target point, returning a new sketch.
 *
 * Point slots move their own coordinates. "whole" (and the arc center,
 * which has no stored coordinates) translate the entire primitive.
 */
export function moveSlot(s: SketchJson, ref: ReferenceJson, target: Point): SketchJson {
  const out = cloneSketch(s);
  const prim = out.primitives[ref.primitive];
  const p = prim.params;
  const set = (ix: number, iy: number) => {
    p[ix] = target.x;
    p[iy] = target.y;
  };
  const translateAll = () => {
    const at = slotPosition(s, ref);
    const dx = target.x - at.x;
    const dy = target.y - at.y;
    const coords = prim.kind === "circle" ? 2 : p.length;
    for (let i = 0; i < coords; i += 2) {
      p[i] += dx;
      p[i + 1] += dy;
    }
  };
  switch (prim.kind) {
    case "point":
      set(0, 1);
      break;
    case "line":
      if (ref.slot === "first") set(0, 1);
      else if (ref.slot === "second") set(2, 3);
      else translateAll();
      break;
    case "circle":
      if (ref.slot === "center") set(0, 1);
      else translateAll();
      break;
    case "arc":
      if (ref.slot === "first") set(0, 1);
      else if (ref.slot === "second") set(4, 5);
      else translateAll(); // whole and center both translate rigidly
      break;
  }
  return out;
}

/** Sketch to POST for a drag release: moved slot pinned by a temporary fix. */
export function dragSolvePayload(
  s: SketchJson,
  ref: ReferenceJson,
  target: Point,
): SketchJson {
  const moved = moveSlot(s, ref, target);
  const temp: ConstraintJson = { kind: "fix", refs: [{ ...ref }] };
  return {
    primitives: moved.primitives,
    constraints: sortConstraints([...moved.constraints, temp]),
  };
}

export function addConstraint(s: SketchJson, c: ConstraintJson): SketchJson {
  if (!CONSTRAINT_KINDS.includes(c.kind)) {
    throw new Error(`unknown constraint kind ${c.kind}`);
  }
  for (const r of c.refs) {
    if (!slotValid(s, r)) {
      throw new Error(`slot ${r.slot} invalid for primitive ${r.primitive}`);
    }
  }
  const out = cloneSketch(s);
  out.constraints = sortConstraints([...out.constraints, c]);
  return out;
}

export function removeConstraint(s: SketchJson, index: number): SketchJson {
  const out = cloneSketch(s);
  out.constraints = out.constraints.filter((_, i) => i !== index);
  return out;
}

export function describeRef(r: ReferenceJson): string {
  return r.slot === "whole" ? `#${r.primitive}` : `#${r.primitive}.${r.slot}`;
}

export function describeConstraint(c: ConstraintJson): string {
  return `${c.kind}(${c.refs.map(describeRef).join(", ")})`;
}

export function arityRange(kind: ConstraintKind): [number, number] {
  return kind === "fix" || kind === "horizontal" || kind === "vertical"
    ? [1, 2]
    : [2, 2];
}

// Wire types mirroring the service JSON schema exactly.

export type PrimitiveKind = "arc" | "circle" | "line" | "point";

export type SlotName = "whole" | "first" | "center" | "second";

export type ConstraintKind =
  | "coincident"
  | "concentric"
  | "equal"
  | "fix"
  | "horizontal"
  | "midpoint"
  | "normal"
  | "offset"
  | "parallel"
  | "perpendicular"
  | "quadrant"
  | "tangent"
  | "vertical";

export const CONSTRAINT_KINDS: ConstraintKind[] = [
  "coincident", "concentric", "equal", "fix", "horizontal", "midpoint",
  "normal", "offset", "parallel", "perpendicular", "quadrant", "tangent",
  "vertical",
];

export interface PrimitiveJson {
  kind: PrimitiveKind;
  construction: boolean;
  params: number[];
}

export interface ReferenceJson {
  primitive: number;
  slot: SlotName;
}

export interface ConstraintJson {
  kind: ConstraintKind;
  refs: ReferenceJson[];
}

export interface SketchJson {
  primitives: PrimitiveJson[];
  constraints: ConstraintJson[];
}

export interface SolveReport {
  converged: boolean;
  iterations: number;
  residual_norm: number;
  max_constraint_violation: number;
}

export interface ApiEnvelope<T> {
  ok: boolean;
  result?: T;
  error?: { code: string; message: string; location?: string | null };
}

export interface SolveResult {
  sketch: SketchJson;
  report: SolveReport;
}

export const VALID_SLOTS: Record<PrimitiveKind, SlotName[]> = {
  arc: ["whole", "first", "center", "second"],
  circle: ["whole", "center"],
  line: ["whole", "first", "second"],
  point: ["whole"],
};

export function cloneSketch(s: SketchJson): SketchJson {
  return JSON.parse(JSON.stringify(s)) as SketchJson;
}

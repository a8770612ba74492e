// Editor state machine. Geometry changes only through local drag previews
// or server responses; every committed edit goes through a /solve round
// trip, and at most one solve is in flight (later drags supersede earlier
// pending ones).

import { ApiClient } from "./api.js";
import {
  addConstraint,
  dragSolvePayload,
  moveSlot,
  Point,
  removeConstraint,
  sortConstraints,
} from "./sketch.js";
import {
  cloneSketch,
  ConstraintJson,
  ConstraintKind,
  ReferenceJson,
  SketchJson,
  SolveReport,
} from "./types.js";

export interface EditorState {
  sketch: SketchJson;
  selection: ReferenceJson | null;
  previousSelection: ReferenceJson | null;
  dirty: boolean;
  lastReport: SolveReport | null;
  banner: string | null;
  busy: boolean;
  serverUrl: string;
}

type Listener = (state: EditorState) => void;

interface DragSession {
  ref: ReferenceJson;
  base: SketchJson; // geometry before the drag started
}

export class EditorStore {
  state: EditorState;
  private listeners: Listener[] = [];
  private drag: DragSession | null = null;
  private solveTicket = 0;

  constructor(public api: ApiClient, sketch: SketchJson) {
    this.state = {
      sketch,
      selection: null,
      previousSelection: null,
      dirty: false,
      lastReport: null,
      banner: null,
      busy: false,
      serverUrl: api.baseUrl,
    };
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit() {
    for (const fn of this.listeners) fn(this.state);
  }

  private patch(p: Partial<EditorState>) {
    this.state = { ...this.state, ...p };
    this.emit();
  }

  loadSketch(s: SketchJson) {
    this.drag = null;
    this.patch({
      sketch: cloneSketch(s),
      selection: null,
      previousSelection: null,
      dirty: false,
      lastReport: null,
      banner: null,
    });
  }

  select(ref: ReferenceJson | null) {
    this.patch({
      previousSelection: this.state.selection,
      selection: ref,
    });
  }

  beginDrag(ref: ReferenceJson) {
    this.drag = { ref, base: cloneSketch(this.state.sketch) };
    this.select(ref);
  }

  /** Local preview only; geometry is not authoritative until the solve. */
  dragTo(target: Point) {
    if (!this.drag) return;
    this.patch({
      sketch: moveSlot(this.drag.base, this.drag.ref, target),
      dirty: true,
    });
  }

  /**
   * Release: POST /solve with a temporary fix pinning the dragged slot at
   * the target, then adopt the solved geometry (the temporary fix is never
   * stored). On failure the pre-drag geometry is restored.
   */
  async endDrag(target: Point): Promise<void> {
    if (!this.drag) return;
    const { ref, base } = this.drag;
    this.drag = null;
    const payload = dragSolvePayload(base, ref, target);
    await this.roundTrip(payload, base, base.constraints);
  }

  cancelDrag() {
    if (!this.drag) return;
    const { base } = this.drag;
    this.drag = null;
    this.patch({ sketch: base, dirty: false });
  }

  async addConstraintAndSolve(c: ConstraintJson): Promise<void> {
    const before = this.state.sketch;
    let withNew: SketchJson;
    try {
      withNew = addConstraint(before, c);
    } catch (e) {
      this.patch({ banner: (e as Error).message });
      return;
    }
    await this.roundTrip(withNew, before, withNew.constraints);
  }

  async removeConstraintAndSolve(index: number): Promise<void> {
    const before = this.state.sketch;
    const trimmed = removeConstraint(before, index);
    await this.roundTrip(trimmed, before, trimmed.constraints);
  }

  async autoconstrain(checkpoint: string, seed = 0): Promise<void> {
    const before = this.state.sketch;
    this.patch({ busy: true, banner: null });
    try {
      const bare: SketchJson = { primitives: before.primitives, constraints: [] };
      const constrained = await this.api.autoconstrain(bare, checkpoint, seed);
      const merged: SketchJson = {
        primitives: before.primitives,
        constraints: sortConstraints(constrained.constraints),
      };
      await this.roundTrip(merged, before, merged.constraints);
    } catch (e) {
      this.patch({ busy: false, banner: `autoconstrain failed: ${(e as Error).message}` });
    }
  }

  /**
   * Solve `payload`, then adopt the returned primitives with `keep` as the
   * stored constraint list. On a non-converged solve the best-effort
   * geometry is shown with a violation banner; on network failure the
   * state reverts to `fallback`.
   */
  private async roundTrip(
    payload: SketchJson,
    fallback: SketchJson,
    keep: ConstraintJson[],
  ): Promise<void> {
    const ticket = ++this.solveTicket;
    this.patch({ busy: true, banner: null });
    let result;
    try {
      result = await this.api.solve(payload);
    } catch (e) {
      if (ticket !== this.solveTicket) return; // superseded
      this.patch({
        sketch: fallback,
        dirty: false,
        busy: false,
        banner: `solve failed: ${(e as Error).message}`,
      });
      return;
    }
    if (ticket !== this.solveTicket) return; // a later edit superseded us
    this.patch({
      sketch: { primitives: result.sketch.primitives, constraints: keep },
      dirty: false,
      busy: false,
      lastReport: result.report,
      banner: result.report.converged
        ? null
        : `constraints violated (max ${result.report.max_constraint_violation.toExponential(2)})`,
    });
  }
}

export const DEFAULT_SERVER = "http://127.0.0.1:8077";

export function serverFromQuery(query: string): string {
  const params = new URLSearchParams(query);
  return params.get("server") ?? DEFAULT_SERVER;
}

export function constraintFromSelections(
  kind: ConstraintKind,
  selection: ReferenceJson | null,
  previous: ReferenceJson | null,
): ConstraintJson | null {
  if (!selection) return null;
  if (previous) return { kind, refs: [previous, selection] };
  const single = kind === "fix" || kind === "horizontal" || kind === "vertical";
  return single ? { kind, refs: [selection] } : null;
}

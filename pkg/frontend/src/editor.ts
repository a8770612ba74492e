// Canvas rendering and DOM wiring around the EditorStore.

import { arcGeometry, fitViewport, hitTest, toCanvas, toSketch, Viewport } from "./geometry.js";
import { describeConstraint, slotPosition } from "./sketch.js";
import { constraintFromSelections, EditorStore } from "./state.js";
import {
  CONSTRAINT_KINDS,
  ConstraintKind,
  ReferenceJson,
  SketchJson,
  VALID_SLOTS,
} from "./types.js";

const HANDLE_PX = 7;
const CURVE_PX = 5;

export class Editor {
  private viewport: Viewport;
  private ctx: CanvasRenderingContext2D;
  private dragging = false;

  constructor(
    private store: EditorStore,
    private canvas: HTMLCanvasElement,
    private panel: HTMLElement,
    private banner: HTMLElement,
    private checkpointInput: HTMLInputElement,
  ) {
    this.ctx = canvas.getContext("2d")!;
    this.viewport = fitViewport(store.state.sketch, canvas.width, canvas.height);
    store.subscribe(() => this.render());
    this.wireEvents();
    this.render();
  }

  refit() {
    this.viewport = fitViewport(
      this.store.state.sketch, this.canvas.width, this.canvas.height,
    );
    this.render();
  }

  private pointerSketchPos(ev: PointerEvent) {
    const rect = this.canvas.getBoundingClientRect();
    return toSketch(this.viewport, {
      x: ev.clientX - rect.left,
      y: ev.clientY - rect.top,
    });
  }

  private wireEvents() {
    this.canvas.addEventListener("pointerdown", (ev) => {
      const p = this.pointerSketchPos(ev);
      const hit = hitTest(
        this.store.state.sketch, p,
        HANDLE_PX / this.viewport.scale, CURVE_PX / this.viewport.scale,
      );
      if (hit) {
        this.store.beginDrag(hit.ref);
        this.dragging = true;
        this.canvas.setPointerCapture(ev.pointerId);
      } else {
        this.store.select(null);
      }
    });
    this.canvas.addEventListener("pointermove", (ev) => {
      if (!this.dragging) return;
      this.store.dragTo(this.pointerSketchPos(ev));
    });
    this.canvas.addEventListener("pointerup", (ev) => {
      if (!this.dragging) return;
      this.dragging = false;
      void this.store.endDrag(this.pointerSketchPos(ev));
    });
    this.canvas.addEventListener("pointercancel", () => {
      this.dragging = false;
      this.store.cancelDrag();
    });
  }

  addSelectedConstraint(kind: ConstraintKind) {
    const c = constraintFromSelections(
      kind, this.store.state.selection, this.store.state.previousSelection,
    );
    if (!c) {
      this.banner.textContent = "select one or two targets first";
      return;
    }
    void this.store.addConstraintAndSolve(c);
  }

  autoconstrain() {
    const ckpt = this.checkpointInput.value.trim();
    if (!ckpt) {
      this.banner.textContent = "set a constraint checkpoint name first";
      return;
    }
    void this.store.autoconstrain(ckpt);
  }

  private render() {
    const s = this.store.state.sketch;
    const ctx = this.ctx;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.lineWidth = 1.6;

    s.primitives.forEach((prim, i) => {
      const selected = this.store.state.selection?.primitive === i;
      ctx.strokeStyle = selected ? "#0b63c5" : "#222";
      ctx.fillStyle = ctx.strokeStyle;
      ctx.setLineDash(prim.construction ? [6, 4] : []);
      const P = prim.params;
      ctx.beginPath();
      if (prim.kind === "line") {
        const a = toCanvas(this.viewport, { x: P[0], y: P[1] });
        const b = toCanvas(this.viewport, { x: P[2], y: P[3] });
        ctx.moveTo(a.x, a.y);
        ctx.lineTo(b.x, b.y);
        ctx.stroke();
      } else if (prim.kind === "circle") {
        const c = toCanvas(this.viewport, { x: P[0], y: P[1] });
        ctx.arc(c.x, c.y, P[2] * this.viewport.scale, 0, 2 * Math.PI);
        ctx.stroke();
      } else if (prim.kind === "arc") {
        const g = arcGeometry(P);
        const c = toCanvas(this.viewport, g.center);
        // canvas y is flipped: angles negate, sweep direction flips
        ctx.arc(
          c.x, c.y, g.radius * this.viewport.scale,
          -g.start, -(g.start + g.sweep), g.sweep > 0,
        );
        ctx.stroke();
      } else {
        const c = toCanvas(this.viewport, { x: P[0], y: P[1] });
        ctx.arc(c.x, c.y, 3, 0, 2 * Math.PI);
        ctx.fill();
      }
      ctx.setLineDash([]);

      for (const slot of VALID_SLOTS[prim.kind]) {
        if (slot === "whole" && prim.kind !== "point") continue;
        const at = toCanvas(this.viewport, slotPosition(s, { primitive: i, slot }));
        const isSel =
          this.store.state.selection?.primitive === i &&
          this.store.state.selection?.slot === slot;
        ctx.fillStyle = isSel ? "#e8590c" : "#8aa";
        ctx.fillRect(at.x - 3, at.y - 3, 6, 6);
      }
    });

    this.renderPanel();
    this.banner.textContent = this.store.state.banner ?? "";
    this.banner.className = this.store.state.banner ? "banner active" : "banner";
  }

  private renderPanel() {
    const s = this.store.state.sketch;
    const rep = this.store.state.lastReport;
    const rows = s.constraints
      .map(
        (c, i) =>
          `<li>${describeConstraint(c)} <button data-del="${i}">x</button></li>`,
      )
      .join("");
    const status = rep
      ? `${rep.converged ? "converged" : "NOT converged"} ` +
        `(viol ${rep.max_constraint_violation.toExponential(1)}, ` +
        `${rep.iterations} it)`
      : "-";
    this.panel.innerHTML = `
      <div class="status">last solve: ${status}${this.store.state.dirty ? " | dirty" : ""}</div>
      <ul class="constraints">${rows}</ul>`;
    this.panel.querySelectorAll("button[data-del]").forEach((btn) => {
      btn.addEventListener("click", () => {
        const i = Number((btn as HTMLButtonElement).dataset.del);
        void this.store.removeConstraintAndSolve(i);
      });
    });
  }
}

export function buildConstraintButtons(
  container: HTMLElement,
  editor: Editor,
) {
  for (const kind of CONSTRAINT_KINDS) {
    const b = document.createElement("button");
    b.textContent = kind;
    b.addEventListener("click", () => editor.addSelectedConstraint(kind));
    container.appendChild(b);
  }
}

export function downloadSketch(s: SketchJson) {
  const blob = new Blob([JSON.stringify(s, null, 2)], { type: "application/json" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "sketch.json";
  a.click();
  URL.revokeObjectURL(a.href);
}

export function selectionLabel(ref: ReferenceJson | null): string {
  if (!ref) return "none";
  return ref.slot === "whole" ? `#${ref.primitive}` : `#${ref.primitive}.${ref.slot}`;
}

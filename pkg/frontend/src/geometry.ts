// Canvas-space transforms and hit testing.

import { Point, circumcenter, slotPosition } from "./sketch.js";
import { PrimitiveJson, ReferenceJson, SketchJson, VALID_SLOTS } from "./types.js";

export interface Viewport {
  scale: number; // pixels per sketch unit
  cx: number; // canvas x of sketch origin
  cy: number;
}

export function fitViewport(s: SketchJson, width: number, height: number): Viewport {
  const box = sketchBounds(s);
  const w = Math.max(box.maxX - box.minX, 1e-6);
  const h = Math.max(box.maxY - box.minY, 1e-6);
  const scale = 0.8 * Math.min(width / w, height / h);
  const mx = (box.minX + box.maxX) / 2;
  const my = (box.minY + box.maxY) / 2;
  return { scale, cx: width / 2 - mx * scale, cy: height / 2 + my * scale };
}

export function toCanvas(v: Viewport, p: Point): Point {
  return { x: v.cx + p.x * v.scale, y: v.cy - p.y * v.scale };
}

export function toSketch(v: Viewport, p: Point): Point {
  return { x: (p.x - v.cx) / v.scale, y: (v.cy - p.y) / v.scale };
}

interface Bounds {
  minX: number;
  minY: number;
  maxX: number;
  maxY: number;
}

export function sketchBounds(s: SketchJson): Bounds {
  const b: Bounds = { minX: Infinity, minY: Infinity, maxX: -Infinity, maxY: -Infinity };
  const eat = (x: number, y: number) => {
    b.minX = Math.min(b.minX, x);
    b.minY = Math.min(b.minY, y);
    b.maxX = Math.max(b.maxX, x);
    b.maxY = Math.max(b.maxY, y);
  };
  for (const prim of s.primitives) {
    const p = prim.params;
    if (prim.kind === "circle") {
      eat(p[0] - p[2], p[1] - p[2]);
      eat(p[0] + p[2], p[1] + p[2]);
    } else {
      for (let i = 0; i + 1 < p.length; i += 2) eat(p[i], p[i + 1]);
    }
  }
  if (!isFinite(b.minX)) return { minX: -1, minY: -1, maxX: 1, maxY: 1 };
  return b;
}

export function distancePointSegment(p: Point, a: Point, b: Point): number {
  const vx = b.x - a.x;
  const vy = b.y - a.y;
  const len2 = vx * vx + vy * vy;
  let t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0;
  t = Math.max(0, Math.min(1, t));
  return Math.hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

export interface ArcGeometry {
  center: Point;
  radius: number;
  start: number;
  sweep: number; // signed; passes through the on-curve midpoint
}

export function arcGeometry(p: number[]): ArcGeometry {
  const c = circumcenter(p);
  const r = Math.hypot(p[0] - c.x, p[1] - c.y);
  const t1 = Math.atan2(p[1] - c.y, p[0] - c.x);
  const tm = Math.atan2(p[3] - c.y, p[2] - c.x);
  const t2 = Math.atan2(p[5] - c.y, p[4] - c.x);
  const tau = 2 * Math.PI;
  const ccwM = (((tm - t1) % tau) + tau) % tau;
  const ccw2 = (((t2 - t1) % tau) + tau) % tau;
  const sweep = ccwM <= ccw2 ? ccw2 : ccw2 - tau;
  return { center: c, radius: r, start: t1, sweep };
}

export function distanceToPrimitive(p: Point, prim: PrimitiveJson): number {
  const q = prim.params;
  switch (prim.kind) {
    case "point":
      return Math.hypot(p.x - q[0], p.y - q[1]);
    case "line":
      return distancePointSegment(p, { x: q[0], y: q[1] }, { x: q[2], y: q[3] });
    case "circle":
      return Math.abs(Math.hypot(p.x - q[0], p.y - q[1]) - q[2]);
    case "arc": {
      const g = arcGeometry(q);
      const ang = Math.atan2(p.y - g.center.y, p.x - g.center.x);
      const tau = 2 * Math.PI;
      let delta = (((ang - g.start) % tau) + tau) % tau;
      if (g.sweep < 0) delta -= tau;
      const onArc = g.sweep >= 0 ? delta <= g.sweep : delta >= g.sweep;
      if (onArc) {
        return Math.abs(Math.hypot(p.x - g.center.x, p.y - g.center.y) - g.radius);
      }
      const ends = [
        { x: q[0], y: q[1] },
        { x: q[4], y: q[5] },
      ];
      return Math.min(...ends.map((e) => Math.hypot(p.x - e.x, p.y - e.y)));
    }
  }
}

export interface Hit {
  ref: ReferenceJson;
  distance: number;
}

/**
 * Slot handles win over whole-primitive curves; among handles the nearest
 * one within the pick radius wins.
 */
export function hitTest(
  s: SketchJson,
  p: Point,
  handleRadius: number,
  curveRadius: number,
): Hit | null {
  let best: Hit | null = null;
  s.primitives.forEach((prim, i) => {
    for (const slot of VALID_SLOTS[prim.kind]) {
      if (slot === "whole" && prim.kind !== "point") continue;
      const at = slotPosition(s, { primitive: i, slot });
      const d = Math.hypot(p.x - at.x, p.y - at.y);
      if (d <= handleRadius && (!best || d < best.distance)) {
        best = { ref: { primitive: i, slot }, distance: d };
      }
    }
  });
  if (best) return best;
  s.primitives.forEach((prim, i) => {
    const d = distanceToPrimitive(p, prim);
    if (d <= curveRadius && (!best || d < best.distance)) {
      best = { ref: { primitive: i, slot: "whole" }, distance: d };
    }
  });
  return best;
}

// Canvas overlay painting: mesh wireframe and selection boxes projected with
// the same pose math the server uses, drawn on top of the last server render.
// Segments with an endpoint behind the camera are dropped instead of clipped;
// good enough for a preview overlay.

import type { Mat4, Vec3 } from "./orbit";
import { projectPoint } from "./orbit";
import type { NormBox, BoxRole } from "./boxes";
import { normToWorld } from "./boxes";
import type { SceneMeta } from "./api";

export interface ViewSpec {
  pose: Mat4;
  fovDeg: number;
  width: number;
  height: number;
}

const NEAR_EPS = 1e-4;

function drawSegments(
  ctx: CanvasRenderingContext2D,
  view: ViewSpec,
  points: Float32Array,
  edges: ArrayLike<number>,
): void {
  ctx.beginPath();
  for (let e = 0; e < edges.length; e += 2) {
    const a = edges[e]! * 3;
    const b = edges[e + 1]! * 3;
    const pa = projectPoint(view.pose, view.fovDeg, view.width, view.height, [
      points[a]!,
      points[a + 1]!,
      points[a + 2]!,
    ]);
    const pb = projectPoint(view.pose, view.fovDeg, view.width, view.height, [
      points[b]!,
      points[b + 1]!,
      points[b + 2]!,
    ]);
    if (pa.depth < NEAR_EPS || pb.depth < NEAR_EPS) continue;
    ctx.moveTo(pa.x, pa.y);
    ctx.lineTo(pb.x, pb.y);
  }
  ctx.stroke();
}

export function drawWireframe(
  ctx: CanvasRenderingContext2D,
  view: ViewSpec,
  points: Float32Array,
  edges: Uint32Array,
  color = "rgba(120, 200, 255, 0.35)",
): void {
  ctx.save();
  ctx.strokeStyle = color;
  ctx.lineWidth = 1;
  drawSegments(ctx, view, points, edges);
  ctx.restore();
}

export function boxCorners(min: Vec3, max: Vec3): Float32Array {
  const pts = new Float32Array(24);
  for (let i = 0; i < 8; i++) {
    pts[i * 3] = i & 1 ? max[0] : min[0];
    pts[i * 3 + 1] = i & 2 ? max[1] : min[1];
    pts[i * 3 + 2] = i & 4 ? max[2] : min[2];
  }
  return pts;
}

// 12 edges of an axis-aligned box, as corner index pairs
export const BOX_EDGES: ReadonlyArray<number> = [
  0, 1, 2, 3, 4, 5, 6, 7, // x-aligned
  0, 2, 1, 3, 4, 6, 5, 7, // y-aligned
  0, 4, 1, 5, 2, 6, 3, 7, // z-aligned
];

const ROLE_COLORS: Record<BoxRole, string> = {
  target: "#ff5555",
  source: "#ffb86c",
  dest: "#50fa7b",
};

export function drawBox(
  ctx: CanvasRenderingContext2D,
  view: ViewSpec,
  box: NormBox,
  bounds: SceneMeta["bounds"],
  dashed = false,
): void {
  const min = normToWorld(box.min, bounds);
  const max = normToWorld(box.max, bounds);
  ctx.save();
  ctx.strokeStyle = ROLE_COLORS[box.role];
  ctx.lineWidth = 1.5;
  if (dashed) ctx.setLineDash([4, 3]);
  drawSegments(ctx, view, boxCorners(min, max), BOX_EDGES);
  ctx.restore();
}

// Box selection. Boxes are kept in normalized scene coordinates ([-1,1] per
// axis) and only converted to world units when a request is built, so they
// survive harmonization changing the resolution. Selection is a two-click
// ground footprint followed by a height drag; no free 3D manipulation.

import type { Vec3 } from "./orbit";
import type { SceneMeta, EditBox } from "./api";

export type BoxRole = "target" | "source" | "dest";

export interface NormBox {
  min: Vec3; // normalized, each component in [-1, 1]
  max: Vec3;
  role: BoxRole;
}

// thinner than this is unselectable and the server would reject min >= max
export const MIN_EXTENT = 1e-3;

const clamp = (v: number, lo: number, hi: number) => Math.min(hi, Math.max(lo, v));

export function clampNorm(p: Vec3): Vec3 {
  return [clamp(p[0], -1, 1), clamp(p[1], -1, 1), clamp(p[2], -1, 1)];
}

export function normToWorld(p: Vec3, bounds: SceneMeta["bounds"]): Vec3 {
  const [bmin, bmax] = bounds;
  return [0, 1, 2].map((k) => bmin[k]! + ((p[k]! + 1) / 2) * (bmax[k]! - bmin[k]!)) as Vec3;
}

export function worldToNorm(p: Vec3, bounds: SceneMeta["bounds"]): Vec3 {
  const [bmin, bmax] = bounds;
  return [0, 1, 2].map((k) => (2 * (p[k]! - bmin[k]!)) / (bmax[k]! - bmin[k]!) - 1) as Vec3;
}

export function boxToEditBox(box: NormBox, bounds: SceneMeta["bounds"]): EditBox {
  return { min: normToWorld(box.min, bounds), max: normToWorld(box.max, bounds) };
}

/** Voxel index range covered by a world box, same rounding as the server. */
export function voxelExtent(box: EditBox, meta: Pick<SceneMeta, "dims" | "bounds">): Vec3 {
  const [bmin, bmax] = meta.bounds;
  const out: number[] = [];
  for (let k = 0; k < 3; k++) {
    const step = (bmax[k]! - bmin[k]!) / meta.dims[k]!;
    let lo = Math.ceil((box.min[k]! - bmin[k]!) / step - 0.5);
    let hi = Math.floor((box.max[k]! - bmin[k]!) / step - 0.5) + 1;
    lo = clamp(lo, 0, meta.dims[k]!);
    hi = clamp(hi, 0, meta.dims[k]!);
    out.push(Math.max(hi, lo) - lo);
  }
  return out as Vec3;
}

export interface CongruenceResult {
  ok: boolean;
  srcExtent: Vec3;
  dstExtent: Vec3;
}

/** duplicate/move require src and dst to round to identical voxel extents */
export function checkCongruent(
  src: EditBox,
  dst: EditBox,
  meta: Pick<SceneMeta, "dims" | "bounds">,
): CongruenceResult {
  const srcExtent = voxelExtent(src, meta);
  const dstExtent = voxelExtent(dst, meta);
  return {
    ok: srcExtent.every((v, k) => v === dstExtent[k]),
    srcExtent,
    dstExtent,
  };
}

export function congruenceMessage(r: CongruenceResult): string {
  return `source spans ${r.srcExtent.join("x")} voxels but destination spans ${r.dstExtent.join("x")}; resize one box`;
}

/** Shift a box (normalized) so a congruent copy lands at a new footprint anchor. */
export function translatedBox(box: NormBox, anchor: Vec3, role: BoxRole): NormBox {
  const size = [0, 1, 2].map((k) => box.max[k]! - box.min[k]!) as Vec3;
  const min: Vec3 = [
    clamp(anchor[0], -1, 1 - size[0]),
    clamp(anchor[1], -1, 1 - size[1]),
    box.min[2],
  ];
  return { min, max: [min[0] + size[0], min[1] + size[1], box.max[2]] as Vec3, role };
}

export type GesturePhase = "idle" | "footprint" | "height";

/**
 * Two-click footprint plus height drag, all in normalized coordinates.
 * First click anchors a ground corner, second click fixes the footprint,
 * a vertical drag then raises the lid; finish() emits the box.
 */
export class BoxGesture {
  phase: GesturePhase = "idle";
  private anchor: [number, number] | null = null;
  private corner: [number, number] | null = null;
  private top = -1;

  constructor(readonly role: BoxRole = "target") {}

  start(groundPoint: Vec3): void {
    const p = clampNorm(groundPoint);
    this.anchor = [p[0], p[1]];
    this.corner = [p[0], p[1]];
    this.top = -1;
    this.phase = "footprint";
  }

  moveGround(groundPoint: Vec3): void {
    if (this.phase !== "footprint") return;
    const p = clampNorm(groundPoint);
    this.corner = [p[0], p[1]];
  }

  commitFootprint(groundPoint: Vec3): void {
    if (this.phase !== "footprint") return;
    this.moveGround(groundPoint);
    this.phase = "height";
  }

  moveHeight(topZ: number): void {
    if (this.phase !== "height") return;
    this.top = clamp(topZ, -1, 1);
  }

  cancel(): void {
    this.phase = "idle";
    this.anchor = this.corner = null;
    this.top = -1;
  }

  /** Current box under construction, or null before the first click. */
  preview(): NormBox | null {
    if (!this.anchor || !this.corner) return null;
    // min pulled off the upper wall so max can always clear it by MIN_EXTENT
    const min: Vec3 = [
      Math.min(this.anchor[0], this.corner[0], 1 - MIN_EXTENT),
      Math.min(this.anchor[1], this.corner[1], 1 - MIN_EXTENT),
      -1,
    ];
    const max: Vec3 = [
      Math.max(this.anchor[0], this.corner[0], min[0] + MIN_EXTENT),
      Math.max(this.anchor[1], this.corner[1], min[1] + MIN_EXTENT),
      Math.max(this.top, -1 + MIN_EXTENT),
    ];
    return { min, max: clampNorm(max), role: this.role };
  }

  /** Complete the gesture; returns the box and resets to idle. */
  finish(topZ?: number): NormBox | null {
    if (this.phase !== "height") return null;
    if (topZ !== undefined) this.moveHeight(topZ);
    const box = this.preview();
    this.cancel();
    return box;
  }
}

import { describe, it, expect } from "vitest";
import {
  orbitEye,
  orbitPose,
  lookAtPose,
  poseToCsv,
  projectPoint,
  pixelRay,
  screenToPlane,
  focalPx,
  clampOrbit,
  ELEVATION_LIMIT,
} from "../src/orbit";
import type { OrbitParams, Vec3, Mat4 } from "../src/orbit";

// deterministic params; mulberry32 keeps the suite reproducible
function rng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/**
 * Closed-form orbit pose: for an orbit camera with world up +z the basis is
 * known analytically, no cross products needed.
 *   x_cam = (-sin az,            cos az,           0)
 *   y_cam = (-sin el cos az,    -sin el sin az,    cos el)
 *   z_cam = ( cos el cos az,     cos el sin az,    sin el)
 */
function oraclePose(p: OrbitParams): Mat4 {
  const [sa, ca] = [Math.sin(p.azimuth), Math.cos(p.azimuth)];
  const [se, ce] = [Math.sin(p.elevation), Math.cos(p.elevation)];
  const x = [-sa, ca, 0];
  const y = [-se * ca, -se * sa, ce];
  const z = [ce * ca, ce * sa, se];
  const eye = [
    p.target[0] + p.distance * z[0]!,
    p.target[1] + p.distance * z[1]!,
    p.target[2] + p.distance * z[2]!,
  ];
  const m = new Float64Array(16);
  for (let r = 0; r < 3; r++) {
    m[r * 4] = x[r]!;
    m[r * 4 + 1] = y[r]!;
    m[r * 4 + 2] = z[r]!;
    m[r * 4 + 3] = eye[r]!;
  }
  m[15] = 1;
  return m;
}

describe("orbit pose", () => {
  it("matches the closed-form oracle over random orbits", () => {
    const rand = rng(20240817);
    for (let trial = 0; trial < 200; trial++) {
      const p: OrbitParams = {
        azimuth: (rand() - 0.5) * 4 * Math.PI,
        elevation: (rand() - 0.5) * 2 * (ELEVATION_LIMIT - 1e-6),
        distance: 0.5 + 4 * rand(),
        target: [rand() - 0.5, rand() - 0.5, rand() - 0.5],
      };
      const got = orbitPose(p);
      const want = oraclePose(p);
      for (let k = 0; k < 16; k++) {
        expect(Math.abs(got[k]! - want[k]!)).toBeLessThan(1e-12);
      }
    }
  });

  it("a drag that changes azimuth moves the eye along the orbit circle", () => {
    const base: OrbitParams = { azimuth: 0.3, elevation: 0.4, distance: 2.5, target: [0.1, -0.2, 0.05] };
    const dragged = { ...base, azimuth: base.azimuth + 0.37 };
    const [e0, e1] = [orbitEye(base), orbitEye(dragged)];
    const d0 = Math.hypot(e0[0] - base.target[0], e0[1] - base.target[1], e0[2] - base.target[2]);
    const d1 = Math.hypot(e1[0] - base.target[0], e1[1] - base.target[1], e1[2] - base.target[2]);
    expect(Math.abs(d0 - base.distance)).toBeLessThan(1e-12);
    expect(Math.abs(d1 - base.distance)).toBeLessThan(1e-12);
    expect(e0[2]).toBeCloseTo(e1[2], 12); // same elevation, same height
  });

  it("clamps elevation and keeps distance positive", () => {
    const p = clampOrbit({ azimuth: 0, elevation: 3, distance: -4, target: [0, 0, 0] });
    expect(p.elevation).toBe(ELEVATION_LIMIT);
    expect(p.distance).toBeGreaterThan(0);
  });

  it("rotation columns are orthonormal and translation is the eye", () => {
    const p: OrbitParams = { azimuth: 1.1, elevation: -0.6, distance: 3, target: [0.4, 0, -0.1] };
    const m = orbitPose(p);
    const col = (j: number) => [m[j]!, m[4 + j]!, m[8 + j]!];
    for (let a = 0; a < 3; a++) {
      for (let b = 0; b < 3; b++) {
        const dot = col(a).reduce((s, v, k) => s + v * col(b)[k]!, 0);
        expect(Math.abs(dot - (a === b ? 1 : 0))).toBeLessThan(1e-12);
      }
    }
    const eye = orbitEye(p);
    expect([m[3], m[7], m[11]]).toEqual(eye);
  });

  it("handles looking straight down the up axis via fallback", () => {
    const m = lookAtPose([0, 0, 2], [0, 0, 0]);
    // must still be a proper frame
    const xn = Math.hypot(m[0]!, m[4]!, m[8]!);
    expect(Math.abs(xn - 1)).toBeLessThan(1e-12);
    expect([m[2], m[6], m[10]]).toEqual([0, 0, 1]);
  });

  it("serializes row-major with 16 entries", () => {
    const csv = poseToCsv(orbitPose({ azimuth: 0, elevation: 0, distance: 2, target: [0, 0, 0] }));
    const parts = csv.split(",").map(Number);
    expect(parts).toHaveLength(16);
    expect(parts.every(Number.isFinite)).toBe(true);
    // azimuth 0, elevation 0: eye at (2,0,0), z_cam = +x
    expect(parts[3]).toBeCloseTo(2, 12);
    expect(parts[2]).toBeCloseTo(1, 12);
  });
});

describe("projection", () => {
  const view = {
    pose: orbitPose({ azimuth: 0.8, elevation: 0.5, distance: 3, target: [0, 0, 0] as Vec3 }),
    fov: 40,
    w: 192,
    h: 192,
  };

  it("focal length follows the vertical field of view", () => {
    expect(focalPx(90, 100)).toBeCloseTo(50, 10);
    expect(focalPx(40, 192)).toBeCloseTo(96 / Math.tan((20 * Math.PI) / 180), 10);
  });

  it("the target projects to the image center", () => {
    const p = projectPoint(view.pose, view.fov, view.w, view.h, [0, 0, 0]);
    expect(p.x).toBeCloseTo(view.w / 2 - 0.5, 9);
    expect(p.y).toBeCloseTo(view.h / 2 - 0.5, 9);
    expect(p.depth).toBeCloseTo(3, 12);
  });

  it("pixelRay and projectPoint are inverse on random pixels", () => {
    const rand = rng(7);
    for (let t = 0; t < 100; t++) {
      const px = rand() * view.w;
      const py = rand() * view.h;
      const { origin, dir } = pixelRay(view.pose, view.fov, view.w, view.h, px, py);
      const s = 0.5 + 3 * rand();
      const world: Vec3 = [origin[0] + s * dir[0], origin[1] + s * dir[1], origin[2] + s * dir[2]];
      const back = projectPoint(view.pose, view.fov, view.w, view.h, world);
      expect(back.x).toBeCloseTo(px, 8);
      expect(back.y).toBeCloseTo(py, 8);
      expect(back.depth).toBeGreaterThan(0);
    }
  });

  it("screenToPlane lands on the plane and reprojects to the same pixel", () => {
    const rand = rng(99);
    for (let t = 0; t < 50; t++) {
      const px = 20 + rand() * (view.w - 40);
      const py = 20 + rand() * (view.h - 40);
      const hit = screenToPlane(view.pose, view.fov, view.w, view.h, px, py, -1);
      if (!hit) continue;
      expect(hit[2]).toBe(-1);
      const back = projectPoint(view.pose, view.fov, view.w, view.h, hit);
      expect(back.x).toBeCloseTo(px, 6);
      expect(back.y).toBeCloseTo(py, 6);
    }
  });

  it("screenToPlane returns null when the ray cannot reach the plane", () => {
    // camera above looking down cannot hit a plane above it
    const pose = orbitPose({ azimuth: 0, elevation: 1.2, distance: 3, target: [0, 0, 0] });
    expect(screenToPlane(pose, 40, 192, 192, 96, 96, 10)).toBeNull();
  });
});

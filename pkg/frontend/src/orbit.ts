// Orbit camera math. The server consumes row-major camera-to-world poses in
// which the camera looks along its local -z and world up is +z; everything
// here sticks to that convention so a pose string can go straight into the
// render query.

export type Vec3 = [number, number, number];
export type Mat4 = Float64Array; // 16 entries, row-major

export interface OrbitParams {
  azimuth: number; // radians around world +z
  elevation: number; // radians above the xy plane
  distance: number;
  target: Vec3;
}

export const ELEVATION_LIMIT = Math.PI / 2 - 0.01;

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function clampOrbit(p: OrbitParams): OrbitParams {
  return {
    ...p,
    elevation: Math.min(ELEVATION_LIMIT, Math.max(-ELEVATION_LIMIT, p.elevation)),
    distance: Math.max(1e-3, p.distance),
  };
}

export function orbitEye(p: OrbitParams): Vec3 {
  const ce = Math.cos(p.elevation);
  return [
    p.target[0] + p.distance * ce * Math.cos(p.azimuth),
    p.target[1] + p.distance * ce * Math.sin(p.azimuth),
    p.target[2] + p.distance * Math.sin(p.elevation),
  ];
}

export function lookAtPose(eye: Vec3, target: Vec3, up: Vec3 = [0, 0, 1]): Mat4 {
  const zc0 = sub(eye, target);
  const zn = norm(zc0);
  if (zn < 1e-12) throw new Error("eye coincides with target");
  const zc = scale(zc0, 1 / zn);
  let xc = cross(up, zc);
  if (norm(xc) < 1e-8) xc = cross([0, 1, 0], zc);
  if (norm(xc) < 1e-8) xc = cross([1, 0, 0], zc);
  xc = scale(xc, 1 / norm(xc));
  const yc = cross(zc, xc);
  // columns: right, up, backward; translation in the last column
  const m = new Float64Array(16);
  m[0] = xc[0]; m[1] = yc[0]; m[2] = zc[0]; m[3] = eye[0];
  m[4] = xc[1]; m[5] = yc[1]; m[6] = zc[1]; m[7] = eye[1];
  m[8] = xc[2]; m[9] = yc[2]; m[10] = zc[2]; m[11] = eye[2];
  m[15] = 1;
  return m;
}

export function orbitPose(p: OrbitParams): Mat4 {
  return lookAtPose(orbitEye(clampOrbit(p)), p.target);
}

export function poseToCsv(m: Mat4): string {
  return Array.from(m, (v) => String(v)).join(",");
}

export function focalPx(fovDeg: number, height: number): number {
  return height / 2 / Math.tan(((fovDeg / 2) * Math.PI) / 180);
}

export interface Projected {
  x: number;
  y: number;
  depth: number; // distance along the view axis; <= 0 means behind the camera
}

/** World point to pixel coordinates, matching the server's pixel-center rays. */
export function projectPoint(
  pose: Mat4,
  fovDeg: number,
  width: number,
  height: number,
  p: Vec3,
): Projected {
  const dx = p[0] - pose[3]!;
  const dy = p[1] - pose[7]!;
  const dz = p[2] - pose[11]!;
  // rotation columns are orthonormal, so camera coords are dot products
  const xc = dx * pose[0]! + dy * pose[4]! + dz * pose[8]!;
  const yc = dx * pose[1]! + dy * pose[5]! + dz * pose[9]!;
  const zc = dx * pose[2]! + dy * pose[6]! + dz * pose[10]!;
  const depth = -zc;
  const f = focalPx(fovDeg, height);
  return {
    x: f * (xc / depth) + width / 2 - 0.5,
    y: -f * (yc / depth) + height / 2 - 0.5,
    depth,
  };
}

/** Pixel to a world-space unit ray direction (inverse of projectPoint). */
export function pixelRay(
  pose: Mat4,
  fovDeg: number,
  width: number,
  height: number,
  px: number,
  py: number,
): { origin: Vec3; dir: Vec3 } {
  const f = focalPx(fovDeg, height);
  const xc = (px + 0.5 - width / 2) / f;
  const yc = -(py + 0.5 - height / 2) / f;
  const zc = -1;
  const dir: Vec3 = [
    xc * pose[0]! + yc * pose[1]! + zc * pose[2]!,
    xc * pose[4]! + yc * pose[5]! + zc * pose[6]!,
    xc * pose[8]! + yc * pose[9]! + zc * pose[10]!,
  ];
  const n = norm(dir);
  return {
    origin: [pose[3]!, pose[7]!, pose[11]!],
    dir: scale(dir, 1 / n),
  };
}

/** Intersect a pixel ray with the horizontal plane z = planeZ. */
export function screenToPlane(
  pose: Mat4,
  fovDeg: number,
  width: number,
  height: number,
  px: number,
  py: number,
  planeZ: number,
): Vec3 | null {
  const { origin, dir } = pixelRay(pose, fovDeg, width, height, px, py);
  if (Math.abs(dir[2]) < 1e-9) return null;
  const t = (planeZ - origin[2]) / dir[2];
  if (t <= 0) return null;
  return [origin[0] + t * dir[0], origin[1] + t * dir[1], planeZ];
}

// Binary STL reader: 80-byte header, uint32 triangle count, then 50 bytes per
// triangle (normal + 3 vertices as float32 plus a 2-byte attribute).

export interface Mesh {
  triangleCount: number;
  // flat xyz triples, 9 floats per triangle
  vertices: Float32Array;
}

export function parseStl(buf: ArrayBuffer): Mesh {
  if (buf.byteLength < 84) throw new Error(`stl too short: ${buf.byteLength} bytes`);
  const view = new DataView(buf);
  const count = view.getUint32(80, true);
  const expected = 84 + 50 * count;
  if (buf.byteLength !== expected) {
    throw new Error(`stl length ${buf.byteLength} does not match ${count} triangles (want ${expected})`);
  }
  const vertices = new Float32Array(count * 9);
  for (let t = 0; t < count; t++) {
    const base = 84 + 50 * t + 12; // skip the normal
    for (let k = 0; k < 9; k++) {
      vertices[t * 9 + k] = view.getFloat32(base + 4 * k, true);
    }
  }
  return { triangleCount: count, vertices };
}

/** Unique edges as index pairs into a deduplicated vertex list, for wireframes. */
export function meshEdges(mesh: Mesh): { points: Float32Array; edges: Uint32Array } {
  const keyToIndex = new Map<string, number>();
  const points: number[] = [];
  const edgeSet = new Set<number>();
  const indexOf = (x: number, y: number, z: number): number => {
    const key = `${x},${y},${z}`;
    let idx = keyToIndex.get(key);
    if (idx === undefined) {
      idx = points.length / 3;
      keyToIndex.set(key, idx);
      points.push(x, y, z);
    }
    return idx;
  };
  const v = mesh.vertices;
  for (let t = 0; t < mesh.triangleCount; t++) {
    const ids = [0, 1, 2].map((k) =>
      indexOf(v[t * 9 + k * 3]!, v[t * 9 + k * 3 + 1]!, v[t * 9 + k * 3 + 2]!),
    );
    for (const [a, b] of [
      [ids[0]!, ids[1]!],
      [ids[1]!, ids[2]!],
      [ids[2]!, ids[0]!],
    ]) {
      const lo = Math.min(a!, b!);
      const hi = Math.max(a!, b!);
      edgeSet.add(lo * 0x100000 + hi); // vertex counts stay far below 2^20
    }
  }
  const edges = new Uint32Array(edgeSet.size * 2);
  let i = 0;
  for (const packed of edgeSet) {
    edges[i++] = Math.floor(packed / 0x100000);
    edges[i++] = packed % 0x100000;
  }
  return { points: new Float32Array(points), edges };
}

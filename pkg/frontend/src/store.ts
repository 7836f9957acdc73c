// Viewer state container. Framework-free: mutate through methods, listen via
// subscribe(). The mutation gate is the important part: edits and harmonize
// calls go through runMutation, which refuses to start while another is in
// flight, so the server's per-scene 409 never fires from a single client.

import type { OrbitParams } from "./orbit";
import { clampOrbit } from "./orbit";
import type { NormBox } from "./boxes";
import type { SceneMeta } from "./api";

export interface PendingOp {
  kind: "edit" | "harmonize";
  startedAt: number;
}

export interface Banner {
  text: string;
  tone: "error" | "info";
}

export class MutationInFlightError extends Error {
  constructor(kind: string) {
    super(`a ${kind} is already in flight; wait for it to finish`);
  }
}

const DEFAULT_ORBIT: OrbitParams = {
  azimuth: 0.7,
  elevation: 0.5,
  distance: 3.0,
  target: [0, 0, 0],
};

export class ViewerStore {
  sceneId: string | null = null;
  meta: SceneMeta | null = null;
  orbit: OrbitParams = { ...DEFAULT_ORBIT };
  boxes: NormBox[] = [];
  pending: PendingOp | null = null;
  banner: Banner | null = null;
  rejectedWhileBusy = 0; // mutations blocked by the client-side gate

  private listeners = new Set<() => void>();

  constructor(readonly baseUrl: string) {}

  subscribe(fn: () => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  setScene(meta: SceneMeta): void {
    this.sceneId = meta.scene_id;
    this.meta = meta;
    this.boxes = [];
    this.banner = null;
    this.notify();
  }

  setOrbit(p: OrbitParams): void {
    this.orbit = clampOrbit(p);
    this.notify();
  }

  addBox(box: NormBox): void {
    for (const v of [...box.min, ...box.max]) {
      if (v < -1 - 1e-9 || v > 1 + 1e-9) {
        throw new Error(`box coordinate ${v} outside normalized bounds`);
      }
    }
    this.boxes.push(box);
    this.notify();
  }

  clearBoxes(): void {
    this.boxes = [];
    this.notify();
  }

  showBanner(text: string, tone: Banner["tone"] = "error"): void {
    this.banner = { text, tone };
    this.notify();
  }

  dismissBanner(): void {
    this.banner = null;
    this.notify();
  }

  get busy(): boolean {
    return this.pending !== null;
  }

  /**
   * Run a mutating request under the client-side lock. Throws
   * MutationInFlightError without touching the network if one is pending.
   */
  async runMutation<T>(kind: PendingOp["kind"], fn: () => Promise<T>): Promise<T> {
    if (this.pending !== null) {
      this.rejectedWhileBusy += 1;
      this.notify();
      throw new MutationInFlightError(this.pending.kind);
    }
    this.pending = { kind, startedAt: Date.now() };
    this.notify();
    try {
      return await fn();
    } finally {
      this.pending = null;
      this.notify();
    }
  }
}

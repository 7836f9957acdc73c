// Editor actions, DOM-free. main.ts wires buttons and pointer events to these
// methods; the e2e suite drives them directly against a live server. All
// mutations funnel through the store's single-flight gate and finish by
// re-fetching meta and a fresh render.

import { SceneApi, ApiError } from "./api";
import type { EditBox } from "./api";
import { ViewerStore } from "./store";
import type { NormBox } from "./boxes";
import { boxToEditBox, checkCongruent, congruenceMessage } from "./boxes";
import { orbitPose, poseToCsv } from "./orbit";
import type { Mat4 } from "./orbit";
import { parseStl, meshEdges } from "./stl";
import type { Mesh } from "./stl";
import { readZip } from "./zip";

export interface RenderResult {
  png: ArrayBuffer;
  pose: Mat4;
  width: number;
  height: number;
  fovDeg: number;
}

export interface Wireframe {
  points: Float32Array;
  edges: Uint32Array;
}

export const RENDER_SIZE = 192;
export const FOV_DEG = 40;

export class EditorController {
  readonly api: SceneApi;
  mesh: Mesh | null = null;
  wireframe: Wireframe | null = null;
  lastRender: RenderResult | null = null;
  onRender: ((r: RenderResult) => void) | null = null;

  constructor(
    readonly store: ViewerStore,
    fetchFn: typeof fetch = fetch,
  ) {
    this.api = new SceneApi(store.baseUrl, fetchFn);
  }

  async newScene(seed?: number): Promise<string> {
    const created = await this.api.createScene(seed);
    await this.loadScene(created.scene_id);
    return created.scene_id;
  }

  async loadScene(sceneId: string): Promise<void> {
    try {
      const meta = await this.api.sceneMeta(sceneId);
      this.store.setScene(meta);
      await this.refreshMesh();
      await this.refreshRender();
    } catch (err) {
      this.store.showBanner(describeError(err));
      throw err;
    }
  }

  async refreshMesh(threshold = 0.5): Promise<void> {
    const id = this.requireScene();
    this.mesh = parseStl(await this.api.mesh(id, threshold));
    this.wireframe = meshEdges(this.mesh);
  }

  currentPose(): Mat4 {
    return orbitPose(this.store.orbit);
  }

  async refreshRender(): Promise<RenderResult> {
    const id = this.requireScene();
    const pose = this.currentPose();
    const { png } = await this.api.renderPng(id, {
      pose: poseToCsv(pose),
      w: RENDER_SIZE,
      h: RENDER_SIZE,
      fov: FOV_DEG,
    });
    const result: RenderResult = {
      png,
      pose,
      width: RENDER_SIZE,
      height: RENDER_SIZE,
      fovDeg: FOV_DEG,
    };
    this.lastRender = result;
    this.onRender?.(result);
    return result;
  }

  /** remove + harmonize in one gesture; the store gate serializes it */
  async removeAndHarmonize(box: NormBox): Promise<void> {
    const id = this.requireScene();
    const meta = this.requireMeta();
    const body: EditBox = boxToEditBox(box, meta.bounds);
    await this.store.runMutation("edit", async () => {
      await this.api.postEdit(id, { op: "remove", boxes: [body] });
      await this.api.harmonize(id);
    });
    await this.afterMutation();
  }

  async applyRemove(box: NormBox): Promise<void> {
    const id = this.requireScene();
    const meta = this.requireMeta();
    await this.store.runMutation("edit", () =>
      this.api.postEdit(id, { op: "remove", boxes: [boxToEditBox(box, meta.bounds)] }),
    );
    await this.afterMutation();
  }

  /**
   * duplicate/move with the congruence check done client-side first; an
   * incongruent pair never reaches the server.
   */
  async applyPair(op: "duplicate" | "move", src: NormBox, dst: NormBox): Promise<void> {
    const id = this.requireScene();
    const meta = this.requireMeta();
    const srcBox = boxToEditBox(src, meta.bounds);
    const dstBox = boxToEditBox(dst, meta.bounds);
    const cong = checkCongruent(srcBox, dstBox, meta);
    if (!cong.ok) {
      this.store.showBanner(congruenceMessage(cong));
      throw new Error(congruenceMessage(cong));
    }
    await this.store.runMutation("edit", () =>
      this.api.postEdit(id, { op, boxes: [srcBox, dstBox] }),
    );
    await this.afterMutation();
  }

  async harmonize(freshNoise = false, seed = 0): Promise<void> {
    const id = this.requireScene();
    await this.store.runMutation("harmonize", () =>
      this.api.harmonize(id, { fresh_noise: freshNoise, seed }),
    );
    await this.afterMutation();
  }

  /** Frame PNGs in playback order, ready to loop. */
  async fetchAnimation(opts: { alpha?: number; xi?: number; steps?: number } = {}): Promise<Uint8Array[]> {
    const id = this.requireScene();
    const entries = await readZip(await this.api.animation(id, opts));
    const byName = new Map(entries.map((e) => [e.name, e.data]));
    const index = byName.get("animation.json");
    if (index) {
      const parsed = JSON.parse(new TextDecoder().decode(index)) as { frames: string[] };
      return parsed.frames.map((name) => {
        const data = byName.get(name);
        if (!data) throw new Error(`archive index lists ${name} but the entry is missing`);
        return data;
      });
    }
    // no index: fall back to name order
    return entries
      .filter((e) => e.name.endsWith(".png"))
      .sort((a, b) => a.name.localeCompare(b.name))
      .map((e) => e.data);
  }

  private async afterMutation(): Promise<void> {
    const id = this.requireScene();
    this.store.setScene(await this.api.sceneMeta(id));
    await this.refreshMesh();
    await this.refreshRender();
  }

  private requireScene(): string {
    if (!this.store.sceneId) throw new Error("no scene loaded");
    return this.store.sceneId;
  }

  private requireMeta() {
    if (!this.store.meta) throw new Error("no scene loaded");
    return this.store.meta;
  }
}

export function describeError(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  if (err instanceof Error) return err.message;
  return String(err);
}

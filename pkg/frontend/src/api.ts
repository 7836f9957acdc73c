// REST client for the scene service. Every JSON payload that crosses the
// wire is validated against the documented shape before the rest of the UI
// sees it, so a drifting server fails loudly instead of half-rendering.

import { z } from "zod";

const vec3 = z.tuple([z.number(), z.number(), z.number()]);

export const sceneMetaSchema = z.object({
  scene_id: z.string(),
  seed: z.number().int(),
  dims: vec3,
  bounds: z.tuple([vec3, vec3]),
  n_edits: z.number().int().nonnegative(),
  compacted: z.boolean(),
  content_hash: z.string(),
  checkpoint: z.string(),
});
export type SceneMeta = z.infer<typeof sceneMetaSchema>;

export const sceneListSchema = z.object({ scenes: z.array(sceneMetaSchema) });

export const createSceneSchema = z.object({
  scene_id: z.string(),
  seed: z.number().int(),
});

export const editResultSchema = z.object({ edit_id: z.string() });

export const harmonizeResultSchema = z.object({
  status: z.literal("harmonized"),
  dims: vec3,
});

export const healthSchema = z.object({
  status: z.string(),
  checkpoint_loaded: z.boolean(),
  n_scenes: z.number().int(),
});

export const errorSchema = z.object({ code: z.string(), message: z.string() });

export const editBoxSchema = z.object({ min: vec3, max: vec3 });
export type EditBox = z.infer<typeof editBoxSchema>;

export type EditOp = "remove" | "duplicate" | "move" | "compose";

export interface EditBody {
  op: EditOp;
  boxes: EditBox[];
  empty_point?: [number, number, number];
  source_scene_ids?: string[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function toApiError(res: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `${res.status} ${res.statusText}`;
  try {
    const parsed = errorSchema.safeParse(await res.json());
    if (parsed.success) ({ code, message } = parsed.data);
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(res.status, code, message);
}

export interface RenderQuery {
  pose: string; // 16 comma-separated row-major camera-to-world floats
  w?: number;
  h?: number;
  fov?: number;
}

export class SceneApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async json<T>(schema: z.ZodType<T>, path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, init);
    if (!res.ok) throw await toApiError(res);
    return schema.parse(await res.json());
  }

  private async bytes(path: string): Promise<ArrayBuffer> {
    const res = await this.fetchFn(this.baseUrl + path);
    if (!res.ok) throw await toApiError(res);
    return res.arrayBuffer();
  }

  health() {
    return this.json(healthSchema, "/health");
  }

  createScene(seed?: number) {
    return this.json(createSceneSchema, "/scenes", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(seed === undefined ? {} : { seed }),
    });
  }

  listScenes() {
    return this.json(sceneListSchema, "/scenes");
  }

  sceneMeta(sceneId: string) {
    return this.json(sceneMetaSchema, `/scenes/${sceneId}`);
  }

  renderUrl(sceneId: string, q: RenderQuery, kind: "render" | "depth" = "render"): string {
    const params = new URLSearchParams({ pose: q.pose });
    if (q.w !== undefined) params.set("w", String(q.w));
    if (q.h !== undefined) params.set("h", String(q.h));
    if (q.fov !== undefined) params.set("fov", String(q.fov));
    return `${this.baseUrl}/scenes/${sceneId}/${kind}?${params}`;
  }

  async renderPng(sceneId: string, q: RenderQuery): Promise<{ png: ArrayBuffer; depthPath: string | null }> {
    const res = await this.fetchFn(this.renderUrl(sceneId, q));
    if (!res.ok) throw await toApiError(res);
    return {
      png: await res.arrayBuffer(),
      depthPath: res.headers.get("x-depth-available"),
    };
  }

  depthPng(sceneId: string, q: RenderQuery): Promise<ArrayBuffer> {
    return this.bytes(this.renderUrl(sceneId, q, "depth"));
  }

  postEdit(sceneId: string, body: EditBody) {
    return this.json(editResultSchema, `/scenes/${sceneId}/edits`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  harmonize(sceneId: string, opts: { fresh_noise?: boolean; seed?: number } = {}) {
    return this.json(harmonizeResultSchema, `/scenes/${sceneId}/harmonize`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(opts),
    });
  }

  volume(sceneId: string): Promise<ArrayBuffer> {
    return this.bytes(`/scenes/${sceneId}/volume`);
  }

  mesh(sceneId: string, threshold = 0.5): Promise<ArrayBuffer> {
    return this.bytes(`/scenes/${sceneId}/mesh?threshold=${threshold}`);
  }

  animation(sceneId: string, opts: { alpha?: number; xi?: number; steps?: number; start_scale?: number; seed?: number } = {}): Promise<ArrayBuffer> {
    const params = new URLSearchParams();
    for (const [k, v] of Object.entries(opts)) {
      if (v !== undefined) params.set(k, String(v));
    }
    const qs = params.toString();
    return this.bytes(`/scenes/${sceneId}/animation${qs ? "?" + qs : ""}`);
  }
}

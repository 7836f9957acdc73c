// DOM wiring for the scene editor. Server renders are the source of truth for
// shading; the mesh wireframe drawn client-side keeps orbiting responsive
// while render requests are debounced behind the drag.

import { EditorController, RENDER_SIZE, FOV_DEG, describeError } from "./controller";
import { ViewerStore, MutationInFlightError } from "./store";
import { BoxGesture, normToWorld, worldToNorm } from "./boxes";
import type { NormBox } from "./boxes";
import { screenToPlane } from "./orbit";
import { drawWireframe, drawBox } from "./render2d";
import type { ViewSpec } from "./render2d";

function resolveBaseUrl(): string {
  const fromQuery = new URLSearchParams(location.search).get("api");
  if (fromQuery) return fromQuery;
  const fromEnv = import.meta.env.VITE_API_BASE as string | undefined;
  return fromEnv ?? "http://127.0.0.1:8000";
}

const store = new ViewerStore(resolveBaseUrl());
const controller = new EditorController(store);

const app = document.getElementById("app")!;
app.innerHTML = `
  <div id="banner" hidden><span id="banner-text"></span><button id="banner-close">dismiss</button></div>
  <div class="cols">
    <div class="panel">
      <h1>scene editor</h1>
      <div class="row">
        <button id="new-scene">new scene</button>
        <select id="scene-list"></select>
      </div>
      <dl id="meta"></dl>
      <div class="row">
        <button id="draw-box">draw box</button>
        <button id="clear-boxes">clear boxes</button>
      </div>
      <div class="row">
        <button id="remove">remove</button>
        <button id="remove-harmonize">remove + harmonize</button>
      </div>
      <div class="row">
        <button id="duplicate">duplicate</button>
        <button id="move">move</button>
        <button id="harmonize">harmonize</button>
      </div>
      <div class="row">
        <button id="animate">animate</button>
        <label>alpha <input id="alpha" type="number" min="0" max="1" step="0.01" value="0.58"></label>
      </div>
      <div id="message"></div>
      <p class="hint">drag to orbit, wheel to zoom. draw box: click two ground
      corners, then drag up and click to set height. first box is the source,
      second the destination.</p>
    </div>
    <div class="stage">
      <img id="render" width="${RENDER_SIZE}" height="${RENDER_SIZE}" alt="scene render">
      <canvas id="overlay" width="${RENDER_SIZE}" height="${RENDER_SIZE}"></canvas>
    </div>
  </div>
`;

const els = {
  banner: document.getElementById("banner")!,
  bannerText: document.getElementById("banner-text")!,
  sceneList: document.getElementById("scene-list") as HTMLSelectElement,
  meta: document.getElementById("meta")!,
  message: document.getElementById("message")!,
  render: document.getElementById("render") as HTMLImageElement,
  overlay: document.getElementById("overlay") as HTMLCanvasElement,
  alpha: document.getElementById("alpha") as HTMLInputElement,
};
const ctx = els.overlay.getContext("2d")!;

function setMessage(text: string): void {
  els.message.textContent = text;
}

function viewSpec(): ViewSpec {
  return {
    pose: controller.currentPose(),
    fovDeg: FOV_DEG,
    width: RENDER_SIZE,
    height: RENDER_SIZE,
  };
}

function redrawOverlay(): void {
  ctx.clearRect(0, 0, RENDER_SIZE, RENDER_SIZE);
  const bounds = store.meta?.bounds;
  if (!bounds) return;
  const view = viewSpec();
  if (controller.wireframe) {
    drawWireframe(ctx, view, controller.wireframe.points, controller.wireframe.edges);
  }
  for (const box of store.boxes) drawBox(ctx, view, box, bounds);
  const preview = gesture?.preview();
  if (preview) drawBox(ctx, view, preview, bounds, true);
}

let renderTimer: ReturnType<typeof setTimeout> | null = null;
function scheduleRender(delay = 150): void {
  if (renderTimer !== null) clearTimeout(renderTimer);
  renderTimer = setTimeout(() => {
    renderTimer = null;
    controller.refreshRender().catch((err) => setMessage(describeError(err)));
  }, delay);
}

let renderUrl: string | null = null;
controller.onRender = (r) => {
  if (renderUrl) URL.revokeObjectURL(renderUrl);
  renderUrl = URL.createObjectURL(new Blob([r.png], { type: "image/png" }));
  els.render.src = renderUrl;
  redrawOverlay();
};

function renderMeta(): void {
  const m = store.meta;
  if (!m) {
    els.meta.innerHTML = "";
    return;
  }
  const tris = controller.mesh?.triangleCount ?? 0;
  els.meta.innerHTML = [
    ["scene", m.scene_id.slice(0, 12)],
    ["dims", m.dims.join("×")],
    ["edits", String(m.n_edits)],
    ["mesh triangles", String(tris)],
    ["busy", store.busy ? store.pending!.kind : "no"],
  ]
    .map(([k, v]) => `<div><dt>${k}</dt><dd>${v}</dd></div>`)
    .join("");
}

store.subscribe(() => {
  renderMeta();
  els.banner.hidden = store.banner === null;
  els.bannerText.textContent = store.banner?.text ?? "";
  redrawOverlay();
});

document.getElementById("banner-close")!.addEventListener("click", () => store.dismissBanner());

// --- scene loading -------------------------------------------------------

async function refreshSceneList(): Promise<void> {
  const { scenes } = await controller.api.listScenes();
  els.sceneList.innerHTML = scenes
    .map((s) => `<option value="${s.scene_id}">${s.scene_id.slice(0, 12)} (${s.n_edits} edits)</option>`)
    .join("");
  if (store.sceneId) els.sceneList.value = store.sceneId;
}

document.getElementById("new-scene")!.addEventListener("click", async () => {
  try {
    await controller.newScene();
    await refreshSceneList();
  } catch (err) {
    store.showBanner(describeError(err));
  }
});

els.sceneList.addEventListener("change", () => {
  controller.loadScene(els.sceneList.value).catch(() => {});
});

// --- orbit + box gestures ------------------------------------------------

let gesture: BoxGesture | null = null;
let dragging = false;
let lastPointer: [number, number] | null = null;
let heightAnchorY: number | null = null;

function canvasPixel(ev: PointerEvent): [number, number] {
  const rect = els.overlay.getBoundingClientRect();
  return [
    ((ev.clientX - rect.left) / rect.width) * RENDER_SIZE,
    ((ev.clientY - rect.top) / rect.height) * RENDER_SIZE,
  ];
}

function groundPoint(px: number, py: number): NormBox["min"] | null {
  const bounds = store.meta?.bounds;
  if (!bounds) return null;
  const view = viewSpec();
  const world = screenToPlane(view.pose, view.fovDeg, view.width, view.height, px, py, bounds[0][2]);
  return world ? worldToNorm(world, bounds) : null;
}

els.overlay.addEventListener("pointerdown", (ev) => {
  const [px, py] = canvasPixel(ev);
  if (gesture) {
    const g = groundPoint(px, py);
    if (gesture.phase === "idle" && g) {
      gesture.start(g);
    } else if (gesture.phase === "footprint" && g) {
      gesture.commitFootprint(g);
      heightAnchorY = py;
    } else if (gesture.phase === "height") {
      const box = gesture.finish();
      if (box) {
        try {
          store.addBox(box);
          const [wmin, wmax] = [normToWorld(box.min, store.meta!.bounds), normToWorld(box.max, store.meta!.bounds)];
          setMessage(`box ${store.boxes.length}: [${wmin.map((v) => v.toFixed(2))}] .. [${wmax.map((v) => v.toFixed(2))}]`);
        } catch (err) {
          setMessage(describeError(err));
        }
      }
      gesture = null;
      heightAnchorY = null;
    }
    redrawOverlay();
    return;
  }
  dragging = true;
  lastPointer = [ev.clientX, ev.clientY];
  els.overlay.setPointerCapture(ev.pointerId);
});

els.overlay.addEventListener("pointermove", (ev) => {
  const [px, py] = canvasPixel(ev);
  if (gesture) {
    if (gesture.phase === "footprint") {
      const g = groundPoint(px, py);
      if (g) gesture.moveGround(g);
    } else if (gesture.phase === "height" && heightAnchorY !== null) {
      // dragging half the canvas height sweeps the full normalized z range
      gesture.moveHeight(-1 + ((heightAnchorY - py) / (RENDER_SIZE / 2)) * 2);
    }
    redrawOverlay();
    return;
  }
  if (!dragging || !lastPointer) return;
  const [dx, dy] = [ev.clientX - lastPointer[0], ev.clientY - lastPointer[1]];
  lastPointer = [ev.clientX, ev.clientY];
  store.setOrbit({
    ...store.orbit,
    azimuth: store.orbit.azimuth - dx * 0.01,
    elevation: store.orbit.elevation + dy * 0.01,
  });
  redrawOverlay();
  scheduleRender();
});

els.overlay.addEventListener("pointerup", () => {
  dragging = false;
  lastPointer = null;
});

els.overlay.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  store.setOrbit({ ...store.orbit, distance: store.orbit.distance * (ev.deltaY > 0 ? 1.1 : 0.9) });
  redrawOverlay();
  scheduleRender();
});

document.getElementById("draw-box")!.addEventListener("click", () => {
  // first box doubles as remove target and pair source; second is the dest
  gesture = new BoxGesture(store.boxes.length === 0 ? "target" : "dest");
  setMessage("click two ground corners, then drag up and click to set height");
});

document.getElementById("clear-boxes")!.addEventListener("click", () => {
  store.clearBoxes();
  gesture = null;
  setMessage("");
});

// --- edit actions --------------------------------------------------------

function reportMutationError(err: unknown): void {
  if (err instanceof MutationInFlightError) setMessage(err.message);
  else setMessage(describeError(err));
}

function firstBox(): NormBox | null {
  const box = store.boxes[0];
  if (!box) setMessage("draw a box first");
  return box ?? null;
}

function boxPair(): [NormBox, NormBox] | null {
  if (store.boxes.length < 2) {
    setMessage("draw a source box and a destination box first");
    return null;
  }
  return [store.boxes[0]!, store.boxes[1]!];
}

document.getElementById("remove")!.addEventListener("click", () => {
  const box = firstBox();
  if (box) controller.applyRemove(box).then(() => setMessage("removed")).catch(reportMutationError);
});

document.getElementById("remove-harmonize")!.addEventListener("click", () => {
  const box = firstBox();
  if (box) {
    controller.removeAndHarmonize(box).then(() => setMessage("removed + harmonized")).catch(reportMutationError);
  }
});

document.getElementById("duplicate")!.addEventListener("click", () => {
  const pair = boxPair();
  if (pair) controller.applyPair("duplicate", ...pair).then(() => setMessage("duplicated")).catch(reportMutationError);
});

document.getElementById("move")!.addEventListener("click", () => {
  const pair = boxPair();
  if (pair) controller.applyPair("move", ...pair).then(() => setMessage("moved")).catch(reportMutationError);
});

document.getElementById("harmonize")!.addEventListener("click", () => {
  controller.harmonize().then(() => setMessage("harmonized")).catch(reportMutationError);
});

// --- animation -----------------------------------------------------------

let animTimer: ReturnType<typeof setInterval> | null = null;

document.getElementById("animate")!.addEventListener("click", async () => {
  if (animTimer !== null) {
    clearInterval(animTimer);
    animTimer = null;
    controller.refreshRender().catch(() => {});
    setMessage("animation stopped");
    return;
  }
  try {
    setMessage("fetching animation...");
    const frames = await controller.fetchAnimation({ alpha: Number(els.alpha.value), steps: 12 });
    let i = 0;
    animTimer = setInterval(() => {
      const frame = frames[i % frames.length]!;
      if (renderUrl) URL.revokeObjectURL(renderUrl);
      renderUrl = URL.createObjectURL(new Blob([frame as BlobPart], { type: "image/png" }));
      els.render.src = renderUrl;
      i++;
    }, 120);
    setMessage(`looping ${frames.length} frames (click animate to stop)`);
  } catch (err) {
    setMessage(describeError(err));
  }
});

// --- boot ----------------------------------------------------------------

(async () => {
  try {
    await controller.api.health();
    const { scenes } = await controller.api.listScenes();
    if (scenes.length > 0) await controller.loadScene(scenes[0]!.scene_id);
    await refreshSceneList();
  } catch (err) {
    store.showBanner(`cannot reach ${store.baseUrl}: ${describeError(err)}`);
  }
})();

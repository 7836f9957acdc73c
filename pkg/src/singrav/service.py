"""HTTP facade over scene sampling, rendering, editing, and export.

Scene records persist as plain directories (noise stack, SGRV1 volume, history
JSON); replaying the history over a freshly regenerated base volume must
reproduce the cached volume bitwise, and that is checked whenever records are
loaded with a matching checkpoint. Mutations are serialized per scene with a
non-blocking lock, so a second writer gets 409 instead of queueing.
"""

import base64
import hashlib
import io
import json
import logging
import os
import secrets
import threading
import uuid
import zipfile
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from singrav.apps import (
    AnimationConfig,
    EditMask,
    animate_noise,
    default_empty_sample,
    edit_duplicate,
    edit_move,
    edit_remove,
    empty_sample_at,
    export_mesh,
    harmonize,
    mesh_stl_bytes,
    voxel_region,
)
from singrav.imageops import save_color_png, to_uint8
from singrav.pyramid import GeneratorStack, NoiseStack, load_stack
from singrav.renderer import (
    Camera,
    RaySampleSpec,
    default_orbit_camera,
    frame_box_camera,
    pose_from_list,
    render,
    render_final,
)
from singrav.volume import RadianceVolume, read_sgrv, sgrv_bytes, write_sgrv

log = logging.getLogger(__name__)

DEFAULT_PORT = 8000
MAX_RENDER_SIDE = 1024
MAX_ANIMATION_STEPS = 256
EDIT_OPS = ("remove", "duplicate", "move", "compose")


class CreateSceneBody(BaseModel):
    seed: int | None = None


class EditBody(BaseModel):
    op: str
    boxes: list = []
    empty_point: list | None = None
    source_scene_ids: list | None = None


class HarmonizeBody(BaseModel):
    fresh_noise: bool = False
    seed: int = 0


class ApiError(Exception):
    """Carries an HTTP status plus the structured {code, message} body."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class SceneRecord:
    scene_id: str
    seed: int | None
    noise: NoiseStack
    volume: RadianceVolume
    checkpoint: str
    history: list = field(default_factory=list)
    compacted: bool = False
    _hash: str | None = field(default=None, repr=False)

    @property
    def content_hash(self) -> str:
        if self._hash is None:
            h = hashlib.sha256()
            h.update(self.volume.values.tobytes())
            h.update(np.asarray(self.volume.bounds, np.float64).tobytes())
            self._hash = h.hexdigest()[:16]
        return self._hash

    def mutate(self, volume: RadianceVolume, entry: dict) -> None:
        self.volume = volume
        self.history.append(entry)
        self._hash = None

    def meta(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "seed": self.seed,
            "dims": list(self.volume.dims),
            "bounds": self.volume.bounds.tolist(),
            "n_edits": len(self.history),
            "compacted": self.compacted,
            "content_hash": self.content_hash,
            "checkpoint": self.checkpoint,
        }


class RenderCache:
    """Tiny thread-safe LRU for encoded render bytes."""

    def __init__(self, capacity: int = 256):
        self.capacity = capacity
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            if key not in self._data:
                return None
            self._data.move_to_end(key)
            return self._data[key]

    def put(self, key, value) -> None:
        if self.capacity <= 0:
            return
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)


@dataclass
class ServiceState:
    stack: GeneratorStack | None
    checkpoint: str
    scenes_dir: Path
    m_samples: int = 128
    scenes: dict = field(default_factory=dict)
    locks: dict = field(default_factory=dict)
    cache: RenderCache = field(default_factory=RenderCache)
    _registry_lock: threading.Lock = field(default_factory=threading.Lock)

    def lock_for(self, scene_id: str) -> threading.Lock:
        with self._registry_lock:
            return self.locks.setdefault(scene_id, threading.Lock())

    def get_scene(self, scene_id: str) -> SceneRecord:
        rec = self.scenes.get(scene_id)
        if rec is None:
            raise ApiError(404, "unknown_scene", f"no scene {scene_id!r}")
        return rec


# ---------------------------------------------------------------------------
# persistence and history replay


def save_record(state: ServiceState, rec: SceneRecord) -> None:
    d = state.scenes_dir / rec.scene_id
    d.mkdir(parents=True, exist_ok=True)
    np.savez(d / "noise.npz", **{f"z{i}": z for i, z in enumerate(rec.noise.z)})
    write_sgrv(d / "volume.sgrv", rec.volume)
    (d / "record.json").write_text(
        json.dumps(
            {
                "scene_id": rec.scene_id,
                "seed": rec.seed,
                "checkpoint": rec.checkpoint,
                "compacted": rec.compacted,
                "history": rec.history,
            },
            indent=2,
        )
    )


def _load_record(d: Path) -> SceneRecord:
    meta = json.loads((d / "record.json").read_text())
    with np.load(d / "noise.npz") as nz:
        z = [nz[f"z{i}"] for i in range(len(nz.files))]
    return SceneRecord(
        scene_id=meta["scene_id"],
        seed=meta["seed"],
        noise=NoiseStack(z, seed=meta["seed"]),
        volume=read_sgrv(d / "volume.sgrv"),
        checkpoint=meta["checkpoint"],
        history=meta["history"],
        compacted=meta["compacted"],
    )


def apply_history_op(volume: RadianceVolume, entry: dict, stack) -> RadianceVolume:
    op = entry["op"]
    if op == "remove":
        return edit_remove(volume, _mask_from_entry(entry))
    if op in ("duplicate", "move"):
        src = EditMask(entry["src_min"], entry["src_max"], empty_sample=_empty_from(entry))
        dst = EditMask(entry["dst_min"], entry["dst_max"])
        fn = edit_duplicate if op == "duplicate" else edit_move
        return fn(volume, src, dst)
    if op == "compose":
        out = volume.values.copy()
        for blk in entry["blocks"]:
            data = np.frombuffer(base64.b64decode(blk["data"]), dtype="<f4")
            data = data.reshape(blk["shape"])
            lo = blk["dst_lo"]
            out[lo[0] : lo[0] + data.shape[0], lo[1] : lo[1] + data.shape[1], lo[2] : lo[2] + data.shape[2]] = data
        return RadianceVolume(out, volume.bounds.copy())
    if op == "harmonize":
        if stack is None:
            raise ApiError(503, "no_checkpoint", "harmonize replay needs model weights")
        return harmonize(volume, stack, fresh_noise=entry["fresh_noise"], seed=entry["seed"])
    raise ValueError(f"unknown history op {op!r}")


def _empty_from(entry: dict):
    e = entry.get("empty")
    return ((e[0], e[1], e[2]), e[3]) if e is not None else None


def _mask_from_entry(entry: dict) -> EditMask:
    return EditMask(entry["box_min"], entry["box_max"], empty_sample=_empty_from(entry))


def replay_volume(state: ServiceState, rec: SceneRecord) -> RadianceVolume:
    vol, _ = state.stack.sample_scene(noise=rec.noise)
    for entry in rec.history:
        vol = apply_history_op(vol, entry, state.stack)
    return vol


def load_scenes(state: ServiceState) -> None:
    if not state.scenes_dir.is_dir():
        return
    for d in sorted(state.scenes_dir.iterdir()):
        if not (d / "record.json").is_file():
            continue
        rec = _load_record(d)
        if state.stack is not None and rec.checkpoint == state.checkpoint:
            replayed = replay_volume(state, rec)
            if not np.array_equal(replayed.values, rec.volume.values):
                raise ValueError(
                    f"scene {rec.scene_id}: history replay does not reproduce the stored volume"
                )
        elif state.stack is not None:
            log.warning(
                "scene %s built from checkpoint %r, server has %r; skipping replay check",
                rec.scene_id,
                rec.checkpoint,
                state.checkpoint,
            )
        state.scenes[rec.scene_id] = rec


# ---------------------------------------------------------------------------
# edit handling


def _empty_vector(state_volume: RadianceVolume, empty_point) -> list:
    if empty_point is not None:
        try:
            vec = empty_sample_at(state_volume, empty_point)
        except ValueError as exc:
            raise ApiError(400, "invalid_box", str(exc)) from exc
    else:
        vec = default_empty_sample(state_volume)
    return [float(v) for v in vec]


def _boxes_to_masks(boxes, empty=None) -> list:
    masks = []
    for box in boxes:
        sample = None
        if empty is not None:
            sample = ((empty[0], empty[1], empty[2]), empty[3])
        try:
            masks.append(EditMask(box["min"], box["max"], empty_sample=sample))
        except (ValueError, TypeError, KeyError) as exc:
            raise ApiError(400, "invalid_box", f"bad box {box!r}: {exc}") from exc
    return masks


def apply_edit(state: ServiceState, rec: SceneRecord, body: dict) -> dict:
    op = body.get("op")
    if op not in EDIT_OPS:
        raise ApiError(400, "invalid_op", f"op must be one of {list(EDIT_OPS)}")
    boxes = body.get("boxes") or []
    entry = {"edit_id": uuid.uuid4().hex[:12], "op": op}
    try:
        if op == "remove":
            if len(boxes) != 1:
                raise ApiError(400, "invalid_box", "remove takes exactly one box")
            empty = _empty_vector(rec.volume, body.get("empty_point"))
            (mask,) = _boxes_to_masks(boxes, empty)
            entry.update(box_min=mask.box_min.tolist(), box_max=mask.box_max.tolist(), empty=empty)
            new_vol = edit_remove(rec.volume, mask)
        elif op in ("duplicate", "move"):
            if len(boxes) != 2:
                raise ApiError(400, "invalid_box", f"{op} takes [src, dst] boxes")
            empty = _empty_vector(rec.volume, body.get("empty_point")) if op == "move" else None
            src, dst = _boxes_to_masks(boxes, empty)
            entry.update(
                src_min=src.box_min.tolist(),
                src_max=src.box_max.tolist(),
                dst_min=dst.box_min.tolist(),
                dst_max=dst.box_max.tolist(),
                empty=empty,
            )
            new_vol = (edit_duplicate if op == "duplicate" else edit_move)(rec.volume, src, dst)
        else:  # compose
            new_vol, blocks = _apply_compose(state, rec, boxes, body.get("source_scene_ids"))
            entry["blocks"] = blocks
    except ValueError as exc:
        raise ApiError(400, "invalid_box", str(exc)) from exc
    rec.mutate(new_vol, entry)
    save_record(state, rec)
    return {"edit_id": entry["edit_id"]}


def _apply_compose(state: ServiceState, rec: SceneRecord, boxes, source_ids):
    """Pairs of (src, dst) boxes; sources may live in other scenes.

    The copied blocks are embedded into the history entry so replay never
    depends on the later state of the source scenes.
    """
    if len(boxes) < 2 or len(boxes) % 2 != 0:
        raise ApiError(400, "invalid_box", "compose takes an even number of boxes (src, dst pairs)")
    n_pairs = len(boxes) // 2
    if source_ids is None:
        source_ids = [rec.scene_id] * n_pairs
    if len(source_ids) != n_pairs:
        raise ApiError(400, "invalid_box", f"{n_pairs} box pairs but {len(source_ids)} source scenes")

    out = rec.volume.values.copy()
    blocks = []
    for k in range(n_pairs):
        sid = source_ids[k]
        src_rec = rec if sid == rec.scene_id else state.get_scene(sid)
        src_mask, dst_mask = _boxes_to_masks([boxes[2 * k], boxes[2 * k + 1]])
        slo, shi = voxel_region(src_rec.volume, src_mask)
        dlo, dhi = voxel_region(rec.volume, dst_mask)
        if tuple(shi - slo) != tuple(dhi - dlo):
            raise ApiError(
                400,
                "invalid_box",
                f"pair {k}: source extent {tuple(shi - slo)} does not match destination {tuple(dhi - dlo)}",
            )
        block = src_rec.volume.values[slo[0] : shi[0], slo[1] : shi[1], slo[2] : shi[2]]
        out[dlo[0] : dhi[0], dlo[1] : dhi[1], dlo[2] : dhi[2]] = block
        blocks.append(
            {
                "source_scene": sid,
                "dst_lo": [int(v) for v in dlo],
                "shape": list(block.shape),
                "data": base64.b64encode(np.ascontiguousarray(block, "<f4").tobytes()).decode(),
            }
        )
    return RadianceVolume(out, rec.volume.bounds.copy()), blocks


# ---------------------------------------------------------------------------
# rendering


def _camera_from_query(volume: RadianceVolume, pose_csv: str, w: int, h: int, fov: float) -> Camera:
    try:
        pose = pose_from_list([float(v) for v in pose_csv.split(",")])
    except ValueError as exc:
        raise ApiError(400, "invalid_pose", f"pose must be 16 comma-separated floats: {exc}") from exc
    if not (1 <= w <= MAX_RENDER_SIDE and 1 <= h <= MAX_RENDER_SIDE):
        raise ApiError(400, "invalid_size", f"w and h must lie in [1, {MAX_RENDER_SIDE}]")
    try:
        return frame_box_camera(volume.bounds, pose, w, h, fov)
    except ValueError as exc:
        raise ApiError(400, "invalid_pose", str(exc)) from exc


def _render_scene(state: ServiceState, rec: SceneRecord, camera: Camera, kind: str) -> bytes:
    key = (rec.content_hash, camera.pose_c2w.tobytes(), camera.width, camera.height, camera.fov_deg, kind)
    cached = state.cache.get(key)
    if cached is not None:
        return cached
    out = render(rec.volume, camera, RaySampleSpec(state.m_samples))
    buf = io.BytesIO()
    if kind == "color":
        save_color_png(buf, out.color)
    else:
        from PIL import Image

        span = max(camera.far - camera.near, 1e-9)
        norm = np.clip((out.depth - camera.near) / span, 0.0, 1.0)
        Image.fromarray(to_uint8(np.asarray(norm)), mode="L").save(buf, format="PNG")
    data = buf.getvalue()
    state.cache.put(key, data)
    return data


def _animation_zip(state: ServiceState, rec: SceneRecord, cfg: AnimationConfig, seed: int) -> bytes:
    frames = []
    for noise in animate_noise(rec.noise, cfg, seed=seed):
        vol, _ = state.stack.sample_scene(noise=noise)
        cam = default_orbit_camera(vol.bounds)
        frames.append(render_final(state.stack, vol, cam, state.m_samples))
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        names = []
        for i, frame in enumerate(frames):
            png = io.BytesIO()
            save_color_png(png, frame)
            name = f"frame_{i:04d}.png"
            names.append(name)
            zf.writestr(zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0)), png.getvalue())
        index = {
            "frames": names,
            "seed": seed,
            "config": {"alpha": cfg.alpha, "xi": cfg.xi, "steps": cfg.steps, "start_scale": cfg.start_scale},
        }
        zf.writestr(
            zipfile.ZipInfo("animation.json", date_time=(1980, 1, 1, 0, 0, 0)),
            json.dumps(index, indent=2),
        )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# app assembly


def create_app(
    checkpoint: str | Path | None = None,
    scenes_dir: str | Path | None = None,
    m_samples: int = 128,
    cache_size: int = 256,
    cors_origins: tuple = ("*",),
):
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse, Response

    stack = None
    checkpoint_ref = ""
    if checkpoint is not None:
        stack = load_stack(checkpoint)
        checkpoint_ref = str(Path(checkpoint).resolve())

    state = ServiceState(
        stack=stack,
        checkpoint=checkpoint_ref,
        scenes_dir=Path(scenes_dir) if scenes_dir is not None else Path("scenes"),
        m_samples=m_samples,
        cache=RenderCache(cache_size),
    )
    load_scenes(state)

    app = FastAPI(title="singrav service")
    app.state.svc = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"code": "invalid_request", "message": str(exc)})

    def _mutation_lock(scene_id: str) -> threading.Lock:
        lock = state.lock_for(scene_id)
        if not lock.acquire(blocking=False):
            raise ApiError(409, "busy", f"another mutation is in flight for scene {scene_id}")
        return lock

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "checkpoint_loaded": state.stack is not None,
            "n_scenes": len(state.scenes),
        }

    @app.post("/scenes", status_code=201)
    def create_scene(body: CreateSceneBody | None = None):
        if state.stack is None:
            raise ApiError(503, "no_checkpoint", "server loaded without a trained checkpoint")
        seed = body.seed if body is not None and body.seed is not None else secrets.randbelow(2**31)
        noise = NoiseStack.sample(state.stack.schedule, seed)
        volume, _ = state.stack.sample_scene(noise=noise)
        rec = SceneRecord(
            scene_id=uuid.uuid4().hex,
            seed=seed,
            noise=noise,
            volume=volume,
            checkpoint=state.checkpoint,
        )
        state.scenes[rec.scene_id] = rec
        save_record(state, rec)
        return {"scene_id": rec.scene_id, "seed": seed}

    @app.get("/scenes")
    def list_scenes():
        return {"scenes": [rec.meta() for rec in state.scenes.values()]}

    @app.get("/scenes/{scene_id}")
    def scene_meta(scene_id: str):
        return state.get_scene(scene_id).meta()

    @app.get("/scenes/{scene_id}/render")
    def render_scene(scene_id: str, pose: str, w: int = 128, h: int = 128, fov: float = 40.0):
        rec = state.get_scene(scene_id)
        camera = _camera_from_query(rec.volume, pose, w, h, fov)
        data = _render_scene(state, rec, camera, "color")
        return Response(
            content=data,
            media_type="image/png",
            headers={"X-Depth-Available": f"/scenes/{scene_id}/depth"},
        )

    @app.get("/scenes/{scene_id}/depth")
    def render_depth(scene_id: str, pose: str, w: int = 128, h: int = 128, fov: float = 40.0):
        rec = state.get_scene(scene_id)
        camera = _camera_from_query(rec.volume, pose, w, h, fov)
        return Response(content=_render_scene(state, rec, camera, "depth"), media_type="image/png")

    @app.post("/scenes/{scene_id}/edits")
    def post_edit(scene_id: str, body: EditBody):
        rec = state.get_scene(scene_id)
        lock = _mutation_lock(scene_id)
        try:
            return apply_edit(state, rec, body.model_dump())
        finally:
            lock.release()

    @app.post("/scenes/{scene_id}/harmonize")
    def post_harmonize(scene_id: str, body: HarmonizeBody | None = None):
        rec = state.get_scene(scene_id)
        if state.stack is None:
            raise ApiError(503, "no_checkpoint", "harmonization needs model weights")
        lock = _mutation_lock(scene_id)
        try:
            fresh = body.fresh_noise if body is not None else False
            seed = body.seed if body is not None else 0
            try:
                new_vol = harmonize(rec.volume, state.stack, fresh_noise=fresh, seed=seed)
            except ValueError as exc:
                raise ApiError(400, "invalid_request", str(exc)) from exc
            rec.mutate(new_vol, {"op": "harmonize", "fresh_noise": fresh, "seed": seed})
            rec.compacted = True
            save_record(state, rec)
            return {"status": "harmonized", "dims": list(new_vol.dims)}
        finally:
            lock.release()

    @app.get("/scenes/{scene_id}/volume")
    def get_volume(scene_id: str):
        rec = state.get_scene(scene_id)
        return Response(
            content=sgrv_bytes(rec.volume),
            media_type="application/octet-stream",
            headers={"Content-Disposition": f'attachment; filename="{scene_id}.sgrv"'},
        )

    @app.get("/scenes/{scene_id}/mesh")
    def get_mesh(scene_id: str, threshold: float = 0.5):
        rec = state.get_scene(scene_id)
        try:
            mesh = export_mesh(rec.volume, density_threshold=threshold)
        except ValueError as exc:
            raise ApiError(400, "invalid_request", str(exc)) from exc
        return Response(
            content=mesh_stl_bytes(mesh),
            media_type="model/stl",
            headers={"Content-Disposition": f'attachment; filename="{scene_id}.stl"'},
        )

    @app.get("/scenes/{scene_id}/animation")
    def get_animation(
        scene_id: str,
        alpha: float = 0.58,
        xi: float = 0.45,
        steps: int = 10,
        start_scale: int = 3,
        seed: int = 0,
    ):
        rec = state.get_scene(scene_id)
        if state.stack is None:
            raise ApiError(503, "no_checkpoint", "animation needs model weights")
        if steps > MAX_ANIMATION_STEPS:
            raise ApiError(400, "invalid_request", f"steps capped at {MAX_ANIMATION_STEPS}")
        try:
            cfg = AnimationConfig(alpha=alpha, xi=xi, steps=steps, start_scale=start_scale)
            data = _animation_zip(state, rec, cfg, seed)
        except ValueError as exc:
            raise ApiError(400, "invalid_request", str(exc)) from exc
        return Response(
            content=data,
            media_type="application/zip",
            headers={"Content-Disposition": f'attachment; filename="{scene_id}_animation.zip"'},
        )

    return app


def resolve_port(flag: int | None = None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("SINGRAV_PORT")
    return int(env) if env else DEFAULT_PORT


def serve(
    checkpoint: str | None,
    scenes_dir: str | None = None,
    host: str = "127.0.0.1",
    port: int | None = None,
    m_samples: int = 128,
) -> None:
    import uvicorn

    app = create_app(checkpoint=checkpoint, scenes_dir=scenes_dir, m_samples=m_samples)
    uvicorn.run(app, host=host, port=resolve_port(port))

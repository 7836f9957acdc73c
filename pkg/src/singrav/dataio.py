"""Multi-view RGB-D dataset ingestion, observation pyramids, and synthetic scenes.

Datasets are JSON manifests referencing 8-bit color PNGs and 16-bit depth PNGs
with per-view scales. Pyramids of area-averaged observations are cached on
disk keyed by dataset content; the cache stores exact float arrays next to
inspectable PNGs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock

from singrav.imageops import (
    depth_scale_for,
    load_color_png,
    load_depth_png,
    resize_area,
    save_color_png,
    save_depth_png,
)
from singrav.renderer import Camera, RaySampleSpec, look_at_pose, pose_from_list, render
from singrav.volume import DEFAULT_BOUNDS, RadianceVolume

MANIFEST_VERSION = 1


class DatasetError(ValueError):
    """Manifest failed validation; carries a per-view error report."""

    def __init__(self, report):
        self.report = list(report)
        lines = "; ".join(f"view {i}: {msg}" for i, msg in self.report)
        super().__init__(f"dataset failed validation: {lines}")


@dataclass
class CameraView:
    camera: Camera
    color: np.ndarray
    depth: np.ndarray | None = None
    depth_scale: float | None = None
    rgb_path: str | None = None
    depth_path: str | None = None


@dataclass
class MultiViewDataset:
    views: list
    bounds: np.ndarray = field(default_factory=lambda: DEFAULT_BOUNDS.copy())
    manifest_path: str | None = None

    @property
    def m(self) -> int:
        return len(self.views)


def _camera_from_json(c: dict) -> Camera:
    return Camera(
        width=int(c["width"]),
        height=int(c["height"]),
        pose_c2w=pose_from_list(c["pose_c2w"]),
        near=float(c["near"]),
        far=float(c["far"]),
        fov_deg=c.get("fov_deg"),
        focal_px=c.get("focal_px"),
    )


def _camera_to_json(cam: Camera) -> dict:
    out = {
        "width": cam.width,
        "height": cam.height,
        "near": cam.near,
        "far": cam.far,
        "pose_c2w": [float(v) for v in cam.pose_c2w.reshape(-1)],
    }
    if cam.fov_deg is not None:
        out["fov_deg"] = cam.fov_deg
    if cam.focal_px is not None:
        out["focal_px"] = cam.focal_px
    return out


def load_dataset(manifest_path) -> MultiViewDataset:
    """Load and validate a manifest; collects per-view problems before failing."""
    manifest_path = Path(manifest_path)
    data = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    report = []
    views = []
    for i, v in enumerate(data.get("views", [])):
        try:
            cam = _camera_from_json(v["camera"])
        except (KeyError, ValueError) as exc:
            report.append((i, f"bad camera: {exc}"))
            continue
        rgb_rel = v.get("rgb")
        if rgb_rel is None:
            report.append((i, "missing rgb entry"))
            continue
        rgb_path = root / rgb_rel
        if not rgb_path.exists():
            report.append((i, f"missing file {rgb_rel}"))
            continue
        color = load_color_png(rgb_path)
        if color.shape[:2] != (cam.height, cam.width):
            report.append(
                (i, f"resolution mismatch: image {color.shape[:2]} vs camera "
                    f"{(cam.height, cam.width)}")
            )
            continue
        depth = None
        scale = None
        if v.get("depth") is not None:
            scale = v.get("depth_scale")
            if scale is None or scale <= 0:
                report.append((i, f"invalid depth_scale {scale!r}"))
                continue
            dpath = root / v["depth"]
            if not dpath.exists():
                report.append((i, f"missing file {v['depth']}"))
                continue
            depth = load_depth_png(dpath, scale)
            if depth.shape != (cam.height, cam.width):
                report.append((i, "depth resolution mismatch"))
                continue
            if not np.all(np.isfinite(depth)) or depth.min() < 0:
                report.append((i, "depth not finite and non-negative"))
                continue
        views.append(
            CameraView(cam, color, depth, scale, rgb_rel, v.get("depth"))
        )
    if report:
        raise DatasetError(report)
    if not views:
        raise DatasetError([(0, "manifest has no views")])
    bounds = np.asarray(data.get("bounds", DEFAULT_BOUNDS), dtype=np.float64)
    return MultiViewDataset(views, bounds, str(manifest_path))


def save_dataset(out_dir, dataset: MultiViewDataset, manifest_name: str = "dataset.json") -> Path:
    """Write images plus manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    views_json = []
    for i, view in enumerate(dataset.views):
        rgb_rel = f"images/view_{i:04d}.png"
        save_color_png(out / rgb_rel, view.color)
        entry = {"rgb": rgb_rel, "depth": None, "depth_scale": None,
                 "camera": _camera_to_json(view.camera)}
        if view.depth is not None:
            scale = view.depth_scale or depth_scale_for(view.depth)
            depth_rel = f"images/view_{i:04d}_depth.png"
            save_depth_png(out / depth_rel, view.depth, scale)
            entry["depth"] = depth_rel
            entry["depth_scale"] = scale
        views_json.append(entry)
    manifest = {
        "version": MANIFEST_VERSION,
        "bounds": [list(map(float, b)) for b in np.asarray(dataset.bounds)],
        "views": views_json,
    }
    path = out / manifest_name
    path.write_text(json.dumps(manifest, indent=2))
    return path


def dataset_content_key(dataset: MultiViewDataset) -> str:
    """sha256 over image payloads and poses; identifies a dataset for caching."""
    h = hashlib.sha256()
    h.update(np.asarray(dataset.bounds, dtype=np.float64).tobytes())
    for view in dataset.views:
        h.update(view.camera.pose_c2w.tobytes())
        h.update(np.float64([view.camera.near, view.camera.far, view.camera.focal]).tobytes())
        h.update(view.color.tobytes())
        if view.depth is not None:
            h.update(view.depth.tobytes())
    return h.hexdigest()


@dataclass
class PyramidLevel:
    resolution: int
    colors: np.ndarray  # (m, h, w, 3)
    depths: list  # per view: (h, w) or None


@dataclass
class ObservationPyramid:
    levels: list
    key: str

    def level(self, scale: int) -> PyramidLevel:
        return self.levels[scale - 1]


def _resize_level(dataset: MultiViewDataset, res: int) -> PyramidLevel:
    colors = np.stack([resize_area(v.color, (res, res)) for v in dataset.views])
    depths = [
        resize_area(v.depth, (res, res)) if v.depth is not None else None
        for v in dataset.views
    ]
    return PyramidLevel(res, colors.astype(np.float32), depths)


def _write_cache(cdir: Path, levels: list, dataset: MultiViewDataset) -> None:
    arrays = {}
    for n, lvl in enumerate(levels, start=1):
        sdir = cdir / f"scale_{n}"
        sdir.mkdir(parents=True, exist_ok=True)
        arrays[f"s{n}_color"] = lvl.colors
        dstack = np.full((len(lvl.depths), lvl.resolution, lvl.resolution), np.nan, np.float32)
        meta = {}
        for j, d in enumerate(lvl.depths):
            save_color_png(sdir / f"view_{j}.png", lvl.colors[j])
            if d is not None:
                dstack[j] = d
                scale = depth_scale_for(d)
                save_depth_png(sdir / f"view_{j}.dpng", d, scale)
                meta[str(j)] = scale
        arrays[f"s{n}_depth"] = dstack
        (sdir / "meta.json").write_text(json.dumps({"depth_scale": meta}))
    np.savez(cdir / "levels.npz", **arrays)


def _read_cache(cdir: Path, n_levels: int) -> list:
    with np.load(cdir / "levels.npz") as z:
        levels = []
        for n in range(1, n_levels + 1):
            colors = z[f"s{n}_color"]
            dstack = z[f"s{n}_depth"]
            depths = [
                None if np.isnan(dstack[j]).all() else dstack[j]
                for j in range(dstack.shape[0])
            ]
            levels.append(PyramidLevel(colors.shape[1], colors, depths))
    return levels


def build_pyramid(dataset: MultiViewDataset, schedule, cache_dir=None) -> ObservationPyramid:
    """Area-averaged observations at every scale's image resolution plus the final one.

    Levels 1..N-1 match schedule.image_res; level N is the full-resolution
    (super-resolver target) set. With cache_dir set, results are persisted
    under the dataset's content hash and reloaded exactly.
    """
    resolutions = list(schedule.image_res) + [schedule.final_image_res]
    key = dataset_content_key(dataset)
    key = hashlib.sha256((key + "|" + ",".join(map(str, resolutions))).encode()).hexdigest()
    if cache_dir is not None:
        cdir = Path(cache_dir) / key
        cdir.mkdir(parents=True, exist_ok=True)
        with FileLock(str(cdir) + ".lock"):
            if (cdir / "levels.npz").exists():
                return ObservationPyramid(_read_cache(cdir, len(resolutions)), key)
            levels = [_resize_level(dataset, r) for r in resolutions]
            _write_cache(cdir, levels, dataset)
        return ObservationPyramid(levels, key)
    return ObservationPyramid([_resize_level(dataset, r) for r in resolutions], key)


def hemisphere_rig(
    count: int,
    radius: float = 3.5,
    fov_deg: float = 33.40,
    seed: int = 0,
    jitter_std: float = 0.0,
    width: int = 64,
    height: int = 64,
    near: float | None = None,
    far: float | None = None,
) -> list:
    """Cameras uniform over the upper hemisphere, all aimed at the origin (z up)."""
    if count < 1:
        raise ValueError("need at least one camera")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    margin = float(np.sqrt(3.0))  # half-diagonal of the default 2-cube
    near = near if near is not None else max(radius - margin, 1e-3)
    far = far if far is not None else radius + margin
    cams = []
    for _ in range(count):
        z = rng.uniform(0.0, 1.0)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        s = np.sqrt(max(0.0, 1.0 - z * z))
        p = radius * np.array([s * np.cos(phi), s * np.sin(phi), z])
        if jitter_std > 0:
            p = p + rng.normal(0.0, jitter_std, size=3)
        cams.append(
            Camera(
                width=width,
                height=height,
                pose_c2w=look_at_pose(p),
                near=near,
                far=far,
                fov_deg=fov_deg,
            )
        )
    return cams


def _logit(p):
    p = np.clip(p, 0.02, 0.98)
    return np.log(p / (1.0 - p))


def _voxel_coords(res: int, bounds) -> np.ndarray:
    axes = [
        bounds[0][a] + (np.arange(res) + 0.5) * (bounds[1][a] - bounds[0][a]) / res
        for a in range(3)
    ]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


SOLID_DENSITY = 60.0  # raw value; softplus keeps it ~60, opaque within a voxel
EMPTY_DENSITY = -20.0


def _spheres_volume(res: int, count: int, rng) -> np.ndarray:
    coords = _voxel_coords(res, DEFAULT_BOUNDS)
    vals = np.zeros((res, res, res, 4), dtype=np.float32)
    vals[..., 3] = EMPTY_DENSITY
    for _ in range(count):
        center = rng.uniform(-0.45, 0.45, size=3)
        r = rng.uniform(0.18, 0.38)
        color = rng.uniform(0.15, 0.9, size=3)
        inside = np.linalg.norm(coords - center, axis=-1) < r
        vals[inside, :3] = _logit(color)
        vals[inside, 3] = SOLID_DENSITY
    return vals


def _boxes_volume(res: int, count: int, rng) -> np.ndarray:
    coords = _voxel_coords(res, DEFAULT_BOUNDS)
    vals = np.zeros((res, res, res, 4), dtype=np.float32)
    vals[..., 3] = EMPTY_DENSITY
    for _ in range(count):
        center = rng.uniform(-0.45, 0.45, size=3)
        half = rng.uniform(0.12, 0.3, size=3)
        color = rng.uniform(0.15, 0.9, size=3)
        inside = (np.abs(coords - center) < half).all(axis=-1)
        vals[inside, :3] = _logit(color)
        vals[inside, 3] = SOLID_DENSITY
    return vals


def _terrain_volume(res: int, rng) -> np.ndarray:
    base = rng.normal(size=(6, 6)).astype(np.float32)
    height = resize_area(base, (res, res))
    height = 0.15 * height - 0.25  # gentle relief below the cube midplane
    coords = _voxel_coords(res, DEFAULT_BOUNDS)
    zs = coords[..., 2]
    solid = zs < height[:, :, None]
    frac = np.clip((zs + 1.0) / 1.2, 0.0, 1.0)  # color ramp with altitude
    color = np.stack(
        [0.35 + 0.3 * frac, 0.5 - 0.2 * frac, 0.25 + 0.1 * frac], axis=-1
    )
    vals = np.zeros((res, res, res, 4), dtype=np.float32)
    vals[..., :3] = _logit(color)
    vals[..., 3] = np.where(solid, SOLID_DENSITY, EMPTY_DENSITY)
    return vals


def make_synthetic_scene(
    kind: str,
    resolution=(64, 64),
    views: int = 8,
    seed: int = 0,
    volume_res: int = 48,
    count: int = 3,
    m_samples: int = 96,
    radius: float = 3.5,
    fov_deg: float = 33.40,
    out_dir=None,
):
    """Procedural ground-truth volume plus a rendered RGB-D dataset.

    Images are quantized exactly as they would be on disk, so a saved and
    reloaded copy is numerically identical. With out_dir set the dataset is
    written and reloaded from the manifest.
    """
    if kind not in ("spheres", "boxes", "terrain-noise"):
        raise ValueError(f"unknown scene kind {kind!r}")
    rng = np.random.default_rng(seed)
    if kind == "spheres":
        vals = _spheres_volume(volume_res, count, rng)
    elif kind == "boxes":
        vals = _boxes_volume(volume_res, count, rng)
    else:
        vals = _terrain_volume(volume_res, rng)
    volume = RadianceVolume(vals)

    h, w = resolution
    cams = hemisphere_rig(
        views, radius=radius, fov_deg=fov_deg, seed=seed + 1, width=w, height=h
    )
    out_views = []
    for cam in cams:
        out = render(volume, cam, RaySampleSpec(m=m_samples))
        color = np.clip(np.rint(out.color * 255.0), 0, 255).astype(np.uint8) / np.float32(255.0)
        scale = depth_scale_for(out.depth)
        depth = (np.clip(np.rint(out.depth / scale), 0, 65535) * scale).astype(np.float32)
        out_views.append(CameraView(cam, color.astype(np.float32), depth, scale))
    dataset = MultiViewDataset(out_views)
    if out_dir is not None:
        manifest = save_dataset(out_dir, dataset)
        dataset = load_dataset(manifest)
    return volume, dataset


__all__ = [
    "CameraView",
    "DatasetError",
    "MultiViewDataset",
    "ObservationPyramid",
    "PyramidLevel",
    "build_pyramid",
    "dataset_content_key",
    "hemisphere_rig",
    "load_dataset",
    "make_synthetic_scene",
    "save_dataset",
]

"""Pinhole-camera ray marching over radiance volumes.

Two execution paths share one set of conventions: a NumPy/compiled-kernel path
for inference (render) and a torch path (render_rays) that is differentiable
with respect to voxel values for training. Per-ray integration follows
front-to-back alpha compositing with uniform midpoint samples; density goes
through softplus and color through sigmoid after trilinear interpolation of
raw voxel values; residual transmittance maps to black background and far
depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from singrav import kernels
from singrav.imageops import depth_scale_for, resize_area, save_color_png, save_depth_png, to_uint8
from singrav.volume import RadianceVolume, continuous_index

DEFAULT_CHUNK = 4096


class MissingDepthError(ValueError):
    """Raised when ground-truth depth is requested for a view that has none."""


@dataclass
class Camera:
    width: int
    height: int
    pose_c2w: np.ndarray
    near: float
    far: float
    fov_deg: float | None = None
    focal_px: float | None = None

    def __post_init__(self):
        self.pose_c2w = np.asarray(self.pose_c2w, dtype=np.float64).reshape(4, 4)
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not (0 < self.near < self.far):
            raise ValueError(f"need 0 < near < far, got {self.near}, {self.far}")
        if self.fov_deg is None and self.focal_px is None:
            raise ValueError("camera needs fov_deg or focal_px")
        if not np.all(np.isfinite(self.pose_c2w)):
            raise ValueError("pose contains non-finite values")
        r = self.pose_c2w[:3, :3]
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-5:
            raise ValueError("pose rotation block is not orthonormal")
        if np.abs(self.pose_c2w[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-6:
            raise ValueError("pose last row must be [0, 0, 0, 1]")

    @property
    def focal(self) -> float:
        if self.focal_px is not None:
            return float(self.focal_px)
        return (self.height / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)

    @property
    def position(self) -> np.ndarray:
        return self.pose_c2w[:3, 3].copy()

    @property
    def forward(self) -> np.ndarray:
        # camera space looks along -z
        return -self.pose_c2w[:3, 2].copy()


@dataclass
class RaySampleSpec:
    m: int
    strategy: str = "uniform"

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need at least one sample per ray")
        if self.strategy != "uniform":
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")


@dataclass
class RenderOutput:
    color: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    camera: Camera | None = field(default=None, repr=False)


def pose_from_list(vals) -> np.ndarray:
    vals = np.asarray(vals, dtype=np.float64)
    if vals.size != 16:
        raise ValueError("pose must have 16 entries (row-major 4x4)")
    return vals.reshape(4, 4)


def look_at_pose(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose at `eye` with -z aimed at `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    zc = eye - np.asarray(target, dtype=np.float64)
    n = np.linalg.norm(zc)
    if n < 1e-12:
        raise ValueError("eye coincides with target")
    zc = zc / n
    up = np.asarray(up, dtype=np.float64)
    xc = np.cross(up, zc)
    if np.linalg.norm(xc) < 1e-8:  # looking straight along up
        xc = np.cross(np.array([0.0, 1.0, 0.0]), zc)
        if np.linalg.norm(xc) < 1e-8:
            xc = np.cross(np.array([1.0, 0.0, 0.0]), zc)
    xc = xc / np.linalg.norm(xc)
    yc = np.cross(zc, xc)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = xc, yc, zc, eye
    return pose


def generate_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """One ray per pixel through the pixel center; unit directions, row-major order."""
    f = camera.focal
    j = np.arange(camera.width, dtype=np.float64)
    i = np.arange(camera.height, dtype=np.float64)
    x = (j + 0.5 - camera.width / 2.0) / f
    y = -(i + 0.5 - camera.height / 2.0) / f
    xx, yy = np.meshgrid(x, y)  # (H, W)
    dirs_cam = np.stack([xx, yy, -np.ones_like(xx)], axis=-1).reshape(-1, 3)
    dirs = dirs_cam @ camera.pose_c2w[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    return origins, dirs


def render(
    volume: RadianceVolume,
    camera: Camera,
    spec: RaySampleSpec,
    chunk: int = DEFAULT_CHUNK,
) -> RenderOutput:
    """Non-gradient render through the selected kernel backend."""
    origins, dirs = generate_rays(camera)
    n = origins.shape[0]
    color = np.empty((n, 3), dtype=np.float32)
    depth = np.empty(n, dtype=np.float32)
    opacity = np.empty(n, dtype=np.float32)
    bmin = np.ascontiguousarray(volume.bounds[0])
    bmax = np.ascontiguousarray(volume.bounds[1])
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        c, d, o = kernels.composite_rays(
            volume.values,
            np.ascontiguousarray(origins[s:e]),
            np.ascontiguousarray(dirs[s:e]),
            bmin,
            bmax,
            camera.near,
            camera.far,
            spec.m,
        )
        color[s:e], depth[s:e], opacity[s:e] = c, d, o
    shape = (camera.height, camera.width)
    return RenderOutput(
        color=color.reshape(*shape, 3),
        depth=depth.reshape(shape),
        opacity=opacity.reshape(shape),
        camera=camera,
    )


def _sample_grid_torch(values: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """Differentiable trilinear gather; same arithmetic as the NumPy kernel."""
    w, h, d = values.shape[:3]
    hi0 = u.new_tensor([w - 2, h - 2, d - 2])
    hi1 = u.new_tensor([w - 1, h - 1, d - 1])
    i0 = torch.clamp(u.floor(), min=u.new_zeros(3), max=hi0)
    f = u - i0
    i0 = i0.long()
    i1 = torch.minimum(i0 + 1, hi1.long())
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    x1, y1, z1 = i1[:, 0], i1[:, 1], i1[:, 2]
    fx, fy, fz = f[:, 0:1], f[:, 1:2], f[:, 2:3]
    c00 = values[x0, y0, z0] * (1 - fx) + values[x1, y0, z0] * fx
    c10 = values[x0, y1, z0] * (1 - fx) + values[x1, y1, z0] * fx
    c01 = values[x0, y0, z1] * (1 - fx) + values[x1, y0, z1] * fx
    c11 = values[x0, y1, z1] * (1 - fx) + values[x1, y1, z1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


def render_rays(
    values: torch.Tensor,
    origins: torch.Tensor,
    dirs: torch.Tensor,
    bounds: np.ndarray,
    near: float,
    far: float,
    m: int,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Differentiable per-ray render: (color (R,3), depth (R,), opacity (R,)).

    `values` is a (W, H, U, 4) tensor; gradients flow into it.
    """
    dims = values.shape[:3]
    bmin = values.new_tensor(np.asarray(bounds[0], dtype=np.float64))
    step = values.new_tensor(
        (np.asarray(bounds[1], dtype=np.float64) - np.asarray(bounds[0], dtype=np.float64))
        / np.array(dims)
    )
    h = (far - near) / m
    t = near + (torch.arange(m, dtype=values.dtype, device=values.device) + 0.5) * h
    pts = origins[:, None, :] + t[None, :, None] * dirs[:, None, :]
    u = (pts.reshape(-1, 3) - bmin) / step - 0.5
    hi = values.new_tensor([d - 1 for d in dims])
    u = torch.minimum(torch.maximum(u, u.new_zeros(3)), hi)
    raw = _sample_grid_torch(values, u).reshape(origins.shape[0], m, 4)

    sigma = F.softplus(raw[:, :, 3])
    rgb = torch.sigmoid(raw[:, :, :3])
    tau = sigma * h
    acc = torch.cumsum(tau, dim=1)
    trans = torch.exp(-torch.cat([acc.new_zeros(acc.shape[0], 1), acc[:, :-1]], dim=1))
    alpha = 1.0 - torch.exp(-tau)
    w = trans * alpha
    color = (w.unsqueeze(-1) * rgb).sum(dim=1)
    trans_final = torch.exp(-acc[:, -1])
    depth = (w * t[None, :]).sum(dim=1) + trans_final * far
    opacity = 1.0 - trans_final
    return color, depth, opacity


def render_image_torch(
    values: torch.Tensor,
    camera: Camera,
    m: int,
    bounds: np.ndarray,
    ray_idx: np.ndarray | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Differentiable full-image (or ray-subset) render for a camera.

    Without ray_idx returns (H, W, 3), (H, W), (H, W); with ray_idx returns
    flat per-ray tensors in that index order.
    """
    origins, dirs = generate_rays(camera)
    if ray_idx is not None:
        origins, dirs = origins[ray_idx], dirs[ray_idx]
    o = torch.as_tensor(origins, dtype=values.dtype, device=values.device)
    d = torch.as_tensor(dirs, dtype=values.dtype, device=values.device)
    color, depth, opacity = render_rays(values, o, d, bounds, camera.near, camera.far, m)
    if ray_idx is not None:
        return color, depth, opacity
    shape = (camera.height, camera.width)
    return color.reshape(*shape, 3), depth.reshape(shape), opacity.reshape(shape)


def render_depth_real(view, resolution: tuple[int, int]) -> np.ndarray:
    """Ground-truth depth for a dataset view, area-averaged to (height, width)."""
    depth = getattr(view, "depth", None)
    if depth is None:
        raise MissingDepthError("view has no stored depth map")
    return resize_area(depth, resolution)


def render_final(stack, volume, camera: Camera, m_samples: int = 128) -> np.ndarray:
    """Render a finest-scale volume at the pre-SR resolution, then lift it.

    Returns an (R, R, 3) float32 image at the stack's final resolution with the
    2D super-resolver applied; the camera is re-targeted to the right sizes.
    """
    import torch

    from singrav.pyramid import super_resolve

    lo_res = stack.schedule.image_res[-1]
    out = render(volume, camera_at_resolution(camera, lo_res), RaySampleSpec(m_samples))
    img = torch.from_numpy(out.color).permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        hi = super_resolve(stack.super_resolver, img)
    return hi[0].permute(1, 2, 0).clamp(0, 1).numpy().astype(np.float32)


def frame_box_camera(bounds, pose_c2w, width: int, height: int, fov_deg: float = 40.0) -> Camera:
    """Camera at an arbitrary pose with near/far chosen to enclose the box."""
    b = np.asarray(bounds, dtype=np.float64)
    pose = np.asarray(pose_c2w, dtype=np.float64).reshape(4, 4)
    center = b.mean(axis=0)
    half_diag = float(np.linalg.norm(b[1] - b[0])) / 2.0
    dist = float(np.linalg.norm(pose[:3, 3] - center))
    near = max(0.05 * half_diag, dist - 1.5 * half_diag)
    far = dist + 1.5 * half_diag
    return Camera(width=width, height=height, pose_c2w=pose, near=near, far=far, fov_deg=fov_deg)


def default_orbit_camera(bounds, res: int = 128, fov_deg: float = 45.0) -> Camera:
    """Deterministic three-quarter view used for previews and animations."""
    b = np.asarray(bounds, dtype=np.float64)
    half_diag = float(np.linalg.norm(b[1] - b[0])) / 2.0
    eye = b.mean(axis=0) + np.array([1.6, 1.2, 1.1]) * half_diag
    pose = look_at_pose(eye, target=b.mean(axis=0))
    return frame_box_camera(b, pose, res, res, fov_deg)


def camera_at_resolution(cam: Camera, res: int) -> Camera:
    """Same viewpoint re-targeted to a square res x res image plane."""
    focal = None
    if cam.fov_deg is None:
        focal = cam.focal * res / cam.height
    return Camera(
        width=res,
        height=res,
        pose_c2w=cam.pose_c2w.copy(),
        near=cam.near,
        far=cam.far,
        fov_deg=cam.fov_deg,
        focal_px=focal,
    )


def sample_count_for_scale(n: int, n_scales: int, base: int = 64, top: int = 128) -> int:
    """Per-scale ray sample count: linear ramp from `base` at scale 1 to `top` at the finest."""
    if n_scales <= 1:
        return top
    frac = (n - 1) / (n_scales - 1)
    return int(round(base + (top - base) * frac))


def write_render(out_dir, stem: str, out: RenderOutput) -> dict:
    """Write color/depth/opacity PNGs; returns the file map with the depth scale."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    color_path = out_dir / f"{stem}_color.png"
    depth_path = out_dir / f"{stem}_depth.png"
    opac_path = out_dir / f"{stem}_opacity.png"
    save_color_png(color_path, out.color)
    scale = depth_scale_for(out.depth)
    save_depth_png(depth_path, out.depth, scale, sidecar=True)
    from PIL import Image

    Image.fromarray(to_uint8(out.opacity)).save(opac_path, format="PNG")
    return {
        "color": str(color_path),
        "depth": str(depth_path),
        "opacity": str(opac_path),
        "depth_scale": scale,
    }


def cross_check_rays(volume: RadianceVolume, origins, dirs, near, far, m):
    """Kernel-path render of explicit rays; used by tests and benchmarks."""
    return kernels.composite_rays(
        volume.values,
        np.ascontiguousarray(np.asarray(origins, dtype=np.float64)),
        np.ascontiguousarray(np.asarray(dirs, dtype=np.float64)),
        np.ascontiguousarray(volume.bounds[0]),
        np.ascontiguousarray(volume.bounds[1]),
        near,
        far,
        m,
    )


__all__ = [
    "Camera",
    "MissingDepthError",
    "RaySampleSpec",
    "RenderOutput",
    "continuous_index",
    "generate_rays",
    "look_at_pose",
    "pose_from_list",
    "render",
    "render_depth_real",
    "render_image_torch",
    "render_rays",
    "sample_count_for_scale",
    "write_render",
]

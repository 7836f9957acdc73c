"""Scene applications: noise-walk animation, box edits with harmonization, mesh export.

Edits operate on the finest raw volume and are pure: the input is never
mutated. Harmonization pushes an edited volume back down the generator cascade
(zero refinement noise by default) so discontinuities introduced by block
copies get smoothed by the learned prior.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from singrav.imageops import save_color_png
from singrav.pyramid import GeneratorStack, NoiseStack, refine
from singrav.renderer import Camera, render_final
from singrav.volume import RadianceVolume, resample_volume, sample_trilinear


@dataclass
class AnimationConfig:
    alpha: float = 0.58  # pull toward the original noise; 1 freezes the scene
    xi: float = 0.45  # momentum carried from the previous step
    steps: int = 10
    start_scale: int = 3  # scales below keep their noise fixed across frames

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError("xi must lie in [0, 1]")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.start_scale < 1:
            raise ValueError("start_scale must be >= 1")


@dataclass
class EditMask:
    """Axis-aligned box in world coordinates, plus the designated empty sample.

    `empty_sample` holds raw (color3, density) values copied into removed
    regions, as sampled from a user-picked air voxel.
    """

    box_min: np.ndarray
    box_max: np.ndarray
    empty_sample: tuple | None = None  # ((r, g, b), sigma) raw values

    def __post_init__(self):
        self.box_min = np.asarray(self.box_min, dtype=np.float64).reshape(3)
        self.box_max = np.asarray(self.box_max, dtype=np.float64).reshape(3)
        if not (self.box_max > self.box_min).all():
            raise ValueError("box max must exceed box min per axis")

    def empty_vector(self) -> np.ndarray:
        if self.empty_sample is None:
            raise ValueError("mask has no empty_sample; pick an air voxel first")
        color, sigma = self.empty_sample
        return np.array([*np.asarray(color, np.float64), float(sigma)], dtype=np.float32)


def empty_sample_at(volume: RadianceVolume, point) -> np.ndarray:
    """Raw 4-vector of the voxel whose center is nearest to a world point."""
    p = np.asarray(point, dtype=np.float64).reshape(3)
    b = volume.bounds
    if (p < b[0] - 1e-9).any() or (p > b[1] + 1e-9).any():
        raise ValueError(f"empty point {p.tolist()} outside volume bounds")
    idx = np.clip(
        np.round((p - b[0]) / volume.voxel_size - 0.5).astype(int),
        0,
        np.asarray(volume.dims) - 1,
    )
    return volume.values[idx[0], idx[1], idx[2]].copy()


def default_empty_sample(volume: RadianceVolume) -> np.ndarray:
    """Raw sample of the least dense voxel; a stand-in when no air voxel was picked."""
    idx = np.unravel_index(int(np.argmin(volume.values[..., 3])), volume.dims)
    return volume.values[idx].copy()


def voxel_region(volume: RadianceVolume, mask: EditMask) -> tuple:
    """Index ranges (lo, hi exclusive) of voxel centers inside the mask box.

    The box must sit within the volume bounds; a box thinner than one voxel
    yields an empty region, which is legal.
    """
    b = volume.bounds
    if (mask.box_min < b[0] - 1e-9).any() or (mask.box_max > b[1] + 1e-9).any():
        raise ValueError(
            f"box [{mask.box_min}, {mask.box_max}] outside volume bounds {b.tolist()}"
        )
    step = volume.voxel_size
    lo = np.ceil((mask.box_min - b[0]) / step - 0.5).astype(int)
    hi = np.floor((mask.box_max - b[0]) / step - 0.5).astype(int) + 1
    lo = np.clip(lo, 0, volume.dims)
    hi = np.clip(hi, 0, volume.dims)
    return lo, np.maximum(hi, lo)


def _region_slices(lo, hi):
    return tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))


def edit_remove(volume: RadianceVolume, mask: EditMask) -> RadianceVolume:
    """Fill the masked region with the designated empty sample; pure."""
    empty = mask.empty_vector()
    lo, hi = voxel_region(volume, mask)
    out = volume.values.copy()
    out[_region_slices(lo, hi)] = empty
    return RadianceVolume(out, volume.bounds.copy())


def edit_duplicate(
    volume: RadianceVolume,
    src: EditMask,
    dst: EditMask,
    source_volume: RadianceVolume | None = None,
) -> RadianceVolume:
    """Copy the source region's voxels into a congruent destination region.

    With `source_volume` given the block is read from there (cross-scene
    composition); regions must round to identical voxel extents.
    """
    src_vol = source_volume if source_volume is not None else volume
    slo, shi = voxel_region(src_vol, src)
    dlo, dhi = voxel_region(volume, dst)
    if tuple(shi - slo) != tuple(dhi - dlo):
        raise ValueError(
            f"source extent {tuple(shi - slo)} does not match destination {tuple(dhi - dlo)}"
        )
    out = volume.values.copy()
    out[_region_slices(dlo, dhi)] = src_vol.values[_region_slices(slo, shi)]
    return RadianceVolume(out, volume.bounds.copy())


def edit_move(volume: RadianceVolume, src: EditMask, dst: EditMask) -> RadianceVolume:
    """Duplicate then remove: the source region is left holding the empty sample."""
    return edit_remove(edit_duplicate(volume, src, dst), src)


def compose(sources, target: RadianceVolume, dst_masks) -> RadianceVolume:
    """Inject k source regions into a target scene; overlaps are last-writer-wins.

    `sources` is a list of (volume, src_mask) pairs aligned with `dst_masks`.
    """
    if len(sources) != len(dst_masks):
        raise ValueError(f"{len(sources)} sources but {len(dst_masks)} destinations")
    out = target.copy()
    for (vol, src), dst in zip(sources, dst_masks):
        out = edit_duplicate(out, src, dst, source_volume=vol)
    return out


def harmonize(
    volume: RadianceVolume,
    stack: GeneratorStack,
    fresh_noise: bool = False,
    seed: int = 0,
) -> RadianceVolume:
    """Downscale an edited finest volume to scale 3 and regenerate upward.

    Refinement runs with zero noise for determinism (fresh_noise opts into
    sampled noise instead). Needs a pyramid of at least 4 scales.
    """
    n = stack.config.n_scales
    if n < 4:
        raise ValueError("harmonization needs at least 4 scales")
    small = resample_volume(volume, stack.schedule.volume_dims(3))
    v = torch.from_numpy(small.values)
    rng = np.random.default_rng(seed)
    was_training = [g.training for g in stack.generators]
    for g in stack.generators:
        g.eval()
    with torch.no_grad():
        for s in range(4, n):
            dims = stack.schedule.volume_dims(s)
            if fresh_noise:
                z = rng.standard_normal((*dims, 4)).astype(np.float32)
            else:
                z = np.zeros((*dims, 4), dtype=np.float32)
            v = refine(stack.generators[s - 1], v, z)
    for g, w in zip(stack.generators, was_training):
        g.train(w)
    return RadianceVolume(np.ascontiguousarray(v.numpy(), dtype=np.float32), volume.bounds.copy())


def animate_noise(base: NoiseStack, config: AnimationConfig, seed: int = 0) -> list:
    """Momentum random walk over the noise stack; returns `steps` stacks.

    Scales below start_scale are held fixed so the coarse layout persists. The
    first returned stack is the base itself; the walk seeds its momentum with
    z(0) := z(1).
    """
    if config.start_scale > len(base.z) and config.steps > 1 and config.alpha < 1.0:
        # nothing would ever change; likely a config mistake on a shallow stack
        raise ValueError(
            f"start_scale {config.start_scale} exceeds the {len(base.z)} noise scales"
        )
    rng = np.random.default_rng(seed)
    z1 = [z.copy() for z in base.z]
    prev_prev = [z.copy() for z in z1]  # z(0) := z(1)
    prev = [z.copy() for z in z1]
    out = [NoiseStack([z.copy() for z in z1], seed=base.seed)]
    a, xi = config.alpha, config.xi
    for _ in range(1, config.steps):
        nxt = []
        for idx, z_first in enumerate(z1):
            scale = idx + 1
            if scale < config.start_scale:
                nxt.append(prev[idx].copy())
                continue
            mu = rng.standard_normal(z_first.shape).astype(np.float32)
            delta = xi * (prev[idx] - prev_prev[idx]) + (1.0 - xi) * mu
            nxt.append((a * z_first + (1.0 - a) * (prev[idx] + delta)).astype(np.float32))
        out.append(NoiseStack([z.copy() for z in nxt], seed=None))
        prev_prev, prev = prev, nxt
    return out


def animate(
    stack: GeneratorStack,
    base: NoiseStack,
    config: AnimationConfig,
    camera: Camera,
    seed: int = 0,
    m_samples: int = 128,
    out_dir=None,
) -> list:
    """Render one frame per walk step from a fixed camera; optionally write PNGs."""
    frames = []
    for noise in animate_noise(base, config, seed):
        vol, _ = stack.sample_scene(noise=noise)
        frames.append(render_final(stack, vol, camera, m_samples))
    if out_dir is not None:
        save_animation(out_dir, frames, config=config, seed=seed)
    return frames


def save_animation(out_dir, frames, config: AnimationConfig | None = None, seed=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(frames):
        name = f"frame_{i:04d}.png"
        save_color_png(out / name, frame)
        names.append(name)
    index = {"frames": names, "seed": seed}
    if config is not None:
        index["config"] = {
            "alpha": config.alpha,
            "xi": config.xi,
            "steps": config.steps,
            "start_scale": config.start_scale,
        }
    (out / "animation.json").write_text(json.dumps(index, indent=2))
    return index


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) world coordinates
    faces: np.ndarray  # (F, 3) vertex indices
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.float32))

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])


def export_mesh(volume: RadianceVolume, density_threshold: float = 0.5) -> TriangleMesh:
    """Marching-cubes surface of the activated density field.

    The level set runs on softplus(raw density) scaled by the voxel size, so
    the default threshold is resolution-independent; vertex colors are the
    activated trilinear color at each vertex.
    """
    if density_threshold <= 0:
        raise ValueError("density_threshold must be positive")
    from skimage import measure

    sigma = np.logaddexp(0.0, volume.values[..., 3].astype(np.float64))
    field_vals = sigma * float(np.mean(volume.voxel_size))
    if field_vals.min() >= density_threshold or field_vals.max() <= density_threshold:
        return TriangleMesh(
            np.zeros((0, 3), np.float32), np.zeros((0, 3), np.int32)
        )
    verts, faces, _, _ = measure.marching_cubes(field_vals, level=density_threshold)
    world = volume.bounds[0] + (verts + 0.5) * volume.voxel_size
    raw = sample_trilinear(volume, world)
    colors = 1.0 / (1.0 + np.exp(-raw[:, :3].astype(np.float64)))
    return TriangleMesh(
        world.astype(np.float32), faces.astype(np.int32), colors.astype(np.float32)
    )


def mesh_stl_bytes(mesh: TriangleMesh) -> bytes:
    """Binary STL (colorless; STL has no vertex color channel)."""
    tris = mesh.vertices[mesh.faces]  # (F, 3, 3)
    a = tris[:, 1] - tris[:, 0]
    b = tris[:, 2] - tris[:, 0]
    normals = np.cross(a, b)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.where(lengths > 1e-12, normals / np.maximum(lengths, 1e-12), 0.0)
    parts = [b"\0" * 80, struct.pack("<I", mesh.n_faces)]
    for i in range(mesh.n_faces):
        parts.append(np.asarray(normals[i], np.float32).tobytes())
        parts.append(np.asarray(tris[i], np.float32).tobytes())
        parts.append(struct.pack("<H", 0))
    return b"".join(parts)


def save_mesh_stl(path, mesh: TriangleMesh) -> None:
    Path(path).write_bytes(mesh_stl_bytes(mesh))


def save_mesh_obj(path, mesh: TriangleMesh) -> None:
    """OBJ with per-vertex colors appended to each `v` line (widely supported)."""
    lines = []
    has_colors = mesh.colors.shape[0] == mesh.vertices.shape[0]
    for i, v in enumerate(mesh.vertices):
        if has_colors:
            c = mesh.colors[i]
            lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f} {c[0]:.4f} {c[1]:.4f} {c[2]:.4f}")
        else:
            lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh_stl(path) -> TriangleMesh:
    """Read back a binary STL (used for round-trip checks)."""
    raw = Path(path).read_bytes()
    count = struct.unpack_from("<I", raw, 80)[0]
    verts = np.zeros((count * 3, 3), np.float32)
    faces = np.arange(count * 3, dtype=np.int32).reshape(count, 3)
    off = 84
    for i in range(count):
        tri = np.frombuffer(raw, dtype="<f4", count=12, offset=off)
        verts[i * 3 : i * 3 + 3] = tri[3:].reshape(3, 3)
        off += 50
    return TriangleMesh(verts, faces)

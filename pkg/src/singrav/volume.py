"""Discrete radiance volumes: trilinear fields, coordinate grids, resampling, SGRV1 i/o."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_BOUNDS = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]], dtype=np.float64)

SGRV1_MAGIC = "SGRV1"


def round_half_away(x):
    """Round to nearest integer, halves away from zero (the 40 * 4/3 schedule depends on this)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.floor(np.abs(x) + 0.5)
    if out.ndim == 0:
        return int(out)
    return out.astype(np.int64)


@dataclass
class RadianceVolume:
    """A dense W*H*U grid of raw 4-channel voxels (r, g, b, density).

    Values are stored pre-activation; the renderer applies softplus to the
    density channel and sigmoid to the color channels at sample time.
    Trilinear interpolation between voxel centers defines a continuous field
    over the axis-aligned `bounds` box; queries outside clamp to the boundary.
    """

    values: np.ndarray  # (W, H, U, 4) float32
    bounds: np.ndarray = field(default_factory=lambda: DEFAULT_BOUNDS.copy())

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 4 or self.values.shape[3] != 4:
            raise ValueError(f"expected (W, H, U, 4) values, got {self.values.shape}")
        if min(self.values.shape[:3]) < 2:
            raise ValueError(f"all dims must be >= 2, got {self.values.shape[:3]}")
        if not np.isfinite(self.values).all():
            raise ValueError("volume values must be finite")
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(2, 3)
        if not (self.bounds[1] > self.bounds[0]).all():
            raise ValueError("bounds max must exceed bounds min per axis")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape[:3]

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.bounds[1] - self.bounds[0]) / np.array(self.dims, dtype=np.float64)

    def copy(self) -> "RadianceVolume":
        return RadianceVolume(self.values.copy(), self.bounds.copy())

    def voxel_centers_1d(self, axis: int) -> np.ndarray:
        """World coordinates of voxel centers along one axis."""
        d = self.dims[axis]
        step = (self.bounds[1, axis] - self.bounds[0, axis]) / d
        return self.bounds[0, axis] + (np.arange(d) + 0.5) * step


@dataclass
class CsgGrid:
    """Per-voxel normalized coordinates 2*(i/dim - 1/2) in [-1, 1), 3 channels."""

    values: np.ndarray  # (W, H, U, 3) float32

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape[:3]


def make_csg_grid(dims) -> CsgGrid:
    """Build the normalized coordinate grid used as the coarsest-scale spatial anchor.

    Entry (x, y, z) is exactly 2*[x/W - 1/2, y/H - 1/2, z/U - 1/2] over voxel
    indices, giving per-axis range [-1, 1 - 2/dim].
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    ax = [2.0 * (np.arange(d, dtype=np.float64) / d - 0.5) for d in dims]
    grid = np.stack(np.meshgrid(ax[0], ax[1], ax[2], indexing="ij"), axis=-1)
    return CsgGrid(grid.astype(np.float32))


def continuous_index(points, bounds, dims) -> np.ndarray:
    """Map world points to continuous voxel-center index coordinates, clamped to the grid."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dims = np.asarray(dims, dtype=np.float64)
    step = (np.asarray(bounds)[1] - np.asarray(bounds)[0]) / dims
    u = (points - np.asarray(bounds)[0]) / step - 0.5
    return np.clip(u, 0.0, dims - 1.0)


def sample_trilinear(volume: RadianceVolume, points) -> np.ndarray:
    """Evaluate the continuous field at world-space points.

    Returns an (N, 4) float32 array of raw channel values. Points outside the
    bounds clamp to the boundary value.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        return np.zeros((0, 4), dtype=np.float32)
    from singrav import kernels

    u = continuous_index(points, volume.bounds, volume.dims)
    return kernels.sample_grid(volume.values, u)


def resample_volume(volume: RadianceVolume, dims) -> RadianceVolume:
    """Trilinearly resample to explicit target dims; bounds are unchanged."""
    dims = tuple(int(d) for d in dims)
    if min(dims) < 2:
        raise ValueError(f"target dims must be >= 2, got {dims}")
    if dims == volume.dims:
        return RadianceVolume(volume.values.copy(), volume.bounds.copy())
    axes = [
        volume.bounds[0, a]
        + (np.arange(dims[a]) + 0.5) * (volume.bounds[1, a] - volume.bounds[0, a]) / dims[a]
        for a in range(3)
    ]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = sample_trilinear(volume, pts).reshape(*dims, 4)
    return RadianceVolume(vals, volume.bounds.copy())


def upsample_volume(volume: RadianceVolume, factor: float) -> RadianceVolume:
    """Resample by a per-axis scale factor; target dims = round(dims * factor)."""
    if not np.isfinite(factor) or factor <= 0:
        raise ValueError(f"factor must be positive, got {factor}")
    dims = tuple(int(round_half_away(d * factor)) for d in volume.dims)
    return resample_volume(volume, dims)


def sgrv_bytes(volume: RadianceVolume) -> bytes:
    """Serialize to the SGRV1 container: u32 length + UTF-8 JSON header + f32le payload."""
    header = {
        "magic": SGRV1_MAGIC,
        "dims": list(volume.dims),
        "channels": 4,
        "bounds": volume.bounds.tolist(),
        "dtype": "f32le",
        "order": "xyz-major, channel-last",
    }
    blob = json.dumps(header).encode("utf-8")
    return len(blob).to_bytes(4, "little") + blob + volume.values.astype("<f4").tobytes()


def write_sgrv(path, volume: RadianceVolume) -> None:
    with open(path, "wb") as fh:
        fh.write(sgrv_bytes(volume))


def read_sgrv(source) -> RadianceVolume:
    """Read an SGRV1 file path or bytes back into a RadianceVolume."""
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    if len(data) < 4:
        raise ValueError("truncated SGRV1 container")
    hlen = int.from_bytes(data[:4], "little")
    header = json.loads(data[4 : 4 + hlen].decode("utf-8"))
    if header.get("magic") != SGRV1_MAGIC:
        raise ValueError(f"bad magic {header.get('magic')!r}")
    dims = tuple(header["dims"])
    n = dims[0] * dims[1] * dims[2] * header["channels"]
    payload = np.frombuffer(data[4 + hlen :], dtype="<f4", count=n)
    values = payload.reshape(*dims, header["channels"]).copy()
    return RadianceVolume(values, np.asarray(header["bounds"], dtype=np.float64))

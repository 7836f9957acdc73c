"""Multi-scale generator pyramid: schedule, networks, forward cascade, checkpoints.

Scales 1..N-1 hold 3D residual generators operating on radiance volumes; scale
N is a 2D super-resolver on rendered images. The coarsest generator receives
noise fused with a normalized coordinate grid; every later scale refines a
trilinear upsample of its predecessor with 4-channel noise.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from singrav.volume import DEFAULT_BOUNDS, RadianceVolume, make_csg_grid, round_half_away


@dataclass
class PyramidConfig:
    n_scales: int = 6
    theta: float = 4.0 / 3.0
    mu_r: float = 1.5
    mu_s: float = 2.0
    base_volume_res: int = 40
    base_image_res: int = 32
    layers: int = 5
    hidden_channels: int = 32
    # pre-super-resolution image sizes are clamped here; the default keeps the
    # finest render at 160 instead of the raw growth value 162
    image_res_cap: int | None = 160
    volume_res_overrides: dict = field(default_factory=dict)
    image_res_overrides: dict = field(default_factory=dict)
    norm_3d: str = "batch"
    seed: int = 0

    def __post_init__(self):
        if self.n_scales < 2:
            raise ValueError("need at least 2 scales")
        if min(self.theta, self.mu_r, self.mu_s) <= 1.0:
            raise ValueError("growth factors must exceed 1")
        if self.layers < 3:
            raise ValueError("networks need at least 3 conv layers")
        if self.norm_3d not in ("batch", "instance"):
            raise ValueError(f"unknown norm {self.norm_3d!r}")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["volume_res_overrides"] = {str(k): v for k, v in self.volume_res_overrides.items()}
        d["image_res_overrides"] = {str(k): v for k, v in self.image_res_overrides.items()}
        return d

    @staticmethod
    def from_json(d: dict) -> "PyramidConfig":
        d = dict(d)
        d["volume_res_overrides"] = {int(k): v for k, v in d.get("volume_res_overrides", {}).items()}
        d["image_res_overrides"] = {int(k): v for k, v in d.get("image_res_overrides", {}).items()}
        return PyramidConfig(**d)


@dataclass(frozen=True)
class Schedule:
    volume_res: tuple  # scales 1..N-1
    image_res: tuple  # render resolutions, scales 1..N-1
    final_image_res: int  # after the 2D super-resolver

    @property
    def n_scales(self) -> int:
        return len(self.volume_res) + 1

    def volume_dims(self, scale: int) -> tuple:
        r = self.volume_res[scale - 1]
        return (r, r, r)

    def pairs(self) -> list:
        out = [(v, i) for v, i in zip(self.volume_res, self.image_res)]
        out.append((None, self.final_image_res))
        return out


def scale_schedule(config: PyramidConfig) -> Schedule:
    """Resolve per-scale volume and image resolutions.

    res_n = round(base * factor^(n-1)) with half-away-from-zero rounding;
    image entries are clamped to image_res_cap, and explicit per-scale
    overrides win over both.
    """
    vols, imgs = [], []
    for n in range(1, config.n_scales):
        v = int(round_half_away(config.base_volume_res * config.theta ** (n - 1)))
        i = int(round_half_away(config.base_image_res * config.mu_r ** (n - 1)))
        if config.image_res_cap is not None:
            i = min(i, config.image_res_cap)
        vols.append(config.volume_res_overrides.get(n, v))
        imgs.append(config.image_res_overrides.get(n, i))
    final = int(round_half_away(imgs[-1] * config.mu_s))
    return Schedule(tuple(vols), tuple(imgs), final)


def derive_seed(base: int, *parts) -> int:
    """Stable 63-bit stream seed for (base, parts); keeps per-scale RNG independent."""
    text = "|".join([str(base), *map(str, parts)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def _norm3d(kind: str, ch: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm3d(ch)
    return nn.InstanceNorm3d(ch, affine=True)


class Generator3d(nn.Module):
    """L-layer 3D conv net, kernel 3 stride 1 pad 1, hidden width 32, 4-channel output."""

    def __init__(self, in_channels: int, hidden: int = 32, layers: int = 5, norm: str = "batch"):
        super().__init__()
        self.in_channels = in_channels
        seq = []
        ch = in_channels
        for _ in range(layers - 1):
            seq += [nn.Conv3d(ch, hidden, 3, 1, 1), _norm3d(norm, hidden), nn.LeakyReLU(0.2, True)]
            ch = hidden
        seq.append(nn.Conv3d(ch, 4, 3, 1, 1))
        self.net = nn.Sequential(*seq)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class SuperResolver2d(nn.Module):
    """2D upsampler: bilinear x mu_s, then convs 3-32-16-8-8-3 with instance norm.

    The residual connection adds the upsampled input, so zeroing the final
    conv reduces the module to plain bilinear upsampling.
    """

    def __init__(self, mu_s: float = 2.0):
        super().__init__()
        self.mu_s = float(mu_s)
        self.up = nn.Upsample(scale_factor=self.mu_s, mode="bilinear", align_corners=False)

        def block(ci, co):
            return [nn.Conv2d(ci, co, 3, 1, 1), nn.InstanceNorm2d(co, affine=True), nn.LeakyReLU(0.2, True)]

        self.net = nn.Sequential(
            *block(3, 32), *block(32, 16), *block(16, 8), *block(8, 8), nn.Conv2d(8, 3, 3, 1, 1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        up = self.up(x)
        return up + self.net(up)


class PatchDiscriminator2d(nn.Module):
    """L-layer 2D conv critic, kernel 3 stride 1 pad 0, width 32, 1-channel patch map."""

    def __init__(self, in_channels: int, hidden: int = 32, layers: int = 5):
        super().__init__()
        self.in_channels = in_channels
        seq = []
        ch = in_channels
        for _ in range(layers - 1):
            seq += [nn.Conv2d(ch, hidden, 3, 1, 0), nn.LeakyReLU(0.2, True)]
            ch = hidden
        seq.append(nn.Conv2d(ch, 1, 3, 1, 0))
        self.net = nn.Sequential(*seq)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def init_weights(module: nn.Module, seed: int) -> None:
    """Normal(0, 0.02) conv init, Normal(1, 0.02) affine-norm gain, zero biases."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d)):
            m.weight.data.normal_(0.0, 0.02, generator=gen)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, (nn.BatchNorm3d, nn.InstanceNorm2d, nn.InstanceNorm3d)):
            if m.affine:
                m.weight.data.normal_(1.0, 0.02, generator=gen)
                m.bias.data.zero_()


def build_generator(scale: int, config: PyramidConfig) -> nn.Module:
    """Scale 1..N-1 gives a 3D generator (input 3ch at scale 1, 4ch after); N the 2D resolver."""
    if scale < 1 or scale > config.n_scales:
        raise ValueError(f"scale {scale} outside 1..{config.n_scales}")
    if scale == config.n_scales:
        return SuperResolver2d(config.mu_s)
    in_ch = 3 if scale == 1 else 4
    return Generator3d(in_ch, config.hidden_channels, config.layers, config.norm_3d)


def build_discriminator(scale: int, config: PyramidConfig) -> PatchDiscriminator2d:
    """Color+depth critic (4ch) below the finest scale; paired-image critic (6ch) at it."""
    if scale < 1 or scale > config.n_scales:
        raise ValueError(f"scale {scale} outside 1..{config.n_scales}")
    in_ch = 6 if scale == config.n_scales else 4
    return PatchDiscriminator2d(in_ch, config.hidden_channels, config.layers)


def volume_to_tensor(values, dtype=torch.float32) -> torch.Tensor:
    """(W, H, U, C) array to a (1, C, W, H, U) conv tensor."""
    t = torch.as_tensor(np.asarray(values), dtype=dtype)
    return t.permute(3, 0, 1, 2).unsqueeze(0)


def tensor_to_values(t: torch.Tensor) -> torch.Tensor:
    """(1, C, W, H, U) conv tensor back to (W, H, U, C)."""
    return t.squeeze(0).permute(1, 2, 3, 0)


def resample_volume_torch(values: torch.Tensor, dims) -> torch.Tensor:
    """Differentiable trilinear resample of a (W, H, U, C) tensor to target dims.

    Matches the NumPy resampler: samples at target voxel centers, clamped.
    """
    from singrav.renderer import _sample_grid_torch

    src = values.shape[:3]
    if tuple(dims) == tuple(src):
        return values
    axes = [
        (torch.arange(dims[a], dtype=values.dtype, device=values.device) + 0.5)
        * (src[a] / dims[a])
        - 0.5
        for a in range(3)
    ]
    grid = torch.stack(torch.meshgrid(*axes, indexing="ij"), dim=-1).reshape(-1, 3)
    hi = values.new_tensor([s - 1.0 for s in src])
    grid = torch.minimum(torch.maximum(grid, grid.new_zeros(3)), hi)
    out = _sample_grid_torch(values, grid)
    return out.reshape(*dims, values.shape[3])


@dataclass
class NoiseStack:
    """Per-scale noise volumes: z_1 is 3-channel (fused with the coordinate grid), later 4-channel."""

    z: list
    seed: int | None = None

    @staticmethod
    def sample(schedule: Schedule, seed: int) -> "NoiseStack":
        rng = np.random.default_rng(seed)
        z = []
        for n in range(1, schedule.n_scales):
            ch = 3 if n == 1 else 4
            z.append(rng.standard_normal((*schedule.volume_dims(n), ch)).astype(np.float32))
        return NoiseStack(z, seed=seed)

    @staticmethod
    def fixed(schedule: Schedule, z1: np.ndarray) -> "NoiseStack":
        """Reconstruction noise: the persisted z*_1 at scale 1, zeros afterwards."""
        z = [np.asarray(z1, dtype=np.float32)]
        for n in range(2, schedule.n_scales):
            z.append(np.zeros((*schedule.volume_dims(n), 4), dtype=np.float32))
        return NoiseStack(z, seed=None)

    def upto(self, scale: int) -> "NoiseStack":
        return NoiseStack(self.z[:scale], seed=self.seed)


def generate_coarsest(g1: Generator3d, z1, csg) -> torch.Tensor:
    """Scale-1 volume tensor (W, H, U, 4) from noise fused additively with the grid."""
    z1_t = torch.as_tensor(np.asarray(z1), dtype=torch.float32) if not torch.is_tensor(z1) else z1
    csg_vals = csg.values if hasattr(csg, "values") else csg
    csg_t = (
        torch.as_tensor(np.asarray(csg_vals), dtype=z1_t.dtype)
        if not torch.is_tensor(csg_vals)
        else csg_vals
    )
    if z1_t.shape != csg_t.shape:
        raise ValueError(f"noise shape {tuple(z1_t.shape)} != grid shape {tuple(csg_t.shape)}")
    x = (z1_t + csg_t).permute(3, 0, 1, 2).unsqueeze(0)
    return tensor_to_values(g1(x))


def refine(gn: Generator3d, prev: torch.Tensor, zn) -> torch.Tensor:
    """One residual refinement step: up(prev) + G_n(z_n + up(prev)).

    Target dims come from the noise volume; prev is a (W, H, U, 4) tensor.
    """
    zn_t = torch.as_tensor(np.asarray(zn), dtype=prev.dtype) if not torch.is_tensor(zn) else zn
    if zn_t.shape[-1] != 4:
        raise ValueError("refinement noise must have 4 channels")
    up = resample_volume_torch(prev, zn_t.shape[:3])
    x = (zn_t + up).permute(3, 0, 1, 2).unsqueeze(0)
    return up + tensor_to_values(gn(x))


def super_resolve(gn: SuperResolver2d, image: torch.Tensor, expected_side: int | None = None):
    """Lift a (B, 3, H, W) render to mu_s times the resolution."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if expected_side is not None and image.shape[-1] != expected_side:
        raise ValueError(f"expected {expected_side}px input, got {image.shape[-1]}")
    return gn(image)


class GeneratorStack:
    """Trained (or initializing) pyramid: 3D generators, the 2D resolver, freeze flags."""

    def __init__(self, config: PyramidConfig, generators=None, super_resolver=None):
        self.config = config
        self.schedule = scale_schedule(config)
        n = config.n_scales
        if generators is None:
            generators = []
            for s in range(1, n):
                g = build_generator(s, config)
                init_weights(g, derive_seed(config.seed, "gen", s))
                generators.append(g)
        if super_resolver is None:
            super_resolver = build_generator(n, config)
            init_weights(super_resolver, derive_seed(config.seed, "gen", n))
        self.generators = generators
        self.super_resolver = super_resolver
        self.frozen = [False] * n
        self.z_star1: np.ndarray | None = None
        self.csg = make_csg_grid(self.schedule.volume_dims(1))
        self.bounds = DEFAULT_BOUNDS.copy()

    def ensure_z_star(self) -> np.ndarray:
        if self.z_star1 is None:
            rng = np.random.default_rng(derive_seed(self.config.seed, "zstar"))
            self.z_star1 = rng.standard_normal((*self.schedule.volume_dims(1), 3)).astype(
                np.float32
            )
        return self.z_star1

    def fixed_noise(self) -> NoiseStack:
        return NoiseStack.fixed(self.schedule, self.ensure_z_star())

    def volume_tensor(self, noise: NoiseStack, upto: int | None = None, train_scale=None):
        """Run the cascade to scale `upto`; earlier scales run without autograd when training."""
        upto = upto or min(len(noise.z), len(self.generators))
        if upto > len(noise.z):
            raise ValueError(f"noise stack has {len(noise.z)} scales, need {upto}")
        v = None
        for n in range(1, upto + 1):
            g = self.generators[n - 1]
            grad = train_scale is None or n >= train_scale
            with nullcontext() if grad else torch.no_grad():
                v = generate_coarsest(g, noise.z[0], self.csg) if n == 1 else refine(g, v, noise.z[n - 1])
            if not grad:
                v = v.detach()
        return v

    def sample_scene(self, seed: int | None = None, noise: NoiseStack | None = None):
        """Full cascade through scale N-1; returns (RadianceVolume, noise used)."""
        if noise is None:
            noise = NoiseStack.sample(self.schedule, seed if seed is not None else 0)
        was_training = [g.training for g in self.generators]
        for g in self.generators:
            g.eval()
        with torch.no_grad():
            v = self.volume_tensor(noise)
        for g, w in zip(self.generators, was_training):
            g.train(w)
        vol = RadianceVolume(
            np.ascontiguousarray(v.numpy(), dtype=np.float32), self.bounds.copy()
        )
        return vol, noise

    def reconstruction_volume(self) -> RadianceVolume:
        vol, _ = self.sample_scene(noise=self.fixed_noise())
        return vol


def save_stack(out_dir, stack: GeneratorStack, extras: dict | None = None) -> None:
    """Checkpoint layout: pyramid.json index, one directory per scale with weights + config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = stack.config.n_scales
    index = {
        "config": stack.config.to_json(),
        "schedule": {
            "volume_res": list(stack.schedule.volume_res),
            "image_res": list(stack.schedule.image_res),
            "final_image_res": stack.schedule.final_image_res,
        },
        "scales": [f"scale_{s}" for s in range(1, n + 1)],
        "bounds": np.asarray(stack.bounds, dtype=np.float64).tolist(),
        "extras": extras or {},
    }
    (out / "pyramid.json").write_text(json.dumps(index, indent=2))
    for s in range(1, n + 1):
        sdir = out / f"scale_{s}"
        sdir.mkdir(exist_ok=True)
        net = stack.super_resolver if s == n else stack.generators[s - 1]
        torch.save(net.state_dict(), sdir / "weights.pt")
        meta = {
            "scale": s,
            "kind": "sr2d" if s == n else "gen3d",
            "in_channels": getattr(net, "in_channels", 3),
            "layers": stack.config.layers,
            "hidden_channels": stack.config.hidden_channels,
            "norm": stack.config.norm_3d,
            "frozen": stack.frozen[s - 1],
            "seed": derive_seed(stack.config.seed, "gen", s),
        }
        if s < n:
            meta["volume_res"] = stack.schedule.volume_res[s - 1]
        meta["image_res"] = (
            stack.schedule.final_image_res if s == n else stack.schedule.image_res[s - 1]
        )
        (sdir / "scale_config.json").write_text(json.dumps(meta, indent=2))
    if stack.z_star1 is not None:
        np.save(out / "scale_1" / "zstar.npy", stack.z_star1)


def load_stack(in_dir) -> GeneratorStack:
    root = Path(in_dir)
    index = json.loads((root / "pyramid.json").read_text())
    config = PyramidConfig.from_json(index["config"])
    stack = GeneratorStack(config)
    n = config.n_scales
    for s in range(1, n + 1):
        sdir = root / f"scale_{s}"
        state = torch.load(sdir / "weights.pt", map_location="cpu", weights_only=True)
        net = stack.super_resolver if s == n else stack.generators[s - 1]
        net.load_state_dict(state)
        meta = json.loads((sdir / "scale_config.json").read_text())
        stack.frozen[s - 1] = bool(meta.get("frozen", False))
    if "bounds" in index:
        stack.bounds = np.asarray(index["bounds"], dtype=np.float64)
    zstar = root / "scale_1" / "zstar.npy"
    if zstar.exists():
        stack.z_star1 = np.load(zstar)
    return stack

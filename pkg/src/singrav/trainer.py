"""Sequential coarse-to-fine training of the generator pyramid.

Each scale runs a reconstruction-only warmup followed by alternating critic
and generator steps (WGAN-GP plus the fixed-noise reconstruction term, and the
texture term at the finest scale). Earlier scales are frozen; their weights
warm-start the next scale where shapes match. All randomness flows through
per-scale derived seeds so a resumed run replays the same stream.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from singrav.dataio import MultiViewDataset, ObservationPyramid, build_pyramid
from singrav.losses import (
    LossWeights,
    SwdConfig,
    adversarial_losses,
    build_disc_input,
    normalize_depth,
    reconstruction_loss,
    swd_loss,
)
from singrav.pyramid import (
    GeneratorStack,
    NoiseStack,
    PatchDiscriminator2d,
    build_discriminator,
    derive_seed,
    load_stack,
    save_stack,
    super_resolve,
)
from singrav.renderer import (
    Camera,
    camera_at_resolution,
    render_image_torch,
    sample_count_for_scale,
)

METRIC_FIELDS = ("step", "scale", "d_loss", "g_loss", "rec_loss", "swd_loss", "wall_time")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs_per_scale: int = 80
    recon_only_epochs: int = 20
    d_steps: int = 3
    g_steps: int = 3
    lr: float = 5e-4
    betas: tuple = (0.9, 0.999)
    adv_batch: list = field(default_factory=lambda: [6, 6, 6, 5, 2, 2])
    recon_batch: list = field(default_factory=lambda: [2, 2, 2, 1, 1, 1])
    sample_base: int = 64
    sample_top: int = 128
    seed: int = 0
    full_image_side: int = 64  # above this, render random crops per step
    crop_side: int = 64
    use_depth: bool = True
    self_depth: bool = False
    early_stop_recon_mse: float | None = None
    loss: LossWeights = field(default_factory=LossWeights)
    swd: SwdConfig = field(default_factory=SwdConfig)

    def __post_init__(self):
        if self.recon_only_epochs > self.epochs_per_scale:
            raise ValueError("recon_only_epochs cannot exceed epochs_per_scale")
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        if isinstance(self.swd, dict):
            self.swd = SwdConfig(**self.swd)
        if isinstance(self.betas, list):
            self.betas = tuple(self.betas)

    def batch_for(self, kind: str, scale: int, n_scales: int) -> int:
        lst = self.adv_batch if kind == "adv" else self.recon_batch
        if len(lst) < n_scales:
            raise ValueError(f"{kind} batch list has {len(lst)} entries for {n_scales} scales")
        return int(lst[scale - 1])

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        d["swd"]["layers"] = list(self.swd.layers)
        return d

    @staticmethod
    def from_json(d: dict) -> "TrainConfig":
        d = dict(d)
        if "swd" in d and isinstance(d["swd"], dict):
            sw = dict(d["swd"])
            if "layers" in sw:
                sw["layers"] = tuple(sw["layers"])
            d["swd"] = sw
        return TrainConfig(**d)


class MetricsLog:
    def __init__(self, csv_path=None):
        self.rows = []
        self.path = Path(csv_path) if csv_path else None
        if self.path and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRIC_FIELDS)

    def add(self, **row):
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([row.get(k, "") for k in METRIC_FIELDS])


_cam_at = camera_at_resolution


def _crop_indices(res: int, side: int, rng) -> tuple:
    """(flat ray indices, (row0, col0)) for a random aligned side x side crop."""
    r0 = int(rng.integers(0, res - side + 1))
    c0 = int(rng.integers(0, res - side + 1))
    rows = np.arange(r0, r0 + side)
    cols = np.arange(c0, c0 + side)
    idx = (rows[:, None] * res + cols[None, :]).ravel()
    return idx, (r0, c0)


def warm_start(dst: torch.nn.Module, src_state: dict) -> list:
    """Copy same-name same-shape tensors; report what stayed randomly initialized."""
    own = dst.state_dict()
    skipped = []
    for k, v in own.items():
        if k in src_state and src_state[k].shape == v.shape:
            own[k] = src_state[k].clone()
        else:
            skipped.append(k)
    dst.load_state_dict(own)
    return skipped


def freeze_scale(stack: GeneratorStack, n: int) -> None:
    """Disable gradients for scale n and mark it frozen; idempotent."""
    net = stack.super_resolver if n == stack.config.n_scales else stack.generators[n - 1]
    for p in net.parameters():
        p.requires_grad_(False)
    net.eval()
    stack.frozen[n - 1] = True


def _scene_range(dataset: MultiViewDataset) -> tuple:
    near = min(v.camera.near for v in dataset.views)
    far = max(v.camera.far for v in dataset.views)
    return near, far


def _check_finite(scale, epoch, step, **parts):
    for name, val in parts.items():
        if val is not None and not math.isfinite(float(val)):
            detail = ", ".join(f"{k}={v}" for k, v in parts.items() if v is not None)
            raise TrainingDiverged(
                f"non-finite {name} at scale {scale} epoch {epoch} step {step}: {detail}"
            )


def _real_depths_from_reconstruction(stack, scale, dataset, res, m):
    """Self-depth mode: depth maps rendered from the fixed-noise volume."""
    noise = stack.fixed_noise().upto(scale)
    with torch.no_grad():
        v = stack.volume_tensor(noise, upto=scale)
    out = []
    for view in dataset.views:
        cam = _cam_at(view.camera, res)
        _, depth, _ = render_image_torch(v, cam, m, stack.bounds)
        out.append(depth.numpy().astype(np.float32))
    return out


def train_scale(
    stack: GeneratorStack,
    n: int,
    dataset: MultiViewDataset,
    pyramid: ObservationPyramid,
    config: TrainConfig,
    disc: PatchDiscriminator2d | None = None,
    prev_disc_state: dict | None = None,
    metrics: MetricsLog | None = None,
) -> tuple:
    """Train one scale; returns (metrics rows, discriminator).

    Scales below n must already be frozen. The 3D scales optimize the volume
    generator against rendered color+depth; the finest scale optimizes the 2D
    super-resolver with joint discrimination and the texture term.
    """
    cfg = stack.config
    n_scales = cfg.n_scales
    if n < 1 or n > n_scales:
        raise ValueError(f"scale {n} outside 1..{n_scales}")
    if not all(stack.frozen[: n - 1]):
        raise RuntimeError(f"scales below {n} must be trained and frozen first")

    metrics = metrics or MetricsLog()
    stack.bounds = np.asarray(dataset.bounds, dtype=np.float64)
    t0 = time.monotonic()
    is_final = n == n_scales
    res = stack.schedule.final_image_res if is_final else stack.schedule.image_res[n - 1]
    lo_res = stack.schedule.image_res[-1] if is_final else None
    m_samples = sample_count_for_scale(n, n_scales, config.sample_base, config.sample_top)
    near, far = _scene_range(dataset)

    gen = stack.super_resolver if is_final else stack.generators[n - 1]
    gen.train()
    for p in gen.parameters():
        p.requires_grad_(True)
    if disc is None:
        from singrav.pyramid import init_weights

        if not is_final and not config.use_depth:
            disc = PatchDiscriminator2d(3, cfg.hidden_channels, cfg.layers)
        else:
            disc = build_discriminator(n, cfg)
        init_weights(disc, derive_seed(config.seed, "disc", n))
        if prev_disc_state is not None and not is_final:
            warm_start(disc, prev_disc_state)

    g_opt = torch.optim.Adam(gen.parameters(), lr=config.lr, betas=config.betas)
    d_opt = torch.optim.Adam(disc.parameters(), lr=config.lr, betas=config.betas)
    rng = np.random.default_rng(derive_seed(config.seed, "train", n))
    gp_gen = torch.Generator().manual_seed(derive_seed(config.seed, "gp", n))

    mviews = dataset.m
    adv_b = config.batch_for("adv", n, n_scales)
    rec_b = config.batch_for("recon", n, n_scales)
    steps_per_epoch = max(1, math.ceil(mviews / adv_b))
    level = pyramid.level(n)
    real_colors = torch.from_numpy(level.colors).permute(0, 3, 1, 2)  # (m, 3, h, w)
    lo_colors = (
        torch.from_numpy(pyramid.level(n_scales - 1).colors).permute(0, 3, 1, 2)
        if is_final
        else None
    )

    real_depths = level.depths
    if not is_final and config.use_depth and not config.self_depth:
        missing = [i for i, d in enumerate(real_depths) if d is None]
        if missing:
            raise ValueError(
                f"views {missing} lack depth; enable self_depth or disable depth conditioning"
            )

    use_crop = res > config.full_image_side
    side = min(config.crop_side, res)
    fixed_noise = stack.fixed_noise().upto(min(n, n_scales - 1))

    def render_views(volume_t, view_ids, crop_rng):
        """Render scale-res views; returns (colors (B,3,s,s), depths (B,s,s), crop origins)."""
        colors, depths, origins = [], [], []
        for vid in view_ids:
            cam = _cam_at(dataset.views[vid].camera, res)
            if use_crop:
                idx, orig = _crop_indices(res, side, crop_rng)
                c, d, _ = render_image_torch(volume_t, cam, m_samples, stack.bounds, ray_idx=idx)
                c = c.T.reshape(3, side, side)
                d = d.reshape(side, side)
            else:
                c, d, _ = render_image_torch(volume_t, cam, m_samples, stack.bounds)
                c = c.permute(2, 0, 1)
                orig = (0, 0)
            colors.append(c)
            depths.append(d)
            origins.append(orig)
        return torch.stack(colors), torch.stack(depths), origins

    def real_crop(tensor_set, view_ids, origins):
        s = side if use_crop else res
        outs = []
        for vid, (r0, c0) in zip(view_ids, origins):
            outs.append(tensor_set[vid][..., r0 : r0 + s, c0 : c0 + s])
        return torch.stack(outs)

    def real_depth_crop(view_ids, origins):
        s = side if use_crop else res
        outs = []
        for vid, (r0, c0) in zip(view_ids, origins):
            d = real_depths[vid]
            outs.append(torch.as_tensor(np.array(d[r0 : r0 + s, c0 : c0 + s])))
        return torch.stack(outs).unsqueeze(1)

    def recon_pass():
        """Reconstruction term on a random view subset; returns (loss, raw color mse)."""
        view_ids = rng.choice(mviews, size=rec_b, replace=mviews < rec_b)
        if is_final:
            with torch.no_grad():
                vol = stack.volume_tensor(fixed_noise, upto=n_scales - 1)
            ids = list(view_ids)
            lo_imgs = []
            for vid in ids:
                cam = _cam_at(dataset.views[vid].camera, lo_res)
                c, _, _ = render_image_torch(vol, cam, m_samples, stack.bounds)
                lo_imgs.append(c.permute(2, 0, 1))
            sr = super_resolve(gen, torch.stack(lo_imgs))
            target = real_colors[list(ids)]
            loss = reconstruction_loss(sr, target, None, None, n, n_scales, config.loss)
            mse = torch.nn.functional.mse_loss(sr, target)
            return loss, float(mse.detach())
        vol = stack.volume_tensor(fixed_noise, upto=n, train_scale=n)
        colors, depths, origins = render_views(vol, view_ids, rng)
        target_c = real_crop(real_colors, view_ids, origins)
        skip_depth = config.self_depth and not have_self_depth[0]
        if skip_depth or not config.use_depth:
            loss = config.loss.lambda_c * torch.nn.functional.mse_loss(colors, target_c)
        else:
            target_d = real_depth_crop(view_ids, origins)
            loss = reconstruction_loss(
                colors,
                target_c,
                normalize_depth(depths.unsqueeze(1), near, far),
                normalize_depth(target_d, near, far),
                n,
                n_scales,
                config.loss,
            )
        mse = torch.nn.functional.mse_loss(colors, target_c)
        return loss, float(mse.detach())

    have_self_depth = [False]
    step_count = 0
    stop = False
    rows_before = len(metrics.rows)

    for epoch in range(config.epochs_per_scale):
        if (
            config.self_depth
            and not is_final
            and epoch == config.recon_only_epochs
            and not have_self_depth[0]
        ):
            real_depths = _real_depths_from_reconstruction(stack, n, dataset, res, m_samples)
            have_self_depth[0] = True
        recon_only = epoch < config.recon_only_epochs
        for _ in range(steps_per_epoch):
            step_count += 1
            if recon_only:
                g_opt.zero_grad()
                loss, mse = recon_pass()
                loss.backward()
                g_opt.step()
                rec_val = float(loss.detach())
                _check_finite(n, epoch, step_count, rec_loss=rec_val)
                metrics.add(
                    step=step_count,
                    scale=n,
                    rec_loss=rec_val,
                    wall_time=time.monotonic() - t0,
                )
                if (
                    config.early_stop_recon_mse is not None
                    and mse < config.early_stop_recon_mse
                ):
                    stop = True
                    break
                continue

            d_val = g_val = rec_val = swd_val = None
            for _ in range(config.d_steps):
                view_ids = rng.choice(mviews, size=adv_b, replace=mviews < adv_b)
                noise = NoiseStack.sample(
                    stack.schedule, int(rng.integers(0, 2**62))
                ).upto(min(n, n_scales - 1))
                with torch.no_grad():
                    vol = stack.volume_tensor(noise, upto=min(n, n_scales - 1))
                    if is_final:
                        lo_imgs = []
                        for vid in view_ids:
                            cam = _cam_at(dataset.views[vid].camera, lo_res)
                            c, _, _ = render_image_torch(vol, cam, m_samples, stack.bounds)
                            lo_imgs.append(c.permute(2, 0, 1))
                        lo_t = torch.stack(lo_imgs)
                        fake_hi = super_resolve(gen, lo_t)
                        if use_crop:
                            _, orig = _crop_indices(res, side, rng)
                            origins = [orig] * len(view_ids)
                            r0, c0 = orig
                            fake_hi = fake_hi[..., r0 : r0 + side, c0 : c0 + side]
                            up = torch.nn.functional.interpolate(
                                lo_t, size=(res, res), mode="bilinear", align_corners=False
                            )[..., r0 : r0 + side, c0 : c0 + side]
                        else:
                            origins = [(0, 0)] * len(view_ids)
                            up = lo_t
                        fake_in = build_disc_input(n, n_scales, fake_hi, up)
                        real_hi = real_crop(real_colors, view_ids, origins)
                        real_lo = real_crop(lo_colors, view_ids, [(0, 0)] * len(view_ids))
                        if use_crop:
                            r0, c0 = origins[0]
                            real_lo_up = torch.nn.functional.interpolate(
                                real_lo, size=(res, res), mode="bilinear", align_corners=False
                            )[..., r0 : r0 + side, c0 : c0 + side]
                        else:
                            real_lo_up = real_lo
                        real_in = build_disc_input(n, n_scales, real_hi, real_lo_up)
                    else:
                        colors, depths, origins = render_views(vol, view_ids, rng)
                        fake_in = build_disc_input(
                            n, n_scales, colors, depths.unsqueeze(1), near, far,
                            use_depth=config.use_depth,
                        )
                        real_c = real_crop(real_colors, view_ids, origins)
                        rd = (
                            real_depth_crop(view_ids, origins)
                            if config.use_depth
                            else None
                        )
                        real_in = build_disc_input(
                            n, n_scales, real_c, rd, near, far, use_depth=config.use_depth
                        )
                d_opt.zero_grad()
                d_loss, _ = adversarial_losses(
                    disc, real_in, fake_in, config.loss.gp_weight, generator=gp_gen
                )
                d_loss.backward()
                d_opt.step()
                d_val = float(d_loss.detach())
                _check_finite(n, epoch, step_count, d_loss=d_val)

            for _ in range(config.g_steps):
                view_ids = rng.choice(mviews, size=adv_b, replace=mviews < adv_b)
                noise = NoiseStack.sample(
                    stack.schedule, int(rng.integers(0, 2**62))
                ).upto(min(n, n_scales - 1))
                g_opt.zero_grad()
                swd_term = None
                if is_final:
                    with torch.no_grad():
                        vol = stack.volume_tensor(noise, upto=n_scales - 1)
                        lo_imgs = []
                        for vid in view_ids:
                            cam = _cam_at(dataset.views[vid].camera, lo_res)
                            c, _, _ = render_image_torch(vol, cam, m_samples, stack.bounds)
                            lo_imgs.append(c.permute(2, 0, 1))
                        lo_t = torch.stack(lo_imgs)
                    fake_hi_full = super_resolve(gen, lo_t)
                    if use_crop:
                        _, orig = _crop_indices(res, side, rng)
                        r0, c0 = orig
                        origins = [orig] * len(view_ids)
                        fake_hi = fake_hi_full[..., r0 : r0 + side, c0 : c0 + side]
                        up = torch.nn.functional.interpolate(
                            lo_t, size=(res, res), mode="bilinear", align_corners=False
                        )[..., r0 : r0 + side, c0 : c0 + side]
                    else:
                        origins = [(0, 0)] * len(view_ids)
                        fake_hi = fake_hi_full
                        up = lo_t
                    fake_in = build_disc_input(n, n_scales, fake_hi, up)
                    real_hi = real_crop(real_colors, view_ids, origins)
                    swd_ref = real_hi
                    swd_term = config.loss.swd_weight * swd_loss(
                        fake_hi, swd_ref, config.swd
                    )
                else:
                    vol = stack.volume_tensor(noise, upto=n, train_scale=n)
                    colors, depths, origins = render_views(vol, view_ids, rng)
                    fake_in = build_disc_input(
                        n, n_scales, colors, depths.unsqueeze(1), near, far,
                        use_depth=config.use_depth,
                    )
                g_adv = -disc(fake_in).mean()
                rec, _ = recon_pass()
                total = g_adv + rec
                if swd_term is not None:
                    total = total + swd_term
                total.backward()
                g_opt.step()
                g_val, rec_val = float(g_adv.detach()), float(rec.detach())
                swd_val = float(swd_term.detach()) if swd_term is not None else None
                _check_finite(
                    n, epoch, step_count, g_loss=g_val, rec_loss=rec_val, swd_loss=swd_val
                )

            metrics.add(
                step=step_count,
                scale=n,
                d_loss=d_val,
                g_loss=g_val,
                rec_loss=rec_val,
                swd_loss=swd_val,
                wall_time=time.monotonic() - t0,
            )
        if stop:
            break

    gen.eval()
    return metrics.rows[rows_before:], disc


def train_all(
    dataset: MultiViewDataset,
    stack: GeneratorStack,
    config: TrainConfig,
    out_dir,
    cache_dir=None,
    resume: bool = True,
) -> GeneratorStack:
    """Train scales 1..N in order with freezing, checkpoints, and resume."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = MetricsLog(out / "metrics.csv")
    trained = 0
    ckpt = out / "pyramid.json"
    if resume and ckpt.exists():
        index = json.loads(ckpt.read_text())
        extras = index.get("extras", {})
        saved_cfg = extras.get("train_config")
        if saved_cfg is not None and saved_cfg != config.to_json():
            raise ValueError("checkpoint was produced by a different training config")
        if index["config"] != stack.config.to_json():
            raise ValueError("checkpoint pyramid config does not match")
        stack = load_stack(out)
        trained = int(extras.get("trained_scales", 0))
        for s in range(1, trained + 1):
            freeze_scale(stack, s)

    pyramid = build_pyramid(dataset, stack.schedule, cache_dir=cache_dir)
    stack.ensure_z_star()
    n_scales = stack.config.n_scales
    for n in range(trained + 1, n_scales + 1):
        prev_state = None
        if n > 1 and n < n_scales:
            prev_disc = out / f"scale_{n - 1}" / "disc.pt"
            if prev_disc.exists():
                prev_state = torch.load(prev_disc, map_location="cpu", weights_only=True)
            gen_prev = stack.generators[n - 2].state_dict()
            warm_start(stack.generators[n - 1], gen_prev)
        _, disc = train_scale(
            stack, n, dataset, pyramid, config, prev_disc_state=prev_state, metrics=metrics
        )
        freeze_scale(stack, n)
        save_stack(out, stack, extras={"trained_scales": n, "train_config": config.to_json()})
        torch.save(disc.state_dict(), out / f"scale_{n}" / "disc.pt")
    return stack


def load_train_config(path) -> tuple:
    """Read a JSON or TOML config file with optional pyramid/train sections."""
    from singrav.pyramid import PyramidConfig

    p = Path(path)
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib

        data = tomllib.loads(p.read_text())
    else:
        data = json.loads(p.read_text())
    pyr = PyramidConfig.from_json(data.get("pyramid", {}))
    train = TrainConfig.from_json(data.get("train", {}))
    return pyr, train

"""Training objective: WGAN-GP adversarial terms, fixed-noise reconstruction,
and a sliced Wasserstein texture term active only at the finest scale.

Patch critics are scored by the mean of their patch map. Depth maps are
normalized to [0,1] with the camera near/far range before entering either the
reconstruction loss or a discriminator; raw world-unit depth can be kept by
passing near=None.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# torchvision vgg19.features indices of relu1_1 .. relu5_1
_VGG_RELU_IDX = {"relu1_1": 1, "relu2_1": 6, "relu3_1": 11, "relu4_1": 20, "relu5_1": 29}


@dataclass
class LossWeights:
    lambda_c: float = 10.0
    lambda_d: float = 30.0
    gp_weight: float = 0.1
    swd_weight: float = 1.0

    def __post_init__(self):
        if min(self.lambda_c, self.lambda_d, self.gp_weight, self.swd_weight) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class SwdConfig:
    layers: tuple = ("relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1")
    projections: int = 64
    seed: int = 0
    weights: str = "auto"  # auto | random | filesystem path
    normalize_inputs: bool = True

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("need at least one feature layer")
        if self.projections < 1:
            raise ValueError("need at least one projection")
        for name in self.layers:
            if name not in _VGG_RELU_IDX:
                raise ValueError(f"unknown layer {name!r}")


def normalize_depth(depth: torch.Tensor, near: float, far: float) -> torch.Tensor:
    return torch.clamp((depth - near) / (far - near), 0.0, 1.0)


def adversarial_losses(critic, real, fake, gp_weight: float = 0.1, generator=None):
    """WGAN-GP terms: (d_loss, g_loss).

    d_loss = E[D(fake)] - E[D(real)] + gp_weight * E[(||grad D(x_hat)|| - 1)^2]
    with x_hat drawn uniformly on segments between real and detached fake;
    g_loss = -E[D(fake)] on the generator's graph.
    """
    if real.shape != fake.shape:
        raise ValueError(f"real {tuple(real.shape)} vs fake {tuple(fake.shape)}")
    in_ch = getattr(critic, "in_channels", None)
    if in_ch is not None and real.shape[1] != in_ch:
        raise ValueError(f"critic expects {in_ch} channels, got {real.shape[1]}")

    fake_d = fake.detach()
    score_real = critic(real).mean()
    score_fake_d = critic(fake_d).mean()

    eps = torch.rand(
        (real.shape[0],) + (1,) * (real.dim() - 1),
        device=real.device,
        dtype=real.dtype,
        generator=generator,
    )
    x_hat = (eps * real.detach() + (1 - eps) * fake_d).requires_grad_(True)
    patch = critic(x_hat)
    per_sample = patch.reshape(patch.shape[0], -1).mean(dim=1)
    if per_sample.requires_grad:
        grads = torch.autograd.grad(
            per_sample.sum(), x_hat, create_graph=True, allow_unused=True
        )[0]
    else:  # critic ignores its input entirely
        grads = None
    if grads is None:
        grads = torch.zeros_like(x_hat)
    gnorm = grads.reshape(grads.shape[0], -1).norm(dim=1)
    gp = ((gnorm - 1.0) ** 2).mean()

    d_loss = score_fake_d - score_real + gp_weight * gp
    g_loss = -critic(fake).mean()
    return d_loss, g_loss


def build_disc_input(
    scale: int,
    n_scales: int,
    color: torch.Tensor,
    depth_or_lowres: torch.Tensor | None,
    near: float | None = None,
    far: float | None = None,
    use_depth: bool = True,
) -> torch.Tensor:
    """Assemble a critic input: RGB+depth (4ch) below the finest scale, paired RGB (6ch) at it.

    `color` is (B, 3, H, W). Below scale N the second argument is a (B, 1, H, W)
    depth map, normalized here when near/far are given; at scale N it is the
    preceding scale's RGB image, bilinearly upsampled to match when needed.
    """
    if color.dim() != 4 or color.shape[1] != 3:
        raise ValueError("color must be (B, 3, H, W)")
    if scale < n_scales:
        if not use_depth:
            return color
        if depth_or_lowres is None:
            raise ValueError("depth conditioning is enabled but no depth was provided")
        depth = depth_or_lowres
        if depth.dim() == 3:
            depth = depth.unsqueeze(1)
        if depth.shape[-2:] != color.shape[-2:]:
            raise ValueError("depth resolution does not match color")
        if near is not None and far is not None:
            depth = normalize_depth(depth, near, far)
        return torch.cat([color, depth], dim=1)
    if depth_or_lowres is None:
        raise ValueError("finest-scale discrimination needs the preceding-scale image")
    low = depth_or_lowres
    if low.shape[-2:] != color.shape[-2:]:
        low = F.interpolate(low, size=color.shape[-2:], mode="bilinear", align_corners=False)
    return torch.cat([color, low], dim=1)


def reconstruction_loss(
    color_pred: torch.Tensor,
    color_target: torch.Tensor,
    depth_pred: torch.Tensor | None,
    depth_target: torch.Tensor | None,
    scale: int,
    n_scales: int,
    weights: LossWeights | None = None,
) -> torch.Tensor:
    """lambda_c * MSE(color) + lambda_d * MSE(depth), depth term dropped at the finest scale."""
    w = weights or LossWeights()
    loss = w.lambda_c * F.mse_loss(color_pred, color_target)
    if scale < n_scales:
        if depth_pred is None or depth_target is None:
            raise ValueError("depth supervision required below the finest scale")
        loss = loss + w.lambda_d * F.mse_loss(depth_pred, depth_target)
    return loss


def total_loss(scale: int, n_scales: int, adv, rec, swd) -> torch.Tensor:
    """Eq-style sum with the texture term gated to the finest scale only."""
    out = adv + rec
    if scale == n_scales:
        out = out + swd
    return out


class Vgg19Features(torch.nn.Module):
    """Frozen VGG-19 slice stack emitting the configured relu activations.

    Weights resolve in order: explicit file path, SINGRAV_VGG19_WEIGHTS, the
    torchvision pretrained download, and finally a seeded random
    initialization (a usable stand-in for texture statistics when offline).
    """

    def __init__(self, layers=("relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"),
                 weights: str = "auto"):
        super().__init__()
        from torchvision.models import vgg19

        self.layer_idx = [_VGG_RELU_IDX[name] for name in layers]
        with torch.random.fork_rng():
            torch.manual_seed(0)
            net = vgg19(weights=None)
        source = "random"
        path = None
        if weights not in ("auto", "random"):
            path = weights
        elif weights == "auto":
            path = os.environ.get("SINGRAV_VGG19_WEIGHTS")
        if path:
            state = torch.load(path, map_location="cpu", weights_only=True)
            state = {k.removeprefix("features."): v for k, v in state.items() if "classifier" not in k}
            missing = net.features.load_state_dict(state, strict=False)
            del missing
            source = f"file:{path}"
        elif weights == "auto":
            try:
                from torchvision.models import VGG19_Weights

                net = vgg19(weights=VGG19_Weights.IMAGENET1K_V1)
                source = "torchvision"
            except Exception as exc:  # offline or hub unavailable
                log.warning("pretrained texture features unavailable (%s); using seeded random", exc)
        self.source = source
        cut = max(self.layer_idx) + 1
        self.features = net.features[:cut]
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> list:
        out = []
        for i, m in enumerate(self.features):
            if isinstance(m, torch.nn.MaxPool2d) and min(x.shape[-2:]) < 2:
                break  # image too small for deeper blocks
            x = m(x)
            if i in self.layer_idx:
                out.append(x)
        return out


_EXTRACTORS: dict = {}


def get_extractor(config: SwdConfig) -> Vgg19Features:
    key = (config.layers, config.weights)
    if key not in _EXTRACTORS:
        _EXTRACTORS[key] = Vgg19Features(config.layers, config.weights)
    return _EXTRACTORS[key]


def sliced_wasserstein(feat_a: torch.Tensor, feat_b: torch.Tensor, projections: int = 64,
                       generator=None, dirs: torch.Tensor | None = None) -> torch.Tensor:
    """SW2 distance between two (C, L) per-location feature sets.

    Projects both sets onto random unit directions (or explicit `dirs`), sorts
    each projected set, and averages squared differences.
    """
    if feat_a.shape != feat_b.shape:
        raise ValueError("feature sets must have identical shapes")
    c = feat_a.shape[0]
    if dirs is None:
        dirs = torch.randn(projections, c, dtype=feat_a.dtype, device=feat_a.device,
                           generator=generator)
        dirs = dirs / dirs.norm(dim=1, keepdim=True).clamp_min(1e-12)
    pa, _ = torch.sort(dirs @ feat_a, dim=1)
    pb, _ = torch.sort(dirs @ feat_b, dim=1)
    return ((pa - pb) ** 2).mean()


def _prep_for_vgg(img: torch.Tensor, normalize: bool) -> torch.Tensor:
    if img.dim() == 3:
        img = img.unsqueeze(0)
    if not normalize:
        return img
    mean = img.new_tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = img.new_tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return (img - mean) / std


def swd_loss(image_a: torch.Tensor, image_b: torch.Tensor, config: SwdConfig | None = None,
             extractor: Vgg19Features | None = None) -> torch.Tensor:
    """Texture distance between two RGB images, summed over feature layers."""
    config = config or SwdConfig()
    if image_a.shape != image_b.shape:
        raise ValueError("images must share a resolution")
    extractor = extractor or get_extractor(config)
    a = _prep_for_vgg(image_a, config.normalize_inputs)
    b = _prep_for_vgg(image_b, config.normalize_inputs)
    feats_a = extractor(a)
    feats_b = extractor(b)
    total = image_a.new_zeros(())
    for k, (fa, fb) in enumerate(zip(feats_a, feats_b)):
        gen = torch.Generator(device=fa.device).manual_seed(config.seed + k)
        fa2 = fa.permute(1, 0, 2, 3).reshape(fa.shape[1], -1)
        fb2 = fb.permute(1, 0, 2, 3).reshape(fb.shape[1], -1)
        total = total + sliced_wasserstein(fa2, fb2, config.projections, generator=gen)
    return total

"""Scene-level evaluation: multi-view single-image FID and pixel diversity.

Both scores compare J generated scenes against the one input scene over M
shared viewpoints, rendered at the finest resolution. The FID variant fits a
Gaussian to the internal feature statistics of each image (first-pooling
features of an ImageNet classifier) and averages the Frechet distance over
views and scenes; the diversity score is the per-pixel standard deviation
across scenes normalized by the reference image's overall pixel spread.
"""

from __future__ import annotations

import json
import logging
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import torch

from singrav.imageops import resize_area
from singrav.losses import IMAGENET_MEAN, IMAGENET_STD
from singrav.pyramid import GeneratorStack, derive_seed
from singrav.renderer import render_final

log = logging.getLogger(__name__)

COV_EPS = 1e-6


@dataclass
class MetricsConfig:
    views_m: int = 40
    scenes_j: int = 50
    seed: int = 0
    m_samples: int = 128
    feature_weights: str = "auto"  # auto | random | path to a state dict

    def __post_init__(self):
        if self.views_m < 1:
            raise ValueError("views_m must be >= 1")
        if self.scenes_j < 2:
            raise ValueError("scenes_j must be >= 2")

    def to_json(self) -> dict:
        return {
            "views_m": self.views_m,
            "scenes_j": self.scenes_j,
            "seed": self.seed,
            "m_samples": self.m_samples,
            "feature_weights": self.feature_weights,
        }


class InceptionPool1(torch.nn.Module):
    """Frozen stem of an ImageNet classifier up to the first max-pool (64 channels).

    Weight resolution mirrors the texture extractor: explicit path,
    SINGRAV_INCEPTION_WEIGHTS, the torchvision download, then seeded random.
    """

    def __init__(self, weights: str = "auto"):
        super().__init__()
        from torchvision.models import inception_v3

        with torch.random.fork_rng():
            torch.manual_seed(0)
            net = inception_v3(weights=None, aux_logits=True, init_weights=True)
        source = "random"
        path = None
        if weights not in ("auto", "random"):
            path = weights
        elif weights == "auto":
            path = os.environ.get("SINGRAV_INCEPTION_WEIGHTS")
        if path:
            state = torch.load(path, map_location="cpu", weights_only=True)
            net.load_state_dict(state, strict=False)
            source = f"file:{path}"
        elif weights == "auto":
            try:
                from torchvision.models import Inception_V3_Weights

                net = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1)
            except Exception as exc:  # offline or hub unavailable
                log.warning(
                    "pretrained inception features unavailable (%s); using seeded random", exc
                )
            else:
                source = "torchvision"
        self.source = source
        self.stem = torch.nn.Sequential(
            net.Conv2d_1a_3x3, net.Conv2d_2a_3x3, net.Conv2d_2b_3x3
        )
        self.pool = torch.nn.MaxPool2d(3, 2)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stem(x)
        if min(x.shape[-2:]) >= 3:
            x = self.pool(x)
        return x


_FEATURES: dict = {}


def get_feature_extractor(weights: str = "auto") -> InceptionPool1:
    if weights not in _FEATURES:
        _FEATURES[weights] = InceptionPool1(weights)
    return _FEATURES[weights]


def _image_to_locations(image, extractor: InceptionPool1) -> np.ndarray:
    """(h, w, 3) image in [0, 1] to an (L, 64) array of per-location features."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("expected an (h, w, 3) image")
    t = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)
    mean = t.new_tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = t.new_tensor(IMAGENET_STD).view(1, 3, 1, 1)
    with torch.no_grad():
        feats = extractor((t - mean) / std)
    return feats[0].permute(1, 2, 0).reshape(-1, feats.shape[1]).numpy().astype(np.float64)


def gaussian_stats(locations: np.ndarray) -> tuple:
    """Mean and covariance of an (L, C) feature set; (C,), (C, C)."""
    locs = np.asarray(locations, dtype=np.float64)
    mu = locs.mean(axis=0)
    if locs.shape[0] < 2:
        cov = np.zeros((locs.shape[1], locs.shape[1]))
    else:
        cov = np.cov(locs, rowvar=False)
    return mu, np.atleast_2d(cov)


def frechet_distance(mu1, cov1, mu2, cov2, eps: float = COV_EPS) -> float:
    """d^2 = |mu1 - mu2|^2 + tr(C1 + C2 - 2 (C1 C2)^(1/2)), clamped at 0."""
    mu1, mu2 = np.asarray(mu1, np.float64), np.asarray(mu2, np.float64)
    c1, c2 = np.atleast_2d(np.asarray(cov1, np.float64)), np.atleast_2d(np.asarray(cov2, np.float64))
    diff = mu1 - mu2
    covmean, _ = scipy.linalg.sqrtm(c1.dot(c2), disp=False)
    if not np.isfinite(covmean).all():
        jitter = eps * np.eye(c1.shape[0])
        covmean, _ = scipy.linalg.sqrtm((c1 + jitter).dot(c2 + jitter), disp=False)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    d = diff.dot(diff) + np.trace(c1) + np.trace(c2) - 2.0 * np.trace(covmean)
    return float(max(d, 0.0))


def sifid_pair(image_a, image_b, extractor: InceptionPool1 | None = None,
               weights: str = "auto") -> tuple:
    """Single-image FID between two images; returns (value, covariance_regularized)."""
    extractor = extractor or get_feature_extractor(weights)
    fa = _image_to_locations(image_a, extractor)
    fb = _image_to_locations(image_b, extractor)
    regularized = fa.shape[0] < fa.shape[1] or fb.shape[0] < fb.shape[1]
    mu_a, cov_a = gaussian_stats(fa)
    mu_b, cov_b = gaussian_stats(fb)
    if regularized:
        cov_a = cov_a + COV_EPS * np.eye(cov_a.shape[0])
        cov_b = cov_b + COV_EPS * np.eye(cov_b.shape[0])
    return frechet_distance(mu_a, cov_a, mu_b, cov_b), regularized


def _sifid_details(generated, reference, extractor: InceptionPool1) -> tuple:
    """Per-view mean single-image FID over scenes; (per-view list, regularized flags)."""
    n_scenes = len(generated)
    n_views = len(reference)
    ref_stats = []
    any_reg = []
    for m in range(n_views):
        locs = _image_to_locations(reference[m], extractor)
        reg = locs.shape[0] < locs.shape[1]
        mu, cov = gaussian_stats(locs)
        if reg:
            cov = cov + COV_EPS * np.eye(cov.shape[0])
        ref_stats.append((mu, cov))
        any_reg.append(reg)
    per_view = []
    for m in range(n_views):
        vals = []
        for j in range(n_scenes):
            locs = _image_to_locations(generated[j][m], extractor)
            reg = locs.shape[0] < locs.shape[1]
            mu, cov = gaussian_stats(locs)
            if reg:
                cov = cov + COV_EPS * np.eye(cov.shape[0])
                any_reg[m] = True
            vals.append(frechet_distance(mu, cov, *ref_stats[m]))
        per_view.append(float(np.mean(vals)))
    return per_view, any_reg


def sifid_mv(generated, reference, extractor: InceptionPool1 | None = None,
             weights: str = "auto") -> float:
    """Mean over views and scenes of the single-image FID against the reference view.

    `generated` is indexed [scene j][view m] and must align with `reference`.
    """
    if len(generated) < 1 or len(reference) < 1:
        raise ValueError("need at least one scene and one view")
    for j, renders in enumerate(generated):
        if len(renders) != len(reference):
            raise ValueError(f"scene {j} has {len(renders)} views, expected {len(reference)}")
    extractor = extractor or get_feature_extractor(weights)
    per_view, _ = _sifid_details(generated, reference, extractor)
    return float(np.mean(per_view))


def _diversity_details(generated, reference) -> list:
    """Per-view normalized diversity; None marks an excluded constant view."""
    n_scenes = len(generated)
    out = []
    for m in range(len(reference)):
        ref = np.asarray(reference[m], dtype=np.float64)
        ref_std = float(ref.std())
        if ref_std == 0.0:
            warnings.warn(f"reference view {m} is constant; excluded from diversity")
            out.append(None)
            continue
        stacked = np.stack([np.asarray(generated[j][m], np.float64) for j in range(n_scenes)])
        out.append(float(stacked.std(axis=0).mean() / ref_std))
    return out


def diversity_mv(generated, reference) -> float:
    """Mean over views of per-pixel std across scenes / overall pixel std of the reference."""
    if len(generated) < 2:
        raise ValueError("diversity needs at least two scenes")
    per_view = _diversity_details(generated, reference)
    kept = [v for v in per_view if v is not None]
    if not kept:
        raise ValueError("every reference view is constant; diversity undefined")
    return float(np.mean(kept))


def evaluate(stack: GeneratorStack, dataset, config: MetricsConfig | None = None,
             out_path=None) -> dict:
    """Sample scenes, render them at the dataset views, and score both metrics.

    Returns (and optionally writes) a JSON-ready report with per-view detail.
    """
    config = config or MetricsConfig()
    if not all(stack.frozen):
        raise RuntimeError("stack has untrained scales; evaluation needs a trained pyramid")
    t0 = time.monotonic()
    rng = np.random.default_rng(config.seed)
    n_views = len(dataset.views)
    view_ids = rng.choice(n_views, size=config.views_m, replace=config.views_m > n_views)
    final_res = stack.schedule.final_image_res

    reference = [
        resize_area(dataset.views[i].color, (final_res, final_res)) for i in view_ids
    ]
    extractor = get_feature_extractor(config.feature_weights)

    generated = []
    for j in range(config.scenes_j):
        vol, _ = stack.sample_scene(seed=derive_seed(config.seed, "eval", j))
        renders = [
            render_final(stack, vol, dataset.views[i].camera, config.m_samples)
            for i in view_ids
        ]
        generated.append(renders)

    sifid_per_view, regularized = _sifid_details(generated, reference, extractor)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        div_per_view = _diversity_details(generated, reference)
    kept = [v for v in div_per_view if v is not None]

    report = {
        "config": config.to_json(),
        "seed": config.seed,
        "feature_source": extractor.source,
        "sifid_mv": float(np.mean(sifid_per_view)),
        "diversity_mv": float(np.mean(kept)) if kept else None,
        "per_view": [
            {
                "view": int(v),
                "sifid": sifid_per_view[k],
                "diversity": div_per_view[k],
                "covariance_regularized": bool(regularized[k]),
            }
            for k, v in enumerate(view_ids)
        ],
        "wall_time": time.monotonic() - t0,
    }
    if out_path is not None:
        from pathlib import Path

        p = Path(out_path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(report, indent=2))
    return report

"""PNG io and area-average resizing shared by the renderer, datasets, and service.

Color travels as float32 in [0, 1] (8-bit on disk); depth as float32 world
units (16-bit on disk with a declared meters-per-unit scale).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

MAX_U16 = 65535


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float32) / 255.0


def save_color_png(path, img: np.ndarray) -> None:
    """Write an (H, W, 3) float [0,1] image as 8-bit RGB."""
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def load_color_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def depth_scale_for(depth: np.ndarray) -> float:
    """Meters-per-unit scale that maps the depth range onto uint16 losslessly enough."""
    peak = float(np.max(depth)) if depth.size else 0.0
    return peak / MAX_U16 if peak > 0 else 1.0


def save_depth_png(path, depth: np.ndarray, scale: float, sidecar: bool = False) -> None:
    """Write an (H, W) float depth map as 16-bit grayscale, quantized by `scale`.

    With sidecar=True a JSON file next to the image records the scale for
    consumers that do not have a manifest.
    """
    if scale <= 0:
        raise ValueError(f"depth scale must be positive, got {scale}")
    q = np.clip(np.rint(np.asarray(depth, dtype=np.float64) / scale), 0, MAX_U16)
    Image.fromarray(q.astype(np.uint16)).save(path, format="PNG")
    if sidecar:
        meta = Path(path).with_suffix(".json")
        meta.write_text(json.dumps({"depth_scale": scale}))


def load_depth_png(path, scale: float | None = None) -> np.ndarray:
    """Read a 16-bit depth PNG back to float32 world units.

    When `scale` is None the JSON sidecar written by save_depth_png is required.
    """
    if scale is None:
        meta = Path(path).with_suffix(".json")
        scale = json.loads(meta.read_text())["depth_scale"]
    with Image.open(path) as im:
        raw = np.asarray(im)
    if raw.dtype != np.uint16:
        raw = raw.astype(np.int64)
        if raw.min() < 0 or raw.max() > MAX_U16:
            raise ValueError(f"not a 16-bit depth image: {path}")
    return (raw.astype(np.float64) * float(scale)).astype(np.float32)


def resize_area(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Area-average resize to (height, width); exact block means for integer factors."""
    h, w = int(size[0]), int(size[1])
    img = np.asarray(img, dtype=np.float32)
    if img.shape[:2] == (h, w):
        return img.copy()
    if img.ndim == 2:
        im = Image.fromarray(img, mode="F").resize((w, h), Image.BOX)
        return np.asarray(im, dtype=np.float32)
    chans = [
        np.asarray(Image.fromarray(img[:, :, c], mode="F").resize((w, h), Image.BOX))
        for c in range(img.shape[2])
    ]
    return np.stack(chans, axis=-1).astype(np.float32)

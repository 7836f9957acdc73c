"""Pure-NumPy rendering kernels; the fallback when the compiled extension is absent."""

from __future__ import annotations

import numpy as np


def _softplus(x):
    return np.where(x > 20.0, x, np.log1p(np.exp(np.minimum(x, 20.0))))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def sample_grid(values: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Trilinear gather at continuous voxel-center index coordinates.

    `values` is (W, H, U, C); `u` is (P, 3), clamped here to the valid range.
    Arithmetic runs in float64; the result is float32.
    """
    dims = np.array(values.shape[:3])
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, dims - 1.0)
    i0 = np.floor(u).astype(np.int64)
    i0 = np.clip(i0, 0, np.maximum(dims - 2, 0))
    f = u - i0
    i1 = np.minimum(i0 + 1, dims - 1)
    v = values.astype(np.float64, copy=False)
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    x1, y1, z1 = i1[:, 0], i1[:, 1], i1[:, 2]
    fx, fy, fz = f[:, 0:1], f[:, 1:2], f[:, 2:3]
    c00 = v[x0, y0, z0] * (1 - fx) + v[x1, y0, z0] * fx
    c10 = v[x0, y1, z0] * (1 - fx) + v[x1, y1, z0] * fx
    c01 = v[x0, y0, z1] * (1 - fx) + v[x1, y0, z1] * fx
    c11 = v[x0, y1, z1] * (1 - fx) + v[x1, y1, z1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return (c0 * (1 - fz) + c1 * fz).astype(np.float32)


def composite_rays(values, origins, dirs, bmin, bmax, t_near, t_far, m):
    """March `m` uniform midpoint samples per ray and alpha-composite front to back.

    Density goes through softplus, color through sigmoid. Residual
    transmittance contributes no color and terminates at the far bound for
    depth. Returns (color (R,3), depth (R,), opacity (R,)) as float32.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    r = origins.shape[0]
    dims = np.array(values.shape[:3], dtype=np.float64)
    step = (np.asarray(bmax, dtype=np.float64) - np.asarray(bmin, dtype=np.float64)) / dims
    h = (t_far - t_near) / m
    t = t_near + (np.arange(m, dtype=np.float64) + 0.5) * h

    pts = origins[:, None, :] + t[None, :, None] * dirs[:, None, :]
    u = (pts.reshape(-1, 3) - np.asarray(bmin, dtype=np.float64)) / step - 0.5
    raw = sample_grid(values, u).astype(np.float64).reshape(r, m, 4)

    sigma = _softplus(raw[:, :, 3])
    rgb = _sigmoid(raw[:, :, :3])
    tau = sigma * h
    alpha = 1.0 - np.exp(-tau)
    # T_i = exp(-sum_{j<i} tau_j): exclusive prefix sum
    acc = np.cumsum(tau, axis=1)
    trans = np.exp(-np.concatenate([np.zeros((r, 1)), acc[:, :-1]], axis=1))
    trans_final = np.exp(-acc[:, -1])
    w = trans * alpha
    color = (w[:, :, None] * rgb).sum(axis=1)
    depth = (w * t[None, :]).sum(axis=1) + trans_final * t_far
    opacity = 1.0 - trans_final
    return (
        color.astype(np.float32),
        depth.astype(np.float32),
        opacity.astype(np.float32),
    )

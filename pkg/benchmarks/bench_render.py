"""Ray-compositing throughput: compiled extension vs NumPy fallback vs torch.

Run from the repo root:

    python3 benchmarks/bench_render.py [--volume 64] [--rays 4096] [--samples 64]

The three paths share one workload (same volume, rays, and sample count) so
the numbers are directly comparable. The torch row uses the differentiable
renderer in inference mode; it is the price paid when gradients are needed.
"""

import argparse
import time

import numpy as np
import torch

from singrav.kernels import _render_np, numpy_impl
from singrav.renderer import render_rays
from singrav.volume import RadianceVolume

try:
    from singrav.kernels import _render_cy
except ImportError:
    _render_cy = None


def make_workload(volume_res: int, rays: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    values = rng.normal(0.0, 1.0, size=(volume_res,) * 3 + (4,)).astype(np.float32)
    bounds = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    eyes = rng.normal(size=(rays, 3))
    eyes = 3.0 * eyes / np.linalg.norm(eyes, axis=1, keepdims=True)
    targets = rng.uniform(-0.5, 0.5, size=(rays, 3))
    dirs = targets - eyes
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return values, bounds, np.ascontiguousarray(eyes), np.ascontiguousarray(dirs)


def timed(fn, repeats: int = 5):
    fn()  # warm up caches and any lazy setup
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--volume", type=int, default=64, help="volume resolution per axis")
    ap.add_argument("--rays", type=int, default=4096)
    ap.add_argument("--samples", type=int, default=64, help="samples per ray")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    values, bounds, eyes, dirs = make_workload(args.volume, args.rays)
    near, far, m = 1.5, 4.8, args.samples
    bmin, bmax = np.ascontiguousarray(bounds[0]), np.ascontiguousarray(bounds[1])

    rows = []

    def numpy_run():
        return numpy_impl.composite_rays(values, eyes, dirs, bmin, bmax, near, far, m)

    t_np, ref = timed(numpy_run, args.repeats)
    rows.append(("numpy fallback", t_np, None))

    if _render_cy is not None:
        def cython_run():
            return _render_cy.composite_rays(values, eyes, dirs, bmin, bmax, near, far, m)

        t_cy, out = timed(cython_run, args.repeats)
        drift = max(float(np.abs(a - b).max()) for a, b in zip(out, ref))
        rows.append(("compiled (cython)", t_cy, drift))
    else:
        print("compiled extension not built; skipping that row")

    vt = torch.from_numpy(values)
    ot = torch.from_numpy(eyes)
    dt = torch.from_numpy(dirs)

    def torch_run():
        with torch.no_grad():
            return render_rays(vt, ot, dt, bounds, near, far, m)

    t_th, out = timed(torch_run, args.repeats)
    drift = max(float(np.abs(o.numpy() - b).max()) for o, b in zip(out, ref))
    rows.append(("torch (differentiable)", t_th, drift))

    total_samples = args.rays * m
    print(f"\nvolume {args.volume}^3, {args.rays} rays x {m} samples "
          f"({total_samples/1e6:.2f}M samples), best of {args.repeats}\n")
    print(f"{'path':<24}{'time':>10}{'Msamples/s':>14}{'vs numpy':>10}{'max drift':>12}")
    for name, t, drift in rows:
        speedup = t_np / t
        drift_s = "-" if drift is None else f"{drift:.2e}"
        print(f"{name:<24}{t*1e3:>8.1f}ms{total_samples/t/1e6:>14.1f}{speedup:>9.1f}x{drift_s:>12}")


if __name__ == "__main__":
    main()

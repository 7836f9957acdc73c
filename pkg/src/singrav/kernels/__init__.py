"""Rendering kernels with import-time backend selection.

The compiled extension is used when it built successfully; set
SINGRAV_PURE_PYTHON=1 to force the NumPy fallback.
"""

import os

from singrav.kernels import _render_np

COMPILED = False
_impl = _render_np
if not os.environ.get("SINGRAV_PURE_PYTHON"):
    try:
        from singrav.kernels import _render_cy as _impl  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        pass

numpy_impl = _render_np


def sample_grid(values, u):
    return _impl.sample_grid(values, u)


def composite_rays(values, origins, dirs, bmin, bmax, t_near, t_far, m):
    return _impl.composite_rays(values, origins, dirs, bmin, bmax, t_near, t_far, m)

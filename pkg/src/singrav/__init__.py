"""Single-scene generative radiance volumes: training, rendering, editing, serving."""

__version__ = "0.1.0"

from singrav.volume import (
    DEFAULT_BOUNDS,
    CsgGrid,
    RadianceVolume,
    make_csg_grid,
    read_sgrv,
    resample_volume,
    sample_trilinear,
    upsample_volume,
    write_sgrv,
)

__all__ = [
    "DEFAULT_BOUNDS",
    "CsgGrid",
    "RadianceVolume",
    "__version__",
    "make_csg_grid",
    "read_sgrv",
    "resample_volume",
    "sample_trilinear",
    "upsample_volume",
    "write_sgrv",
]

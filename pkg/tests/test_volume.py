import numpy as np
import pytest
from scipy.interpolate import RegularGridInterpolator

from singrav.volume import (
    RadianceVolume,
    make_csg_grid,
    read_sgrv,
    resample_volume,
    round_half_away,
    sample_trilinear,
    sgrv_bytes,
    upsample_volume,
    write_sgrv,
)


def rand_volume(rng, dims=(5, 4, 3)):
    return RadianceVolume(rng.normal(size=(*dims, 4)).astype(np.float32))


def oracle_field(vol):
    # independent interpolator over voxel centers, queries clipped to emulate clamping
    axes = [vol.voxel_centers_1d(a) for a in range(3)]
    interp = RegularGridInterpolator(axes, vol.values.astype(np.float64), method="linear")

    def f(pts):
        pts = np.asarray(pts, dtype=np.float64)
        lo = np.array([a[0] for a in axes])
        hi = np.array([a[-1] for a in axes])
        return interp(np.clip(pts, lo, hi))

    return f


def test_round_half_away():
    assert round_half_away(0.5) == 1
    assert round_half_away(-0.5) == -1
    assert round_half_away(2.5) == 3
    assert round_half_away(1.4999) == 1
    assert round_half_away(-2.5) == -3


def test_csg_grid_values_exact():
    g = make_csg_grid((5, 4, 2)).values
    assert g.shape == (5, 4, 2, 3)
    np.testing.assert_array_equal(g[3, 1, 0], np.float32([0.2, -0.5, -1.0]))
    np.testing.assert_array_equal(g[0, 0, 0], np.float32([-1.0, -1.0, -1.0]))
    # per-axis max is 1 - 2/dim
    assert g[..., 0].max() == np.float32(2.0 * (4 / 5 - 0.5))


def test_csg_grid_rejects_bad_dims():
    with pytest.raises(ValueError):
        make_csg_grid((0, 4, 4))


def test_trilinear_at_voxel_centers_is_exact():
    rng = np.random.default_rng(3)
    vol = rand_volume(rng)
    centers = np.stack(
        np.meshgrid(*[vol.voxel_centers_1d(a) for a in range(3)], indexing="ij"), axis=-1
    ).reshape(-1, 3)
    got = sample_trilinear(vol, centers).reshape(*vol.dims, 4)
    np.testing.assert_allclose(got, vol.values, atol=1e-6)


def test_trilinear_matches_independent_interpolator():
    rng = np.random.default_rng(4)
    vol = rand_volume(rng, dims=(7, 5, 6))
    f = oracle_field(vol)
    pts = rng.uniform(-1.4, 1.4, size=(500, 3))  # includes out-of-bounds
    got = sample_trilinear(vol, pts)
    np.testing.assert_allclose(got, f(pts), atol=1e-6)


def test_trilinear_midpoint_is_average():
    rng = np.random.default_rng(5)
    vol = rand_volume(rng)
    cx = vol.voxel_centers_1d(0)
    cy = vol.voxel_centers_1d(1)
    cz = vol.voxel_centers_1d(2)
    p = np.array([[(cx[1] + cx[2]) / 2, cy[2], cz[0]]])
    want = (vol.values[1, 2, 0] + vol.values[2, 2, 0]) / 2
    np.testing.assert_allclose(sample_trilinear(vol, p)[0], want, atol=1e-6)


def test_trilinear_empty_points():
    vol = rand_volume(np.random.default_rng(0))
    assert sample_trilinear(vol, np.zeros((0, 3))).shape == (0, 4)


def test_resample_identity_and_constant():
    rng = np.random.default_rng(6)
    vol = rand_volume(rng)
    same = resample_volume(vol, vol.dims)
    np.testing.assert_array_equal(same.values, vol.values)

    const = RadianceVolume(np.full((4, 4, 4, 4), 0.75, dtype=np.float32))
    up = upsample_volume(const, 1.5)
    assert up.dims == (6, 6, 6)
    np.testing.assert_allclose(up.values, 0.75, atol=1e-6)


def test_upsample_dims_round_half_away():
    vol = RadianceVolume(np.zeros((40, 40, 40, 4), dtype=np.float32))
    assert upsample_volume(vol, 4 / 3).dims == (53, 53, 53)
    with pytest.raises(ValueError):
        upsample_volume(vol, 0.0)


def test_sgrv_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    vol = rand_volume(rng, dims=(6, 3, 5))
    path = tmp_path / "scene.sgrv"
    write_sgrv(path, vol)
    back = read_sgrv(path)
    np.testing.assert_array_equal(back.values, vol.values)
    np.testing.assert_array_equal(back.bounds, vol.bounds)

    # also accepts raw bytes
    back2 = read_sgrv(sgrv_bytes(vol))
    np.testing.assert_array_equal(back2.values, vol.values)


def test_sgrv_rejects_bad_magic():
    vol = rand_volume(np.random.default_rng(8))
    blob = bytearray(sgrv_bytes(vol))
    idx = blob.find(b"SGRV1")
    blob[idx : idx + 5] = b"BOGUS"
    with pytest.raises(ValueError):
        read_sgrv(bytes(blob))


def test_volume_validation():
    with pytest.raises(ValueError):
        RadianceVolume(np.zeros((4, 4, 4, 3), dtype=np.float32))  # wrong channels
    with pytest.raises(ValueError):
        RadianceVolume(np.zeros((1, 4, 4, 4), dtype=np.float32))  # dim < 2
    bad = np.zeros((4, 4, 4, 4), dtype=np.float32)
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        RadianceVolume(bad)

import math

import numpy as np
import pytest
import torch
from scipy.interpolate import RegularGridInterpolator

from singrav.renderer import (
    Camera,
    MissingDepthError,
    RaySampleSpec,
    generate_rays,
    look_at_pose,
    render,
    render_depth_real,
    render_image_torch,
    sample_count_for_scale,
    write_render,
)
from singrav.volume import RadianceVolume


def softplus_inv(y):
    return math.log(math.expm1(y))


def make_camera(w=4, h=4, fov=60.0, pose=None, near=1.0, far=3.0):
    if pose is None:
        pose = np.eye(4)
    return Camera(width=w, height=h, pose_c2w=pose, near=near, far=far, fov_deg=fov)


def sequential_oracle(vol, origins, dirs, near, far, m):
    """Per-sample Python loop over an independent interpolator."""
    axes = [vol.voxel_centers_1d(a) for a in range(3)]
    interp = RegularGridInterpolator(axes, vol.values.astype(np.float64), method="linear")
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[-1] for a in axes])
    h = (far - near) / m
    out_c, out_d, out_o = [], [], []
    for o, d in zip(origins, dirs):
        trans = 1.0
        color = np.zeros(3)
        depth = 0.0
        for i in range(m):
            t = near + (i + 0.5) * h
            p = np.clip(o + t * d, lo, hi)
            raw = interp(p)[0]
            sigma = np.log1p(np.exp(raw[3])) if raw[3] < 20 else raw[3]
            alpha = 1.0 - np.exp(-sigma * h)
            rgb = 1.0 / (1.0 + np.exp(-raw[:3]))
            color += trans * alpha * rgb
            depth += trans * alpha * t
            trans *= np.exp(-sigma * h)
        out_c.append(color)
        out_d.append(depth + trans * far)
        out_o.append(1.0 - trans)
    return np.array(out_c), np.array(out_d), np.array(out_o)


def test_principal_ray_is_forward_axis():
    pose = look_at_pose([2.0, -1.0, 1.5])
    cam = make_camera(w=3, h=3, pose=pose)
    origins, dirs = generate_rays(cam)
    center = dirs.reshape(3, 3, 3)[1, 1]
    np.testing.assert_allclose(center, cam.forward, atol=1e-12)
    np.testing.assert_allclose(origins[0], cam.position, atol=0)


def test_corner_ray_angle_90_fov():
    cam = make_camera(w=4, h=4, fov=90.0)
    _, dirs = generate_rays(cam)
    corner = dirs.reshape(4, 4, 3)[0, 0]
    # pinhole geometry: angle from axis = atan(radial px distance / focal px)
    f = (4 / 2) / math.tan(math.radians(90.0) / 2)
    r = math.hypot(1.5, 1.5)
    want = math.atan(r / f)
    got = math.acos(np.dot(corner, cam.forward))
    assert abs(got - want) < 1e-6


def test_identity_pose_origin():
    cam = make_camera()
    origins, _ = generate_rays(cam)
    np.testing.assert_array_equal(origins, np.zeros_like(origins))


def test_ray_directions_unit_norm():
    cam = make_camera(w=5, h=7, fov=75.0, pose=look_at_pose([0.0, 3.0, 1.0]))
    _, dirs = generate_rays(cam)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)


def test_transparent_volume_renders_background():
    vals = np.zeros((4, 4, 4, 4), dtype=np.float32)
    vals[..., 3] = -60.0
    out = render(RadianceVolume(vals), make_camera(), RaySampleSpec(m=16))
    np.testing.assert_allclose(out.color, 0.0, atol=1e-7)
    np.testing.assert_allclose(out.opacity, 0.0, atol=1e-7)
    np.testing.assert_allclose(out.depth, 3.0, atol=1e-6)


def test_single_sample_hand_evaluated():
    near, far = 1.0, 3.0
    delta = far - near
    sigma_raw = softplus_inv(math.log(2.0) / delta)  # sigma*delta = ln 2 -> alpha = 1/2
    c_raw = 0.7
    vals = np.empty((4, 4, 4, 4), dtype=np.float32)
    vals[..., :3] = c_raw
    vals[..., 3] = sigma_raw
    cam = make_camera(w=2, h=2, near=near, far=far)
    out = render(RadianceVolume(vals), cam, RaySampleSpec(m=1))
    c = 1.0 / (1.0 + math.exp(-c_raw))
    np.testing.assert_allclose(out.color, 0.5 * c, atol=1e-6)
    np.testing.assert_allclose(out.opacity, 0.5, atol=1e-6)
    t_mid = near + 0.5 * delta
    np.testing.assert_allclose(out.depth, 0.5 * t_mid + 0.5 * far, atol=1e-6)


def test_matches_sequential_compositing_oracle():
    rng = np.random.default_rng(11)
    vol = RadianceVolume(rng.normal(size=(4, 4, 4, 4)).astype(np.float32))
    origins = rng.uniform(-2.5, 2.5, size=(8, 3))
    dirs = rng.normal(size=(8, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    from singrav.renderer import cross_check_rays

    c, d, o = cross_check_rays(vol, origins, dirs, 0.5, 4.0, 16)
    oc, od, oo = sequential_oracle(vol, origins, dirs, 0.5, 4.0, 16)
    np.testing.assert_allclose(c, oc, atol=1e-5)
    np.testing.assert_allclose(d, od, atol=1e-5)
    np.testing.assert_allclose(o, oo, atol=1e-5)


def test_torch_path_matches_kernel_path():
    rng = np.random.default_rng(12)
    vol = RadianceVolume(rng.normal(size=(5, 5, 5, 4)).astype(np.float32))
    cam = make_camera(w=6, h=5, pose=look_at_pose([0.0, -2.5, 1.0]))
    out = render(vol, cam, RaySampleSpec(m=24))
    vt = torch.from_numpy(vol.values).double()
    color, depth, opacity = render_image_torch(vt, cam, 24, vol.bounds)
    np.testing.assert_allclose(out.color, color.numpy(), atol=1e-5)
    np.testing.assert_allclose(out.depth, depth.numpy(), atol=1e-5)
    np.testing.assert_allclose(out.opacity, opacity.numpy(), atol=1e-5)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    base = rng.uniform(-1.5, 1.5, size=(3, 3, 3, 4))
    vol = RadianceVolume(base.astype(np.float32))
    cam = make_camera(w=2, h=1, pose=look_at_pose([0.0, -2.2, 0.3]))
    m = 6

    def pixel_sum(values_np):
        vt = torch.from_numpy(values_np).double()
        color, _, _ = render_image_torch(vt, cam, m, vol.bounds)
        return color.sum().item()

    vt = torch.from_numpy(base).double().requires_grad_(True)
    color, _, _ = render_image_torch(vt, cam, m, vol.bounds)
    color.sum().backward()
    grad = vt.grad.numpy()

    eps = 1e-3
    checked = 0
    for idx in np.ndindex(base.shape):
        if abs(base[idx]) >= 1.5 or abs(grad[idx]) < 1e-6:
            continue
        hi = base.copy()
        hi[idx] += eps
        lo = base.copy()
        lo[idx] -= eps
        fd = (pixel_sum(hi) - pixel_sum(lo)) / (2 * eps)
        rel = abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-8)
        assert rel < 1e-3, f"voxel {idx}: fd {fd} vs analytic {grad[idx]}"
        checked += 1
        if checked >= 40:
            break
    assert checked >= 10


def test_depth_in_bounds_color_in_unit_cube():
    rng = np.random.default_rng(14)
    vol = RadianceVolume(rng.normal(scale=2.0, size=(4, 4, 4, 4)).astype(np.float32))
    cam = make_camera(w=8, h=8, near=0.5, far=5.0, pose=look_at_pose([2.0, 2.0, 2.0]))
    out = render(vol, cam, RaySampleSpec(m=32))
    assert out.depth.min() >= 0.5 - 1e-5 and out.depth.max() <= 5.0 + 1e-5
    assert out.color.min() >= -1e-7 and out.color.max() <= 1.0 + 1e-7
    assert out.opacity.min() >= -1e-7 and out.opacity.max() <= 1.0 + 1e-7


def test_opacity_monotone_in_density():
    vals = np.zeros((3, 3, 3, 4), dtype=np.float32)
    vol = RadianceVolume(vals)
    cam = make_camera(w=1, h=1, pose=look_at_pose([0.0, -2.0, 0.0]))
    spec = RaySampleSpec(m=16)
    base = render(vol, cam, spec).opacity[0, 0]
    for bump in (0.5, 1.0, 2.0):
        v2 = vals.copy()
        v2[1, 1, 1, 3] = bump
        o2 = render(RadianceVolume(v2), cam, spec).opacity[0, 0]
        assert o2 >= base - 1e-7
        base = o2


def test_render_depth_real_identity_constant_and_blocks():
    class View:
        depth = np.full((4, 4), 2.5, dtype=np.float32)

    np.testing.assert_array_equal(render_depth_real(View(), (4, 4)), View.depth)
    np.testing.assert_allclose(render_depth_real(View(), (2, 2)), 2.5, atol=1e-7)

    class Checker:
        depth = (np.indices((4, 4)).sum(0) % 2).astype(np.float32)

    np.testing.assert_allclose(render_depth_real(Checker(), (2, 2)), 0.5, atol=1e-7)

    class NoDepth:
        depth = None

    with pytest.raises(MissingDepthError):
        render_depth_real(NoDepth(), (4, 4))


def test_sample_count_ramp():
    assert [sample_count_for_scale(n, 6) for n in range(1, 7)] == [64, 77, 90, 102, 115, 128]
    assert sample_count_for_scale(1, 1) == 128


def test_camera_validation_errors():
    bad = np.eye(4)
    bad[0, 0] = 2.0
    with pytest.raises(ValueError):
        Camera(width=4, height=4, pose_c2w=bad, near=1.0, far=2.0, fov_deg=60.0)
    with pytest.raises(ValueError):
        Camera(width=4, height=4, pose_c2w=np.eye(4), near=2.0, far=1.0, fov_deg=60.0)
    with pytest.raises(ValueError):
        Camera(width=4, height=4, pose_c2w=np.eye(4), near=1.0, far=2.0)
    cam = Camera(width=4, height=4, pose_c2w=np.eye(4), near=1.0, far=2.0, focal_px=100.0)
    assert cam.focal == 100.0


def test_look_at_geometry():
    eye = np.array([1.0, 2.0, 2.5])
    pose = look_at_pose(eye)
    r = pose[:3, :3]
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
    fwd = -r[:, 2]
    np.testing.assert_allclose(fwd, -eye / np.linalg.norm(eye), atol=1e-12)


def test_write_render_round_trip(tmp_path):
    rng = np.random.default_rng(15)
    out = render(
        RadianceVolume(rng.normal(size=(4, 4, 4, 4)).astype(np.float32)),
        make_camera(),
        RaySampleSpec(m=8),
    )
    files = write_render(tmp_path, "v0", out)
    from singrav.imageops import load_color_png, load_depth_png

    c = load_color_png(files["color"])
    assert c.shape == out.color.shape
    assert np.abs(c - out.color).max() <= 0.5 / 255 + 1e-6
    d = load_depth_png(files["depth"])
    assert np.abs(d - out.depth).max() <= files["depth_scale"] / 2 + 1e-6

import inspect

import numpy as np
import pytest
import torch

from singrav.pyramid import (
    GeneratorStack,
    NoiseStack,
    PyramidConfig,
    build_discriminator,
    build_generator,
    generate_coarsest,
    refine,
    resample_volume_torch,
    scale_schedule,
    super_resolve,
)
from singrav.volume import RadianceVolume, make_csg_grid, resample_volume

TOY = PyramidConfig(
    n_scales=3,
    theta=2.0,
    mu_r=2.0,
    mu_s=2.0,
    base_volume_res=6,
    base_image_res=8,
    layers=3,
    hidden_channels=8,
    norm_3d="instance",
    seed=7,
)


def test_default_schedule_matches_published_table():
    s = scale_schedule(PyramidConfig())
    assert list(s.volume_res) == [40, 53, 71, 95, 126]
    assert list(s.image_res) == [32, 48, 72, 108, 160]
    assert s.final_image_res == 320


def test_minimal_two_scale_schedule():
    cfg = PyramidConfig(
        n_scales=2, theta=2.0, mu_r=2.0, mu_s=2.0, base_volume_res=8, base_image_res=8
    )
    s = scale_schedule(cfg)
    assert list(s.volume_res) == [8]
    assert list(s.image_res) == [8]
    assert s.final_image_res == 16


def test_schedule_rounding_rule():
    got = scale_schedule(PyramidConfig()).volume_res[2]
    assert got == 71  # round(40*(4/3)^2) under half-away rounding


def test_schedule_lengths_and_overrides():
    cfg = PyramidConfig(n_scales=4, volume_res_overrides={2: 60}, image_res_overrides={3: 50})
    s = scale_schedule(cfg)
    assert len(s.volume_res) == 3 and len(s.image_res) == 3
    assert s.volume_res[1] == 60
    assert s.image_res[2] == 50


def test_config_validation():
    with pytest.raises(ValueError):
        PyramidConfig(n_scales=1)
    with pytest.raises(ValueError):
        PyramidConfig(theta=1.0)
    with pytest.raises(ValueError):
        PyramidConfig(norm_3d="group")


def test_coarsest_shape_and_determinism():
    stack = GeneratorStack(TOY)
    dims = stack.schedule.volume_dims(1)
    noise = NoiseStack.sample(stack.schedule, seed=11)
    for g in stack.generators:
        g.eval()
    v1 = generate_coarsest(stack.generators[0], noise.z[0], stack.csg)
    v2 = generate_coarsest(stack.generators[0], noise.z[0], stack.csg)
    assert v1.shape == (*dims, 4)
    assert torch.equal(v1, v2)


def test_coarsest_zero_weights_ignores_noise():
    g = build_generator(1, TOY)
    for m in g.modules():
        if isinstance(m, torch.nn.Conv3d):
            m.weight.data.zero_()
            m.bias.data.uniform_(-1, 1, generator=torch.Generator().manual_seed(3))
    g.eval()
    csg = make_csg_grid((6, 6, 6))
    za = np.random.default_rng(0).standard_normal((6, 6, 6, 3)).astype(np.float32)
    zb = np.random.default_rng(1).standard_normal((6, 6, 6, 3)).astype(np.float32)
    va = generate_coarsest(g, za, csg)
    vb = generate_coarsest(g, zb, csg)
    assert torch.equal(va, vb)
    # constant over space per channel
    flat = va.reshape(-1, 4)
    assert torch.allclose(flat, flat[0].expand_as(flat), atol=1e-6)


def test_coarsest_shape_mismatch_raises():
    stack = GeneratorStack(TOY)
    bad = np.zeros((4, 4, 4, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        generate_coarsest(stack.generators[0], bad, stack.csg)


def test_refine_zero_residual_is_pure_upsample():
    stack = GeneratorStack(TOY)
    g2 = stack.generators[1]
    last = [m for m in g2.modules() if isinstance(m, torch.nn.Conv3d)][-1]
    last.weight.data.zero_()
    last.bias.data.zero_()
    g2.eval()
    prev = torch.randn(6, 6, 6, 4, generator=torch.Generator().manual_seed(5))
    zn = np.zeros((12, 12, 12, 4), dtype=np.float32)
    out = refine(g2, prev, zn)
    want = resample_volume_torch(prev, (12, 12, 12))
    assert torch.equal(out, want)


def test_refine_upsamples_40_to_53_under_defaults():
    cfg = PyramidConfig()
    sched = scale_schedule(cfg)
    g = build_generator(2, cfg)
    g.eval()
    prev = torch.zeros(40, 40, 40, 4)
    zn = np.zeros((*sched.volume_dims(2), 4), dtype=np.float32)
    with torch.no_grad():
        out = refine(g, prev, zn)
    assert out.shape == (53, 53, 53, 4)


def test_refine_rejects_bad_noise():
    stack = GeneratorStack(TOY)
    prev = torch.zeros(6, 6, 6, 4)
    with pytest.raises(ValueError):
        refine(stack.generators[1], prev, np.zeros((12, 12, 12, 3), dtype=np.float32))


def test_refine_has_no_grid_input():
    # coordinate anchoring exists only at the coarsest scale
    assert "csg" not in inspect.signature(refine).parameters
    assert "grid" not in inspect.signature(refine).parameters


def test_resample_torch_matches_numpy():
    rng = np.random.default_rng(9)
    vol = RadianceVolume(rng.normal(size=(5, 6, 4, 4)).astype(np.float32))
    t = torch.from_numpy(vol.values)
    got = resample_volume_torch(t, (8, 9, 7)).numpy()
    want = resample_volume(vol, (8, 9, 7)).values
    np.testing.assert_allclose(got, want, atol=1e-5)


def test_super_resolve_shapes_and_validation():
    sr = build_generator(TOY.n_scales, TOY)
    sr.eval()
    img = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(2))
    with torch.no_grad():
        out = super_resolve(sr, img, expected_side=16)
    assert out.shape == (1, 3, 32, 32)
    with pytest.raises(ValueError):
        super_resolve(sr, img, expected_side=160)


def test_super_resolve_zero_residual_is_bilinear():
    sr = build_generator(TOY.n_scales, TOY)
    last = [m for m in sr.modules() if isinstance(m, torch.nn.Conv2d)][-1]
    last.weight.data.zero_()
    last.bias.data.zero_()
    sr.eval()
    img = torch.rand(1, 3, 8, 8, generator=torch.Generator().manual_seed(4))
    with torch.no_grad():
        out = super_resolve(sr, img)
    want = torch.nn.functional.interpolate(
        img, scale_factor=2.0, mode="bilinear", align_corners=False
    )
    assert torch.equal(out, want)


def test_default_final_render_feeds_320_output():
    cfg = PyramidConfig()
    s = scale_schedule(cfg)
    assert s.image_res[-1] * cfg.mu_s == 320


def test_sample_scene_reproducible_and_seed_sensitive():
    stack = GeneratorStack(TOY)
    va, na = stack.sample_scene(seed=123)
    vb, _ = stack.sample_scene(noise=na)
    np.testing.assert_array_equal(va.values, vb.values)
    vc, _ = stack.sample_scene(seed=124)
    assert (va.values != vc.values).any()


def test_reconstruction_noise_is_zero_after_scale_one():
    stack = GeneratorStack(TOY)
    noise = stack.fixed_noise()
    assert noise.z[0].shape[-1] == 3
    for z in noise.z[1:]:
        assert not z.any()
    v1 = stack.reconstruction_volume()
    v2 = stack.reconstruction_volume()
    np.testing.assert_array_equal(v1.values, v2.values)


def test_discriminator_patch_geometry():
    cfg = PyramidConfig(layers=7)
    d = build_discriminator(1, cfg)
    x = torch.zeros(1, 4, 32, 32)
    with torch.no_grad():
        out = d(x)
    assert out.shape == (1, 1, 18, 18)  # seven pad-0 k3 convs shrink 14 px
    rf = 1 + sum(2 for _ in range(7))
    assert rf == 15
    assert build_discriminator(cfg.n_scales, cfg).in_channels == 6
    assert build_discriminator(cfg.n_scales - 1, cfg).in_channels == 4


def test_stack_save_load_round_trip(tmp_path):
    from singrav.pyramid import load_stack, save_stack

    stack = GeneratorStack(TOY)
    stack.ensure_z_star()
    stack.frozen[0] = True
    va, noise = stack.sample_scene(seed=55)
    save_stack(tmp_path, stack)
    back = load_stack(tmp_path)
    assert back.frozen[0] is True
    np.testing.assert_array_equal(back.z_star1, stack.z_star1)
    vb, _ = back.sample_scene(noise=noise)
    np.testing.assert_array_equal(va.values, vb.values)

import json
import math

import numpy as np
import pytest
import scipy.linalg

from singrav.dataio import make_synthetic_scene
from singrav.metrics import (
    MetricsConfig,
    diversity_mv,
    evaluate,
    frechet_distance,
    gaussian_stats,
    get_feature_extractor,
    sifid_mv,
    sifid_pair,
)
from singrav.pyramid import GeneratorStack, PyramidConfig

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
    seed=21,
)


@pytest.fixture(scope="module")
def extractor():
    return get_feature_extractor("random")


def rand_image(seed, side=24):
    rng = np.random.default_rng(seed)
    return rng.random((side, side, 3)).astype(np.float32)


def test_config_defaults_and_validation():
    cfg = MetricsConfig()
    assert cfg.views_m == 40 and cfg.scenes_j == 50
    with pytest.raises(ValueError):
        MetricsConfig(views_m=0)
    with pytest.raises(ValueError):
        MetricsConfig(scenes_j=1)


def test_frechet_identity_is_zero():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((50, 4))
    mu, cov = gaussian_stats(a)
    assert frechet_distance(mu, cov, mu, cov) < 1e-10


def test_frechet_closed_form_gaussians():
    # diagonal case: d^2 = |dmu|^2 + sum (sqrt(a_i) - sqrt(b_i))^2
    mu1, mu2 = np.array([0.0, 0.0]), np.array([3.0, 4.0])
    c1 = np.diag([4.0, 9.0])
    c2 = np.diag([1.0, 16.0])
    expected = 25.0 + (2 - 1) ** 2 + (3 - 4) ** 2
    assert abs(frechet_distance(mu1, c1, mu2, c2) - expected) < 1e-9


def test_frechet_general_oracle():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((200, 3))
    b = rng.standard_normal((180, 3)) @ np.diag([1.0, 2.0, 0.5]) + 1.0
    mu1, c1 = gaussian_stats(a)
    mu2, c2 = gaussian_stats(b)
    sq = scipy.linalg.sqrtm(c1 @ c2)
    expect = (mu1 - mu2) @ (mu1 - mu2) + np.trace(c1 + c2 - 2 * np.real(sq))
    assert abs(frechet_distance(mu1, c1, mu2, c2) - expect) < 1e-8


def test_gaussian_stats_hand_case():
    feats = np.array([[0.0, 0.0], [2.0, 2.0]])
    mu, cov = gaussian_stats(feats)
    np.testing.assert_allclose(mu, [1.0, 1.0])
    np.testing.assert_allclose(cov, [[2.0, 2.0], [2.0, 2.0]])


def test_sifid_identical_images_is_zero(extractor):
    img = rand_image(3)
    val, regularized = sifid_pair(img, img, extractor)
    assert val < 1e-4
    assert regularized  # 24px image yields fewer locations than 64 channels


def test_sifid_differs_for_different_images(extractor):
    a, b = rand_image(1), np.zeros((24, 24, 3), np.float32)
    val, _ = sifid_pair(a, b, extractor)
    assert val > 1e-3


def test_sifid_mv_alignment_and_zero(extractor):
    reference = [rand_image(10), rand_image(11)]
    generated = [[reference[0].copy(), reference[1].copy()] for _ in range(3)]
    assert sifid_mv(generated, reference, extractor) < 1e-4
    with pytest.raises(ValueError, match="views"):
        sifid_mv([[reference[0]]], reference, extractor)


def test_diversity_zero_when_scenes_identical():
    ref = [rand_image(5)]
    gen = [[ref[0].copy()] for _ in range(4)]
    assert diversity_mv(gen, ref) == 0.0


def test_diversity_hand_case():
    # two scenes with single-pixel renders 0 and 2; reference pixels {0, 2} have std 1
    ref = [np.array([[[0.0, 0.0, 0.0]], [[2.0, 2.0, 2.0]]])]
    gen = [[np.full((1, 1, 3), 0.0)], [np.full((1, 1, 3), 2.0)]]
    assert abs(diversity_mv(gen, ref) - 1.0) < 1e-12


def test_diversity_permutation_invariant():
    rng = np.random.default_rng(4)
    ref = [rand_image(6), rand_image(7)]
    gen = [[rng.random((8, 8, 3)) for _ in range(2)] for _ in range(5)]
    a = diversity_mv(gen, ref)
    order = [3, 0, 4, 1, 2]
    b = diversity_mv([gen[i] for i in order], ref)
    assert abs(a - b) < 1e-12


def test_diversity_constant_reference_excluded():
    ref = [np.ones((4, 4, 3)), rand_image(9, side=4)]
    gen = [[rand_image(100 + j, side=4) for _ in range(2)] for j in range(3)]
    with pytest.warns(UserWarning, match="constant"):
        val = diversity_mv(gen, ref)
    assert math.isfinite(val)
    only_second = diversity_mv([[g[1]] for g in gen], [ref[1]])
    assert abs(val - only_second) < 1e-12
    with pytest.raises(ValueError, match="constant"):
        with pytest.warns(UserWarning):
            diversity_mv([[g[0]] for g in gen], [ref[0]])


@pytest.fixture(scope="module")
def toy_setup():
    _, dataset = make_synthetic_scene(
        "spheres", resolution=(32, 32), views=3, seed=13, volume_res=16, m_samples=24
    )
    stack = GeneratorStack(TOY)
    stack.ensure_z_star()
    stack.frozen = [True] * TOY.n_scales
    return stack, dataset


def test_evaluate_requires_trained_stack(toy_setup):
    _, dataset = toy_setup
    fresh = GeneratorStack(TOY)
    with pytest.raises(RuntimeError, match="trained"):
        evaluate(fresh, dataset, MetricsConfig(views_m=1, scenes_j=2))


def test_evaluate_report_fields_and_determinism(tmp_path, toy_setup):
    stack, dataset = toy_setup
    cfg = MetricsConfig(views_m=2, scenes_j=2, seed=9, m_samples=8, feature_weights="random")
    report = evaluate(stack, dataset, cfg, out_path=tmp_path / "report.json")
    for key in ("config", "seed", "sifid_mv", "diversity_mv", "per_view", "wall_time"):
        assert key in report
    assert math.isfinite(report["sifid_mv"]) and report["sifid_mv"] >= 0
    assert math.isfinite(report["diversity_mv"]) and report["diversity_mv"] >= 0
    assert len(report["per_view"]) == 2
    for row in report["per_view"]:
        assert row["covariance_regularized"]  # toy renders are far smaller than 64 features
        assert math.isfinite(row["sifid"])
    on_disk = json.loads((tmp_path / "report.json").read_text())
    assert on_disk["sifid_mv"] == report["sifid_mv"]

    again = evaluate(stack, dataset, cfg)
    assert again["sifid_mv"] == report["sifid_mv"]
    assert again["diversity_mv"] == report["diversity_mv"]
    assert [r["view"] for r in again["per_view"]] == [r["view"] for r in report["per_view"]]

"""Ray generation, stratified sampling and the compositing quadrature."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from senerf import autodiff as ad
from senerf.renderer import (
    Camera,
    RenderError,
    composite,
    generate_rays,
    render_view,
    stratified_sample,
)
from senerf.scenedata import camera_from_pose, default_scene, oracle_render, PoseSpec


def _simple_camera(width=100, height=100, fx=100.0, position=(0.0, 0.0, 0.0)):
    return Camera(
        fx=fx,
        fy=fx,
        cx=width / 2.0,
        cy=height / 2.0,
        rotation=np.eye(3),
        position=np.asarray(position, dtype=np.float64),
        width=width,
        height=height,
        near=0.5,
        far=5.0,
    )


class ConstantField:
    """Fixed density and color everywhere; handy for renderer tests."""

    def __init__(self, sigma=1.0, color=(0.2, 0.4, 0.8)):
        self.sigma = sigma
        self.color = np.asarray(color, dtype=np.float32)

    def eval(self, x, d):
        n = x.shape[0]
        return (
            ad.Value(np.full(n, self.sigma, dtype=np.float32)),
            ad.Value(np.tile(self.color, (n, 1))),
        )


def test_camera_validation():
    with pytest.raises(RenderError, match="near"):
        Camera(100, 100, 32, 32, np.eye(3), np.zeros(3), 64, 64, near=2.0, far=1.0)
    with pytest.raises(RenderError, match="orthonormal"):
        Camera(100, 100, 32, 32, np.eye(3) * 2.0, np.zeros(3), 64, 64, 0.1, 1.0)
    with pytest.raises(RenderError, match="focal"):
        Camera(-1, 100, 32, 32, np.eye(3), np.zeros(3), 64, 64, 0.1, 1.0)


def test_ray_through_principal_point_is_forward_axis():
    cam = _simple_camera()
    _, dirs = generate_rays(cam)
    # pixel (49, 49) has center (49.5, 49.5); principal point is at 50.0
    center = cam.world_dir(cam.cx, cam.cy)
    np.testing.assert_allclose(center, [0.0, 0.0, 1.0], atol=1e-12)


def test_all_ray_directions_unit_norm():
    cam = camera_from_pose(PoseSpec(33.0, 21.0, 4.0), width=16, height=16)
    _, dirs = generate_rays(cam)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)


def test_pinhole_direction_hand_example():
    cam = _simple_camera(fx=100.0)
    origins, dirs = generate_rays(cam)
    # pixel (u=60, v=50): center (60.5, 50.5), camera-space ((60.5-50)/100, 0.005, 1)
    idx = 50 * cam.width + 60
    expected = np.array([10.5 / 100.0, 0.5 / 100.0, 1.0])
    expected /= np.linalg.norm(expected)
    np.testing.assert_allclose(dirs[idx], expected, atol=1e-12)
    np.testing.assert_array_equal(origins[idx], np.zeros(3))


def test_stratified_midpoints_without_jitter():
    t = stratified_sample(3, 4, 0.0, 1.0, jitter=False)
    expected = np.array([0.125, 0.375, 0.625, 0.875], dtype=np.float32)
    np.testing.assert_allclose(t, np.tile(expected, (3, 1)))


def test_stratified_samples_stay_in_their_bins():
    rng = np.random.default_rng(0)
    t = stratified_sample(50, 8, 2.0, 6.0, rng)
    width = 0.5
    for i in range(8):
        assert np.all(t[:, i] >= 2.0 + i * width)
        assert np.all(t[:, i] <= 2.0 + (i + 1) * width)


def test_stratified_deterministic_per_seed():
    a = stratified_sample(10, 16, 0.0, 1.0, np.random.default_rng(42))
    b = stratified_sample(10, 16, 0.0, 1.0, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_empty_space_composites_to_background():
    t = stratified_sample(2, 8, 0.0, 1.0, jitter=False)
    sigma = np.zeros((2, 8), dtype=np.float32)
    color = np.full((2, 8, 3), 0.5, dtype=np.float32)
    res = composite(sigma, color, t, 1.0, background=(1.0, 0.0, 0.5))
    np.testing.assert_allclose(res.color.data, np.tile([1.0, 0.0, 0.5], (2, 1)), atol=1e-7)
    np.testing.assert_allclose(res.opacity.data, 0.0, atol=1e-7)
    assert np.all(np.isinf(res.depth))


def _constant_medium(n_bins, sigma=2.0, dtype=np.float64):
    t = stratified_sample(1, n_bins, 0.0, 1.0, jitter=False).astype(dtype)
    sig = ad.Value(np.full((1, n_bins), sigma), dtype=dtype)
    col = np.zeros((1, n_bins, 3))
    col[..., 0] = 1.0
    return sig, ad.Value(col, dtype=dtype), t


def test_constant_medium_matches_closed_form():
    sig, col, t = _constant_medium(256)
    res = composite(sig, col, t, 1.0, background=(0.0, 0.0, 0.0))
    exact = 1.0 - np.exp(-2.0)
    assert abs(float(res.color.data[0, 0]) - exact) < 1e-3
    assert abs(float(res.opacity.data[0]) - exact) < 1e-3
    exact_depth = ((1.0 - 3.0 * np.exp(-2.0)) / 2.0) / exact
    assert abs(float(res.depth[0]) - exact_depth) < 2e-3


def test_constant_medium_error_halves_with_bin_doubling():
    exact = 1.0 - np.exp(-2.0)
    errors = []
    for n_bins in (64, 128, 256):
        sig, col, t = _constant_medium(n_bins)
        res = composite(sig, col, t, 1.0, background=(0.0, 0.0, 0.0))
        errors.append(abs(float(res.color.data[0, 0]) - exact))
    for coarse, fine in zip(errors, errors[1:]):
        ratio = fine / coarse
        assert 0.4 <= ratio <= 0.6


def test_weights_form_subprobability_and_opaque_bin_dominates():
    rng = np.random.default_rng(1)
    t = stratified_sample(20, 16, 1.0, 3.0, rng)
    sigma = rng.uniform(0.0, 5.0, size=(20, 16)).astype(np.float32)
    color = rng.uniform(0.0, 1.0, size=(20, 16, 3)).astype(np.float32)
    res = composite(sigma, color, t, 3.0)
    w = res.weights.data
    assert np.all(w >= 0.0)
    assert np.all(w.sum(axis=1) <= 1.0 + 1e-6)

    sigma = np.zeros((1, 16), dtype=np.float32)
    sigma[0, 5] = 1e4
    res = composite(sigma, color[:1], t[:1], 3.0)
    assert float(res.opacity.data[0]) > 0.999
    assert abs(float(res.depth[0]) - t[0, 5]) < 1e-4


def test_nonfinite_density_rejected_with_ray_identity():
    t = stratified_sample(3, 4, 0.0, 1.0, jitter=False)
    sigma = np.zeros((3, 4), dtype=np.float32)
    sigma[1, 2] = np.nan
    color = np.zeros((3, 4, 3), dtype=np.float32)
    with pytest.raises(RenderError, match="ray 1"):
        composite(sigma, color, t, 1.0)


def test_composite_gradients_single_precision():
    rng = np.random.default_rng(2)
    t = stratified_sample(4, 8, 0.5, 2.5, rng)
    sigma = ad.Parameter(rng.uniform(0.1, 2.0, size=(4, 8)).astype(np.float32), "sigma")
    color = ad.Parameter(rng.uniform(0.1, 0.9, size=(4, 8, 3)).astype(np.float32), "color")

    def fn():
        res = composite(sigma, color, t, 2.5)
        return ad.add(ad.sqnorm(res.color), ad.sqnorm(res.weights))

    err = ad.grad_check(fn, [sigma, color], n_samples=20, rng=np.random.default_rng(0))
    assert err < 1e-3


def test_translating_scene_and_camera_together_is_bit_identical():
    scene = default_scene()
    cam = camera_from_pose(PoseSpec(40.0, 20.0, 4.0), width=32, height=32)
    img_a, depth_a, _ = oracle_render(scene, cam)

    shift = np.array([0.13, -0.07, 0.21])
    import dataclasses as dc

    shifted_scene = dc.replace(
        scene,
        solids=[dc.replace(s, center=tuple(np.asarray(s.center) + shift)) for s in scene.solids],
    )
    shifted_cam = Camera(
        fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
        rotation=cam.rotation, position=cam.position + shift,
        width=cam.width, height=cam.height, near=cam.near, far=cam.far,
    )
    img_b, depth_b, _ = oracle_render(shifted_scene, shifted_cam)
    assert np.array_equal(img_a, img_b)
    assert np.array_equal(depth_a, depth_b)


def test_constant_field_renders_constant_image():
    cam = camera_from_pose(PoseSpec(0.0, 0.0, 4.0), width=8, height=8)
    view = render_view(ConstantField(sigma=3.0), cam, 32, jitter=False, background=(0, 0, 0))
    first = view.color[0, 0]
    assert np.allclose(view.color, first, atol=1e-6)
    assert np.all(view.opacity > 0.99)


def test_render_view_deterministic_per_seed_and_threads():
    cam = camera_from_pose(PoseSpec(10.0, 30.0, 4.0), width=16, height=16)
    field = ConstantField(sigma=0.7)
    a = render_view(field, cam, 16, seed=5, retain_weights=True)
    b = render_view(field, cam, 16, seed=5, retain_weights=True)
    c = render_view(field, cam, 16, seed=5, retain_weights=True, chunk=37, threads=4)
    assert np.array_equal(a.color, b.color)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.color, c.color)
    assert np.array_equal(a.weights, c.weights)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 64))
def test_weights_subprobability_property(seed, n_bins):
    rng = np.random.default_rng(seed)
    t = stratified_sample(3, n_bins, 0.1, 4.0, rng)
    sigma = rng.uniform(0.0, 10.0, size=(3, n_bins)).astype(np.float32)
    color = rng.uniform(size=(3, n_bins, 3)).astype(np.float32)
    res = composite(sigma, color, t, 4.0)
    w = res.weights.data
    assert np.all(w >= -1e-8)
    assert np.all(w.sum(axis=1) <= 1.0 + 1e-5)

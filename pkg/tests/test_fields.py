"""Field parameterizations: plane features, decoders, annealing, checkpoints."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from senerf import autodiff as ad
from senerf.fields import (
    AnnealSchedule,
    KPlanesConfig,
    KPlanesField,
    MlpConfig,
    MlpField,
    checkpoint_hash,
    field_eval,
    load_checkpoint,
    positional_encoding,
    save_checkpoint,
)


def _fill_planes(field, value):
    for plane in field.planes:
        plane.data[...] = value


def test_all_one_planes_give_unit_features():
    field = KPlanesField(KPlanesConfig(resolution=8, features=4), seed=0)
    _fill_planes(field, 1.0)
    pts = np.random.default_rng(0).uniform(-1, 1, size=(10, 3)).astype(np.float32)
    q = field.features(pts)
    np.testing.assert_allclose(q.data, np.ones((10, 4)), atol=1e-6)


def test_constant_two_planes_give_eight():
    field = KPlanesField(KPlanesConfig(resolution=8, features=4), seed=0)
    _fill_planes(field, 2.0)
    q = field.features(np.array([[0.3, -0.2, 0.7]], dtype=np.float32))
    np.testing.assert_allclose(q.data, np.full((1, 4), 8.0), rtol=1e-6)


def test_feature_at_shared_grid_node_is_product_of_node_values():
    cfg = KPlanesConfig(resolution=5, features=1)
    field = KPlanesField(cfg, seed=0)
    # node index 3 along each axis maps to coordinate -1 + 2*3/4 = 0.5
    field.planes[0].data[...] = 0.0
    field.planes[1].data[...] = 0.0
    field.planes[2].data[...] = 0.0
    field.planes[0].data[3, 3, 0] = 2.0
    field.planes[1].data[3, 3, 0] = 3.0
    field.planes[2].data[3, 3, 0] = 5.0
    q = field.features(np.array([[0.5, 0.5, 0.5]], dtype=np.float32))
    assert float(q.data[0, 0]) == pytest.approx(30.0, rel=1e-6)


def test_zero_plane_annihilates_features():
    field = KPlanesField(KPlanesConfig(resolution=8, features=4), seed=1)
    field.planes[1].data[...] = 0.0
    pts = np.random.default_rng(1).uniform(-1, 1, size=(20, 3)).astype(np.float32)
    q = field.features(pts)
    np.testing.assert_array_equal(q.data, np.zeros((20, 4)))


def test_features_are_continuous_within_a_cell():
    field = KPlanesField(KPlanesConfig(resolution=8, features=4), seed=2)
    base = np.array([[0.11, -0.37, 0.52]], dtype=np.float32)
    q0 = field.features(base).data
    q1 = field.features(base + 1e-4).data
    assert np.max(np.abs(q1 - q0)) < 1e-2


def test_out_of_box_points_clamp_and_count():
    field = KPlanesField(KPlanesConfig(resolution=8, features=4), seed=0)
    inside = field.features(np.array([[1.0, 1.0, 1.0]], dtype=np.float32)).data
    outside = field.features(np.array([[2.0, 3.0, 1.5]], dtype=np.float32)).data
    np.testing.assert_allclose(outside, inside, rtol=1e-6)
    assert field.clamp_count == 3


def test_zero_decoder_weights_give_softplus_zero_and_half_gray():
    field = KPlanesField(seed=0)
    for p in field.parameters()[3:]:
        p.data[...] = 0.0
    x = np.random.default_rng(0).uniform(-1, 1, size=(5, 3)).astype(np.float32)
    d = np.tile(np.array([[0.0, 0.0, 1.0]], dtype=np.float32), (5, 1))
    sigma, color = field.eval(x, d)
    np.testing.assert_allclose(sigma.data, np.full(5, np.log(2.0)), rtol=1e-5)
    np.testing.assert_allclose(color.data, np.full((5, 3), 0.5), atol=1e-6)


@pytest.mark.parametrize("variant_cls,cfg", [
    (KPlanesField, KPlanesConfig(resolution=8, features=4)),
    (MlpField, MlpConfig(hidden=16, depth=2, pos_bands=3)),
])
def test_density_nonnegative_and_color_in_unit_box(variant_cls, cfg):
    field = variant_cls(cfg, seed=3)
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(50, 3)).astype(np.float32)
    d = rng.normal(size=(50, 3)).astype(np.float32)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    sigma, color = field_eval(field, x, d)
    assert np.all(sigma.data >= 0.0)
    assert np.all(color.data > 0.0) and np.all(color.data < 1.0)


def test_field_eval_deterministic():
    field = KPlanesField(KPlanesConfig(resolution=8, features=4), seed=4)
    x = np.random.default_rng(4).uniform(-1, 1, size=(7, 3)).astype(np.float32)
    d = np.tile(np.array([[0.0, 0.0, 1.0]], dtype=np.float32), (7, 1))
    s1, c1 = field.eval(x, d)
    s2, c2 = field.eval(x, d)
    assert np.array_equal(s1.data, s2.data) and np.array_equal(c1.data, c2.data)


def test_default_config_parameter_count_under_50k():
    assert KPlanesField().n_params < 50_000


def test_field_eval_gradients_single_precision():
    field = KPlanesField(KPlanesConfig(resolution=6, features=4, hidden=12,
                                       geo_features=5), seed=5)
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.9, 0.9, size=(6, 3)).astype(np.float32)
    d = rng.normal(size=(6, 3)).astype(np.float32)
    d /= np.linalg.norm(d, axis=1, keepdims=True)

    def fn():
        sigma, color = field.eval(x, d)
        return ad.add(ad.sqnorm(sigma), ad.sqnorm(color))

    err = ad.grad_check(fn, field.parameters(), n_samples=10,
                        rng=np.random.default_rng(0))
    assert err < 1e-3


def test_anneal_weights_off_then_on():
    sched = AnnealSchedule(bands=4, horizon=100)
    np.testing.assert_array_equal(sched.weights(0), np.zeros(4))
    np.testing.assert_allclose(sched.weights(100), np.ones(4))
    np.testing.assert_allclose(sched.weights(10**6), np.ones(4))


def test_anneal_half_band():
    # eta - j = 0.5 -> weight (1 - cos(pi/2)) / 2 = 0.5
    sched = AnnealSchedule(bands=4, horizon=4)
    assert sched.weights(1)[0] == pytest.approx(1.0, abs=1e-12)
    assert sched.weights(1)[1] == pytest.approx(0.0, abs=1e-12)
    half = AnnealSchedule(bands=2, horizon=4).weights(1)
    assert half[0] == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 400))
def test_anneal_weights_monotone_and_bounded(bands, step):
    sched = AnnealSchedule(bands=bands, horizon=200)
    w_now = sched.weights(step)
    w_next = sched.weights(step + 1)
    assert np.all(w_now >= -1e-12) and np.all(w_now <= 1.0 + 1e-12)
    assert np.all(w_next >= w_now - 1e-12)


def test_positional_encoding_width():
    v = np.zeros((5, 3), dtype=np.float32)
    enc = positional_encoding(v, bands=4)
    assert enc.shape == (5, 3 + 3 * 2 * 4)
    enc = positional_encoding(v, bands=4, include_input=False)
    assert enc.shape == (5, 3 * 2 * 4)


def test_annealed_encoding_zeroes_gated_bands():
    v = np.random.default_rng(0).normal(size=(4, 2)).astype(np.float32)
    enc = positional_encoding(v, bands=3, weights=np.array([1.0, 0.0, 0.0]))
    assert np.any(enc[:, 2:6] != 0.0)
    np.testing.assert_array_equal(enc[:, 6:], np.zeros((4, 8)))


def test_mlp_anneal_advances_with_step():
    field = MlpField(MlpConfig(hidden=8, depth=1, pos_bands=4, anneal_horizon=100), seed=0)
    x = np.array([[0.2, 0.1, -0.3]], dtype=np.float32)
    d = np.array([[0.0, 0.0, 1.0]], dtype=np.float32)
    s0, _ = field.eval(x, d)
    field.step = 100
    s1, _ = field.eval(x, d)
    assert not np.array_equal(s0.data, s1.data)


def test_checkpoint_round_trip(tmp_path):
    field = KPlanesField(KPlanesConfig(resolution=8, features=4), seed=6)
    field.step = 123
    path = tmp_path / "field.ckpt"
    save_checkpoint(field, path, extra={"note": "test"})
    loaded, header = load_checkpoint(path)
    assert header["extra"]["note"] == "test"
    assert loaded.step == 123
    for a, b in zip(field.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(a.data.astype(np.float32), b.data)
    x = np.array([[0.1, 0.2, 0.3]], dtype=np.float32)
    d = np.array([[0.0, 0.0, 1.0]], dtype=np.float32)
    np.testing.assert_array_equal(field.eval(x, d)[0].data, loaded.eval(x, d)[0].data)


def test_checkpoint_hash_stable(tmp_path):
    field = KPlanesField(KPlanesConfig(resolution=8, features=4), seed=7)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(field, p1)
    save_checkpoint(field, p2)
    assert checkpoint_hash(p1) == checkpoint_hash(p2)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)

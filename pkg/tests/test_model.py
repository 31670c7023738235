import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mtml_reid.datagen import Batch, sample_batch
from mtml_reid.errors import IncompatibleCheckpoint, NoSuchHeadError, NumericFailure, ShapeError
from mtml_reid.model import (
    ModelConfig,
    ModelParams,
    backward,
    encode,
    forward_shared,
    head_logits,
    init_params,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    softmax,
)
from mtml_reid.objective import LossSpec

from oracles import finite_difference, naive_forward, naive_objective, relative_error


def test_init_shapes_and_determinism():
    cfg = ModelConfig(input_dim=16, hidden_dims=[32], feature_dim=8, heads=[5, 7], seed=4)
    p = init_params(cfg)
    assert [w.shape for w, _ in p.encoder] == [(16, 32), (32, 8)]
    assert [w.shape for w, _ in p.heads] == [(8, 5), (8, 7)]
    assert all(np.all(b == 0) for _, b in (*p.encoder, *p.heads))
    assert init_params(cfg) == p


def test_zero_scale_gives_bias_only_output():
    p = init_params(ModelConfig(input_dim=3, feature_dim=2, heads=[4], init_scale=0.0))
    v = forward_shared(p, np.array([1.0, -2.0, 3.0]))
    assert np.array_equal(v, np.zeros(2))
    assert np.array_equal(head_logits(p, v, 1), np.zeros(4))


def test_identity_layer_passes_features_through():
    p = ModelParams([(np.eye(4), np.zeros(4))], [(np.zeros((4, 2)), np.zeros(2))])
    x = np.array([0.5, -1.0, 2.0, -3.5])
    assert np.array_equal(forward_shared(p, x), x)


def test_forward_matches_naive_oracle(rng):
    p = init_params(ModelConfig(input_dim=4, hidden_dims=[5, 3], feature_dim=6, heads=[2], seed=8))
    for x in rng.normal(size=(10, 4)):
        np.testing.assert_allclose(forward_shared(p, x), naive_forward(p, x), rtol=0, atol=1e-12)


def test_forward_is_pure(small_params, rng):
    x = rng.normal(size=5)
    assert forward_shared(small_params, x).tobytes() == forward_shared(small_params, x).tobytes()


def test_forward_rejects_wrong_width(small_params):
    with pytest.raises(ShapeError, match="shape error"):
        forward_shared(small_params, np.zeros(7))


def test_head_logits_hand_example():
    p = ModelParams([(np.eye(1), np.zeros(1))], [(np.array([[2.0, -1.0]]), np.array([0.0, 1.0]))])
    assert head_logits(p, np.array([3.0]), 1).tolist() == [6.0, -2.0]
    p2 = init_params(ModelConfig(input_dim=2, feature_dim=2, heads=[3, 3]))
    with pytest.raises(NoSuchHeadError, match="no such head"):
        head_logits(p2, np.zeros(2), 3)


def test_softmax_examples():
    assert softmax([0.0, 0.0]).tolist() == [0.5, 0.5]
    big = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0) and big[1] < 1e-300
    np.testing.assert_allclose(softmax(np.log([1.0, 2.0, 3.0])), [1 / 6, 2 / 6, 3 / 6], rtol=0, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(z=arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
       c=st.floats(-100, 100))
def test_softmax_properties(z, c):
    s = softmax(z)
    assert np.all(s > 0)
    assert abs(s.sum() - 1.0) <= 1e-12
    shifted = softmax(z + c)
    np.testing.assert_allclose(shifted, s, rtol=0, atol=1e-12)
    assert np.argmax(shifted) == np.argmax(s) or np.isclose(s.max(), np.sort(s)[-2], atol=1e-12)


def test_single_class_heads_give_zero_gradient():
    from mtml_reid.datagen import CameraView, ICSDataset
    ds = ICSDataset(2, 3, [CameraView(1, 1, np.ones((2, 3)), [0, 0]), CameraView(2, 1, -np.ones((2, 3)), [0, 0])])
    p = init_params(ModelConfig(input_dim=3, hidden_dims=[4], feature_dim=2, heads=[1, 1], seed=1))
    report, g = loss_and_grad(p, sample_batch(ds, np.random.default_rng(0), 1, 2))
    assert report.total == 0.0
    assert all(np.all(a == 0) for a in g.arrays())


def test_uniform_logit_gradient_closed_form():
    # d=1 feature fixed at 1, zero head: logits are uniform, so dL/db = softmax - onehot
    p = ModelParams([(np.zeros((1, 1)), np.ones(1))], [(np.zeros((1, 2)), np.zeros(2))])
    batch = Batch(np.zeros((1, 1)), np.array([1]), np.array([1]))
    g = backward(p, batch, LossSpec(use_ml=False))
    assert g.heads[0][1].tolist() == [0.5, -0.5]
    assert g.heads[0][0].tolist() == [[0.5, -0.5]]


def _mixed_setup(small_dataset, small_params, seed=0):
    batch = sample_batch(small_dataset, np.random.default_rng(seed), 2, 3)
    extra = {
        (1, int(batch.labels[0])): ((0, 2), (1, 3)),
        (2, int(batch.labels[6])): ((2, 1),),
        (3, int(batch.labels[12])): ((0, 1),),
    }
    return batch, extra


@pytest.mark.parametrize("lam", [0.0, 0.5, 2.0])
def test_backward_matches_finite_differences(small_dataset, small_params, lam):
    batch, extra = _mixed_setup(small_dataset, small_params)
    g = backward(small_params, batch, LossSpec(lam, True), extra)
    f = lambda pp: naive_objective(pp, batch.features, batch.camera_ids, batch.labels, extra, lam)
    fd = finite_difference(small_params.copy(), f, 1e-5)
    for name, a, n in zip(g.array_names(), g.arrays(), fd):
        assert relative_error(a, n).max() <= 1e-4, name


def test_loss_value_matches_naive(small_dataset, small_params):
    batch, extra = _mixed_setup(small_dataset, small_params, seed=3)
    report, _ = loss_and_grad(small_params, batch, LossSpec(0.5, True), extra)
    ref = naive_objective(small_params, batch.features, batch.camera_ids, batch.labels, extra, 0.5)
    assert report.total == pytest.approx(ref, abs=1e-12)
    assert report.total == pytest.approx(report.mt_loss + 0.5 * report.ml_loss, abs=1e-12)


def test_total_gradient_is_mt_plus_lambda_ml(small_dataset, small_params):
    batch, extra = _mixed_setup(small_dataset, small_params, seed=5)
    g_mt = backward(small_params, batch, LossSpec(0.0, False), extra)
    g_both = backward(small_params, batch, LossSpec(1.0, True), extra)
    g_half = backward(small_params, batch, LossSpec(0.5, True), extra)
    for a, b, c in zip(g_mt.arrays(), g_both.arrays(), g_half.arrays()):
        np.testing.assert_allclose(c, a + 0.5 * (b - a), atol=1e-13)


def test_absent_camera_head_gets_no_gradient(small_dataset, small_params):
    batch = sample_batch(small_dataset, np.random.default_rng(0), 2, 2)
    keep = batch.camera_ids != 2
    sub = Batch(batch.features[keep], batch.camera_ids[keep], batch.labels[keep])
    g = backward(small_params, sub, LossSpec(0.5, True), None)
    assert np.all(g.heads[1][0] == 0) and np.all(g.heads[1][1] == 0)


def test_numeric_failure_names_layer(small_params, small_dataset):
    bad = small_params.copy()
    bad.encoder[0][0][0, 0] = np.inf
    batch = sample_batch(small_dataset, np.random.default_rng(0), 1, 1)
    with pytest.raises(NumericFailure, match="encoder.0"):
        backward(bad, batch)


def test_checkpoint_roundtrip(tmp_path, small_params, rng):
    cfg = small_params.config()
    save_checkpoint(small_params, tmp_path / "m.ckpt", cfg)
    back, cfg2 = load_checkpoint(tmp_path / "m.ckpt", with_config=True)
    assert back == small_params and cfg2 == cfg
    x = rng.normal(size=(4, 5))
    assert encode(back, x).tobytes() == encode(small_params, x).tobytes()


def test_checkpoint_truncated_or_mismatched(tmp_path, small_params):
    path = tmp_path / "m.ckpt"
    save_checkpoint(small_params, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(IncompatibleCheckpoint, match="incompatible checkpoint"):
        load_checkpoint(path)
    path.write_text("\n".join(["mtml-checkpoint 99", *lines[1:]]) + "\n")
    with pytest.raises(IncompatibleCheckpoint):
        load_checkpoint(path)
    lines[3] = " ".join(lines[3].split()[:-1])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(IncompatibleCheckpoint, match="value count"):
        load_checkpoint(path)

from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tboost.booster.connector import (
    ConnectorConfig,
    ConnectorModel,
    batch_hard_triplet,
    connector_loss,
    embed,
    encoder_forward,
    init_connector,
    msa_param_count,
    pooled_embedding,
    self_attention,
    triplet_satisfaction,
)
from tboost.booster.errors import ConfigError, DegenerateEmbeddingError, ShapeError
from tboost.booster.gradcheck import grad_check
from tboost.booster.nn import cast_params
from tboost.booster.tensor import Tensor

from conftest import leaf

SMALL = ConnectorConfig(feature_dim=6, layers=2, heads=2, model_dim=8, window=8)


def test_single_step_attention_returns_v(rng):
    x = rng.normal(size=(4, 1))
    w = leaf(rng.normal(size=(4, 6)))
    out, attn = self_attention(leaf(x), w, return_attention=True)
    assert_allclose(attn.data, [[1.0]])
    assert_allclose(out.data, (x.T @ w.data)[:, 4:6].T)


def test_zero_queries_attend_uniformly(rng):
    x = rng.normal(size=(4, 5))
    w = rng.normal(size=(4, 6))
    w[:, :2] = 0.0
    out, attn = self_attention(leaf(x), leaf(w), return_attention=True)
    assert_allclose(attn.data, np.full((5, 5), 0.2))
    v = x.T @ w[:, 4:6]
    assert_allclose(out.data, np.tile(v.mean(axis=0)[:, None], (1, 5)), atol=1e-12)


def test_two_step_attention_by_hand():
    # D = 2, D_h = 1: q, k, v read coordinates straight off x
    x = np.array([[1.0, 2.0], [0.5, -1.0]])
    w = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    out = self_attention(leaf(x), leaf(w)).data
    q, k, v = x[0], x[1], x[0] + x[1]
    expected = []
    for t in range(2):
        s = np.exp(q[t] * k) / np.exp(q[t] * k).sum()
        expected.append(s @ v)
    assert_allclose(out[0], expected, atol=1e-6)


def test_self_attention_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        self_attention(leaf(rng.normal(size=(4, 3))), leaf(rng.normal(size=(5, 6))))


def test_encoder_shape_and_attention_rows(rng):
    params = init_connector(SMALL, seed=0)
    for t in (1, 3, 10):
        attn = []
        z = encoder_forward(rng.normal(size=(6, t)), SMALL, params, attn_out=attn)
        assert z.shape == (8, t)
        assert len(attn) == SMALL.layers
        for a in attn:
            assert a.shape == (1, SMALL.heads, t, t)
            assert_allclose(a.sum(axis=-1), 1.0, atol=1e-6)


def test_encoder_is_permutation_equivariant(rng):
    params = cast_params(init_connector(SMALL, seed=1), np.float64)
    x = rng.normal(size=(6, 7))
    perm = rng.permutation(7)
    z = encoder_forward(x, SMALL, params).data
    zp = encoder_forward(x[:, perm], SMALL, params).data
    assert_allclose(zp, z[:, perm], atol=1e-10)


def test_embedding_ignores_frame_order_and_is_unit(rng):
    params = init_connector(SMALL, seed=2)
    x = rng.normal(size=(6, 12)).astype(np.float32)
    h = embed(x, SMALL, params)
    hp = embed(x[:, rng.permutation(12)], SMALL, params)
    assert abs(np.linalg.norm(h.h) - 1.0) < 1e-5
    assert_allclose(h.h, hp.h, atol=1e-6)
    assert h.distance(embed(x.copy(), SMALL, params)) == 0.0
    other = embed(rng.normal(size=(6, 12)), SMALL, params)
    assert 0.0 <= h.distance(other) <= 2.0


def test_long_tracklets_are_embedded_in_windows(rng):
    params = init_connector(SMALL, seed=3)
    x = rng.normal(size=(6, 40)).astype(np.float32)
    h = embed(x, SMALL, params)
    assert abs(np.linalg.norm(h.h) - 1.0) < 1e-5
    whole = embed(x, SMALL, params, chunk=False)
    assert abs(np.linalg.norm(whole.h) - 1.0) < 1e-5
    with pytest.raises(ShapeError):
        embed(np.zeros((6, 0)), SMALL, params)


def test_zero_pooled_vector_is_an_error(rng):
    params = init_connector(SMALL, seed=4)
    last = f"layers.{SMALL.layers - 1}"
    params[f"{last}.ln2.g"].data[:] = 0.0
    params[f"{last}.ln2.b"].data[:] = 0.0
    with pytest.raises(DegenerateEmbeddingError):
        embed(rng.normal(size=(6, 5)), SMALL, params)


def test_msa_params_do_not_depend_on_heads():
    counts = set()
    for k in (1, 2, 4, 8):
        cfg = ConnectorConfig(feature_dim=6, layers=1, heads=k, model_dim=64)
        counts.add(msa_param_count(init_connector(cfg, seed=0)))
    assert counts == {2 * 64 * 64 * 2}


def test_triplet_hinge_arithmetic():
    dist = Tensor(np.array([[0.0, 0.5, 0.6], [0.5, 0.0, 2.0], [0.6, 2.0, 0.0]]))
    loss = batch_hard_triplet(dist, np.array([0, 0, 1]), margin=0.2)
    assert loss.item() == pytest.approx(0.1)


def test_triplet_zero_for_separated_clusters(rng):
    h = np.vstack([np.tile([1.0, 0.0], (3, 1)), np.tile([0.0, 1.0], (3, 1))])
    h += rng.normal(scale=0.01, size=h.shape)
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    d = np.linalg.norm(h[:, None] - h[None], axis=-1)
    assert batch_hard_triplet(Tensor(d), np.array([0, 0, 0, 1, 1, 1]), 0.2).item() == 0.0


def test_triplet_needs_two_identities():
    with pytest.raises(ValueError):
        batch_hard_triplet(Tensor(np.zeros((3, 3))), np.array([1, 1, 1]), 0.2)


def test_connector_loss_combines_terms(rng):
    h = leaf(rng.normal(size=(4, 3)))
    logits = leaf(np.zeros((4, 5)))
    labels = np.array([0, 0, 1, 1])
    total, xent, triplet = connector_loss(h, logits, labels, margin=0.2, triplet_weight=0.5)
    assert xent.item() == pytest.approx(4 * math.log(5))
    assert total.item() == pytest.approx(xent.item() + 0.5 * triplet.item())
    with pytest.raises(ShapeError):
        connector_loss(h, logits, np.array([0, 1]))


def test_encoder_and_loss_gradients(rng):
    cfg = ConnectorConfig(feature_dim=5, layers=1, heads=2, model_dim=4, num_classes=2)
    params = cast_params(init_connector(cfg, seed=6), np.float64)
    x = rng.normal(size=(5, 4))
    assert grad_check(lambda: encoder_forward(x, cfg, params).sum(), params) < 1e-3
    xb = rng.normal(size=(4, 5, 3))
    labels = np.array([0, 0, 1, 1])

    def objective():
        h = pooled_embedding(xb, cfg, params)
        return connector_loss(h, h @ params["classifier.w"], labels, 0.2, 0.5)[0]

    assert grad_check(objective, params) < 1e-3


def test_triplet_satisfaction_on_clean_clusters(rng):
    emb = np.vstack([rng.normal(loc=c, scale=0.01, size=(4, 3)) for c in (0.0, 1.0, 2.0)])
    labels = np.repeat([0, 1, 2], 4)
    assert triplet_satisfaction(emb, labels, 500, rng) == 1.0
    with pytest.raises(ValueError):
        triplet_satisfaction(emb[:1], labels[:1], 10, rng)


def test_config_validation():
    with pytest.raises(ConfigError):
        ConnectorConfig(model_dim=10, heads=4)
    with pytest.raises(ConfigError):
        ConnectorConfig(margin=0.0)
    with pytest.raises(ConfigError):
        ConnectorConfig(triplet_weight=-1.0)
    assert ConnectorConfig(model_dim=64, heads=4).head_dim == 16


def test_model_save_load(tmp_path, rng):
    model = ConnectorModel(SMALL, init_connector(SMALL, seed=7))
    model.save(tmp_path / "c.tbst")
    loaded = ConnectorModel.load(tmp_path / "c.tbst")
    assert loaded.cfg == SMALL
    x = rng.normal(size=(6, 9)).astype(np.float32)
    assert_allclose(loaded.embed(x).h, model.embed(x).h)

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tboost.booster import nn
from tboost.booster.errors import DegenerateEmbeddingError, ShapeError
from tboost.booster.tensor import Tensor

from conftest import leaf


def naive_conv(x, w, d):
    c_out, c_in, _ = w.shape
    t = x.shape[1]
    xp = np.pad(x, ((0, 0), (d, d)))
    y = np.zeros((c_out, t))
    for c in range(c_out):
        for s in range(t):
            for i in range(c_in):
                for j in range(3):
                    y[c, s] += w[c, i, j] * xp[i, s + j * d]
    return y


@pytest.mark.parametrize("dilation", [1, 2, 4, 8])
def test_conv_matches_loops_and_keeps_length(dilation, rng):
    x = rng.normal(size=(3, 11))
    w = rng.normal(size=(2, 3, 3))
    y = nn.conv1d_dilated(leaf(x), leaf(w), dilation)
    assert y.shape == (2, 11)
    assert_allclose(y.data, naive_conv(x, w, dilation), atol=1e-12)


def test_conv_batched_equals_per_sample(rng):
    x = rng.normal(size=(2, 3, 7))
    w = leaf(rng.normal(size=(4, 3, 3)))
    y = nn.conv1d_dilated(leaf(x), w, 2)
    for b in range(2):
        assert_allclose(y.data[b], nn.conv1d_dilated(leaf(x[b]), w, 2).data)


def test_conv_rejects_bad_arguments(rng):
    x = leaf(rng.normal(size=(3, 7)))
    with pytest.raises(ShapeError):
        nn.conv1d_dilated(x, leaf(rng.normal(size=(2, 3, 5))), 1)
    with pytest.raises(ShapeError):
        nn.conv1d_dilated(x, leaf(rng.normal(size=(2, 4, 3))), 1)
    with pytest.raises(ShapeError):
        nn.conv1d_dilated(x, leaf(rng.normal(size=(2, 3, 3))), 0)


def test_softmax_rows_sum_to_one_and_ignore_shift(rng):
    a = rng.normal(size=(5, 7)) * 10
    p = nn.softmax_rows(leaf(a)).data
    assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    assert (p >= 0).all()
    shifted = nn.softmax_rows(leaf(a + rng.normal(size=(5, 1)) * 100)).data
    assert_allclose(p, shifted, atol=1e-9)


def test_log_softmax_agrees_with_softmax(rng):
    a = leaf(rng.normal(size=(3, 4)))
    assert_allclose(np.exp(nn.log_softmax(a).data), nn.softmax_rows(a).data, atol=1e-12)


def test_layer_norm_standardizes_rows(rng):
    x = leaf(rng.normal(3.0, 2.0, size=(4, 16)))
    y = nn.layer_norm(x, leaf(np.ones(16)), leaf(np.zeros(16))).data
    assert_allclose(y.mean(axis=-1), 0.0, atol=1e-9)
    assert_allclose(y.std(axis=-1), 1.0, atol=1e-3)


def test_l2_normalize_unit_rows_and_zero_row(rng):
    h = nn.l2_normalize(leaf(rng.normal(size=(4, 8)))).data
    assert_allclose(np.linalg.norm(h, axis=1), 1.0, atol=1e-9)
    with pytest.raises(DegenerateEmbeddingError):
        nn.l2_normalize(leaf(np.zeros((1, 8))))


def test_pairwise_distances(rng):
    h = rng.normal(size=(5, 3))
    d = nn.pairwise_distances(leaf(h)).data
    expected = np.linalg.norm(h[:, None] - h[None], axis=-1)
    assert_allclose(d, expected, atol=1e-5)
    assert_allclose(d, d.T)


def test_pairwise_distances_of_identical_rows_are_zero_with_finite_grad():
    h = leaf(np.array([[0.6, 0.8], [0.6, 0.8], [1.0, 0.0]]))
    d = nn.pairwise_distances(h)
    assert d.data[0, 1] == 0.0 and np.all(np.diag(d.data) == 0.0)
    d.sum().backward()
    assert np.all(np.isfinite(h.grad))


def test_cross_entropy_of_uniform_logits():
    logits = leaf(np.zeros((4, 5)))
    loss = nn.cross_entropy(logits, np.array([0, 1, 2, 3]))
    assert loss.item() == pytest.approx(4 * np.log(5))
    with pytest.raises(ShapeError):
        nn.cross_entropy(logits, np.array([0, 1]))


def test_pointwise_with_bias():
    x = leaf(np.ones((2, 3)))
    w = leaf(np.array([[1.0, 2.0], [0.0, -1.0]]))
    b = leaf(np.array([0.5, 1.0]))
    assert_allclose(nn.pointwise(x, w, b).data, [[3.5, 3.5, 3.5], [0.0, 0.0, 0.0]])


def test_init_helpers_are_float32_leaves(rng):
    p = nn.uniform_param(rng, (8, 4), fan_in=4)
    assert p.dtype == np.float32 and p.requires_grad
    assert np.abs(p.data).max() <= 0.5
    params = {"a.w": p, "a.b": nn.zeros_param((8,)), "b.w": nn.ones_param((2,))}
    assert nn.count_params(params) == 42
    assert nn.count_params(params, "a.") == 40
    cast = nn.cast_params(params, np.float64)
    assert all(isinstance(t, Tensor) and t.dtype == np.float64 for t in cast.values())

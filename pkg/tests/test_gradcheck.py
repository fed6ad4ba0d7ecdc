from __future__ import annotations

import numpy as np
import pytest

from tboost.booster import nn
from tboost.booster import tensor as T
from tboost.booster.gradcheck import grad_check

from conftest import leaf

TOL = 1e-3


def test_square_closed_form():
    x = leaf(3.0)
    assert grad_check(lambda: x * x, [x]) < 1e-6


def test_reports_wrong_gradient():
    x = leaf([0.7, -1.2])

    def bad(a):
        # value of a^2, gradient of a
        return T._result(a.data ** 2, (a,), lambda g: (g,), "bad")

    assert grad_check(lambda: bad(x).sum(), [x]) > 0.1


UNARY = {
    "exp": T.exp,
    "log": lambda a: T.log(a * a + 0.5),
    "sqrt": lambda a: T.sqrt(a * a + 0.5),
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "softplus": T.softplus,
    "square": T.square,
    "power": lambda a: T.power(a * a + 1.0, 1.5),
    "clamp": lambda a: T.clamp(a, -0.5, 0.5),
    "softmax_rows": nn.softmax_rows,
    "log_softmax": nn.log_softmax,
    "l2_normalize": lambda a: nn.l2_normalize(a + 3.0),
    "max": lambda a: T.max_(a, axis=-1),
    "mean": lambda a: T.mean(a, axis=0),
    "transpose": lambda a: a.T,
    "take": lambda a: a[np.array([0, 2, 2]), :],
}


def _away_from_kinks(rng, shape):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 0.05, 0.3, x)


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops(name, rng):
    op = UNARY[name]
    for _ in range(20):
        x = leaf(_away_from_kinks(rng, (3, 4)))
        if name == "clamp":
            x.data = np.where(np.abs(np.abs(x.data) - 0.5) < 0.05, 0.1, x.data)
        weights = rng.normal(size=op(x).shape)
        assert grad_check(lambda: (op(x) * weights).sum(), [x]) < TOL, name


@pytest.mark.parametrize("name", ["add", "sub", "mul", "div", "matmul"])
def test_binary_ops(name, rng):
    for _ in range(20):
        a = leaf(rng.normal(size=(3, 4)))
        if name == "matmul":
            b = leaf(rng.normal(size=(4, 2)))
            f = lambda: (a @ b).sum()
        else:
            b = leaf(rng.uniform(0.5, 2.0, size=(4,)))
            op = getattr(T, name)
            weights = rng.normal(size=(3, 4))
            f = lambda: (op(a, b) * weights).sum()
        assert grad_check(f, [a, b]) < TOL


def test_dilated_conv(rng):
    for d in (1, 2, 4):
        x = leaf(rng.normal(size=(2, 3, 9)))
        w = leaf(rng.normal(size=(4, 3, 3)))
        weights = rng.normal(size=(2, 4, 9))
        assert grad_check(lambda: (nn.conv1d_dilated(x, w, d) * weights).sum(), [x, w]) < TOL


def test_layer_norm(rng):
    x = leaf(rng.normal(size=(3, 6)))
    g = leaf(rng.normal(size=(6,)))
    b = leaf(rng.normal(size=(6,)))
    weights = rng.normal(size=(3, 6))
    assert grad_check(lambda: (nn.layer_norm(x, g, b) * weights).sum(), [x, g, b]) < TOL


def test_pairwise_distances_and_cross_entropy(rng):
    h = leaf(rng.normal(size=(4, 3)))
    assert grad_check(lambda: nn.pairwise_distances(h).sum(), [h]) < TOL
    logits = leaf(rng.normal(size=(5, 3)))
    labels = np.array([0, 2, 1, 1, 0])
    assert grad_check(lambda: nn.cross_entropy(logits, labels), [logits]) < TOL

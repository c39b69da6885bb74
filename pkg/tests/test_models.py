import numpy as np
import pytest

from purifyattack import adcore as ad
from purifyattack.models import (OptimState, adam_step, classify, cross_entropy, eps_theta, init_classifier,
                                 init_eps_model, predict, time_embed)
from purifyattack.rng import Streams


def test_time_embed_examples():
    assert np.array_equal(time_embed(0, 4), [0, 0, 1, 1])
    assert np.array_equal(time_embed(0, 8), [0, 0, 0, 0, 1, 1, 1, 1])
    assert np.allclose(time_embed(1, 2), [0.84147098, 0.54030231], atol=1e-8)
    assert time_embed(np.arange(3), 6).shape == (3, 6)
    with pytest.raises(ValueError):
        time_embed(1, 3)


def test_eps_theta_zero_params_and_shape():
    x = Streams(0).normal("x", (5, 2))
    zero = init_eps_model(2, (8, 8), 4, zero=True)
    assert np.array_equal(eps_theta(zero, x, 3), np.zeros((5, 2)))
    p = init_eps_model(2, (8, 8), 4, Streams(1))
    assert eps_theta(p, x, 3).shape == x.shape
    assert eps_theta(p, x, np.arange(5)).shape == x.shape
    with pytest.raises(ad.ShapeError):
        eps_theta(p, np.ones((5, 3)), 3)


def test_eps_theta_gradient_matches_finite_differences():
    p = init_eps_model(2, (16, 16), 4, Streams(2))
    x0 = Streams(3).normal("x", (3, 2))
    w = Streams(4).normal("w", (3, 2))
    with ad.Tape() as tape:
        x = tape.var(x0)
        g = tape.backward(eps_theta(p, x, 7.5), w)[x]
    fd = ad.finite_diff_grad(lambda v: float(np.sum(eps_theta(p, v, 7.5) * w)), x0)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) <= 1e-5


def test_classify_examples():
    x = Streams(0).uniform("x", (4, 2))
    zero = init_classifier(2, 3, (5,), zero=True)
    assert np.array_equal(classify(zero, x), np.zeros((4, 3)))
    assert np.array_equal(predict(zero, x), [0, 0, 0, 0])
    p = init_classifier(2, 3, (8,), Streams(1))
    assert np.array_equal(classify(p, x), classify(p, x))
    with ad.Tape() as tape:
        leaf = tape.var(x)
        g = tape.backward(ad.tsum(cross_entropy(classify(p, leaf), [0, 1, 2, 0])))[leaf]
    fd = ad.finite_diff_grad(lambda v: float(np.sum(cross_entropy(classify(p, v), [0, 1, 2, 0]))), x)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) <= 1e-5


def test_cross_entropy_examples():
    assert abs(float(cross_entropy(np.array([0.3, 0.3]), 1)) - np.log(2)) < 1e-12
    assert abs(float(cross_entropy(np.array([10.0, -10.0]), 0)) - 2.0611536e-9) < 1e-15
    assert abs(float(cross_entropy(np.zeros(4), 3)) - np.log(4)) < 1e-12
    with pytest.raises(ValueError):
        cross_entropy(np.zeros(2), 2)
    assert np.all(cross_entropy(Streams(0).normal("z", (50, 3)), np.zeros(50, dtype=int)) >= 0)


def test_adam_examples():
    params = {"w": np.array([1.0, -2.0])}
    adam_step(params, {"w": np.zeros(2)}, OptimState())
    assert np.array_equal(params["w"], [1.0, -2.0])

    params = {"w": np.array(1.0)}
    state = OptimState(lr=0.1)
    adam_step(params, {"w": 2 * params["w"]}, state)
    assert abs(params["w"]) < 1.0 and state.step == 1
    for _ in range(499):
        adam_step(params, {"w": 2 * params["w"]}, state)
    assert abs(params["w"]) < 1e-3

    with pytest.raises(KeyError):
        adam_step({"a": np.ones(1), "b": np.ones(1)}, {"a": np.ones(1)}, OptimState())

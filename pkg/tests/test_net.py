import math

import numpy as np
import pytest

from megacl.net import (Batch, NetworkSpec, NumericOverflowError, evaluate, init_params, loss_and_grad, predict,
                        sgd_step)


def central_diff(spec, w, batch, h=1e-5):
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (loss_and_grad(spec, w + e, batch).loss - loss_and_grad(spec, w - e, batch).loss) / (2 * h)
    return g


def away_from_kinks(spec, w, X, margin=1e-3):
    """True when no hidden pre-activation sits within ``margin`` of zero."""
    trunk, _ = spec.unpack(w)
    a = X
    for W, b in trunk:
        z = a @ W + b
        if np.abs(z).min() < margin:
            return False
        a = np.maximum(z, 0)
    return True


def random_case(spec, rng, n=4, heads=None):
    while True:
        w = rng.normal(0, 0.7, spec.num_params)
        X = rng.normal(size=(n, spec.input_dim))
        if away_from_kinks(spec, w, X):
            break
    y = rng.integers(spec.classes_per_head, size=n)
    head = 0 if heads is None else heads
    return w, Batch(X, y, head)


def test_param_count_mnist_mlp():
    spec = NetworkSpec.from_dims([784, 256, 256, 10])
    assert spec.num_params == 784 * 256 + 256 + 256 * 256 + 256 + 256 * 10 + 10 == 269_322


def test_multi_head_param_count():
    spec = NetworkSpec(6, (5, 4), heads=3, classes_per_head=2)
    assert spec.num_params == 6 * 5 + 5 + 5 * 4 + 4 + 3 * (4 * 2 + 2)


def test_init_deterministic_and_centered():
    spec = NetworkSpec.from_dims([4, 3, 2])
    assert np.array_equal(init_params(spec, 7), init_params(spec, 7))
    assert not np.array_equal(init_params(spec, 7), init_params(spec, 8))
    big = NetworkSpec.from_dims([50, 40, 30, 10])
    w = init_params(big, 0)
    assert abs(w.mean()) < 3 * w.std() / math.sqrt(len(w))


def test_init_glorot_bounds_and_zero_bias():
    spec = NetworkSpec.from_dims([30, 20, 10])
    w = init_params(spec, 1)
    trunk, heads = spec.unpack(w)
    for W, b in trunk + heads:
        limit = math.sqrt(6 / (W.shape[0] + W.shape[1]))
        assert np.abs(W).max() <= limit
        assert np.all(b == 0)


@pytest.mark.parametrize("classes", [2, 3, 10])
def test_zero_weights_give_log_c(classes):
    spec = NetworkSpec(5, (4,), classes_per_head=classes)
    rng = np.random.default_rng(0)
    batch = Batch(rng.normal(size=(7, 5)), rng.integers(classes, size=7))
    assert loss_and_grad(spec, np.zeros(spec.num_params), batch).loss == pytest.approx(math.log(classes), rel=1e-15)


def test_gradient_matches_finite_differences():
    spec = NetworkSpec.from_dims([6, 5, 4, 3])
    rng = np.random.default_rng(1)
    for _ in range(20):
        w, batch = random_case(spec, rng)
        g = loss_and_grad(spec, w, batch).grad
        fd = central_diff(spec, w, batch)
        rel = np.abs(g - fd) / np.maximum(1e-8, np.abs(g) + np.abs(fd))
        assert rel.max() < 1e-6


def test_multi_head_gradient_and_isolation():
    spec = NetworkSpec(6, (5, 4), heads=3, classes_per_head=3)
    rng = np.random.default_rng(2)
    w, batch = random_case(spec, rng, n=6, heads=np.array([0, 2, 2, 0, 2, 0]))
    g = loss_and_grad(spec, w, batch).grad
    assert np.array_equal(g[spec.head_slice(1)], np.zeros(spec.head_slice(1).stop - spec.head_slice(1).start))
    fd = central_diff(spec, w, batch)
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_single_head_batch_touches_only_its_head():
    spec = NetworkSpec(4, (3,), heads=4, classes_per_head=2)
    rng = np.random.default_rng(3)
    w = init_params(spec, 0)
    g = loss_and_grad(spec, w, Batch(rng.normal(size=(5, 4)), rng.integers(2, size=5), 2)).grad
    for h in (0, 1, 3):
        assert np.all(g[spec.head_slice(h)] == 0.0)
    assert np.any(g[spec.head_slice(2)] != 0.0)


def test_replicated_batch_same_loss_and_grad():
    spec = NetworkSpec.from_dims([6, 5, 3])
    rng = np.random.default_rng(4)
    w = init_params(spec, 4)
    X, y = rng.normal(size=(5, 6)), rng.integers(3, size=5)
    one = loss_and_grad(spec, w, Batch(X, y))
    two = loss_and_grad(spec, w, Batch(np.vstack([X, X]), np.concatenate([y, y])))
    assert two.loss == pytest.approx(one.loss, rel=1e-14)
    assert np.allclose(two.grad, one.grad, rtol=1e-13, atol=1e-16)


def test_loss_stable_for_huge_logits():
    spec = NetworkSpec(2, (), classes_per_head=2)
    w = np.array([1e3, -1e3, 0, 0, 0, 0], dtype=float)
    res = loss_and_grad(spec, w, Batch(np.array([[1.0, 0.0]]), np.array([1])))
    assert res.loss == pytest.approx(2e3)
    assert np.all(np.isfinite(res.grad))


def test_non_finite_raises_overflow():
    spec = NetworkSpec(2, (2,), classes_per_head=2)
    w = np.full(spec.num_params, 1e200)
    with pytest.raises(NumericOverflowError):
        loss_and_grad(spec, w, Batch(np.array([[1e200, 1e200]]), np.array([0])))


def test_bad_batches_rejected():
    spec = NetworkSpec(3, (2,), heads=2, classes_per_head=2)
    w = init_params(spec, 0)
    with pytest.raises(ValueError):
        loss_and_grad(spec, w, Batch(np.zeros((2, 4)), np.array([0, 1])))
    with pytest.raises(ValueError):
        loss_and_grad(spec, w, Batch(np.zeros((2, 3)), np.array([0, 2])))
    with pytest.raises(ValueError):
        loss_and_grad(spec, w, Batch(np.zeros((2, 3)), np.array([0, 1]), 2))


def test_sgd_step_arithmetic():
    w = np.array([1.0, 1.0])
    assert np.array_equal(sgd_step(w, np.array([10.0, -10.0]), 0.1), np.array([0.0, 2.0]))
    assert np.array_equal(sgd_step(w, np.zeros(2), 0.5), w)
    with pytest.raises(ValueError):
        sgd_step(w, w, 0.0)


def test_two_steps_differ_from_one_summed_step():
    spec = NetworkSpec.from_dims([4, 6, 3])
    rng = np.random.default_rng(5)
    w = init_params(spec, 5)
    b1 = Batch(rng.normal(size=(4, 4)), rng.integers(3, size=4))
    b2 = Batch(rng.normal(size=(4, 4)), rng.integers(3, size=4))
    g1 = loss_and_grad(spec, w, b1).grad
    w1 = sgd_step(w, g1, 0.5)
    seq = sgd_step(w1, loss_and_grad(spec, w1, b2).grad, 0.5)
    summed = sgd_step(w, g1 + loss_and_grad(spec, w, b2).grad, 0.5)
    assert not np.allclose(seq, summed)


def test_trajectory_bitwise_deterministic():
    spec = NetworkSpec.from_dims([5, 4, 3])
    rng = np.random.default_rng(6)
    batches = [Batch(rng.normal(size=(3, 5)), rng.integers(3, size=3)) for _ in range(10)]

    def run():
        w = init_params(spec, 9)
        for b in batches:
            w = sgd_step(w, loss_and_grad(spec, w, b).grad, 0.1)
        return w

    assert run().tobytes() == run().tobytes()


def test_evaluate_cases():
    spec = NetworkSpec.from_dims([3, 4, 5])
    rng = np.random.default_rng(7)
    w = init_params(spec, 1)
    X = rng.normal(size=(20, 3))
    assert evaluate(spec, w, [Batch(X, predict(spec, w, X))]) == 1.0
    wrong = (predict(spec, w, X[:1]) + 1) % 5
    assert evaluate(spec, w, [Batch(X[:1], wrong)]) == 0.0
    with pytest.raises(ValueError):
        evaluate(spec, w, [])
    with pytest.raises(ValueError):
        evaluate(spec, w, [Batch(X[:2], np.zeros(2, int), np.array([0, 0])), Batch(X[:2], np.zeros(2, int), 1)])


def test_uniform_net_accuracy_near_chance():
    spec = NetworkSpec.from_dims([4, 3, 10])
    rng = np.random.default_rng(8)
    n = 10_000
    y = rng.integers(10, size=n)
    acc = evaluate(spec, np.zeros(spec.num_params), [Batch(rng.normal(size=(n, 4)), y)])
    # all-tied logits predict class 0, so accuracy is the share of label 0
    assert acc == np.mean(y == 0)
    assert abs(acc - 0.1) < 4 * math.sqrt(0.09 / n)

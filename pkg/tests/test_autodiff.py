"""Finite-difference checks for every tape op."""

import numpy as np
import pytest

from iralign import autodiff as ad


def numeric_grad(fn, arrays, index, eps=1e-6):
    """Central differences of scalar fn w.r.t. arrays[index], all float64."""
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[index])
    flat = grad.ravel()
    target = base[index].ravel()
    for i in range(target.size):
        orig = target[i]
        target[i] = orig + eps
        hi = fn(*base)
        target[i] = orig - eps
        lo = fn(*base)
        target[i] = orig
        flat[i] = (hi - lo) / (2.0 * eps)
    return grad


def check(fn_np, fn_t, arrays, tol=1e-6):
    tensors = [ad.Tensor(a) for a in arrays]
    out = fn_t(*tensors)
    out.backward()
    for i, t in enumerate(tensors):
        num = numeric_grad(fn_np, arrays, i)
        ana = t.grad if t.grad is not None else np.zeros_like(arrays[i])
        denom = np.maximum(np.abs(num) + np.abs(ana), 1e-4)
        rel = np.abs(num - ana) / denom
        assert rel.max() < tol, f"arg {i}: max rel err {rel.max():.3g}"


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_add_mul_broadcast(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    check(
        lambda a, b: float(((a + b) * (a - 2.0 * b)).sum()),
        lambda a, b: ((a + b) * (a - 2.0 * b)).sum(),
        [a, b],
    )


def test_div_pow(rng):
    a = rng.normal(size=(2, 3)) + 3.0
    b = rng.normal(size=(2, 3)) + 3.0
    check(
        lambda a, b: float(((a / b) ** 2).sum()),
        lambda a, b: ((a / b) ** 2).sum(),
        [a, b],
    )


def test_matmul_2d(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    check(
        lambda a, b: float((a @ b).sum()),
        lambda a, b: (a @ b).sum(),
        [a, b],
    )


def test_matmul_batched(rng):
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 4, 3))
    check(
        lambda a, b: float(((a @ b) ** 2).sum()),
        lambda a, b: ((a @ b) ** 2).sum(),
        [a, b],
    )


def test_activations(rng):
    # keep values away from the kinks so central differences are clean
    a = rng.normal(size=(5, 5))
    a[np.abs(a) < 0.1] += 0.3
    for np_fn, t_fn in [
        (lambda x: np.exp(x), lambda t: t.exp()),
        (lambda x: np.where(x > 0, x, 0.0), lambda t: t.relu()),
        (lambda x: np.where(x > 0, x, 0.2 * x), lambda t: t.leaky_relu(0.2)),
        (lambda x: np.where(x > 0, x, np.expm1(x)), lambda t: t.elu()),
        (lambda x: 1.0 / (1.0 + np.exp(-x)), lambda t: t.sigmoid()),
        (lambda x: np.tanh(x), lambda t: t.tanh()),
    ]:
        check(
            lambda a, f=np_fn: float((f(a) ** 2).sum()),
            lambda a, f=t_fn: (f(a) ** 2).sum(),
            [a],
        )


def test_log_sqrt(rng):
    a = rng.uniform(0.5, 2.0, size=(4, 3))
    check(lambda a: float(np.log(a).sum()), lambda a: a.log().sum(), [a])
    check(lambda a: float(np.sqrt(a).sum()), lambda a: a.sqrt().sum(), [a])


def test_mean_axes(rng):
    a = rng.normal(size=(3, 4, 5))
    check(
        lambda a: float((a.mean(axis=1) ** 2).sum()),
        lambda a: (a.mean(axis=1) ** 2).sum(),
        [a],
    )
    check(
        lambda a: float((a.mean() ** 2)),
        lambda a: a.mean() ** 2,
        [a],
    )


def test_reshape_transpose_getitem(rng):
    a = rng.normal(size=(4, 6))
    check(
        lambda a: float((a.reshape(2, 12).T ** 2).sum()),
        lambda a: (a.reshape(2, 12).transpose(1, 0) ** 2).sum(),
        [a],
    )
    check(
        lambda a: float((a[1:3, ::2] ** 2).sum()),
        lambda a: (a[1:3, ::2] ** 2).sum(),
        [a],
    )


def test_concat(rng):
    a = rng.normal(size=(3, 2))
    b = rng.normal(size=(3, 5))
    check(
        lambda a, b: float((np.concatenate([a, b], axis=1) ** 2).sum()),
        lambda a, b: (ad.concat([a, b], axis=1) ** 2).sum(),
        [a, b],
    )


def test_take(rng):
    table = rng.normal(size=(6, 3))
    idx = np.array([0, 2, 2, 5])
    check(
        lambda t: float((t[idx] ** 2).sum()),
        lambda t: (ad.take(t, idx) ** 2).sum(),
        [table],
    )


def test_segment_sum(rng):
    values = rng.normal(size=(5, 3))
    seg = np.array([0, 1, 0, 2, 1])

    def np_fn(v):
        acc = np.zeros((3, 3))
        np.add.at(acc, seg, v)
        return float((acc**2).sum())

    check(np_fn, lambda v: (ad.segment_sum(v, seg, 3) ** 2).sum(), [values])


def test_softmax_rows_sum_to_one(rng):
    logits = rng.normal(size=(4, 7))
    probs = ad.softmax(ad.Tensor(logits), axis=-1)
    np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-12)
    check(
        lambda x: float(
            ((np.exp(x - x.max(-1, keepdims=True)) / np.exp(x - x.max(-1, keepdims=True)).sum(-1, keepdims=True)) ** 2).sum()
        ),
        lambda x: (ad.softmax(x, axis=-1) ** 2).sum(),
        [logits],
    )


def test_segment_softmax(rng):
    logits = rng.normal(size=(6,))
    seg = np.array([0, 0, 1, 1, 1, 2])

    def np_fn(x):
        out = np.zeros_like(x)
        for s in range(3):
            m = seg == s
            e = np.exp(x[m] - x[m].max())
            out[m] = e / e.sum()
        return float((out**2).sum())

    probs = ad.segment_softmax(ad.Tensor(logits), seg, 3)
    sums = np.zeros(3)
    np.add.at(sums, seg, probs.data)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)
    check(np_fn, lambda x: (ad.segment_softmax(x, seg, 3) ** 2).sum(), [logits])


def test_sigmoid_cross_entropy(rng):
    logits = rng.normal(size=(8,)) * 3.0
    targets = (rng.uniform(size=8) > 0.5).astype(np.float64)

    def np_fn(x):
        loss = np.maximum(x, 0.0) - x * targets + np.log1p(np.exp(-np.abs(x)))
        return float(loss.sum())

    check(np_fn, lambda x: ad.sigmoid_cross_entropy(x, targets).sum(), [logits])


def test_grad_accumulates_on_reuse(rng):
    a = ad.Tensor(np.array([2.0, 3.0]))
    out = (a * a).sum() + a.sum()
    out.backward()
    np.testing.assert_allclose(a.grad, np.array([5.0, 7.0]))

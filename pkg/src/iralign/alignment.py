"""Composite kernel and the squared maximum mean discrepancy between batches.

Three computation paths with one definition: mmd_loss sums pairwise kernel
values with math.fsum, so its multiset-level axioms (symmetry, identity,
permutation invariance) hold exactly in 64-bit floats; mmd_loss_tensor is
the vectorized differentiable path used by training; mmd_oracle re-derives
the value with plain scalar loops as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


DEFAULT_ALPHA = 0.8
DEFAULT_GAMMA = 0.005


class DimensionMismatch(Exception):
    pass


class EmptyBatch(Exception):
    pass


@dataclass(frozen=True)
class KernelConfig:
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class FeatureBatch:
    vectors: np.ndarray
    language: str

    def __post_init__(self):
        arr = np.asarray(self.vectors)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise EmptyBatch(f"need an n x d matrix with n >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature batch contains non-finite entries")
        object.__setattr__(self, "vectors", arr)


def _vectors(batch) -> np.ndarray:
    if isinstance(batch, FeatureBatch):
        return batch.vectors
    arr = np.asarray(batch)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise EmptyBatch(f"need an n x d matrix with n >= 1, got {arr.shape}")
    return arr


def _kernel_value(x, y, cfg: KernelConfig) -> float:
    dot = math.fsum(float(a) * float(b) for a, b in zip(x, y))
    sq = math.fsum((float(a) - float(b)) ** 2 for a, b in zip(x, y))
    return cfg.alpha * dot + (1.0 - cfg.alpha) * math.exp(-cfg.gamma * sq)


def composite_kernel(x, y, cfg: KernelConfig) -> float:
    """Mix of a linear kernel and a Gaussian kernel on the squared distance."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionMismatch(f"{x.shape} vs {y.shape}")
    return _kernel_value(x, y, cfg)


def _gram_fsum(xs: np.ndarray, ys: np.ndarray, cfg: KernelConfig) -> float:
    return math.fsum(_kernel_value(x, y, cfg) for x in xs for y in ys)


def mmd_loss(S, V, cfg: KernelConfig) -> float:
    """Biased two-sample estimate: mean within-S + mean within-V - 2 mean cross.

    Diagonal pairs are included. fsum makes each of the three sums a function
    of its value multiset only, so reordering rows or swapping the batches
    cannot change the result, and identical batches give exactly zero.
    """
    xs = np.asarray(_vectors(S), dtype=np.float64)
    ys = np.asarray(_vectors(V), dtype=np.float64)
    if xs.shape[1] != ys.shape[1]:
        raise DimensionMismatch(f"{xs.shape} vs {ys.shape}")
    n_s, n_v = xs.shape[0], ys.shape[0]
    term_ss = _gram_fsum(xs, xs, cfg) / (n_s * n_s)
    term_vv = _gram_fsum(ys, ys, cfg) / (n_v * n_v)
    cross = 2.0 * (_gram_fsum(xs, ys, cfg) / (n_s * n_v))
    return (term_ss + term_vv) - cross


def mmd_oracle(S, V, cfg: KernelConfig) -> float:
    """Same quantity via explicit scalar double loops; the test reference."""
    xs = np.asarray(_vectors(S), dtype=np.float64)
    ys = np.asarray(_vectors(V), dtype=np.float64)
    if xs.shape[1] != ys.shape[1]:
        raise DimensionMismatch(f"{xs.shape} vs {ys.shape}")
    n_s, n_v, d = xs.shape[0], ys.shape[0], xs.shape[1]

    def k(a, b):
        dot = 0.0
        sq = 0.0
        for j in range(d):
            dot += a[j] * b[j]
            diff = a[j] - b[j]
            sq += diff * diff
        return cfg.alpha * dot + (1.0 - cfg.alpha) * math.exp(-cfg.gamma * sq)

    total = 0.0
    for i in range(n_s):
        for j in range(n_s):
            total += k(xs[i], xs[j]) / (n_s * n_s)
    for i in range(n_v):
        for j in range(n_v):
            total += k(ys[i], ys[j]) / (n_v * n_v)
    for i in range(n_s):
        for j in range(n_v):
            total -= 2.0 * k(xs[i], ys[j]) / (n_s * n_v)
    return total


def _pairwise_kernel_tensor(a: ad.Tensor, b: ad.Tensor, cfg: KernelConfig) -> ad.Tensor:
    dot = a @ b.transpose()
    sa = (a * a).sum(axis=1, keepdims=True)
    sb = (b * b).sum(axis=1, keepdims=True)
    sq = sa + sb.transpose() - 2.0 * dot
    return cfg.alpha * dot + (1.0 - cfg.alpha) * (-cfg.gamma * sq).exp()


def mmd_loss_tensor(S: ad.Tensor, V: ad.Tensor, cfg: KernelConfig) -> ad.Tensor:
    """Differentiable path over the autodiff tape; value tracks mmd_loss."""
    if S.shape[1] != V.shape[1]:
        raise DimensionMismatch(f"{S.shape} vs {V.shape}")
    k_ss = _pairwise_kernel_tensor(S, S, cfg)
    k_vv = _pairwise_kernel_tensor(V, V, cfg)
    k_sv = _pairwise_kernel_tensor(S, V, cfg)
    return k_ss.mean() + k_vv.mean() - 2.0 * k_sv.mean()

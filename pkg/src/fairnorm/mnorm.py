"""Group-wise normalization (M-Norm) with learnable mean weight, scale and shift.

For group ``n`` and feature ``i`` the layer maps an input entry ``r`` to::

    gamma[n, i] * (r - alpha[n, i] * m[n, i]) / sigma[n, i] + beta[n, i]

where ``m`` and ``sigma`` are the group's per-feature mean and population
standard deviation, recomputed on every call. ``sigma = sqrt(var + eps**2)``.

Parameters are stored stacked, one row per group, so the same code serves
the two-group layer and the single-group (whole graph) variant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import DenseParam

DEFAULT_EPS = 1e-5


@dataclass
class MNormParams:
    alpha: DenseParam
    gamma: DenseParam
    beta: DenseParam
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        shapes = {p.value.shape for p in (self.alpha, self.gamma, self.beta)}
        if len(shapes) != 1:
            raise ValueError("alpha, gamma and beta must share one shape")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @property
    def n_groups(self) -> int:
        return self.alpha.value.shape[0]

    @property
    def n_features(self) -> int:
        return self.alpha.value.shape[1]

    def params(self) -> dict[str, DenseParam]:
        return {"alpha": self.alpha, "gamma": self.gamma, "beta": self.beta}

    # per-group views, mirroring the alpha^(n), gamma^(n), beta^(n) vectors
    alpha_0 = property(lambda self: self.alpha.value[0])
    gamma_0 = property(lambda self: self.gamma.value[0])
    beta_0 = property(lambda self: self.beta.value[0])
    alpha_1 = property(lambda self: self.alpha.value[1])
    gamma_1 = property(lambda self: self.gamma.value[1])
    beta_1 = property(lambda self: self.beta.value[1])


@dataclass
class MNormStats:
    m: np.ndarray  # (G, F)
    sigma: np.ndarray  # (G, F)

    m_0 = property(lambda self: self.m[0])
    sigma_0 = property(lambda self: self.sigma[0])
    m_1 = property(lambda self: self.m[1])
    sigma_1 = property(lambda self: self.sigma[1])


@dataclass
class MNormCache:
    r: np.ndarray
    groups: tuple
    stats: MNormStats
    alpha: np.ndarray
    gamma: np.ndarray


def mnorm_init(f: int, eps: float = DEFAULT_EPS, n_groups: int = 2) -> MNormParams:
    """Start as plain per-group standardization: alpha = gamma = 1, beta = 0."""
    if f < 1:
        raise ValueError("feature count must be >= 1")
    return MNormParams(
        alpha=DenseParam(np.ones((n_groups, f))),
        gamma=DenseParam(np.ones((n_groups, f))),
        beta=DenseParam(np.zeros((n_groups, f))),
        eps=eps,
    )


def group_statistics(r: np.ndarray, groups, eps: float) -> MNormStats:
    m = np.empty((len(groups), r.shape[0]))
    sigma = np.empty_like(m)
    for n, idx in enumerate(groups):
        block = r[:, idx]
        m[n] = block.mean(axis=1)
        var = ((block - m[n][:, None]) ** 2).mean(axis=1)
        sigma[n] = np.sqrt(var + eps * eps)
    return MNormStats(m=m, sigma=sigma)


def mnorm_forward(params: MNormParams, r: np.ndarray, groups):
    """Normalize the columns of each group with that group's statistics and parameters.

    Columns not covered by ``groups`` pass through unchanged.
    Returns ``(output, stats, cache)``.
    """
    if r.ndim != 2 or r.shape[0] != params.n_features:
        raise ValueError(f"expected {params.n_features} x N input, got {r.shape}")
    if len(groups) != params.n_groups:
        raise ValueError(f"layer has {params.n_groups} groups, got {len(groups)}")
    for idx in groups:
        if len(idx) == 0:
            raise ValueError("empty group")
    stats = group_statistics(r, groups, params.eps)
    a, g, b = params.alpha.value, params.gamma.value, params.beta.value
    out = np.array(r, dtype=np.float64, copy=True)
    for n, idx in enumerate(groups):
        shift = (a[n] * stats.m[n])[:, None]
        out[:, idx] = (g[n] / stats.sigma[n])[:, None] * (r[:, idx] - shift) + b[n][:, None]
    cache = MNormCache(r=r, groups=tuple(groups), stats=stats, alpha=a.copy(), gamma=g.copy())
    return out, stats, cache


def mnorm_backward(cache: MNormCache, grad_out: np.ndarray, grad_m=None, grad_sigma=None):
    """Gradient of the loss w.r.t. the layer input and the three parameter arrays.

    ``grad_m`` / ``grad_sigma`` carry extra loss dependence on the statistics
    (the fairness regularizers read them directly); they are chained through
    the statistics back into the input like the main path.

    Returns ``(grad_r, {"alpha": ..., "gamma": ..., "beta": ...})``.
    """
    if cache is None:
        raise ValueError("missing forward cache")
    r, stats = cache.r, cache.stats
    a, g = cache.alpha, cache.gamma
    G, F = a.shape
    d_alpha = np.zeros((G, F))
    d_gamma = np.zeros((G, F))
    d_beta = np.zeros((G, F))
    grad_r = np.array(grad_out, dtype=np.float64, copy=True)
    for n, idx in enumerate(cache.groups):
        m, sig = stats.m[n], stats.sigma[n]
        gout = grad_out[:, idx]
        size = len(idx)
        centered = r[:, idx] - m[:, None]
        shifted = r[:, idx] - (a[n] * m)[:, None]
        sum_g = gout.sum(axis=1)
        d_beta[n] = sum_g
        d_gamma[n] = (gout * shifted).sum(axis=1) / sig
        d_alpha[n] = -g[n] * m / sig * sum_g
        dm = -g[n] * a[n] / sig * sum_g
        dsig = -g[n] / sig**2 * (gout * shifted).sum(axis=1)
        if grad_m is not None:
            dm = dm + grad_m[n]
        if grad_sigma is not None:
            dsig = dsig + grad_sigma[n]
        # dm/dr = 1/size; dsigma/dr = (r - m) / (size * sigma)
        grad_r[:, idx] = (
            (g[n] / sig)[:, None] * gout
            + (dm / size)[:, None]
            + (dsig / (size * sig))[:, None] * centered
        )
    return grad_r, {"alpha": d_alpha, "gamma": d_gamma, "beta": d_beta}


def normalized_group_means(params: MNormParams, stats: MNormStats) -> np.ndarray:
    """Closed-form post-normalization group means ``gamma*m*(1-alpha)/sigma + beta``, shape (G, F)."""
    a, g, b = params.alpha.value, params.gamma.value, params.beta.value
    return g * stats.m * (1.0 - a) / stats.sigma + b

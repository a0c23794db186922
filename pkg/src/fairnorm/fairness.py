"""Fairness regularizers, group-fairness metrics and the activation mean-gap bound."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import LIPSCHITZ, activation_forward
from .mnorm import MNormParams, MNormStats, normalized_group_means


class UndefinedMetricError(ValueError):
    """A metric's conditioning event is empty (e.g. no positives in a group)."""


@dataclass
class FairnessLossTerms:
    l_mu: float
    l_delta: float
    kappa: float
    tau: float

    @property
    def weighted(self) -> float:
        return self.kappa * self.l_mu + self.tau * self.l_delta


@dataclass
class GroupGapReport:
    mu_gap_p: float
    bound_rhs: float
    p: float
    lipschitz: float

    @property
    def holds(self) -> bool:
        return self.mu_gap_p <= self.bound_rhs + 1e-9


# -- regularizers ------------------------------------------------------------

def mean_gap_sq(mu0, mu1) -> float:
    """Squared Euclidean distance between two group mean vectors."""
    mu0 = np.asarray(mu0, dtype=np.float64)
    mu1 = np.asarray(mu1, dtype=np.float64)
    if mu0.shape != mu1.shape:
        raise ValueError("mean vectors differ in length")
    d = mu0 - mu1
    return float(d @ d)


def loss_mu(params: MNormParams, stats: MNormStats) -> float:
    """Gap between post-normalization group means, from the layer's parameters and statistics."""
    mu = normalized_group_means(params, stats)
    return mean_gap_sq(mu[0], mu[1])


def loss_mu_backward(params: MNormParams, stats: MNormStats) -> dict:
    """Gradients of :func:`loss_mu` w.r.t. alpha, gamma, beta, m and sigma (each (2, F))."""
    a, g = params.alpha.value, params.gamma.value
    m, sig = stats.m, stats.sigma
    mu = normalized_group_means(params, stats)
    diff = mu[0] - mu[1]
    d_mu = np.stack([2.0 * diff, -2.0 * diff])
    return {
        "alpha": d_mu * (-g * m / sig),
        "gamma": d_mu * (m * (1.0 - a) / sig),
        "beta": d_mu,
        "m": d_mu * (g * (1.0 - a) / sig),
        "sigma": d_mu * (-g * m * (1.0 - a) / sig**2),
    }


def _max_deviation(r, groups, stats):
    """Per group: (max |r - m| per feature, argmax column index, sign of the deviation)."""
    out = []
    for n, idx in enumerate(groups):
        dev = r[:, idx] - stats.m[n][:, None]
        # argmax returns the first maximum, i.e. the lowest node index on ties
        j = np.argmax(np.abs(dev), axis=1)
        rows = np.arange(r.shape[0])
        d = dev[rows, j]
        out.append((np.abs(d), np.asarray(idx)[j], np.sign(d)))
    return out


def loss_delta(params: MNormParams, stats: MNormStats, r: np.ndarray, groups) -> float:
    """Sum over groups of ``|| gamma/sigma * max_j |r_j - m| ||^2`` on the pre-norm input ``r``."""
    g = params.gamma.value
    total = 0.0
    for n, (mx, _, _) in enumerate(_max_deviation(r, groups, stats)):
        dbar = g[n] / stats.sigma[n] * mx
        total += float(dbar @ dbar)
    return total


def loss_delta_backward(params: MNormParams, stats: MNormStats, r: np.ndarray, groups) -> dict:
    """Subgradient of :func:`loss_delta`; the max routes to a single column per feature.

    Returns gradients for gamma, m, sigma (each (G, F)) and a direct input
    gradient ``r`` of the same shape as ``r``.
    """
    g = params.gamma.value
    G, F = g.shape
    d_gamma = np.zeros((G, F))
    d_m = np.zeros((G, F))
    d_sig = np.zeros((G, F))
    d_r = np.zeros_like(r, dtype=np.float64)
    rows = np.arange(F)
    for n, (mx, col, sgn) in enumerate(_max_deviation(r, groups, stats)):
        sig = stats.sigma[n]
        dbar = g[n] / sig * mx
        up = 2.0 * dbar
        d_gamma[n] = up * mx / sig
        d_sig[n] = -up * g[n] * mx / sig**2
        d_abs = up * g[n] / sig
        d_r[rows, col] += d_abs * sgn
        d_m[n] = -d_abs * sgn
    return {"gamma": d_gamma, "m": d_m, "sigma": d_sig, "r": d_r}


def _masked(x, mask):
    x = np.asarray(x)
    if mask is None:
        return x
    return x[np.asarray(mask, dtype=bool)]


def loss_covariance_baseline(probs, sensitive, mask=None) -> float:
    """Absolute covariance (1/M normalization) between sensitive attribute and predicted probability."""
    p = _masked(probs, mask).astype(np.float64)
    s = _masked(sensitive, mask).astype(np.float64)
    if p.size == 0:
        raise ValueError("empty mask")
    return float(abs(((s - s.mean()) * (p - p.mean())).mean()))


def loss_covariance_backward(probs, sensitive, mask=None) -> np.ndarray:
    """Gradient of :func:`loss_covariance_baseline` w.r.t. the full-length ``probs`` vector."""
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.ones(probs.size, bool) if mask is None else np.asarray(mask, dtype=bool)
    p = probs[mask]
    s = np.asarray(sensitive, dtype=np.float64)[mask]
    if p.size == 0:
        raise ValueError("empty mask")
    sc = s - s.mean()
    cov = (sc * (p - p.mean())).mean()
    grad = np.zeros_like(probs)
    # the p.mean() term drops out because sc sums to zero
    grad[mask] = np.sign(cov) * sc / p.size
    return grad


# -- metrics -----------------------------------------------------------------

def _rate(pred, cond):
    if not cond.any():
        raise UndefinedMetricError("conditioning set is empty")
    return pred[cond].mean()


def metric_statistical_parity(pred, sensitive, mask=None) -> float:
    """|P(yhat=1 | s=0) - P(yhat=1 | s=1)| over the masked nodes."""
    yhat = _masked(pred, mask).astype(np.float64)
    s = _masked(sensitive, mask)
    return float(abs(_rate(yhat, s == 0) - _rate(yhat, s == 1)))


def metric_equal_opportunity(pred, labels, sensitive, mask=None) -> float:
    """|P(yhat=1 | y=1, s=0) - P(yhat=1 | y=1, s=1)| over the masked nodes."""
    yhat = _masked(pred, mask).astype(np.float64)
    y = _masked(labels, mask)
    s = _masked(sensitive, mask)
    return float(abs(_rate(yhat, (s == 0) & (y == 1)) - _rate(yhat, (s == 1) & (y == 1))))


def accuracy(pred, labels, mask=None) -> float:
    yhat = _masked(pred, mask)
    y = _masked(labels, mask)
    if y.size == 0:
        raise UndefinedMetricError("empty mask")
    return float((yhat == y).mean())


# -- activation mean-gap bound -----------------------------------------------

def _pnorm(v, p):
    return float(np.linalg.norm(v, ord=p))


def check_mean_gap_bound(hbar0: np.ndarray, hbar1: np.ndarray, activation: str = "relu",
                         p: float = 2) -> GroupGapReport:
    """Compare the post-activation group-mean gap with its Lipschitz upper bound.

    ``hbar0`` / ``hbar1`` are the normalized (pre-activation) representations
    of each group, ``F x |S^n|``. The right-hand side is
    ``L * (||mubar0 - mubar1||_p + ||Dbar0||_p + ||Dbar1||_p)`` where ``Dbar``
    is the per-feature maximal deviation from the group mean.
    """
    if activation not in LIPSCHITZ:
        raise ValueError(f"unsupported activation {activation!r}")
    if p not in (1, 2, np.inf):
        raise ValueError("p must be 1, 2 or inf")
    lip = LIPSCHITZ[activation]
    mubar = [h.mean(axis=1) for h in (hbar0, hbar1)]
    dbar = [np.abs(h - mb[:, None]).max(axis=1) for h, mb in zip((hbar0, hbar1), mubar)]
    mu = [activation_forward(activation, h)[0].mean(axis=1) for h in (hbar0, hbar1)]
    lhs = _pnorm(mu[0] - mu[1], p)
    rhs = lip * (_pnorm(mubar[0] - mubar[1], p) + _pnorm(dbar[0], p) + _pnorm(dbar[1], p))
    return GroupGapReport(mu_gap_p=lhs, bound_rhs=rhs, p=float(p), lipschitz=lip)

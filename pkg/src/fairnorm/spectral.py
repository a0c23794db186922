"""Dense spectral checks for the group-shift preconditioner and the linear-GNN GD experiment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import DENSE_CAP, partition_projector

JACOBI_SWEEPS = 200
JACOBI_TOL = 1e-12


def _round_robin(n: int):
    """Pairings for a parallel Jacobi sweep (circle method); ``n`` must be even."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        rounds.append((np.array(players[:half]), np.array(players[half:][::-1])))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def dense_svd(m: np.ndarray, cap: int = DENSE_CAP, max_sweeps: int = JACOBI_SWEEPS,
              tol: float = JACOBI_TOL) -> np.ndarray:
    """Singular values of ``m``, ascending, by one-sided (Hestenes) Jacobi.

    Orthogonalizing the columns of ``m`` is Jacobi diagonalization of
    ``m^T m`` done implicitly, which keeps small singular values accurate.
    Disjoint column pairs are rotated together, one round-robin round at a time.
    """
    a = np.array(m, dtype=np.float64, copy=True)
    if a.ndim != 2:
        raise ValueError("expected a matrix")
    if max(a.shape) > cap:
        raise ValueError(f"matrix {a.shape} exceeds dense cap {cap}")
    if a.shape[1] > a.shape[0]:
        a = a.T.copy()
    k = a.shape[1]
    if k == 0:
        return np.zeros(0)
    if k % 2:
        a = np.hstack([a, np.zeros((a.shape[0], 1))])
    rounds = _round_robin(a.shape[1])
    for _ in range(max_sweeps):
        rotated = False
        for left, right in rounds:
            ai, aj = a[:, left], a[:, right]
            alpha = np.einsum("ij,ij->j", ai, ai)
            beta = np.einsum("ij,ij->j", aj, aj)
            gamma = np.einsum("ij,ij->j", ai, aj)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            g = np.where(active, gamma, 1.0)
            # a denormal g can overflow zeta to inf; t then becomes 0, i.e. no rotation
            with np.errstate(over="ignore", divide="ignore"):
                zeta = (beta - alpha) / (2.0 * g)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            a[:, left] = c * ai - s * aj
            a[:, right] = s * ai + c * aj
        if not rotated:
            break
    sv = np.sqrt(np.einsum("ij,ij->j", a, a))[:k]
    return np.sort(sv)


def power_iteration_svd(m: np.ndarray, max_iter: int = 200_000, tol: float = 1e-15,
                        seed: int = 0) -> np.ndarray:
    """Slow reference: power iteration with Hotelling deflation on ``m^T m``, ascending."""
    m = np.asarray(m, dtype=np.float64)
    c = m.T @ m if m.shape[0] >= m.shape[1] else m @ m.T
    n = c.shape[0]
    rng = np.random.default_rng(seed)
    eig = []
    for _ in range(n):
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        lam = v @ c @ v
        for _ in range(max_iter):
            w = c @ v
            nw = np.linalg.norm(w)
            if nw == 0.0:
                lam = 0.0
                break
            v_new = w / nw
            lam_new = v_new @ c @ v_new
            done = abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300) \
                and np.linalg.norm(v_new - v) < 1e-10
            v, lam = v_new, lam_new
            if done:
                break
        eig.append(max(lam, 0.0))
        c = c - lam * np.outer(v, v)
    return np.sort(np.sqrt(eig))


@dataclass
class SpectrumReport:
    lam: np.ndarray  # singular values of Q, ascending
    gamma: np.ndarray  # singular values of Q N0 N1, ascending (two near-zero first)
    interlacing_ok: bool
    zero_count_ok: bool
    max_violation: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.interlacing_ok and self.zero_count_ok


def verify_interlacing(q: np.ndarray, sensitive, tol: float | None = None) -> SpectrumReport:
    """Check that the group-shift projectors only push singular values of ``q`` upward.

    With ``gamma`` the spectrum of ``q N0 N1`` minus its two forced zeros,
    checks ``lam[i] <= gamma[i]`` for ``i < N-2``, ``gamma[N-3] <= lam[N-1]``,
    and that two values of the full ``q N0 N1`` spectrum vanish.
    ``tol`` defaults to ``1e-8 * sigma_max(q)``.
    """
    q = np.asarray(q, dtype=np.float64)
    lam = dense_svd(q)
    gam = dense_svd(q @ partition_projector(sensitive))
    if tol is None:
        tol = 1e-8 * lam[-1] if lam.size else 0.0
    n = lam.size
    if n < 2:
        raise ValueError("need at least two nodes")
    zero_count_ok = bool(gam[1] <= tol)
    rest = gam[2:]
    lower = lam[: n - 2] - rest  # positive entries break lam_i <= gamma_i
    upper = float(rest[-1] - lam[-1]) if rest.size else 0.0
    interlacing_ok = bool((lower <= tol).all() and upper <= tol)
    # raw amounts by which each inequality fails, before tolerance
    worst = max(float(lower.max(initial=0.0)), upper, float(gam[1]), 0.0)
    return SpectrumReport(lam=lam, gamma=gam, interlacing_ok=interlacing_ok,
                          zero_count_ok=zero_count_ok, max_violation=worst, tol=tol)


def verify_projection_algebra(sensitive, tol: float = 1e-11) -> dict:
    """Symmetry, idempotence, commutation of the shift projectors and annihilation of e0, e1."""
    s = np.asarray(sensitive)
    n = s.size
    if n > DENSE_CAP:
        raise ValueError(f"N={n} exceeds dense cap {DENSE_CAP}")
    e = [(s == g).astype(np.float64) for g in (0, 1)]
    n0, n1 = (np.eye(n) - np.outer(v, v) / v.sum() for v in e)
    p = n0 @ n1
    errs = {
        "symmetric": max(np.abs(n0 - n0.T).max(), np.abs(n1 - n1.T).max(), np.abs(p - p.T).max()),
        "idempotent": max(np.abs(n0 @ n0 - n0).max(), np.abs(n1 @ n1 - n1).max(),
                          np.abs(p @ p - p).max()),
        "commute": np.abs(n0 @ n1 - n1 @ n0).max(),
        "annihilate": max(np.abs(p @ e[0]).max(), np.abs(p @ e[1]).max()),
    }
    report = {k: bool(v <= tol) for k, v in errs.items()}
    report["max_error"] = float(max(errs.values()))
    report["ok"] = all(report[k] for k in errs)
    return report


# -- linear GNN, exact gradient descent -------------------------------------

@dataclass
class LinearGNNConfig:
    n: int = 80
    f: int = 8
    edge_prob: float = 0.08
    homophily: float = 0.8  # share of edge mass placed inside sensitive groups
    mean_shift: float = 3.0  # magnitude of the group mean offsets
    structure_scale: float = 0.3  # fixed per-node mean part; makes E[XQ] full rank
    noise_std: float = 1.0
    threshold: float = 1e-6  # relative residual for epochs_to_threshold
    max_iter: int = 20_000
    envelope_slack: float = 1e-9
    orth_tol: float = 1e-8  # rejects mean structure orthogonal to the group indicators
    max_resample: int = 50


@dataclass
class LinearGNNProblem:
    z_vanilla: np.ndarray
    z_shift: np.ndarray
    y: np.ndarray
    mean_structure: np.ndarray  # E[X Q]
    sensitive: np.ndarray
    resamples: int


@dataclass
class GDRun:
    rate: float
    epochs_to_threshold: int  # -1 if not reached within max_iter
    residuals: np.ndarray
    envelope_ok: bool
    max_envelope_violation: float


@dataclass
class ConvergenceTrial:
    seed: int
    n_nodes: int
    f_features: int
    vanilla: GDRun
    shift: GDRun
    resamples: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def rate_vanilla(self):
        return self.vanilla.rate

    @property
    def rate_shift(self):
        return self.shift.rate


def _two_block_graph(rng, n, s, edge_prob, homophily):
    same = s[:, None] == s[None, :]
    n_same = same.sum() - n
    n_diff = n * n - n - n_same
    total = edge_prob * (n * n - n)
    p_in = min(1.0, homophily * total / max(n_same, 1))
    p_out = min(1.0, (1 - homophily) * total / max(n_diff, 1))
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    return (upper | upper.T).astype(np.float64)


def means_reach_groups(mean_structure: np.ndarray, sensitive, tol: float = 1e-8) -> bool:
    """No singular direction of E[XQ] in node space is orthogonal to both group indicators."""
    s = np.asarray(sensitive)
    e0 = (s == 0).astype(np.float64)
    e1 = (s == 1).astype(np.float64)
    _, sv, vt = np.linalg.svd(mean_structure, full_matrices=False)
    pos = sv > 1e-12 * sv.max()
    for v in vt[pos]:
        if abs(v @ e0) < tol and abs(v @ e1) < tol:
            return False
    return True


def make_linear_gnn_problem(cfg: LinearGNNConfig, seed: int) -> LinearGNNProblem:
    """Sample a graph, a partition and Gaussian features around a group-dependent mean.

    Resamples until both groups have >= 2 nodes, ``E[XQ]`` has full row rank
    and the group means are not orthogonal to the group indicators.
    """
    rng = np.random.default_rng(seed)
    for attempt in range(cfg.max_resample):
        n, f = cfg.n, cfg.f
        s = (rng.random(n) < 0.5).astype(np.int64)
        if min((s == 0).sum(), (s == 1).sum()) < 2:
            continue
        adj = _two_block_graph(rng, n, s, cfg.edge_prob, cfg.homophily)
        a_hat = adj + np.eye(n)
        d = a_hat.sum(axis=1)
        q = a_hat / np.sqrt(np.outer(d, d))
        offsets = rng.standard_normal((f, 2))
        offsets *= cfg.mean_shift / np.linalg.norm(offsets, axis=0)
        mean = offsets[:, s] + cfg.structure_scale * rng.standard_normal((f, n))
        x = mean + cfg.noise_std * rng.standard_normal((f, n))
        y_mean = mean @ q
        if np.linalg.matrix_rank(y_mean) < f or not means_reach_groups(y_mean, s, cfg.orth_tol):
            continue
        z = x @ q
        z_shift = z @ partition_projector(s)
        labels = (rng.random(n) < np.where(s == 1, 0.6, 0.4)).astype(np.float64)
        return LinearGNNProblem(z_vanilla=z, z_shift=z_shift, y=labels, mean_structure=y_mean,
                                sensitive=s, resamples=attempt)
    raise RuntimeError(f"could not draw a valid problem in {cfg.max_resample} attempts")


def rate_bound(z: np.ndarray) -> float:
    """``1 - sigma_min / sigma_max`` over the positive eigenvalues of ``Z Z^T``."""
    ev = dense_svd(z) ** 2
    pos = ev[ev > 1e-12 * ev.max()]
    return float(1.0 - pos.min() / pos.max())


def gradient_descent(z: np.ndarray, y: np.ndarray, cfg: LinearGNNConfig,
                     w0: np.ndarray | None = None) -> GDRun:
    """Exact GD on ``0.5 * ||Z^T w - y||^2`` with step ``1 / sigma_max(Z Z^T)``."""
    zz = z @ z.T
    zy = z @ y
    ev = dense_svd(z) ** 2
    eta = 1.0 / ev.max()
    w_star = np.linalg.pinv(zz) @ zy
    rate = rate_bound(z)
    w = np.zeros(z.shape[0]) if w0 is None else np.array(w0, dtype=np.float64)
    ref = np.linalg.norm(w_star)
    res = np.empty(cfg.max_iter + 1)
    res[0] = np.linalg.norm(w - w_star)
    hit = 0 if res[0] <= cfg.threshold * ref else -1
    t = 0
    while t < cfg.max_iter and hit < 0:
        w = w - eta * (zz @ w - zy)
        t += 1
        res[t] = np.linalg.norm(w - w_star)
        if res[t] <= cfg.threshold * ref:
            hit = t
    res = res[: t + 1]
    envelope = rate ** np.arange(t + 1) * ref + cfg.envelope_slack
    viol = float(np.max(res - envelope))
    return GDRun(rate=rate, epochs_to_threshold=hit, residuals=res,
                 envelope_ok=bool(viol <= 0.0), max_envelope_violation=max(viol, 0.0))


def run_linear_gnn_trial(cfg: LinearGNNConfig, seed: int, shift: bool) -> GDRun:
    prob = make_linear_gnn_problem(cfg, seed)
    return gradient_descent(prob.z_shift if shift else prob.z_vanilla, prob.y, cfg)


def run_paired_trial(cfg: LinearGNNConfig, seed: int) -> ConvergenceTrial:
    """Vanilla and shifted GD on the same sampled problem."""
    prob = make_linear_gnn_problem(cfg, seed)
    return ConvergenceTrial(
        seed=seed, n_nodes=cfg.n, f_features=cfg.f,
        vanilla=gradient_descent(prob.z_vanilla, prob.y, cfg),
        shift=gradient_descent(prob.z_shift, prob.y, cfg),
        resamples=prob.resamples,
    )

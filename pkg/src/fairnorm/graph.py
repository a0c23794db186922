"""Graph container, GCN aggregation operator and group-shift projectors.

Node representations are stored feature-major: an ``F x N`` matrix whose
column ``j`` is node ``j``. Aggregation is therefore a right-multiplication
``H @ Q``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

DENSE_CAP = 512


class GraphError(ValueError):
    """Raised when graph data violates a structural invariant."""


def _canonical_edges(n_nodes: int, edges) -> np.ndarray:
    """Symmetrize, drop self-loops and duplicates; return sorted (E, 2) pairs with i < j."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n_nodes):
        raise GraphError(f"edge endpoint out of range [0, {n_nodes})")
    e = e[e[:, 0] != e[:, 1]]
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    und = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return und.reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph with binary sensitive attribute and binary labels.

    The raw adjacency is kept in CSR form (``indptr``, ``indices``) with
    sorted column indices, symmetric and without self-loops.
    """

    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray  # F x N
    sensitive: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        n = self.n_nodes
        if n < 1:
            raise GraphError("graph needs at least one node")
        if self.features.ndim != 2 or self.features.shape[1] != n:
            raise GraphError(f"features must be F x {n}, got {self.features.shape}")
        for name in ("sensitive", "labels"):
            v = getattr(self, name)
            if v.shape != (n,):
                raise GraphError(f"{name} must have length {n}")
            if not np.isin(v, (0, 1)).all():
                raise GraphError(f"{name} must be binary")
        masks = (self.train_mask, self.val_mask, self.test_mask)
        for m in masks:
            if m.shape != (n,) or m.dtype != bool:
                raise GraphError("masks must be boolean vectors of length N")
        if (self.train_mask & self.val_mask).any() or (self.train_mask & self.test_mask).any() \
                or (self.val_mask & self.test_mask).any():
            raise GraphError("train/val/test masks overlap")
        adj = self.adjacency()
        if adj.diagonal().any():
            raise GraphError("self-loops are not allowed in the raw edge set")
        if (adj != adj.T).nnz:
            raise GraphError("adjacency is not symmetric")
        for arr in (self.indptr, self.indices, self.features, self.sensitive,
                    self.labels, *masks):
            arr.setflags(write=False)

    @classmethod
    def from_edges(cls, n_nodes: int, edges, features, sensitive, labels,
                   masks=None) -> "Graph":
        """Build a graph from an arbitrary edge list (symmetrized and deduplicated)."""
        und = _canonical_edges(n_nodes, edges)
        rows = np.concatenate([und[:, 0], und[:, 1]])
        cols = np.concatenate([und[:, 1], und[:, 0]])
        a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n_nodes, n_nodes))
        a.sort_indices()
        if masks is None:
            masks = tuple(np.zeros(n_nodes, dtype=bool) for _ in range(3))
        return cls(
            n_nodes=int(n_nodes),
            indptr=a.indptr.astype(np.int64),
            indices=a.indices.astype(np.int64),
            features=np.array(features, dtype=np.float64),
            sensitive=np.array(sensitive, dtype=np.int64),
            labels=np.array(labels, dtype=np.int64),
            train_mask=np.array(masks[0], dtype=bool),
            val_mask=np.array(masks[1], dtype=bool),
            test_mask=np.array(masks[2], dtype=bool),
        )

    def with_masks(self, train, val, test) -> "Graph":
        return Graph(self.n_nodes, self.indptr, self.indices, self.features, self.sensitive,
                     self.labels, np.asarray(train, bool), np.asarray(val, bool),
                     np.asarray(test, bool))

    @property
    def n_features(self) -> int:
        return self.features.shape[0]

    @property
    def n_edges(self) -> int:
        return self.indices.size // 2

    def adjacency(self) -> sp.csr_matrix:
        n = self.n_nodes
        data = np.ones(self.indices.size)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with i < j, lexicographically sorted."""
        rows = np.repeat(np.arange(self.n_nodes), np.diff(self.indptr))
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def group_indices(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.sensitive == group)

    def check_groups(self, min_size: int = 2) -> None:
        """Enforce the training-time requirement that each sensitive group has >= min_size nodes."""
        for g in (0, 1):
            size = int((self.sensitive == g).sum())
            if size < min_size:
                raise GraphError(f"sensitive group {g} has {size} nodes, need >= {min_size}")

    def equals(self, other: "Graph") -> bool:
        return (
            self.n_nodes == other.n_nodes
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("indptr", "indices", "features", "sensitive", "labels",
                          "train_mask", "val_mask", "test_mask")
            )
        )


@dataclass(frozen=True, eq=False)
class AggregationOperator:
    """Sparse ``Q = D^-1/2 (A + I) D^-1/2`` plus the sensitive-group indicators."""

    q: sp.csr_matrix
    group_indicator_0: np.ndarray
    group_indicator_1: np.ndarray
    groups: tuple = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.q.shape[0]

    @property
    def group_sizes(self) -> tuple[int, int]:
        return (self.groups[0].size, self.groups[1].size)

    def indicator(self, group: int) -> np.ndarray:
        return self.group_indicator_1 if group else self.group_indicator_0


def operator_from_adjacency(adj, sensitive) -> AggregationOperator:
    """GCN operator from any symmetric 0/1 adjacency without self-loops."""
    adj = sp.csr_matrix(adj, dtype=np.float64)
    n = adj.shape[0]
    a_hat = (adj + sp.identity(n, format="csr")).tocsr()
    a_hat.sort_indices()
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    rows = np.repeat(np.arange(n), np.diff(a_hat.indptr))
    cols = a_hat.indices
    # one sqrt of the product keeps Q_ij and Q_ji bit-identical
    vals = a_hat.data / np.sqrt(deg[rows] * deg[cols])
    q = sp.csr_matrix((vals, cols.copy(), a_hat.indptr.copy()), shape=(n, n))
    s = np.asarray(sensitive)
    e0 = (s == 0).astype(np.float64)
    e1 = (s == 1).astype(np.float64)
    groups = (np.flatnonzero(s == 0), np.flatnonzero(s == 1))
    for arr in (e0, e1, *groups):
        arr.setflags(write=False)
    return AggregationOperator(q=q, group_indicator_0=e0, group_indicator_1=e1, groups=groups)


def build_gcn_operator(graph: Graph) -> AggregationOperator:
    return operator_from_adjacency(graph.adjacency(), graph.sensitive)


def spmm(op: AggregationOperator, h: np.ndarray) -> np.ndarray:
    """Return ``h @ Q`` for a dense ``F x N`` matrix ``h``."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != op.n_nodes:
        raise ValueError(f"expected F x {op.n_nodes} input, got {h.shape}")
    # Q is symmetric, so H Q = (Q H^T)^T
    return np.ascontiguousarray((op.q @ h.T).T)


def shift_apply(h: np.ndarray, op: AggregationOperator, group: int) -> np.ndarray:
    """Right-multiply by ``N^(group) = I - e e^T / |S|`` without forming it."""
    if group not in (0, 1):
        raise ValueError("group must be 0 or 1")
    idx = op.groups[group]
    if idx.size == 0:
        raise GraphError(f"sensitive group {group} is empty")
    out = np.array(h, dtype=np.float64, copy=True)
    out[:, idx] -= out[:, idx].mean(axis=1, keepdims=True)
    return out


def shift_matrix_dense(op: AggregationOperator, group: int, cap: int = DENSE_CAP) -> np.ndarray:
    """Explicit ``N^(group)``; only for small verification problems."""
    if group not in (0, 1):
        raise ValueError("group must be 0 or 1")
    n = op.n_nodes
    if n > cap:
        raise ValueError(f"N={n} exceeds dense cap {cap}")
    e = op.indicator(group)
    size = e.sum()
    if size == 0:
        raise GraphError(f"sensitive group {group} is empty")
    return np.eye(n) - np.outer(e, e) / size


def partition_projector(sensitive, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense ``N^(0) N^(1)`` for a sensitive vector (both groups non-empty)."""
    s = np.asarray(sensitive)
    n = s.size
    if n > cap:
        raise ValueError(f"N={n} exceeds dense cap {cap}")
    mats = []
    for g in (0, 1):
        e = (s == g).astype(np.float64)
        if e.sum() == 0:
            raise GraphError(f"sensitive group {g} is empty")
        mats.append(np.eye(n) - np.outer(e, e) / e.sum())
    return mats[0] @ mats[1]

"""Dataset I/O, the synthetic biased two-block generator, splits and statistics.

On-disk layout of a dataset directory::

    edges.tsv     one undirected edge per line, two integer node ids
    features.csv  header row; node_id, x0..x{F-1}, sensitive, label, split
    meta.json     column declarations, generator spec and seed
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, GraphError


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass
class SyntheticSpec:
    n0: int = 485
    n1: int = 281
    intra_edge_target: int = 2834
    inter_edge_target: int = 114
    f: int = 16
    feature_shift: float = 2.0
    label_bias: float = 0.2
    label_signal: float = 0.5
    noise_std: float = 1.0
    label_smoothing: int = 2  # diffusion rounds applied to the label latent
    label_noise: float = 0.0  # probability of flipping an observed label after features are drawn
    seed: int = 0

    def __post_init__(self):
        if self.n0 < 2 or self.n1 < 2:
            raise DataError("each sensitive group needs >= 2 nodes")
        if not 0.0 <= self.label_bias <= 1.0:
            raise DataError("label_bias must lie in [0, 1]")
        if self.label_smoothing < 0:
            raise DataError("label_smoothing must be >= 0")
        if not 0.0 <= self.label_noise <= 0.5:
            raise DataError("label_noise must lie in [0, 0.5]")
        if self.f < 1:
            raise DataError("feature dimension must be >= 1")
        intra_pairs = _pairs(self.n0) + _pairs(self.n1)
        if not 0 <= self.intra_edge_target <= intra_pairs:
            raise DataError(f"intra_edge_target must be in [0, {intra_pairs}]")
        if not 0 <= self.inter_edge_target <= self.n0 * self.n1:
            raise DataError(f"inter_edge_target must be in [0, {self.n0 * self.n1}]")


# full-size Pokec group sizes and edge counts divided by 10, keeping the average degree.
PRESETS = {
    "pokec-z": dict(n0=485, n1=281, intra_edge_target=2834, inter_edge_target=114, f=59),
    "pokec-n": dict(n0=404, n1=215, intra_edge_target=2090, inter_edge_target=94, f=59),
    "small": dict(n0=12, n1=8, intra_edge_target=30, inter_edge_target=4, f=4),
}


@dataclass
class DatasetStats:
    n_nodes: int
    n_edges: int
    group_sizes: tuple
    inter_edges: int
    intra_edges: int
    n_features: int
    positive_rate: tuple  # P(y=1 | s=0), P(y=1 | s=1)

    def as_dict(self):
        return asdict(self)


def _pairs(n: int) -> int:
    return n * (n - 1) // 2


def _decode_triangular(k: np.ndarray, n: int):
    """Map linear indices over pairs i<j of range(n) back to (i, j)."""
    k = np.asarray(k, dtype=np.int64)
    # row i starts at offset i*n - i*(i+1)/2
    i = np.floor((2 * n - 1 - np.sqrt((2 * n - 1) ** 2 - 8 * k.astype(np.float64))) / 2)
    i = i.astype(np.int64)
    start = lambda r: r * n - r * (r + 1) // 2  # noqa: E731
    i = np.where(start(i + 1) <= k, i + 1, i)
    i = np.where(start(i) > k, i - 1, i)
    j = k - start(i) + i + 1
    return i, j


def _sample_within(rng, nodes: np.ndarray, m: int) -> np.ndarray:
    if m == 0:
        return np.zeros((0, 2), dtype=np.int64)
    k = rng.choice(_pairs(nodes.size), size=m, replace=False)
    i, j = _decode_triangular(np.sort(k), nodes.size)
    return np.stack([nodes[i], nodes[j]], axis=1)


def _sample_between(rng, a: np.ndarray, b: np.ndarray, m: int) -> np.ndarray:
    if m == 0:
        return np.zeros((0, 2), dtype=np.int64)
    k = np.sort(rng.choice(a.size * b.size, size=m, replace=False))
    return np.stack([a[k // b.size], b[k % b.size]], axis=1)


def _smooth_labels(rng, n, edges, s, spec):
    """Biased labels; homophilous when ``label_smoothing > 0``.

    Without smoothing labels are Bernoulli with ``P(y=1 | s)`` tilted by
    ``label_bias``. With smoothing a Gaussian latent is averaged over closed
    neighborhoods and each group's top fraction at that rate is labeled 1.
    """
    p_pos = 0.5 * (1.0 + spec.label_bias * (2 * s - 1))
    if not spec.label_smoothing:
        return (rng.random(n) < p_pos).astype(np.int64)
    latent = rng.standard_normal(n)
    if edges.size:
        deg = np.bincount(edges.ravel(), minlength=n) + 1.0
        for _ in range(spec.label_smoothing):
            agg = latent.copy()
            np.add.at(agg, edges[:, 0], latent[edges[:, 1]])
            np.add.at(agg, edges[:, 1], latent[edges[:, 0]])
            latent = agg / deg
    y = np.zeros(n, dtype=np.int64)
    for g in (0, 1):
        idx = np.flatnonzero(s == g)
        n_pos = int(round(idx.size * p_pos[idx[0]])) if idx.size else 0
        top = idx[np.argsort(-latent[idx], kind="stable")[:n_pos]]
        y[top] = 1
    return y


def generate_synthetic(spec: SyntheticSpec) -> Graph:
    """Two-block random graph with exact intra/inter edge counts and biased labels.

    Labels have ``P(y=1 | s) = (1 + label_bias * (2s - 1)) / 2``; see
    :func:`_smooth_labels` for how ``label_smoothing`` makes them homophilous.
    Features: Gaussian noise plus ``feature_shift`` along a random unit
    direction for group 1 and ``label_signal * (2y - 1)`` along another.
    Intra-group edges are split between the two groups in proportion to their
    number of node pairs. Masks are left empty; see :func:`make_splits`.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n0 + spec.n1
    s = np.zeros(n, dtype=np.int64)
    s[rng.permutation(n)[: spec.n1]] = 1
    g0, g1 = np.flatnonzero(s == 0), np.flatnonzero(s == 1)

    p0, p1 = _pairs(spec.n0), _pairs(spec.n1)
    m0 = int(round(spec.intra_edge_target * p0 / (p0 + p1))) if p0 + p1 else 0
    m0 = min(m0, p0)
    m1 = spec.intra_edge_target - m0
    if m1 > p1:
        m0, m1 = spec.intra_edge_target - p1, p1
    edges = np.concatenate([
        _sample_within(rng, g0, m0),
        _sample_within(rng, g1, m1),
        _sample_between(rng, g0, g1, spec.inter_edge_target),
    ])

    y = _smooth_labels(rng, n, edges, s, spec)

    dirs = rng.standard_normal((spec.f, 2))
    dirs /= np.linalg.norm(dirs, axis=0)
    x = spec.noise_std * rng.standard_normal((spec.f, n))
    x += spec.feature_shift * np.outer(dirs[:, 0], s)
    x += spec.label_signal * np.outer(dirs[:, 1], 2 * y - 1)
    if spec.label_noise:
        y = np.where(rng.random(n) < spec.label_noise, 1 - y, y)
    return Graph.from_edges(n, edges, x, s, y)


def make_splits(graph: Graph, fractions=(0.5, 0.25, 0.25), seed: int = 0):
    """Stratified random train/val/test masks with exact largest-remainder sizes.

    Nodes are shuffled inside each (sensitive, label) cell and interleaved by
    their relative position in the cell, so consecutive cuts of the ordering
    receive each cell roughly in proportion.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise DataError("fractions must be three nonnegative numbers summing to 1")
    n = graph.n_nodes
    raw = fr * n
    sizes = np.floor(raw).astype(np.int64)
    for i in np.argsort(-(raw - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[i] += 1

    rng = np.random.default_rng(seed)
    cell = graph.sensitive * 2 + graph.labels
    pos = np.empty(n)
    for c in np.unique(cell):
        members = np.flatnonzero(cell == c)
        order = rng.permutation(members)
        pos[order] = (np.arange(order.size) + 0.5) / order.size
    tie = rng.random(n)
    ordering = np.lexsort((tie, pos))

    assign = np.empty(n, dtype=np.int64)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    for k in range(3):
        assign[ordering[bounds[k]:bounds[k + 1]]] = k
    _repair_cells(assign, cell, sizes)
    masks = tuple(assign == k for k in range(3))
    for m in masks:
        if m.any() and (np.unique(graph.sensitive[m]).size < 2 or np.unique(graph.labels[m]).size < 2):
            raise DataError("stratification infeasible: a split misses a sensitive group or a label")
    return masks


def _repair_cells(assign, cell, sizes):
    """Swap nodes between splits so each split holds every cell large enough to spread.

    Swaps keep split sizes fixed. A cell is only requested in a split when it
    has at least as many members as there are nonempty splits.
    """
    splits = [k for k in range(3) if sizes[k]]
    cells = np.unique(cell)
    for _ in range(cell.size):
        counts = {(k, c): int(((assign == k) & (cell == c)).sum()) for k in splits for c in cells}
        missing = [(k, c) for k in splits for c in cells
                   if counts[k, c] == 0 and (cell == c).sum() >= len(splits)]
        if not missing:
            return
        k, c = missing[0]
        donor = max(splits, key=lambda d: counts[d, c])
        spare = [c2 for c2 in cells if counts[k, c2] >= 2]
        if counts[donor, c] < 2 or not spare:
            return
        c2 = max(spare, key=lambda x: counts[k, x])
        u = np.flatnonzero((assign == donor) & (cell == c))[0]
        v = np.flatnonzero((assign == k) & (cell == c2))[0]
        assign[u], assign[v] = k, donor


def compute_stats(graph: Graph) -> DatasetStats:
    e = graph.edge_list()
    s = graph.sensitive
    inter = int((s[e[:, 0]] != s[e[:, 1]]).sum())
    rates = []
    for g in (0, 1):
        sel = s == g
        rates.append(float(graph.labels[sel].mean()) if sel.any() else None)
    return DatasetStats(
        n_nodes=graph.n_nodes,
        n_edges=int(e.shape[0]),
        group_sizes=(int((s == 0).sum()), int((s == 1).sum())),
        inter_edges=inter,
        intra_edges=int(e.shape[0]) - inter,
        n_features=graph.n_features,
        positive_rate=tuple(rates),
    )


# -- files -------------------------------------------------------------------

SPLIT_NAMES = ("train", "val", "test")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(graph: Graph, out_dir, meta: dict | None = None) -> list[Path]:
    """Write the canonical dataset directory; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    edges_path = out / "edges.tsv"
    with edges_path.open("w", newline="\n") as fh:
        for i, j in graph.edge_list():
            fh.write(f"{i}\t{j}\n")
    feat_path = out / "features.csv"
    f = graph.n_features
    split = np.full(graph.n_nodes, "", dtype=object)
    for name, m in zip(SPLIT_NAMES, (graph.train_mask, graph.val_mask, graph.test_mask)):
        split[m] = name
    with feat_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", *(f"x{i}" for i in range(f)), "sensitive", "label", "split"])
        for j in range(graph.n_nodes):
            w.writerow([j, *(_fmt(v) for v in graph.features[:, j]),
                        int(graph.sensitive[j]), int(graph.labels[j]), split[j]])
    meta_out = {"sensitive_column": "sensitive", "label_column": "label",
                "id_column": "node_id", "split_column": "split"}
    meta_out.update(meta or {})
    meta_path = out / "meta.json"
    meta_path.write_text(json.dumps(meta_out, indent=2, sort_keys=True) + "\n")
    return [edges_path, feat_path, meta_path]


def _binary(value: str, what: str, lineno: int, path) -> int:
    try:
        v = float(value)
    except ValueError:
        raise DataError(f"{path}:{lineno}: {what} value {value!r} is not numeric") from None
    if v not in (0.0, 1.0):
        raise DataError(f"{path}:{lineno}: {what} value {value!r} is not binary")
    return int(v)


def load_graph(edge_path, feature_path, sensitive_column: str = "sensitive",
               label_column: str = "label", id_column: str | None = "node_id",
               split_column: str | None = "split") -> Graph:
    """Read an edge list and a feature CSV into a :class:`Graph`.

    Node ids are remapped to ``0..N-1`` in ascending id order (row order when
    there is no id column). Every column other than id, sensitive, label and
    split is a feature. Edges are symmetrized and deduplicated.
    """
    feature_path = Path(feature_path)
    with feature_path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{feature_path}: empty feature file") from None
        for col in (sensitive_column, label_column):
            if col not in header:
                raise DataError(f"{feature_path}:1: missing column {col!r}")
        id_idx = header.index(id_column) if id_column and id_column in header else None
        split_idx = header.index(split_column) if split_column and split_column in header else None
        s_idx, y_idx = header.index(sensitive_column), header.index(label_column)
        special = {id_idx, split_idx, s_idx, y_idx}
        feat_idx = [i for i in range(len(header)) if i not in special]
        ids, rows, sens, labels, splits = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{feature_path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                ids.append(int(row[id_idx]) if id_idx is not None else len(ids))
                rows.append([float(row[i]) for i in feat_idx])
            except ValueError as exc:
                raise DataError(f"{feature_path}:{lineno}: {exc}") from None
            sens.append(_binary(row[s_idx], "sensitive", lineno, feature_path))
            labels.append(_binary(row[y_idx], "label", lineno, feature_path))
            splits.append(row[split_idx] if split_idx is not None else "")
    if not ids:
        raise DataError(f"{feature_path}: no nodes")
    ids = np.asarray(ids, dtype=np.int64)
    if np.unique(ids).size != ids.size:
        raise DataError(f"{feature_path}: duplicate node ids")
    order = np.argsort(ids, kind="stable")
    remap = {int(v): k for k, v in enumerate(ids[order])}

    edges = []
    with Path(edge_path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 2:
                raise DataError(f"{edge_path}:{lineno}: expected two node ids")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{edge_path}:{lineno}: non-integer node id") from None
            if a not in remap or b not in remap:
                raise DataError(f"{edge_path}:{lineno}: node without features ({a}, {b})")
            edges.append((remap[a], remap[b]))

    x = np.asarray(rows, dtype=np.float64)[order].T.reshape(len(feat_idx), ids.size)
    split_arr = np.asarray(splits, dtype=object)[order]
    masks = tuple(split_arr == name for name in SPLIT_NAMES)
    try:
        return Graph.from_edges(ids.size, edges, x, np.asarray(sens)[order],
                                np.asarray(labels)[order], masks)
    except GraphError as exc:
        raise DataError(str(exc)) from None


def load_dataset(path) -> Graph:
    path = Path(path)
    meta_path = path / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return load_graph(path / "edges.tsv", path / "features.csv",
                      sensitive_column=meta.get("sensitive_column", "sensitive"),
                      label_column=meta.get("label_column", "label"),
                      id_column=meta.get("id_column", "node_id"),
                      split_column=meta.get("split_column", "split"))


def spec_from_preset(name: str, **overrides) -> SyntheticSpec:
    if name not in PRESETS:
        raise DataError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SyntheticSpec(**{**PRESETS[name], **overrides})


def expected_ratio(spec: SyntheticSpec) -> float:
    return spec.intra_edge_target / max(spec.inter_edge_target, 1)


__all__ = [
    "DataError", "SyntheticSpec", "DatasetStats", "PRESETS", "generate_synthetic",
    "make_splits", "compute_stats", "write_dataset", "load_graph", "load_dataset",
    "spec_from_preset", "expected_ratio",
]

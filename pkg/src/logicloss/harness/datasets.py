"""Dataset generators for the desk-scale experiments.

Both generators are pure functions of their parameters and seed.  Records
serialize as line-delimited JSON (one object per sample, see README).
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np

from ..formula import Atom, CNFTemplate, TermExpr, compile_source
from ..trainer import Sample

# ---------------------------------------------------------------------------
# Weighted connected graphs with Dijkstra labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphInstance:
    n: int
    adjacency: np.ndarray  # symmetric, 0 = no edge, weights in {1..9}
    source: int
    labels: np.ndarray  # shortest distances from source


def dijkstra(adjacency: np.ndarray, source: int) -> np.ndarray:
    n = adjacency.shape[0]
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v in range(n):
            w = adjacency[u, v]
            if w > 0 and d + w < dist[v]:
                dist[v] = d + w
                heapq.heappush(heap, (dist[v], v))
    return dist


def gen_graphs(n_vertices: int, count: int, seed: int,
               extra_edge_prob: float = 0.25) -> list[GraphInstance]:
    """Connected random graphs: a random spanning tree plus extra edges."""
    if n_vertices < 2:
        raise ValueError("need at least two vertices")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        adj = np.zeros((n_vertices, n_vertices))
        for v in range(1, n_vertices):
            u = int(rng.integers(0, v))  # attach each vertex to an earlier one
            w = int(rng.integers(1, 10))
            adj[u, v] = adj[v, u] = w
        for u in range(n_vertices):
            for v in range(u + 1, n_vertices):
                if adj[u, v] == 0 and rng.random() < extra_edge_prob:
                    w = int(rng.integers(1, 10))
                    adj[u, v] = adj[v, u] = w
        labels = dijkstra(adj, 0)
        out.append(GraphInstance(n_vertices, adj, 0, labels))
    return out


def _swap_perm(n: int, s: int) -> np.ndarray:
    perm = np.arange(n)
    perm[0], perm[s] = s, 0
    return perm


def permuted_adjacency(adj: np.ndarray, source: int) -> np.ndarray:
    """Relabel vertices so ``source`` sits at index 0."""
    perm = _swap_perm(adj.shape[0], source)
    return adj[np.ix_(perm, perm)]


def shortest_path_constraints(n_vertices: int, rng: np.random.Generator,
                              n_sym: int = 2, n_tri: int = 10
                              ) -> tuple[CNFTemplate, tuple[tuple[str, int], ...]]:
    """Symmetry and triangle-inequality template over permuted-source slots.

    Returns the template plus a binding plan mapping each slot name to the
    source vertex whose permuted adjacency must be fed through the model.
    The model's output index for "distance from s to v" under slot src_s is
    v, except that v=s reads index 0 (the source swap is an involution).
    """
    if n_vertices < 3:
        raise ValueError("need at least three vertices")

    def out_index(source: int, vertex: int) -> int:
        if vertex == source:
            return 0
        if vertex == 0:
            return source
        return vertex

    clauses: list[tuple[Atom, ...]] = []
    names: dict[tuple[int, int], str] = {}
    sources = {0}

    sym_vertices = rng.choice(np.arange(1, n_vertices), size=n_sym, replace=False)
    for s in sorted(int(v) for v in sym_vertices):
        sources.add(s)
        fwd = ("src0", out_index(0, s), 1.0)
        rev = (f"src{s}", out_index(s, 0), 1.0)
        # equality f(0,s) = f(s,0) expands into the two one-sided atoms
        a1 = Atom(TermExpr((fwd, (rev[0], rev[1], -1.0))), 0.0)
        a2 = Atom(TermExpr(((fwd[0], fwd[1], -1.0), rev)), 0.0)
        for a in (a1, a2):
            names[(len(clauses), 0)] = "sym"
            clauses.append((a,))

    for _ in range(n_tri):
        j, k = rng.choice(np.arange(1, n_vertices), size=2, replace=False)
        j, k = int(j), int(k)
        sources.add(k)
        # f(0,j) - f(0,k) - f(k,j) <= 0
        refs = (("src0", out_index(0, j), 1.0),
                ("src0", out_index(0, k), -1.0),
                (f"src{k}", out_index(k, j), -1.0))
        names[(len(clauses), 0)] = "tri"
        clauses.append((Atom(TermExpr(refs), 0.0),))

    template = CNFTemplate.from_clauses(tuple(clauses), literal_names=names)
    plan = tuple((f"src{s}", s) for s in sorted(sources))
    return template, plan


def graph_samples(instances: list[GraphInstance], seed: int,
                  n_sym: int = 2, n_tri: int = 10, id_offset: int = 0) -> list[Sample]:
    """Trainer samples with per-instance constraint templates and slots."""
    rng = np.random.default_rng(seed)
    samples = []
    for k, inst in enumerate(instances):
        template, plan = shortest_path_constraints(inst.n, rng, n_sym, n_tri)
        slots = {slot: permuted_adjacency(inst.adjacency, s).reshape(-1) for slot, s in plan}
        samples.append(Sample(id_offset + k, slots, inst.labels.copy(), template))
    return samples


# ---------------------------------------------------------------------------
# Synthetic shortcut-satisfaction task
# ---------------------------------------------------------------------------

# The rewritten implication "label(rx)=1 -> label(x)=3" with label equalities
# softened at kappa = 0.05.
SHORTCUT_RULE = "rx.p[1] <= 0.05 | x.p[3] >= 0.95"
SHORTCUT_HIDDEN_CLASS = 3

# Cluster geometry. The hidden class reflects into the labeled class-1
# neighborhood but offset from its center: close enough that suppressing
# p1 there fights the supervised signal, far enough that a weighted-sum
# product encoder can carve it out and take the shortcut.  The hidden
# cluster itself sits in the contested zone between labeled sectors so no
# labeled class saturates it before the constraint can act.
_CENTERS = np.array([[0.0, 2.0], [2.0, 0.0], [0.0, -2.0], [-1.6, -1.6]])
_SIGMA = 0.35


@dataclass(frozen=True)
class ShortcutDataset:
    points: np.ndarray  # (n, 2)
    reflected: np.ndarray  # (n, 2), exactly -points
    labels: np.ndarray  # (n,), true class ids
    train_mask: np.ndarray  # (n,) bool; hidden-class labels removed on this split
    hidden_class: int = SHORTCUT_HIDDEN_CLASS


def reflect(x: np.ndarray) -> np.ndarray:
    """The fixed involution R: point reflection about the origin."""
    return -x


def gen_shortcut_task(count: int, seed: int) -> tuple[ShortcutDataset, CNFTemplate]:
    """4 Gaussian clusters in 2D; class 3 unlabeled during training.

    ``count`` is the per-class point count of the train split; the eval split
    has count // 4 points per class and keeps every label.
    """
    if count < 100:
        raise ValueError("need at least 100 points")
    rng = np.random.default_rng(seed)
    n_eval = max(count // 4, 25)
    xs, ys, mask = [], [], []
    for split_n, is_train in ((count, True), (n_eval, False)):
        for cls in range(4):
            pts = _CENTERS[cls] + _SIGMA * rng.standard_normal((split_n, 2))
            xs.append(pts)
            ys.append(np.full(split_n, cls))
            mask.append(np.full(split_n, is_train))
    points = np.vstack(xs)
    labels = np.concatenate(ys).astype(int)
    train_mask = np.concatenate(mask)
    ds = ShortcutDataset(points, reflect(points), labels, train_mask)
    template = compile_source(SHORTCUT_RULE).with_literal_names({(0, 0): "notP", (0, 1): "Q"})
    return ds, template


def shortcut_samples(ds: ShortcutDataset, template: CNFTemplate
                     ) -> tuple[list[Sample], list[Sample]]:
    """(train, eval) sample lists; train hides the hidden class's labels."""
    train, test = [], []
    for k in range(ds.points.shape[0]):
        slots = {"x": ds.points[k], "rx": ds.reflected[k]}
        if ds.train_mask[k]:
            label = None if ds.labels[k] == ds.hidden_class else int(ds.labels[k])
            train.append(Sample(k, slots, label, template))
        else:
            test.append(Sample(k, slots, int(ds.labels[k]), template))
    return train, test


def nearest_centroid_accuracy(ds: ShortcutDataset) -> float:
    """Separability oracle: labeled-centroid classifier on the eval split."""
    centroids = np.vstack([ds.points[(ds.labels == c) & ds.train_mask].mean(axis=0)
                           for c in range(4)])
    test = ~ds.train_mask
    d = np.linalg.norm(ds.points[test, None, :] - centroids[None, :, :], axis=2)
    pred = d.argmin(axis=1)
    return float((pred == ds.labels[test]).mean())


# ---------------------------------------------------------------------------
# Line-delimited JSON serialization
# ---------------------------------------------------------------------------

def write_graph_dataset(instances: list[GraphInstance], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps({
                "n": inst.n,
                "adjacency": inst.adjacency.astype(int).tolist(),
                "source": inst.source,
                "labels": inst.labels.tolist(),
            }) + "\n")


def read_graph_dataset(path: str) -> list[GraphInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            doc = json.loads(line)
            out.append(GraphInstance(doc["n"], np.array(doc["adjacency"], dtype=float),
                                     doc["source"], np.array(doc["labels"], dtype=float)))
    return out


def write_shortcut_dataset(ds: ShortcutDataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k in range(ds.points.shape[0]):
            fh.write(json.dumps({
                "x": ds.points[k].tolist(),
                "rx": ds.reflected[k].tolist(),
                "label": int(ds.labels[k]),
                "train": bool(ds.train_mask[k]),
            }) + "\n")


def read_shortcut_dataset(path: str) -> ShortcutDataset:
    xs, rxs, ys, mask = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            doc = json.loads(line)
            xs.append(doc["x"])
            rxs.append(doc["rx"])
            ys.append(doc["label"])
            mask.append(doc["train"])
    return ShortcutDataset(np.array(xs), np.array(rxs), np.array(ys, dtype=int),
                           np.array(mask, dtype=bool))

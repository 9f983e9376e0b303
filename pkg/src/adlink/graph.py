"""Artifact graph construction, connected components and giant-component detection.

Vertices are unique artifacts (post texts, pHashes, contacts); each ad links its
post vertex to its pHash and contact vertices. Vertices are laid out in three
sorted blocks -- posts, then pHashes, then contacts -- so the same set of
records always yields the same indexing regardless of record order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from . import _kernels
from .ingest import Dataset

POST, PHASH, CONTACT = 0, 1, 2
KIND_NAMES = ("post", "phash", "contact")
_KIND_CODES = {name: i for i, name in enumerate(KIND_NAMES)}


class ArtifactId(NamedTuple):
    kind: int
    key: int


@dataclass
class ArtifactGraph:
    kind: np.ndarray  # int8 per vertex
    key: np.ndarray  # uint64 per vertex
    edges: np.ndarray  # (m, 2) int64, u < v, lexicographically sorted
    post_texts: list[str] = field(default_factory=list)
    _csr: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return int(self.kind.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def n_posts(self) -> int:
        return int(np.count_nonzero(self.kind == POST))

    def vertex(self, i: int) -> ArtifactId:
        return ArtifactId(int(self.kind[i]), int(self.key[i]))

    def index_of(self, kind: int, key: int) -> int:
        lo = int(np.searchsorted(self.kind, kind, side="left"))
        hi = int(np.searchsorted(self.kind, kind, side="right"))
        block = self.key[lo:hi]
        j = int(np.searchsorted(block, np.uint64(key)))
        if j == block.shape[0] or int(block[j]) != key:
            raise KeyError(ArtifactId(kind, key))
        return lo + j

    def post_text(self, i: int) -> str:
        if self.kind[i] != POST:
            raise ValueError(f"vertex {i} is not a post")
        try:
            return self.post_texts[i]
        except IndexError:
            raise KeyError(f"no text for post_key {int(self.key[i])}") from None

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Symmetric adjacency as (indptr, indices), neighbours sorted."""
        if self._csr is None:
            self._csr = edges_to_csr(self.n_vertices, self.edges)
        return self._csr


def edges_to_csr(n: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if edges.shape[0] == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst.astype(np.int64, copy=False)


def unique_edges(u: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    """Deduplicated, sorted (min, max) pairs with self-loops dropped."""
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    keep = lo != hi
    code = np.unique(lo[keep] * n + hi[keep])
    return np.stack([code // n, code % n], axis=1) if code.size else np.zeros((0, 2), dtype=np.int64)


def build_graph(dataset: Dataset) -> ArtifactGraph:
    """One vertex per unique post/pHash/contact; post-to-artifact edges per record."""
    recs = dataset.records
    post_keys = np.fromiter((r.post_key for r in recs), dtype=np.uint64, count=len(recs))
    ph_post: list[int] = []
    ph_val: list[int] = []
    pn_post: list[int] = []
    pn_val: list[int] = []
    for r in recs:
        for h in r.phashes:
            ph_post.append(r.post_key)
            ph_val.append(h)
        for c in r.phones:
            pn_post.append(r.post_key)
            pn_val.append(c)
    ph_post_a = np.array(ph_post, dtype=np.uint64)
    ph_val_a = np.array(ph_val, dtype=np.uint64)
    pn_post_a = np.array(pn_post, dtype=np.uint64)
    pn_val_a = np.array(pn_val, dtype=np.uint64)

    posts = np.unique(post_keys)
    phashes = np.unique(ph_val_a)
    phones = np.unique(pn_val_a)
    n_p, n_h = posts.size, phashes.size
    n = n_p + n_h + phones.size

    kind = np.concatenate([np.full(n_p, POST, np.int8), np.full(n_h, PHASH, np.int8),
                           np.full(phones.size, CONTACT, np.int8)])
    key = np.concatenate([posts, phashes, phones]).astype(np.uint64)

    u = np.concatenate([np.searchsorted(posts, ph_post_a), np.searchsorted(posts, pn_post_a)])
    v = np.concatenate([n_p + np.searchsorted(phashes, ph_val_a),
                        n_p + n_h + np.searchsorted(phones, pn_val_a)])
    edges = unique_edges(u, v, max(n, 1))

    texts = dataset.post_texts()
    post_texts = [texts[int(k)] for k in posts]
    return ArtifactGraph(kind=kind, key=key, edges=edges, post_texts=post_texts)


@dataclass
class ComponentSet:
    labels: np.ndarray  # vertex -> component id
    sizes: np.ndarray  # component id -> vertex count

    @property
    def n_components(self) -> int:
        return int(self.sizes.shape[0])

    @property
    def n_vertices(self) -> int:
        return int(self.labels.shape[0])

    def members(self, cid: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cid)


class GiantComponentInfo(NamedTuple):
    component_id: int
    size: int
    proportion: float


def components_from_edges(n: int, edges: np.ndarray) -> ComponentSet:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    labels = _kernels.union_find_labels(n, edges[:, 0].copy(), edges[:, 1].copy())
    sizes = np.bincount(labels, minlength=int(labels.max()) + 1 if n else 0).astype(np.int64)
    return ComponentSet(labels=labels, sizes=sizes)


def connected_components(graph: ArtifactGraph) -> ComponentSet:
    return components_from_edges(graph.n_vertices, graph.edges)


def giant_component(components: ComponentSet, p_min: float = 0.05) -> GiantComponentInfo | None:
    """Largest component if it holds at least ``p_min`` of all vertices.

    Ties go to the lowest component id.
    """
    if components.n_components == 0:
        raise ValueError("no components")
    cid = int(np.argmax(components.sizes))
    size = int(components.sizes[cid])
    prop = size / components.n_vertices
    if prop < p_min:
        return None
    return GiantComponentInfo(cid, size, prop)


def post_groups(graph: ArtifactGraph, components: ComponentSet, exclude: int | None = None
                ) -> list[np.ndarray]:
    """Post keys of each component (ascending ids), skipping ``exclude``."""
    post_idx = np.flatnonzero(graph.kind == POST)
    labels = components.labels[post_idx]
    order = np.argsort(labels, kind="stable")
    labels_sorted = labels[order]
    keys = graph.key[post_idx][order].astype(np.int64)
    cuts = np.flatnonzero(np.diff(labels_sorted)) + 1
    groups = np.split(keys, cuts)
    ids = labels_sorted[np.append(0, cuts)] if labels_sorted.size else np.zeros(0, np.int64)
    return [g for cid, g in zip(ids, groups) if cid != exclude]


def graph_stats(graph: ArtifactGraph, components: ComponentSet, p_min: float = 0.05) -> dict:
    gc = giant_component(components, p_min) if components.n_components else None
    largest = int(components.sizes.max()) if components.n_components else 0
    return {
        "vertices": graph.n_vertices,
        "edges": graph.n_edges,
        "components": components.n_components,
        "posts": graph.n_posts,
        "phashes": int(np.count_nonzero(graph.kind == PHASH)),
        "contacts": int(np.count_nonzero(graph.kind == CONTACT)),
        "largest_component_proportion": largest / graph.n_vertices if graph.n_vertices else 0.0,
        "giant_component": None if gc is None else gc.component_id,
        "p_min": p_min,
    }


# on-disk layout: a directory holding
#   vertices.tsv    index, kind, key
#   edges.tsv       u, v (u < v)
#   components.tsv  index, component
#   posts.jsonl     {"post_key": int, "text": str} per post vertex, in index order
#   graph.json      counts and giant-component summary

def write_graph(graph: ArtifactGraph, path: str | Path, components: ComponentSet | None = None,
                p_min: float = 0.05) -> None:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    idx = np.arange(graph.n_vertices)
    pd.DataFrame({"index": idx, "kind": np.array(KIND_NAMES)[graph.kind.astype(np.int64)],
                  "key": graph.key}).to_csv(d / "vertices.tsv", sep="\t", index=False, lineterminator="\n")
    pd.DataFrame({"u": graph.edges[:, 0], "v": graph.edges[:, 1]}).to_csv(
        d / "edges.tsv", sep="\t", index=False, lineterminator="\n")
    with open(d / "posts.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for k, t in zip(graph.key[: len(graph.post_texts)], graph.post_texts):
            fh.write(json.dumps({"post_key": int(k), "text": t}, ensure_ascii=False) + "\n")
    if components is None:
        components = connected_components(graph)
    pd.DataFrame({"index": idx, "component": components.labels}).to_csv(
        d / "components.tsv", sep="\t", index=False, lineterminator="\n")
    (d / "graph.json").write_text(json.dumps(graph_stats(graph, components, p_min), indent=2,
                                             sort_keys=True) + "\n", encoding="utf-8")


def read_graph(path: str | Path) -> tuple[ArtifactGraph, ComponentSet]:
    d = Path(path)
    vt = pd.read_csv(d / "vertices.tsv", sep="\t", dtype={"index": np.int64, "kind": str, "key": np.uint64})
    et = pd.read_csv(d / "edges.tsv", sep="\t", dtype=np.int64)
    kind = vt["kind"].map(_KIND_CODES).to_numpy(dtype=np.int8)
    texts: list[str] = []
    with open(d / "posts.jsonl", encoding="utf-8") as fh:
        for line in fh:
            texts.append(json.loads(line)["text"])
    graph = ArtifactGraph(kind=kind, key=vt["key"].to_numpy(dtype=np.uint64),
                          edges=et[["u", "v"]].to_numpy(dtype=np.int64).reshape(-1, 2), post_texts=texts)
    ct = pd.read_csv(d / "components.tsv", sep="\t", dtype=np.int64)
    labels = ct["component"].to_numpy(dtype=np.int64)
    sizes = np.bincount(labels).astype(np.int64) if labels.size else np.zeros(0, np.int64)
    return graph, ComponentSet(labels, sizes)

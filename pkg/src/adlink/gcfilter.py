"""Giant-component decomposition by same-user edge filtering.

The giant component is projected onto its post vertices (posts that share a
pHash or contact become adjacent), every projected edge is scored with the
same-user classifier, edges scoring below ``delta`` are cut after the full
sweep, and the surviving post groups are relabelled together with the
untouched non-giant components. Posts are never dropped, only links.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from . import _kernels
from .graph import (POST, ArtifactGraph, ArtifactId, ComponentSet, GiantComponentInfo,
                    components_from_edges, giant_component)
from .similarity import SameUserClassifier, rowwise_cosine

log = logging.getLogger(__name__)

DEFAULT_DELTA = 0.7
DEFAULT_HUB_CAP = 5000
DEFAULT_HUB_SAMPLE = 64


@dataclass
class FilterConfig:
    delta: float = DEFAULT_DELTA
    p_min: float = 0.05
    hub_cap: int | None = DEFAULT_HUB_CAP
    hub_sample: int = DEFAULT_HUB_SAMPLE
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if not 0.0 <= self.p_min <= 1.0:
            raise ValueError(f"p_min must lie in [0, 1], got {self.p_min}")


@dataclass
class PostProjection:
    posts: np.ndarray  # global vertex ids of giant-component posts, ascending
    edges: np.ndarray  # (m, 2) local post indices, u < v
    prov_indptr: np.ndarray  # edge i's shared artifacts: prov_artifacts[indptr[i]:indptr[i+1]]
    prov_artifacts: np.ndarray  # global vertex ids
    hubs: dict[int, int] = field(default_factory=dict)  # capped artifact -> its full post degree

    @property
    def n_posts(self) -> int:
        return int(self.posts.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def provenance(self, i: int) -> np.ndarray:
        return self.prov_artifacts[self.prov_indptr[i]:self.prov_indptr[i + 1]]

    def provenance_ids(self, i: int, graph: ArtifactGraph) -> list[ArtifactId]:
        return [graph.vertex(int(a)) for a in self.provenance(i)]


def project_posts(graph: ArtifactGraph, components: ComponentSet, gc_id: int, *,
                  hub_cap: int | None = None, hub_sample: int = DEFAULT_HUB_SAMPLE,
                  seed: int = 0) -> PostProjection:
    """Post-only projection of one component.

    Every non-post vertex of the component turns its post neighbours into a
    clique. Artifacts with more than ``hub_cap`` posts instead link each of
    their posts to ``hub_sample`` seeded anchor posts; their full degree is
    kept in ``hubs``.
    """
    members = components.members(gc_id)
    posts = members[graph.kind[members] == POST]
    if posts.size == 0:
        raise ValueError(f"component {gc_id} holds no post vertices")
    n_local = posts.size

    # artifact-graph edges are (post, artifact) with the post first
    e = graph.edges
    inside = components.labels[e[:, 1]] == gc_id
    pu, av = e[inside, 0], e[inside, 1]
    order = np.lexsort((pu, av))
    pu, av = pu[order], av[order]
    local = np.searchsorted(posts, pu)
    arts, starts, degree = np.unique(av, return_index=True, return_counts=True)
    indptr = np.append(starts, av.size).astype(np.int64)

    is_hub = np.zeros(arts.size, dtype=bool) if hub_cap is None else degree > hub_cap
    hubs: dict[int, int] = {}

    keep = ~is_hub
    sub_indptr = np.zeros(int(keep.sum()) + 1, dtype=np.int64)
    np.cumsum(degree[keep], out=sub_indptr[1:])
    sub_members = local[np.repeat(keep, degree)]
    total = int(_kernels.count_clique_pairs(sub_indptr))
    cu = np.empty(total, dtype=np.int64)
    cv = np.empty(total, dtype=np.int64)
    ca = np.empty(total, dtype=np.int64)
    _kernels.expand_cliques(sub_indptr, sub_members.astype(np.int64), arts[keep].astype(np.int64), cu, cv, ca)

    parts_u, parts_v, parts_a = [cu], [cv], [ca]
    for i in np.flatnonzero(is_hub):
        m = local[indptr[i]:indptr[i + 1]]
        art = int(arts[i])
        hubs[art] = int(m.size)
        rng = np.random.default_rng([seed, int(graph.key[art]), int(graph.kind[art])])
        anchors = m[rng.choice(m.size, size=min(hub_sample, m.size), replace=False)]
        uu = np.repeat(m, anchors.size)
        vv = np.tile(anchors, m.size)
        ok = uu != vv
        uu, vv = uu[ok], vv[ok]
        parts_u.append(np.minimum(uu, vv))
        parts_v.append(np.maximum(uu, vv))
        parts_a.append(np.full(uu.size, art, dtype=np.int64))
        log.info("hub artifact %s has %d posts; capped to %d anchors", graph.vertex(art), m.size, anchors.size)

    u = np.concatenate(parts_u)
    v = np.concatenate(parts_v)
    a = np.concatenate(parts_a)
    del cu, cv, ca, parts_u, parts_v, parts_a
    code = u * n_local + v
    order = np.lexsort((a, code))
    code, a = code[order], a[order]
    # one artifact may occur twice for a hub pair sampled from both ends
    dup = np.zeros(code.size, dtype=bool)
    if code.size:
        dup[1:] = (code[1:] == code[:-1]) & (a[1:] == a[:-1])
    code, a = code[~dup], a[~dup]
    uniq, first = np.unique(code, return_index=True)
    edges = np.stack([uniq // n_local, uniq % n_local], axis=1) if uniq.size else np.zeros((0, 2), np.int64)
    prov_indptr = np.append(first, code.size).astype(np.int64)
    return PostProjection(posts=posts, edges=edges, prov_indptr=prov_indptr, prov_artifacts=a, hubs=hubs)


def projection_texts(graph: ArtifactGraph, projection: PostProjection) -> list[str]:
    texts = []
    for g in projection.posts:
        g = int(g)
        t = graph.post_texts[g] if g < len(graph.post_texts) else None
        if t is None:
            raise KeyError(f"missing post text for post_key {int(graph.key[g])}")
        texts.append(t)
    return texts


def score_edges(projection: PostProjection, graph: ArtifactGraph, classifier: SameUserClassifier,
                provider, *, threads: int = 1, chunk: int = 1 << 18) -> np.ndarray:
    """Same-user probability for every projected edge.

    Each post is embedded once; an edge's score is then one dot product, so
    repeated text pairs cost nothing extra.
    """
    texts = projection_texts(graph, projection)
    keys = [int(k) for k in graph.key[projection.posts]]
    emb = provider.embed_many(texts, keys, threads=threads)
    out = np.empty(projection.n_edges)
    for lo in range(0, projection.n_edges, chunk):
        e = projection.edges[lo:lo + chunk]
        out[lo:lo + chunk] = classifier.probability(rowwise_cosine(emb[e[:, 0]], emb[e[:, 1]]))
    return out


class EdgeSplit(NamedTuple):
    retained: np.ndarray  # edge indices into projection.edges
    removed: np.ndarray
    probability: np.ndarray


def cut_edges(probability: np.ndarray, delta: float) -> EdgeSplit:
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    low = probability < delta
    return EdgeSplit(np.flatnonzero(~low), np.flatnonzero(low), probability)


def filter_edges(projection: PostProjection, graph: ArtifactGraph, classifier: SameUserClassifier,
                 provider, delta: float = DEFAULT_DELTA, *, threads: int = 1) -> EdgeSplit:
    """Split projected edges into retained and removed (probability < delta)."""
    return cut_edges(score_edges(projection, graph, classifier, provider, threads=threads), delta)


@dataclass
class ComponentAssignment:
    post_keys: np.ndarray  # ascending
    component: np.ndarray  # final component id per post
    from_gc: np.ndarray  # per component id

    @property
    def n_components(self) -> int:
        return int(self.from_gc.shape[0])

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.post_keys.tolist(), self.component.tolist()))

    def sizes(self) -> np.ndarray:
        return np.bincount(self.component, minlength=self.n_components)

    def write(self, path) -> None:
        flag = np.where(self.from_gc[self.component], "from_gc", "original")
        pd.DataFrame({"post_key": self.post_keys, "component_id": self.component, "provenance": flag}).to_csv(
            path, sep="\t", index=False, lineterminator="\n")

    @classmethod
    def read(cls, path) -> "ComponentAssignment":
        df = pd.read_csv(path, sep="\t", dtype={"post_key": np.uint64, "component_id": np.int64,
                                                 "provenance": str})
        df = df.sort_values("post_key", kind="stable")
        comp = df["component_id"].to_numpy(dtype=np.int64)
        n = int(comp.max()) + 1 if comp.size else 0
        from_gc = np.zeros(n, dtype=bool)
        from_gc[comp] = (df["provenance"] == "from_gc").to_numpy()
        return cls(df["post_key"].to_numpy(dtype=np.uint64), comp, from_gc)


def relabel(projection: PostProjection | None, retained: np.ndarray | None, graph: ArtifactGraph,
            components: ComponentSet, gc_id: int | None) -> ComponentAssignment:
    """Final post -> component ids over filtered giant-component groups and original components.

    Ids are ordered by each group's smallest post key, so they depend only on
    the grouping.
    """
    post_idx = np.flatnonzero(graph.kind == POST)
    orig = components.labels[post_idx]
    code = orig.copy()
    gc_mask = np.zeros(post_idx.size, dtype=bool)
    if gc_id is not None and projection is not None:
        kept = projection.edges[retained] if retained is not None else projection.edges
        sub = components_from_edges(projection.n_posts, kept)
        gc_pos = np.searchsorted(post_idx, projection.posts)
        gc_mask[gc_pos] = True
        code[gc_pos] = components.n_components + sub.labels
    _, first, inv = np.unique(code, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    comp = rank[inv]
    from_gc = np.zeros(first.size, dtype=bool)
    from_gc[comp[gc_mask]] = True
    return ComponentAssignment(graph.key[post_idx].astype(np.uint64), comp, from_gc)


def component_footprints(graph: ArtifactGraph, assignment: ComponentAssignment) -> np.ndarray:
    """Vertices per final component: its posts plus every artifact touching them.

    An artifact shared by posts of different components counts toward each.
    """
    post_idx = np.flatnonzero(graph.kind == POST)
    comp_of = np.full(graph.n_vertices, -1, dtype=np.int64)
    comp_of[post_idx] = assignment.component
    e = graph.edges
    pairs = np.unique(comp_of[e[:, 0]] * graph.n_vertices + e[:, 1])
    touched = np.bincount(pairs // graph.n_vertices, minlength=assignment.n_components)
    return assignment.sizes() + touched


def filter_metrics(graph: ArtifactGraph, before: ComponentSet, gc: GiantComponentInfo | None,
                   assignment: ComponentAssignment, *, elapsed_seconds: float | None = None,
                   extra: dict | None = None) -> dict:
    """Before/after component statistics.

    ``gc_proportion_*`` are over all artifact vertices (after: the largest
    final component's posts plus the artifacts they touch);
    ``gc_post_proportion_*`` are over post vertices only.
    """
    n_v = graph.n_vertices
    n_posts = graph.n_posts
    c_before = before.n_components
    c_after = assignment.n_components
    gc_size = gc.size if gc else int(before.sizes.max())
    gc_posts = int(np.count_nonzero(graph.kind[before.members(gc.component_id)] == POST)) if gc else 0
    foot = component_footprints(graph, assignment)
    after_size = int(foot.max()) if foot.size else 0
    after_posts = int(assignment.sizes().max()) if c_after else 0
    if gc is None:
        after_size, after_posts = gc_size, gc_posts
    m = {
        "vertices": n_v,
        "edges": graph.n_edges,
        "posts": n_posts,
        "components_before": c_before,
        "components_after": c_after,
        "component_increase": (c_after - c_before) / c_before if c_before else 0.0,
        "filtered": gc is not None,
        "gc_size_before": gc_size,
        "gc_size_after": after_size,
        "gc_proportion_before": gc_size / n_v if n_v else 0.0,
        "gc_proportion_after": after_size / n_v if n_v else 0.0,
        "gc_post_proportion_before": gc_posts / n_posts if n_posts else 0.0,
        "gc_post_proportion_after": after_posts / n_posts if n_posts else 0.0,
        "gc_reduction_pct": 100.0 * (gc_size - after_size) / n_v if n_v else 0.0,
        "post_coverage": int(assignment.post_keys.size) / n_posts if n_posts else 1.0,
    }
    if extra:
        m.update(extra)
    if elapsed_seconds is not None:
        m["elapsed_seconds"] = elapsed_seconds
    return m


@dataclass
class FilterOutcome:
    assignment: ComponentAssignment
    metrics: dict
    projection: PostProjection | None
    split: EdgeSplit | None
    gc: GiantComponentInfo | None


def filter_giant_component(graph: ArtifactGraph, components: ComponentSet, classifier: SameUserClassifier,
                           provider, config: FilterConfig | None = None) -> FilterOutcome:
    """Project, score, cut and relabel; a no-op when no component reaches ``p_min``."""
    config = config or FilterConfig()
    t0 = time.perf_counter()
    gc = giant_component(components, config.p_min)
    if gc is None:
        log.info("no giant component at p_min=%s; filtering skipped", config.p_min)
        assignment = relabel(None, None, graph, components, None)
        metrics = filter_metrics(graph, components, None, assignment, extra={"delta": config.delta})
        metrics["elapsed_seconds"] = time.perf_counter() - t0
        return FilterOutcome(assignment, metrics, None, None, None)
    proj = project_posts(graph, components, gc.component_id, hub_cap=config.hub_cap,
                         hub_sample=config.hub_sample, seed=config.seed)
    log.info("projection: %d posts, %d edges", proj.n_posts, proj.n_edges)
    split = filter_edges(proj, graph, classifier, provider, config.delta, threads=config.threads)
    assignment = relabel(proj, split.retained, graph, components, gc.component_id)
    extra = {"delta": config.delta, "projection_posts": proj.n_posts, "projection_edges": proj.n_edges,
             "edges_removed": int(split.removed.size), "hub_artifacts": len(proj.hubs)}
    metrics = filter_metrics(graph, components, gc, assignment, extra=extra)
    metrics["elapsed_seconds"] = time.perf_counter() - t0
    return FilterOutcome(assignment, metrics, proj, split, gc)


def write_metrics(metrics: dict, path, timings_path=None) -> None:
    """Write metrics as sorted JSON; wall-clock fields go to ``timings_path`` only."""
    import json

    stable = {k: v for k, v in metrics.items() if not k.startswith("elapsed")}
    Path(path).write_text(json.dumps(stable, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if timings_path is not None:
        timing = {k: v for k, v in metrics.items() if k.startswith("elapsed")}
        Path(timings_path).write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")

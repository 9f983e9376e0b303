"""Betweenness-centrality vertex removal, the baseline the edge filter is compared against.

Betweenness is estimated with Brandes' accumulation from a uniform sample of
source vertices, rescaled per artifact type relative to that type's maximum,
and every vertex whose relative value reaches the chosen percentile is
deleted along with its edges.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .graph import (KIND_NAMES, POST, ArtifactGraph, ComponentSet, components_from_edges, edges_to_csr,
                    giant_component)

log = logging.getLogger(__name__)

PERCENTILES = (0.75, 0.90, 0.95, 0.99)
DEFAULT_FRACTION = 0.4
DEFAULT_TIME_LIMIT = 86_400.0


@dataclass
class BcEstimate:
    values: np.ndarray  # per local vertex, unordered-pair convention
    vertices: np.ndarray  # global vertex ids (ascending) the values refer to
    sample_fraction: float
    seed: int
    sources_done: int
    n_sources: int


class BcTimeout(RuntimeError):
    """Time limit hit; ``partial`` holds the estimate from the sources completed."""

    def __init__(self, partial: BcEstimate, limit: float):
        super().__init__(f"betweenness exceeded {limit:.0f}s after {partial.sources_done}/"
                         f"{partial.n_sources} sources")
        self.partial = partial


def induced_subgraph(graph: ArtifactGraph, vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Edges among ``vertices`` (ascending) re-indexed to 0..len-1, as CSR."""
    vertices = np.asarray(vertices, dtype=np.int64)
    inside = np.zeros(graph.n_vertices, dtype=bool)
    inside[vertices] = True
    e = graph.edges[inside[graph.edges[:, 0]] & inside[graph.edges[:, 1]]]
    local = np.searchsorted(vertices, e)
    return edges_to_csr(vertices.size, local)


def betweenness_csr(indptr: np.ndarray, indices: np.ndarray, sample_fraction: float = 1.0, seed: int = 0,
                    time_limit: float | None = None, vertices: np.ndarray | None = None) -> BcEstimate:
    """Sampled-source Brandes estimate scaled by n / sources.

    With ``sample_fraction=1`` every vertex is a source and the result is
    exact. Values count each unordered (s, t) pair once.
    """
    if not 0.0 < sample_fraction <= 1.0:
        raise ValueError(f"sample_fraction must lie in (0, 1], got {sample_fraction}")
    n = indptr.shape[0] - 1
    if vertices is None:
        vertices = np.arange(n)
    k = n if sample_fraction >= 1.0 else max(1, int(round(sample_fraction * n)))
    rng = np.random.default_rng(seed)
    sources = np.arange(n) if k == n else np.sort(rng.choice(n, size=k, replace=False))
    bc = np.zeros(n)
    if n == 0:
        return BcEstimate(bc, vertices, sample_fraction, seed, 0, 0)
    t0 = time.perf_counter()
    step = max(1, k // 200) if time_limit is not None else k
    done = 0
    for lo in range(0, k, step):
        _kernels.brandes_accumulate(indptr, indices, sources[lo:lo + step], bc)
        done = min(k, lo + step)
        if time_limit is not None and done < k and time.perf_counter() - t0 > time_limit:
            partial = BcEstimate(bc * (0.5 * n / done), vertices, sample_fraction, seed, done, k)
            raise BcTimeout(partial, time_limit)
    return BcEstimate(bc * (0.5 * n / k), vertices, sample_fraction, seed, done, k)


def approx_betweenness(graph: ArtifactGraph, vertices: np.ndarray | None = None, sample_fraction: float =
                       DEFAULT_FRACTION, seed: int = 0, time_limit: float | None = None) -> BcEstimate:
    """Betweenness of the subgraph induced by ``vertices`` (default: the whole graph)."""
    if vertices is None:
        indptr, indices = graph.csr()
        vertices = np.arange(graph.n_vertices)
    else:
        vertices = np.sort(np.asarray(vertices, dtype=np.int64))
        indptr, indices = induced_subgraph(graph, vertices)
    return betweenness_csr(indptr, indices, sample_fraction, seed, time_limit, vertices)


def relative_values(values: np.ndarray, kinds: np.ndarray) -> np.ndarray:
    """Each value divided by the maximum among vertices of the same artifact type."""
    rel = np.zeros_like(values, dtype=np.float64)
    for k in np.unique(kinds):
        sel = kinds == k
        top = values[sel].max()
        if top > 0:
            rel[sel] = values[sel] / top
    return rel


@dataclass
class BcFilterResult:
    removed: np.ndarray  # global vertex ids
    remaining: np.ndarray  # global vertex ids still present
    components: ComponentSet  # over ``remaining`` (local indexing)
    cutoff: float | dict
    relative: np.ndarray


def bc_filter(graph: ArtifactGraph, estimate: BcEstimate, percentile: float, *, per_type: bool = False
              ) -> BcFilterResult:
    """Delete vertices whose relative betweenness is at or above the percentile cutoff.

    The cutoff is ``np.quantile`` (linear interpolation) of the relative
    values pooled over all artifact types, or taken within each type when
    ``per_type``. Ties at the cutoff are deleted, so a cutoff of zero deletes
    every vertex; only an all-zero estimate is left untouched.
    """
    if not 0.0 < percentile < 1.0:
        raise ValueError(f"percentile must lie in (0, 1), got {percentile}")
    verts = estimate.vertices
    kinds = graph.kind[verts]
    values = estimate.values
    rel = relative_values(values, kinds)
    if not np.any(values > 0):
        warnings.warn("all betweenness estimates are zero; nothing removed", RuntimeWarning, stacklevel=2)
        drop = np.zeros(verts.size, dtype=bool)
        cutoff: float | dict = math.inf
    elif per_type:
        drop = np.zeros(verts.size, dtype=bool)
        cutoff = {}
        for k in np.unique(kinds):
            sel = kinds == k
            c = float(np.quantile(rel[sel], percentile))
            cutoff[KIND_NAMES[int(k)]] = c
            drop |= sel & (rel >= c)
    else:
        cutoff = float(np.quantile(rel, percentile))
        drop = rel >= cutoff
    removed = verts[drop]
    remaining = verts[~drop]
    indptr, indices = induced_subgraph(graph, remaining)
    src = np.repeat(np.arange(remaining.size), np.diff(indptr))
    keep = src < indices
    comps = components_from_edges(remaining.size, np.stack([src[keep], indices[keep]], axis=1))
    return BcFilterResult(removed, remaining, comps, cutoff, rel)


BENCH_COLUMNS = ("method", "config", "gc_reduction_pct", "component_increase_pct",
                 "post_component_increase_pct", "post_coverage_pct", "vertices_removed", "elapsed_s",
                 "timed_out")


def _bc_row(graph: ArtifactGraph, components: ComponentSet, gc, res: BcFilterResult, percentile: float,
            elapsed: float) -> dict:
    n_v = graph.n_vertices
    c_before = components.n_components
    post_before = c_before  # every original component holds a post
    other = np.delete(components.sizes, gc.component_id)
    rem_sizes = res.components.sizes
    c_after = other.size + rem_sizes.size
    largest = int(max(other.max() if other.size else 0, rem_sizes.max() if rem_sizes.size else 0))
    rem_posts = graph.kind[res.remaining] == POST
    post_comps = np.unique(res.components.labels[rem_posts]).size
    n_posts = graph.n_posts
    lost_posts = int(np.count_nonzero(graph.kind[res.removed] == POST))
    return {
        "method": "bc",
        "config": f"{percentile:.2f}",
        "gc_reduction_pct": 100.0 * (gc.size - largest) / n_v,
        "component_increase_pct": 100.0 * (c_after - c_before) / c_before,
        "post_component_increase_pct": 100.0 * (other.size + post_comps - post_before) / post_before,
        "post_coverage_pct": 100.0 * (n_posts - lost_posts) / n_posts,
        "vertices_removed": int(res.removed.size),
        "elapsed_s": elapsed,
        "timed_out": False,
    }


def benchmark(graph: ArtifactGraph, components: ComponentSet, classifier, provider, *,
              delta: float = 0.7, percentiles=PERCENTILES, sample_fraction: float = DEFAULT_FRACTION,
              seed: int = 0, time_limit: float | None = DEFAULT_TIME_LIMIT, per_type: bool = False,
              p_min: float = 0.05, hub_cap: int | None = None, threads: int = 1) -> list[dict]:
    """Proposed edge filter vs betweenness removal on the same giant component.

    Reductions are percentages of all vertices of the original graph. A BC
    run that exceeds ``time_limit`` yields rows flagged ``timed_out``.
    """
    from .gcfilter import FilterConfig, filter_giant_component

    gc = giant_component(components, p_min)
    if gc is None:
        raise ValueError(f"no giant component at p_min={p_min}")
    t0 = time.perf_counter()
    out = filter_giant_component(graph, components, classifier, provider,
                                 FilterConfig(delta=delta, p_min=p_min, hub_cap=hub_cap, seed=seed,
                                              threads=threads))
    elapsed = time.perf_counter() - t0
    m = out.metrics
    rows = [{
        "method": "proposed",
        "config": f"{delta:.2f}",
        "gc_reduction_pct": m["gc_reduction_pct"],
        "component_increase_pct": 100.0 * m["component_increase"],
        "post_component_increase_pct": 100.0 * m["component_increase"],
        "post_coverage_pct": 100.0 * m["post_coverage"],
        "vertices_removed": 0,
        "elapsed_s": elapsed,
        "timed_out": False,
    }]

    t0 = time.perf_counter()
    try:
        est = approx_betweenness(graph, components.members(gc.component_id), sample_fraction, seed, time_limit)
    except BcTimeout as exc:
        log.warning("%s", exc)
        elapsed = time.perf_counter() - t0
        for p in percentiles:
            rows.append({c: None for c in BENCH_COLUMNS} | {"method": "bc", "config": f"{p:.2f}",
                                                             "elapsed_s": elapsed, "timed_out": True})
        return rows
    t_est = time.perf_counter() - t0
    for p in percentiles:
        t1 = time.perf_counter()
        res = bc_filter(graph, est, p, per_type=per_type)
        rows.append(_bc_row(graph, components, gc, res, p, t_est + time.perf_counter() - t1))
    return rows


def write_benchmark(rows: list[dict], path) -> None:
    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(BENCH_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join(fmt(r[c]) for c in BENCH_COLUMNS) + "\n")

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adlink.gcfilter import (ComponentAssignment, FilterConfig, cut_edges, filter_giant_component, filter_metrics,
                             project_posts, relabel, score_edges, write_metrics)
from adlink.graph import POST, build_graph, connected_components, giant_component
from adlink.ingest import Dataset
from adlink.similarity import HashedNgramEmbedder, SameUserClassifier

from conftest import ad
from oracles import bfs_labels, naive_projection, same_partition


def graph_of(records):
    g = build_graph(Dataset(records))
    comps = connected_components(g)
    return g, comps, giant_component(comps, 0.0)


def local_pairs(g, proj):
    keys = g.key[proj.posts].astype(np.int64)
    return {(int(keys[u]), int(keys[v])) for u, v in proj.edges}


def test_star_becomes_triangle():
    g, comps, gc = graph_of([ad(1, 1, phones=[9]), ad(2, 2, phones=[9]), ad(3, 3, phones=[9])])
    proj = project_posts(g, comps, gc.component_id)
    assert local_pairs(g, proj) == {(1, 2), (1, 3), (2, 3)}
    phone = g.index_of(2, 9)
    assert all(proj.provenance(i).tolist() == [phone] for i in range(3))


def test_shared_artifact_chain():
    # posts chained through images and phones: 1-2 by image, 2-3 by phone, 3-4 by image and phone
    g, comps, gc = graph_of([ad(1, 1, phashes=[50]), ad(2, 2, phashes=[50], phones=[7]),
                             ad(3, 3, phones=[7, 8], phashes=[60]), ad(4, 4, phones=[8], phashes=[60])])
    proj = project_posts(g, comps, gc.component_id)
    assert local_pairs(g, proj) == {(1, 2), (2, 3), (3, 4)}
    i34 = [i for i, (u, v) in enumerate(proj.edges) if {int(g.key[proj.posts[u]]), int(g.key[proj.posts[v]])} == {3, 4}]
    assert len(proj.provenance(i34[0])) == 2


def random_records(rng, n):
    return [ad(i, int(rng.integers(60)), phashes=rng.integers(40, size=int(rng.integers(0, 3))).tolist(),
               phones=rng.integers(25, size=int(rng.integers(0, 2))).tolist()) for i in range(n)]


def test_projection_matches_pairwise_oracle():
    rng = np.random.default_rng(8)
    for _ in range(25):
        recs = random_records(rng, int(rng.integers(5, 120)))
        g, comps, gc = graph_of(recs)
        members = set(comps.members(gc.component_id).tolist())
        gc_posts = {int(g.key[i]) for i in members if g.kind[i] == POST}
        adjacency = {k: set() for k in gc_posts}
        for r in recs:
            if r.post_key in adjacency:
                adjacency[r.post_key] |= {("h", h) for h in r.phashes} | {("c", c) for c in r.phones}
        try:
            proj = project_posts(g, comps, gc.component_id)
        except ValueError:
            assert not gc_posts
            continue
        assert local_pairs(g, proj) == naive_projection(gc_posts, adjacency)
        for i, (u, v) in enumerate(proj.edges):
            prov = proj.provenance(i)
            assert prov.size > 0
            for a in prov:
                assert g.kind[a] != POST
                nbrs = {int(x) for x in g.edges[(g.edges[:, 1] == a), 0]}
                assert {int(proj.posts[u]), int(proj.posts[v])} <= nbrs


def test_projection_needs_posts():
    from adlink.graph import ComponentSet
    g, comps, _ = graph_of([ad(1, 1, phones=[5])])
    # a fake component holding only the phone vertex
    labels = np.array([1, 0])
    with pytest.raises(ValueError):
        project_posts(g, ComponentSet(labels, np.array([1, 1])), 0)


def split_example():
    # four posts on a cycle, one shared artifact per consecutive pair
    recs = [ad(1, 1, phones=[10, 40]), ad(2, 2, phones=[10, 20]), ad(3, 3, phones=[20, 30]),
            ad(4, 4, phones=[30, 40])]
    g, comps, gc = graph_of(recs)
    proj = project_posts(g, comps, gc.component_id)
    probs = {(1, 2): 0.8, (3, 4): 0.9, (2, 3): 0.1, (1, 4): 0.2}
    keys = g.key[proj.posts].astype(np.int64)
    p = np.array([probs[(int(keys[u]), int(keys[v]))] for u, v in proj.edges])
    return g, comps, gc, proj, p


def test_half_threshold_splits_in_two():
    g, comps, gc, proj, p = split_example()
    split = cut_edges(p, 0.5)
    assert sorted(p[split.retained]) == [0.8, 0.9]
    assert sorted(p[split.removed]) == [0.1, 0.2]
    a = relabel(proj, split.retained, g, comps, gc.component_id)
    d = a.as_dict()
    assert a.n_components == 2 and d[1] == d[2] != d[3] == d[4]
    assert a.from_gc.all()


def test_delta_zero_is_identity():
    g, comps, gc, proj, p = split_example()
    split = cut_edges(p, 0.0)
    assert split.removed.size == 0
    a = relabel(proj, split.retained, g, comps, gc.component_id)
    assert a.n_components == comps.n_components


def test_delta_bounds():
    with pytest.raises(ValueError):
        cut_edges(np.zeros(1), 1.5)
    with pytest.raises(ValueError):
        FilterConfig(delta=-0.1)


def test_disjoint_union_of_groups():
    # GC of four posts splits in two; three small original components stay put
    recs = [ad(1, 1, phones=[10, 40]), ad(2, 2, phones=[10, 20]), ad(3, 3, phones=[20, 30]),
            ad(4, 4, phones=[30, 40]), ad(5, 5), ad(6, 6), ad(7, 7, phashes=[1])]
    g, comps, _ = graph_of(recs)
    gc = giant_component(comps)
    proj = project_posts(g, comps, gc.component_id)
    keys = g.key[proj.posts].astype(np.int64)
    keep = np.array([i for i, (u, v) in enumerate(proj.edges)
                     if {int(keys[u]), int(keys[v])} in ({1, 2}, {3, 4})])
    a = relabel(proj, keep, g, comps, gc.component_id)
    assert a.n_components == 5
    assert a.from_gc.sum() == 2


@pytest.fixture(scope="module")
def fixture_scores(synth_fixture):
    fx = synth_fixture
    return fx.outcome.projection, fx.outcome.split.probability


def test_removed_edges_nested_in_delta(synth_fixture, fixture_scores):
    _, p = fixture_scores
    prev = set()
    for d in (0.0, 0.3, 0.5, 0.7, 0.9, 1.0):
        removed = set(cut_edges(p, d).removed.tolist())
        assert prev <= removed
        prev = removed
    assert cut_edges(p, 0.9).removed.size >= cut_edges(p, 0.7).removed.size


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0))
def test_lossless_for_any_delta(synth_fixture, fixture_scores, delta):
    fx = synth_fixture
    proj, p = fixture_scores
    a = relabel(proj, cut_edges(p, delta).retained, fx.graph, fx.components, fx.gc.component_id)
    assert sorted(a.post_keys.tolist()) == sorted(fx.graph.key[:fx.graph.n_posts].astype(np.int64).tolist())
    assert a.n_components >= fx.components.n_components
    # ids are dense
    assert set(np.unique(a.component).tolist()) == set(range(a.n_components))


def test_relabel_matches_bfs(synth_fixture, fixture_scores):
    fx = synth_fixture
    proj, p = fixture_scores
    kept = proj.edges[cut_edges(p, 0.7).retained]
    ref = bfs_labels(proj.n_posts, kept.tolist())
    a = fx.outcome.assignment
    pos = np.searchsorted(a.post_keys, fx.graph.key[proj.posts])
    assert same_partition(a.component[pos].tolist(), ref)


def test_fixture_metrics(synth_fixture):
    m = synth_fixture.outcome.metrics
    assert m["component_increase"] > 0
    assert m["gc_proportion_after"] < m["gc_proportion_before"]
    assert m["post_coverage"] == 1.0


def test_no_gc_means_no_change():
    g, comps, _ = graph_of([ad(i, i, phones=[i]) for i in range(30)])
    out = filter_giant_component(g, comps, SameUserClassifier(0, 1), HashedNgramEmbedder(),
                                 FilterConfig(p_min=0.5))
    assert out.gc is None
    assert out.metrics["component_increase"] == 0
    assert out.assignment.n_components == 30


def test_hub_cap_keeps_connectivity():
    recs = [ad(i, i, phones=[1]) for i in range(40)] + [ad(100 + i, 100 + i, phones=[2], phashes=[i])
                                                         for i in range(3)] + [ad(200, 0, phashes=[0])]
    g, comps, gc = graph_of(recs)
    full = project_posts(g, comps, gc.component_id)
    capped = project_posts(g, comps, gc.component_id, hub_cap=10, hub_sample=4)
    assert capped.n_edges < full.n_edges
    phone = g.index_of(2, 1)
    assert capped.hubs == {phone: 40}
    a = bfs_labels(full.n_posts, full.edges.tolist())
    b = bfs_labels(capped.n_posts, capped.edges.tolist())
    assert same_partition(a, b)


def test_thread_count_does_not_change_output(synth_fixture):
    fx = synth_fixture
    a = filter_giant_component(fx.graph, fx.components, fx.classifier, fx.provider, FilterConfig(threads=1))
    b = filter_giant_component(fx.graph, fx.components, fx.classifier, fx.provider, FilterConfig(threads=3))
    assert np.array_equal(a.assignment.component, fx.outcome.assignment.component)
    assert np.array_equal(a.assignment.component, b.assignment.component)
    assert np.array_equal(a.split.probability, b.split.probability)


def test_scores_match_pairwise_probability(synth_fixture, fixture_scores):
    from adlink.similarity import same_user_probability
    fx = synth_fixture
    proj, p = fixture_scores
    rng = np.random.default_rng(0)
    for i in rng.choice(proj.n_edges, 50, replace=False):
        u, v = proj.edges[i]
        ta, tb = fx.graph.post_texts[proj.posts[u]], fx.graph.post_texts[proj.posts[v]]
        assert p[i] == pytest.approx(same_user_probability(fx.classifier, fx.provider, ta, tb), abs=1e-12)


def test_assignment_and_metrics_files(synth_fixture, tmp_path):
    a = synth_fixture.outcome.assignment
    a.write(tmp_path / "a.tsv")
    b = ComponentAssignment.read(tmp_path / "a.tsv")
    assert np.array_equal(a.post_keys, b.post_keys) and np.array_equal(a.component, b.component)
    assert np.array_equal(a.from_gc, b.from_gc)
    write_metrics(synth_fixture.outcome.metrics, tmp_path / "m.json", tmp_path / "t.json")
    m = json.loads((tmp_path / "m.json").read_text())
    assert not any(k.startswith("elapsed") for k in m)
    assert "elapsed_seconds" in json.loads((tmp_path / "t.json").read_text())


def test_missing_text_is_reported():
    g, comps, gc = graph_of([ad(1, 1, phones=[9]), ad(2, 2, phones=[9])])
    g.post_texts = g.post_texts[:1]
    proj = project_posts(g, comps, gc.component_id)
    with pytest.raises(KeyError, match="post_key 2"):
        score_edges(proj, g, SameUserClassifier(0, 1), HashedNgramEmbedder())

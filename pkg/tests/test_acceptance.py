"""Acceptance criteria, one test each, at their stated tolerances.

Each test prints a single ``criterion N: PASS|FAIL|SKIP`` line (also
repeated in the terminal summary). Optional inputs:

    ADLINK_OPEN_DATASET   path to the open multi-site dataset (criterion 1)
    ADLINK_RUN_SLOW=1     also run the 1M-ad profile (criterion 8)
"""
import os
import random
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

import conftest
from adlink.bcbaseline import benchmark, betweenness_csr
from adlink.gcfilter import FilterConfig, cut_edges, filter_giant_component, project_posts, relabel, score_edges
from adlink.graph import (build_graph, components_from_edges, connected_components, edges_to_csr, giant_component,
                          post_groups, unique_edges)
from adlink.ingest import Dataset, dedupe_by_url, write_dataset
from adlink.pipeline import PipelineConfig, PipelineOutputs, read_input, run_pipeline
from adlink.similarity import (HashedNgramEmbedder, SeparationWarning, TrainingPair, generate_training_pairs,
                               pairs_curve, split_pairs, train_classifier)
from adlink.synth import SynthConfig, generate, profile, score_recovery

from oracles import bfs_labels, path_count_betweenness, same_partition


def verdict(n, ok, detail, capsys):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    conftest.ACCEPTANCE.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def skipped(n, why, capsys):
    line = f"criterion {n}: SKIP - {why}"
    conftest.ACCEPTANCE.append(line)
    with capsys.disabled():
        print("\n" + line)
    pytest.skip(why)


def test_criterion_1_open_dataset_statistics(capsys):
    path = os.environ.get("ADLINK_OPEN_DATASET")
    if not path or not Path(path).exists():
        skipped(1, "open dataset not available (set ADLINK_OPEN_DATASET)", capsys)
    ds = dedupe_by_url(read_input(path))

    def stats(d):
        g = build_graph(d)
        comps = connected_components(g)
        return g, comps, comps.sizes.max() / comps.n_vertices

    g, comps, prop = stats(ds)
    _, _, p4 = stats(Dataset([r for r in ds.records if r.site_id == 4]))
    _, _, p8 = stats(Dataset([r for r in ds.records if r.site_id == 8]))
    ok = (g.n_vertices == 7_753_122 and g.n_edges == 15_667_074 and comps.n_components == 143_489
          and abs(prop - 0.57) <= 0.005 and abs(p4 - 0.73) <= 0.01 and abs(p8 - 0.05) <= 0.01)
    verdict(1, ok, f"|V|={g.n_vertices} |E|={g.n_edges} |C|={comps.n_components} GC={prop:.4f} "
                   f"site4={p4:.4f} site8={p8:.4f}", capsys)


def test_criterion_2_lossless_filtering(synth_fixture, capsys):
    clf, provider = synth_fixture.classifier, synth_fixture.provider
    failures = []
    for seed in range(50):
        rng = random.Random(seed)
        cfg = SynthConfig(n_entities=rng.randint(15, 60), posts_per_entity=(2, 8), ads_per_entity=(4, 20),
                          phashes_per_entity=(2, 10), attach_probability=rng.uniform(0.0, 0.3),
                          misappropriation_probability=rng.uniform(0.0, 0.1), seed=seed)
        ds, _ = generate(cfg)
        g = build_graph(ds)
        comps = connected_components(g)
        gc = giant_component(comps, 0.0)
        proj = project_posts(g, comps, gc.component_id)
        prob = score_edges(proj, g, clf, provider)
        posts = sorted({r.post_key for r in ds.records})
        for delta in (0.0, 0.3, 0.7, 1.0):
            a = relabel(proj, cut_edges(prob, delta).retained, g, comps, gc.component_id)
            if sorted(a.post_keys.astype(np.int64).tolist()) != posts:
                failures.append((seed, delta, "post set"))
            if delta == 0.0 and a.n_components != comps.n_components:
                failures.append((seed, delta, "component count"))
    verdict(2, not failures, f"50 datasets x 4 deltas, failures={failures[:3]}", capsys)


def test_criterion_3_component_recovery(synth_fixture, capsys):
    fx = synth_fixture
    t0 = time.perf_counter()
    g = build_graph(fx.dataset)
    comps = connected_components(g)
    gc = giant_component(comps)
    provider = HashedNgramEmbedder()
    texts = dict(zip(g.key[: g.n_posts].astype(np.int64).tolist(), g.post_texts))
    pairs = generate_training_pairs(post_groups(g, comps, gc.component_id), texts, provider, seed=0)
    train, _ = split_pairs(pairs, 0.2, seed=0)
    clf = train_classifier(train, provider.metadata())
    out = filter_giant_component(g, comps, clf, provider, FilterConfig(delta=0.7))
    elapsed = time.perf_counter() - t0
    m = out.metrics
    ari = score_recovery(out.assignment.as_dict(), fx.truth.post_entity)["ari"]
    rel = 1 - m["gc_proportion_after"] / m["gc_proportion_before"]
    ok = (len(fx.dataset) >= 40_000 and m["gc_proportion_before"] >= 0.30 and ari >= 0.8 and rel >= 0.5
          and elapsed < 120)
    verdict(3, ok, f"ads={len(fx.dataset)} GC {m['gc_proportion_before']:.4f}->{m['gc_proportion_after']:.4f} "
                   f"(relative reduction {rel:.1%}) ARI={ari:.4f} runtime={elapsed:.1f}s", capsys)


def test_criterion_4_component_increase(synth_fixture, capsys):
    m = synth_fixture.outcome.metrics
    inc = m["component_increase"]
    verdict(4, inc >= 0.20, f"components {m['components_before']}->{m['components_after']} (+{inc:.1%})", capsys)


def test_criterion_5_classifier_correctness(synth_fixture, capsys):
    rng = random.Random(17)
    uf_ok = True
    for _ in range(100):
        n = rng.randint(1, 200)
        edges = [(rng.randrange(n), rng.randrange(n)) for _ in range(rng.randint(0, 2 * n))]
        c = components_from_edges(n, np.array(edges, dtype=np.int64).reshape(-1, 2))
        uf_ok &= same_partition(c.labels.tolist(), bfs_labels(n, edges))
    sep = [TrainingPair(i, i + 1, "", "", l, c) for i, (c, l) in
           enumerate([(0.9, 1)] * 100 + [(0.1, 0)] * 100)]
    with pytest.warns(SeparationWarning):
        clf = train_classifier(sep)
    p9, p1 = float(clf.probability(0.9)), float(clf.probability(0.1))
    rows = pairs_curve(synth_fixture.held_out, synth_fixture.classifier)
    mono = all(a["fp_rate"] >= b["fp_rate"] and a["fn_rate"] <= b["fn_rate"] for a, b in zip(rows, rows[1:]))
    grid = [r["threshold"] for r in rows] == [round(i / 100, 2) for i in range(101)]
    ok = uf_ok and p9 > 0.99 and p1 < 0.01 and mono and grid
    verdict(5, ok, f"union-find=BFS on 100 graphs: {uf_ok}; p(0.9)={p9:.6f} p(0.1)={p1:.2e}; "
                   f"monotone sweep on 0.01 grid: {mono and grid}", capsys)


def _csr(n, edges):
    e = np.array(edges, dtype=np.int64).reshape(-1, 2)
    return edges_to_csr(n, unique_edges(e[:, 0], e[:, 1], n))


def test_criterion_6_betweenness_oracle(capsys):
    rng = random.Random(23)
    worst = 0.0
    for _ in range(50):
        n = rng.randint(2, 50)
        edges = [(rng.randrange(n), rng.randrange(n)) for _ in range(rng.randint(n // 2, 3 * n))]
        got = betweenness_csr(*_csr(n, edges), sample_fraction=1.0).values
        worst = max(worst, float(np.max(np.abs(got - np.array(path_count_betweenness(n, edges))))))
    n = 500
    edges = [(i, rng.randrange(i)) for i in range(1, n)] + [(rng.randrange(n), rng.randrange(n))
                                                          for _ in range(700)]
    indptr, indices = _csr(n, edges)
    exact = betweenness_csr(indptr, indices, 1.0).values
    rhos = [spearmanr(exact, betweenness_csr(indptr, indices, 0.4, seed=s).values)[0] for s in range(10)]
    med = float(np.median(rhos))
    verdict(6, worst <= 1e-9 and med >= 0.9,
            f"max |exact - oracle| = {worst:.2e} on 50 graphs; median Spearman at 0.4 = {med:.4f}", capsys)


def test_criterion_7_benchmark_direction(synth_fixture, capsys):
    fx = synth_fixture
    rows = benchmark(fx.graph, fx.components, fx.classifier, fx.provider, percentiles=(0.90,), seed=0)
    prop, bc = rows
    inc_ok = prop["component_increase_pct"] > bc["component_increase_pct"]
    cov_ok = prop["post_coverage_pct"] == 100.0 and bc["post_coverage_pct"] < 100.0
    verdict(7, inc_ok and cov_ok,
            f"component increase proposed={prop['component_increase_pct']:.1f}% vs "
            f"BC@0.90={bc['component_increase_pct']:.1f}% (post-bearing {bc['post_component_increase_pct']:.1f}%); "
            f"post coverage proposed={prop['post_coverage_pct']:.1f}% BC={bc['post_coverage_pct']:.1f}%", capsys)


def _profile_run(name, tmp_path):
    ds, _ = generate(profile(name))
    n = len(ds)
    write_dataset(ds, tmp_path / "ads.jsonl")
    del ds
    t0 = time.perf_counter()
    run_pipeline(PipelineConfig(input=tmp_path / "ads.jsonl", gazetteer="builtin", overlay="builtin",
                                out_dir=tmp_path / "out", seed=7))
    return n, time.perf_counter() - t0


def test_criterion_8_performance_100k(tmp_path, capsys):
    n, elapsed = _profile_run("100k", tmp_path)
    verdict("8 (100k)", elapsed < 300, f"{n} ads end-to-end in {elapsed:.1f}s (limit 300s)", capsys)


@pytest.mark.slow
def test_criterion_8_performance_1m(tmp_path, capsys):
    if not conftest.slow_enabled():
        skipped("8 (1M)", "1M-ad profile is opt-in (ADLINK_RUN_SLOW=1)", capsys)
    n, elapsed = _profile_run("1m", tmp_path)
    verdict("8 (1M)", elapsed < 3600, f"{n} ads end-to-end in {elapsed:.1f}s (limit 3600s)", capsys)


def test_criterion_9_determinism(synth_fixture, tmp_path, capsys):
    write_dataset(synth_fixture.dataset, tmp_path / "ads.jsonl")
    outs = []
    for threads in (1, 4):
        cfg = PipelineConfig(input=tmp_path / "ads.jsonl", gazetteer="builtin", overlay="builtin",
                             out_dir=tmp_path / f"t{threads}", seed=7, threads=threads)
        outs.append(run_pipeline(cfg))
    a, b = outs
    same = {name: getattr(a, name).read_bytes() == getattr(b, name).read_bytes()
            for name in ("assignment", "metrics", "summary", "details")}
    verdict(9, all(same.values()), f"threads 1 vs 4 byte-identical: {same}", capsys)

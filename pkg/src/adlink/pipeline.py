"""Pipeline configuration and the file-to-file stages behind the command line.

Every stage reads the previous stage's files and writes its own, so any stage
can be rerun alone. The config is a TOML file:

    seed = 7
    threads = 1

    [paths]
    input = "ads.jsonl"          # JSONL, CSV or Parquet in the open-dataset schema
    gazetteer = "builtin"        # required; a city,state_code,county,fips CSV or "builtin"
    overlay = "builtin"          # optional
    out_dir = "out"

    [ingest]      window_days = 0            # 0 keeps everything
    [graph]       p_min = 0.05
    [embedding]   provider = "hashed-ngram"  dimension = 512  ngram_min = 2  ngram_max = 4
                  # or provider = "precomputed"  file = "vectors.csv"
    [classifier]  n_pos = 1000  n_neg = 9000  test_fraction = 0.2
    [filter]      delta = 0.7  hub_cap = 5000  hub_sample = 64   # hub_cap = 0 disables the cap
    [bc]          fraction = 0.4  percentiles = [0.75, 0.9, 0.95, 0.99]  time_limit = 86400  per_type = false
    [report]      region = ""  min_frequency = 1  min_proportion = 0.0  window_days = 90

Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bcbaseline import (DEFAULT_FRACTION, DEFAULT_TIME_LIMIT, PERCENTILES, approx_betweenness, bc_filter,
                         benchmark, write_benchmark)
from .gazetteer import (BUILTIN, Gazetteer, Overlay, load_builtin_gazetteer, load_builtin_overlay,
                        location_mapping, read_mapping, unmatched_report, write_mapping, write_unmatched_report)
from .gcfilter import DEFAULT_HUB_CAP, DEFAULT_HUB_SAMPLE, ComponentAssignment, FilterConfig, \
    filter_giant_component, write_metrics
from .graph import (KIND_NAMES, build_graph, connected_components, giant_component, post_groups, read_graph,
                    write_graph)
from .ingest import Dataset, dedupe_by_url, filter_window, load_dataset, read_table, summarize, write_dataset, \
    write_summary
from .report import detail_reports, summary_report, write_json, write_summary as write_report_summary
from .similarity import (SameUserClassifier, generate_training_pairs, make_provider, pairs_curve, split_pairs,
                         train_classifier, write_curve, write_pairs)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    input: Path
    gazetteer: Path | str
    out_dir: Path
    overlay: Path | str | None = None
    seed: int = 0
    threads: int = 1
    ingest_window_days: int = 0
    p_min: float = 0.05
    embedding: dict = field(default_factory=lambda: {"provider": "hashed-ngram"})
    n_pos: int = 1000
    n_neg: int = 9000
    test_fraction: float = 0.2
    delta: float = 0.7
    hub_cap: int | None = DEFAULT_HUB_CAP
    hub_sample: int = DEFAULT_HUB_SAMPLE
    bc_fraction: float = DEFAULT_FRACTION
    bc_percentiles: tuple[float, ...] = PERCENTILES
    bc_time_limit: float = DEFAULT_TIME_LIMIT
    bc_per_type: bool = False
    region: str | None = None
    min_frequency: int = 1
    min_proportion: float = 0.0
    window_days: int = 90

    def validate(self) -> "PipelineConfig":
        if not Path(self.input).is_file():
            raise ConfigError(f"input file not found: {self.input}")
        for name in ("gazetteer", "overlay"):
            p = getattr(self, name)
            if p is not None and p != BUILTIN and not Path(p).is_file():
                raise ConfigError(f"{name} file not found: {p}")
        if self.embedding.get("provider") == "precomputed":
            f = self.embedding.get("file")
            if not f or not Path(f).is_file():
                raise ConfigError(f"embedding file not found: {f}")
        checks = [
            (0.0 <= self.delta <= 1.0, "delta must lie in [0, 1]"),
            (0.0 <= self.p_min <= 1.0, "p_min must lie in [0, 1]"),
            (self.n_pos >= 1 and self.n_neg >= 1, "n_pos and n_neg must be >= 1"),
            (0.0 <= self.test_fraction < 1.0, "test_fraction must lie in [0, 1)"),
            (self.hub_cap is None or self.hub_cap >= 2, "hub_cap must be >= 2 (or 0 to disable)"),
            (self.hub_sample >= 1, "hub_sample must be >= 1"),
            (0.0 < self.bc_fraction <= 1.0, "bc fraction must lie in (0, 1]"),
            (all(0.0 < p < 1.0 for p in self.bc_percentiles), "bc percentiles must lie in (0, 1)"),
            (self.bc_time_limit > 0, "bc time_limit must be positive"),
            (self.threads >= 1, "threads must be >= 1"),
            (self.min_frequency >= 0, "min_frequency must be >= 0"),
            (0.0 <= self.min_proportion <= 1.0, "min_proportion must lie in [0, 1]"),
            (self.window_days >= 0 and self.ingest_window_days >= 0, "window_days must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self


_SCHEMA = {
    "": {"seed", "threads", "paths", "ingest", "graph", "embedding", "classifier", "filter", "bc", "report"},
    "paths": {"input", "gazetteer", "overlay", "out_dir"},
    "ingest": {"window_days"},
    "graph": {"p_min"},
    "embedding": {"provider", "dimension", "ngram_min", "ngram_max", "seed", "file"},
    "classifier": {"n_pos", "n_neg", "test_fraction"},
    "filter": {"delta", "hub_cap", "hub_sample"},
    "bc": {"fraction", "percentiles", "time_limit", "per_type"},
    "report": {"region", "min_frequency", "min_proportion", "window_days"},
}


def _resolve(base: Path, value: str | None) -> Path | str | None:
    if value is None or value == BUILTIN:
        return value
    p = Path(value)
    return p if p.is_absolute() else base / p


def config_from_mapping(data: dict, base: Path = Path(".")) -> PipelineConfig:
    for section, allowed in _SCHEMA.items():
        table = data if section == "" else data.get(section, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table")
        unknown = set(table) - allowed
        if unknown:
            raise ConfigError(f"unknown keys in [{section or 'top level'}]: {sorted(unknown)}")
    paths = data.get("paths", {})
    for key in ("input", "gazetteer"):
        if key not in paths:
            raise ConfigError(f"[paths] {key} is required")
    get = lambda sec, key, default: data.get(sec, {}).get(key, default)
    emb = dict(data.get("embedding", {"provider": "hashed-ngram"}))
    emb.setdefault("provider", "hashed-ngram")
    if "file" in emb:
        emb["file"] = str(_resolve(base, emb["file"]))
    hub_cap = get("filter", "hub_cap", DEFAULT_HUB_CAP)
    region = get("report", "region", "") or None
    try:
        return PipelineConfig(
            input=_resolve(base, paths["input"]),
            gazetteer=_resolve(base, paths["gazetteer"]),
            overlay=_resolve(base, paths.get("overlay")),
            out_dir=_resolve(base, paths.get("out_dir", "out")),
            seed=int(data.get("seed", 0)),
            threads=int(data.get("threads", 1)),
            ingest_window_days=int(get("ingest", "window_days", 0)),
            p_min=float(get("graph", "p_min", 0.05)),
            embedding=emb,
            n_pos=int(get("classifier", "n_pos", 1000)),
            n_neg=int(get("classifier", "n_neg", 9000)),
            test_fraction=float(get("classifier", "test_fraction", 0.2)),
            delta=float(get("filter", "delta", 0.7)),
            hub_cap=int(hub_cap) or None,
            hub_sample=int(get("filter", "hub_sample", DEFAULT_HUB_SAMPLE)),
            bc_fraction=float(get("bc", "fraction", DEFAULT_FRACTION)),
            bc_percentiles=tuple(float(p) for p in get("bc", "percentiles", PERCENTILES)),
            bc_time_limit=float(get("bc", "time_limit", DEFAULT_TIME_LIMIT)),
            bc_per_type=bool(get("bc", "per_type", False)),
            region=region,
            min_frequency=int(get("report", "min_frequency", 1)),
            min_proportion=float(get("report", "min_proportion", 0.0)),
            window_days=int(get("report", "window_days", 90)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(data, path.parent)


# ------------------------------------------------------------------ stages

def read_input(path: str | Path) -> Dataset:
    """JSONL by default; ``.csv``/``.tsv``/``.parquet`` through the columnar reader."""
    p = Path(path)
    if p.suffix.lower() in (".csv", ".tsv", ".parquet", ".pq"):
        return dedupe_by_url(read_table(p))
    return load_dataset(p)


def stage_ingest(input_path, out_path, *, window_days: int = 0, summary_path=None, summary_json=None) -> Dataset:
    ds = read_input(input_path)
    if window_days:
        ds = filter_window(ds, window_days)
    write_dataset(ds, out_path)
    if summary_path is not None:
        write_summary(summarize(ds), summary_path, summary_json,
                      extra={"rejected": dict(sorted(ds.rejected.items())), "duplicates": ds.duplicates})
    log.info("ingest: %d ads, %d rejected, %d duplicate rows", len(ds), ds.n_rejected, ds.duplicates)
    return ds


def _gazetteer(path) -> Gazetteer:
    return load_builtin_gazetteer() if path in (None, BUILTIN) else Gazetteer.load(path)


def _overlay(path) -> Overlay | None:
    if path is None:
        return None
    return load_builtin_overlay() if path == BUILTIN else Overlay.load(path)


def stage_locations(dataset_path, gazetteer, overlay, out_path, report_path) -> float:
    ds = load_dataset(dataset_path)
    gaz, ov = _gazetteer(gazetteer), _overlay(overlay)
    write_mapping(location_mapping(ds, gaz, ov), out_path)
    rows, frac = unmatched_report(ds, gaz, ov)
    write_unmatched_report(rows, report_path)
    log.info("locations: %.2f%% of URLs unresolved", 100 * frac)
    return frac


def stage_build_graph(dataset_path, out_dir, *, p_min: float = 0.05) -> dict:
    ds = load_dataset(dataset_path)
    g = build_graph(ds)
    comps = connected_components(g)
    write_graph(g, out_dir, comps, p_min)
    stats = json.loads((Path(out_dir) / "graph.json").read_text(encoding="utf-8"))
    log.info("graph: |V|=%d |E|=%d |C|=%d", stats["vertices"], stats["edges"], stats["components"])
    return stats


def _key_of(graph) -> dict[str, int]:
    return {t: int(k) for k, t in zip(graph.key[: len(graph.post_texts)], graph.post_texts)}


def stage_train(graph_dir, out_path, *, embedding: dict, n_pos: int = 1000, n_neg: int = 9000,
                test_fraction: float = 0.2, p_min: float = 0.05, seed: int = 0, pairs_path=None,
                curve_path=None) -> SameUserClassifier:
    g, comps = read_graph(graph_dir)
    provider = make_provider(embedding, _key_of(g))
    gc = giant_component(comps, p_min)
    groups = post_groups(g, comps, exclude=None if gc is None else gc.component_id)
    texts = dict(zip(g.key[: g.n_posts].astype(np.int64).tolist(), g.post_texts))
    pairs = generate_training_pairs(groups, texts, provider, n_pos, n_neg, seed)
    if test_fraction > 0:
        train, held = split_pairs(pairs, test_fraction, seed)
    else:
        train, held = pairs, pairs
    clf = train_classifier(train, provider.metadata())
    clf.save(out_path)
    if pairs_path is not None:
        write_pairs(pairs, pairs_path, clf)
    if curve_path is not None:
        write_curve(pairs_curve(held, clf), curve_path)
    log.info("classifier: w0=%.4f w1=%.4f from %d pairs", clf.intercept, clf.slope, len(train))
    return clf


def stage_filter(graph_dir, classifier_path, assignment_path, metrics_path, *, delta: float = 0.7,
                 p_min: float = 0.05, hub_cap: int | None = DEFAULT_HUB_CAP,
                 hub_sample: int = DEFAULT_HUB_SAMPLE, seed: int = 0, threads: int = 1, timings_path=None) -> dict:
    g, comps = read_graph(graph_dir)
    clf = SameUserClassifier.load(classifier_path)
    provider = make_provider(clf.provider, _key_of(g))
    out = filter_giant_component(g, comps, clf, provider,
                                 FilterConfig(delta=delta, p_min=p_min, hub_cap=hub_cap, hub_sample=hub_sample,
                                              seed=seed, threads=threads))
    out.assignment.write(assignment_path)
    write_metrics(out.metrics, metrics_path, timings_path)
    m = out.metrics
    log.info("filter: components %d -> %d, GC proportion %.3f -> %.3f", m["components_before"],
             m["components_after"], m["gc_proportion_before"], m["gc_proportion_after"])
    return m


def stage_bc_filter(graph_dir, out_path, *, fraction: float = DEFAULT_FRACTION, percentile: float = 0.9,
                    seed: int = 0, time_limit: float | None = DEFAULT_TIME_LIMIT, p_min: float = 0.05,
                    per_type: bool = False, metrics_path=None) -> dict:
    """Remove high-betweenness giant-component vertices; writes the removed vertex list."""
    g, comps = read_graph(graph_dir)
    gc = giant_component(comps, p_min)
    if gc is None:
        raise ValueError(f"no giant component at p_min={p_min}")
    est = approx_betweenness(g, comps.members(gc.component_id), fraction, seed, time_limit)
    res = bc_filter(g, est, percentile, per_type=per_type)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index\tkind\tkey\trelative_bc\n")
        rel = dict(zip(est.vertices.tolist(), res.relative.tolist()))
        for v in res.removed.tolist():
            fh.write(f"{v}\t{KIND_NAMES[int(g.kind[v])]}\t{int(g.key[v])}\t{rel[v]:.9f}\n")
    others = comps.n_components - 1
    m = {
        "percentile": percentile, "sample_fraction": fraction, "seed": seed, "per_type": per_type,
        "cutoff": res.cutoff, "gc_size": gc.size, "vertices_removed": int(res.removed.size),
        "components_before": comps.n_components, "components_after": others + res.components.n_components,
    }
    if metrics_path is not None:
        Path(metrics_path).write_text(json.dumps(m, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return m


def stage_benchmark(graph_dir, classifier_path, out_path, *, delta: float = 0.7,
                    percentiles=PERCENTILES, fraction: float = DEFAULT_FRACTION, seed: int = 0,
                    time_limit: float | None = DEFAULT_TIME_LIMIT, per_type: bool = False, p_min: float = 0.05,
                    hub_cap: int | None = DEFAULT_HUB_CAP, threads: int = 1) -> list[dict]:
    g, comps = read_graph(graph_dir)
    clf = SameUserClassifier.load(classifier_path)
    provider = make_provider(clf.provider, _key_of(g))
    rows = benchmark(g, comps, clf, provider, delta=delta, percentiles=percentiles, sample_fraction=fraction,
                     seed=seed, time_limit=time_limit, per_type=per_type, p_min=p_min, hub_cap=hub_cap,
                     threads=threads)
    write_benchmark(rows, out_path)
    return rows


def stage_report(assignment_path, dataset_path, locations_path, summary_path, *, summary_json=None,
                 details_path=None, region: str | None = None, min_frequency: int = 1,
                 min_proportion: float = 0.0, window_days: int | None = 90) -> int:
    assignment = ComponentAssignment.read(assignment_path)
    ds = load_dataset(dataset_path)
    mapping = read_mapping(locations_path)
    win = window_days or None
    rows = summary_report(assignment, ds, mapping, region, min_frequency=min_frequency,
                          min_proportion=min_proportion, window_days=win)
    write_report_summary(rows, summary_path)
    if summary_json is not None:
        write_json(rows, summary_json)
    if details_path is not None:
        write_json(detail_reports(assignment, ds, rows, mapping, window_days=win), details_path)
    log.info("report: %d components", len(rows))
    return len(rows)


@dataclass
class PipelineOutputs:
    root: Path

    def __getattr__(self, name):
        names = {
            "dataset": "dataset.jsonl", "ingest_summary": "ingest_summary.tsv",
            "ingest_summary_json": "ingest_summary.json", "locations": "locations.tsv",
            "unmatched": "unmatched_locations.tsv", "graph": "graph", "classifier": "classifier.txt",
            "pairs": "training_pairs.tsv", "curve": "threshold_curve.tsv", "assignment": "assignment.tsv",
            "metrics": "metrics.json", "timings": "timings.json", "summary": "summary.tsv",
            "summary_json": "summary.json", "details": "details.json",
        }
        if name not in names:
            raise AttributeError(name)
        return self.root / names[name]


def run_pipeline(config: PipelineConfig) -> PipelineOutputs:
    """ingest -> locations -> build-graph -> train-classifier -> filter-gc -> report.

    Raises ``StageError`` naming the stage that failed.
    """
    config.validate()
    out = PipelineOutputs(Path(config.out_dir))
    out.root.mkdir(parents=True, exist_ok=True)
    c = config
    stages = [
        ("ingest", lambda: stage_ingest(c.input, out.dataset, window_days=c.ingest_window_days,
                                        summary_path=out.ingest_summary, summary_json=out.ingest_summary_json)),
        ("locations", lambda: stage_locations(out.dataset, c.gazetteer, c.overlay, out.locations, out.unmatched)),
        ("build-graph", lambda: stage_build_graph(out.dataset, out.graph, p_min=c.p_min)),
        ("train-classifier", lambda: stage_train(out.graph, out.classifier, embedding=c.embedding, n_pos=c.n_pos,
                                                 n_neg=c.n_neg, test_fraction=c.test_fraction, p_min=c.p_min,
                                                 seed=c.seed, pairs_path=out.pairs, curve_path=out.curve)),
        ("filter-gc", lambda: stage_filter(out.graph, out.classifier, out.assignment, out.metrics, delta=c.delta,
                                           p_min=c.p_min, hub_cap=c.hub_cap, hub_sample=c.hub_sample,
                                           seed=c.seed, threads=c.threads, timings_path=out.timings)),
        ("report", lambda: stage_report(out.assignment, out.dataset, out.locations, out.summary,
                                        summary_json=out.summary_json, details_path=out.details, region=c.region,
                                        min_frequency=c.min_frequency, min_proportion=c.min_proportion,
                                        window_days=c.window_days)),
    ]
    for name, fn in stages:
        log.info("stage %s", name)
        try:
            fn()
        except Exception as exc:
            raise StageError(name, exc) from exc
    return out


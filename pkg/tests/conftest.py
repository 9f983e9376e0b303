import datetime as dt
import os
from dataclasses import dataclass

import numpy as np
import pytest

from adlink.gcfilter import FilterConfig, FilterOutcome, filter_giant_component
from adlink.graph import ArtifactGraph, ComponentSet, GiantComponentInfo, build_graph, connected_components, \
    giant_component, post_groups
from adlink.ingest import AdRecord, Dataset
from adlink.similarity import HashedNgramEmbedder, SameUserClassifier, generate_training_pairs, split_pairs, \
    train_classifier
from adlink.synth import GroundTruth, SynthConfig, generate


def ad(url, post_key, text=None, phashes=(), phones=(), site=1, date="2022-06-01", city="Dallas", state="TX"):
    return AdRecord(url_id=url, site_id=site, post_text=text if text is not None else f"post {post_key}",
                    post_key=post_key, phashes=tuple(phashes), phones=tuple(phones),
                    post_date=dt.date.fromisoformat(date) if date else None, target_city=city, target_state=state)


@dataclass
class Fixture:
    dataset: Dataset
    truth: GroundTruth
    graph: ArtifactGraph
    components: ComponentSet
    gc: GiantComponentInfo
    provider: HashedNgramEmbedder
    classifier: SameUserClassifier
    pairs: list
    held_out: list
    outcome: FilterOutcome
    texts: dict


def build_fixture(config: SynthConfig | None = None, delta: float = 0.7) -> Fixture:
    ds, truth = generate(config or SynthConfig())
    g = build_graph(ds)
    comps = connected_components(g)
    gc = giant_component(comps)
    provider = HashedNgramEmbedder()
    texts = dict(zip(g.key[: g.n_posts].astype(np.int64).tolist(), g.post_texts))
    pairs = generate_training_pairs(post_groups(g, comps, gc.component_id), texts, provider, seed=0)
    train, held = split_pairs(pairs, 0.2, seed=0)
    clf = train_classifier(train, provider.metadata())
    out = filter_giant_component(g, comps, clf, provider, FilterConfig(delta=delta))
    return Fixture(ds, truth, g, comps, gc, provider, clf, pairs, held, out, texts)


@pytest.fixture(scope="session")
def synth_fixture() -> Fixture:
    """The frozen default synthetic fixture (seed 7), filtered at delta 0.7."""
    return build_fixture()


def slow_enabled() -> bool:
    return os.environ.get("ADLINK_RUN_SLOW", "") not in ("", "0")


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)

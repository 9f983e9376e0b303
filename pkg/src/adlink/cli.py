"""Command-line entry point: ``adlink <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 timeout.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .bcbaseline import DEFAULT_FRACTION, DEFAULT_TIME_LIMIT, PERCENTILES, BcTimeout
from .gcfilter import DEFAULT_HUB_CAP, DEFAULT_HUB_SAMPLE
from .pipeline import (ConfigError, PipelineConfig, StageError, load_config, run_pipeline, stage_bc_filter,
                       stage_benchmark, stage_build_graph, stage_filter, stage_ingest, stage_locations,
                       stage_report, stage_train, tomllib)
from .synth import PROFILES, SynthConfig, SynthConfigError, generate
from .ingest import write_dataset

log = logging.getLogger("adlink")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_TIMEOUT = 0, 2, 3, 4


def _hub_cap(v: str) -> int | None:
    n = int(v)
    return n or None


def _percentiles(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(","))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adlink", description="Link ads to posting entities via an artifact graph.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed", type=int, default=None, help="seed for sampling (overrides the config)")
    p.add_argument("--threads", type=int, default=None, help="worker cap; results do not depend on it")
    p.add_argument("--config", type=Path, default=None, help="pipeline TOML config")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse, dedupe and window raw ads")
    s.add_argument("--input", required=True, type=Path)
    s.add_argument("--window-days", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--summary", type=Path, help="per-site summary TSV")
    s.add_argument("--summary-json", type=Path)

    s = sub.add_parser("locations", help="resolve target locations to counties")
    s.add_argument("--dataset", required=True, type=Path)
    s.add_argument("--gazetteer", required=True, help="CSV path or 'builtin'")
    s.add_argument("--overlay", help="CSV path or 'builtin'")
    s.add_argument("--report", required=True, type=Path, help="unmatched-locations TSV")
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("build-graph", help="artifact graph and connected components")
    s.add_argument("--dataset", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path, help="output directory")
    s.add_argument("--p-min", type=float, default=0.05)

    s = sub.add_parser("train-classifier", help="fit the same-user classifier on non-giant components")
    s.add_argument("--graph", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--pairs", type=Path)
    s.add_argument("--curve", type=Path)
    s.add_argument("--n-pos", type=int, default=1000)
    s.add_argument("--n-neg", type=int, default=9000)
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--p-min", type=float, default=0.05)
    s.add_argument("--embeddings", type=Path, help="precomputed post_key,vector file (default: hashed n-grams)")
    s.add_argument("--dimension", type=int, default=512)

    s = sub.add_parser("filter-gc", help="split the giant component by same-user probability")
    s.add_argument("--graph", required=True, type=Path)
    s.add_argument("--classifier", required=True, type=Path)
    s.add_argument("--delta", type=float, default=0.7)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--metrics", required=True, type=Path)
    s.add_argument("--timings", type=Path)
    s.add_argument("--p-min", type=float, default=0.05)
    s.add_argument("--hub-cap", type=_hub_cap, default=DEFAULT_HUB_CAP, help="0 disables the cap")
    s.add_argument("--hub-sample", type=int, default=DEFAULT_HUB_SAMPLE)

    s = sub.add_parser("bc-filter", help="betweenness-centrality vertex removal")
    s.add_argument("--graph", required=True, type=Path)
    s.add_argument("--fraction", type=float, default=DEFAULT_FRACTION)
    s.add_argument("--percentile", type=float, default=0.90)
    s.add_argument("--time-limit", type=float, default=DEFAULT_TIME_LIMIT)
    s.add_argument("--per-type", action="store_true")
    s.add_argument("--p-min", type=float, default=0.05)
    s.add_argument("--out", required=True, type=Path, help="removed-vertex TSV")
    s.add_argument("--metrics", type=Path)

    s = sub.add_parser("benchmark", help="proposed filter vs betweenness removal")
    s.add_argument("--graph", required=True, type=Path)
    s.add_argument("--classifier", required=True, type=Path)
    s.add_argument("--delta", type=float, default=0.7)
    s.add_argument("--fraction", type=float, default=DEFAULT_FRACTION)
    s.add_argument("--percentiles", type=_percentiles, default=PERCENTILES)
    s.add_argument("--time-limit", type=float, default=DEFAULT_TIME_LIMIT)
    s.add_argument("--per-type", action="store_true")
    s.add_argument("--p-min", type=float, default=0.05)
    s.add_argument("--hub-cap", type=_hub_cap, default=DEFAULT_HUB_CAP)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    s.add_argument("--config", dest="synth_config", type=Path, help="TOML of SynthConfig fields (or a [synth] table)")
    s.add_argument("--profile", choices=sorted(PROFILES), default="ci")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--truth", required=True, type=Path)

    s = sub.add_parser("report", help="partner-facing summary or detail output")
    s.add_argument("kind", choices=("summary", "detail"))
    s.add_argument("--assignment", required=True, type=Path)
    s.add_argument("--dataset", required=True, type=Path)
    s.add_argument("--locations", required=True, type=Path)
    s.add_argument("--region", help="state code or county FIPS")
    s.add_argument("--min-freq", type=int, default=1)
    s.add_argument("--min-proportion", type=float, default=0.0)
    s.add_argument("--window-days", type=int, default=90, help="0 disables the window")
    s.add_argument("--component", type=int, help="component id (detail)")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--json", type=Path, help="structured copy of the summary")

    s = sub.add_parser("run", help="every stage from the --config file")
    s.add_argument("--out-dir", type=Path, help="overrides [paths] out_dir")
    return p


def _config(args) -> PipelineConfig | None:
    if args.config is None:
        return None
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _synth_config(args) -> SynthConfig:
    overrides = {}
    if args.synth_config is not None:
        try:
            with open(args.synth_config, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{args.synth_config}: {exc}") from None
        overrides = data.get("synth", data)
    base = SynthConfig.from_mapping({**PROFILES[args.profile], **overrides})
    if args.seed is not None:
        base.seed = args.seed
    return base


def dispatch(args) -> int:
    cmd = args.command
    cfg = _config(args) if cmd != "synth" else None
    seed = cfg.seed if cfg is not None else (args.seed if args.seed is not None else 0)
    threads = cfg.threads if cfg is not None else (args.threads or 1)
    if cmd == "run":
        if cfg is None:
            raise ConfigError("run needs --config")
        if args.out_dir is not None:
            cfg.out_dir = args.out_dir
        out = run_pipeline(cfg)
        print(out.root)
        return EXIT_OK
    if cmd == "synth":
        cfg = _synth_config(args)
        ds, truth = generate(cfg)
        write_dataset(ds, args.out)
        truth.write(args.truth)
        return EXIT_OK
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    try:
        if cmd == "ingest":
            stage_ingest(args.input, args.out, window_days=args.window_days, summary_path=args.summary,
                         summary_json=args.summary_json)
        elif cmd == "locations":
            stage_locations(args.dataset, args.gazetteer, args.overlay, args.out, args.report)
        elif cmd == "build-graph":
            stage_build_graph(args.dataset, args.out, p_min=args.p_min)
        elif cmd == "train-classifier":
            emb = ({"provider": "precomputed", "file": str(args.embeddings)} if args.embeddings
                   else {"provider": "hashed-ngram", "dimension": args.dimension})
            stage_train(args.graph, args.out, embedding=emb, n_pos=args.n_pos, n_neg=args.n_neg,
                        test_fraction=args.test_fraction, p_min=args.p_min, seed=seed, pairs_path=args.pairs,
                        curve_path=args.curve)
        elif cmd == "filter-gc":
            stage_filter(args.graph, args.classifier, args.out, args.metrics, delta=args.delta, p_min=args.p_min,
                         hub_cap=args.hub_cap, hub_sample=args.hub_sample, seed=seed, threads=threads,
                         timings_path=args.timings)
        elif cmd == "bc-filter":
            stage_bc_filter(args.graph, args.out, fraction=args.fraction, percentile=args.percentile, seed=seed,
                            time_limit=args.time_limit, p_min=args.p_min, per_type=args.per_type,
                            metrics_path=args.metrics)
        elif cmd == "benchmark":
            stage_benchmark(args.graph, args.classifier, args.out, delta=args.delta, percentiles=args.percentiles,
                            fraction=args.fraction, seed=seed, time_limit=args.time_limit,
                            per_type=args.per_type, p_min=args.p_min, hub_cap=args.hub_cap, threads=threads)
        elif cmd == "report":
            if args.kind == "summary":
                stage_report(args.assignment, args.dataset, args.locations, args.out, summary_json=args.json,
                             region=args.region, min_frequency=args.min_freq, min_proportion=args.min_proportion,
                             window_days=args.window_days)
            else:
                _detail(args)
    except (BcTimeout, ConfigError):
        raise
    except Exception as exc:
        raise StageError(cmd, exc) from exc
    return EXIT_OK


def _detail(args) -> None:
    from .gazetteer import read_mapping
    from .gcfilter import ComponentAssignment
    from .ingest import load_dataset
    from .report import detail_report, write_json

    if args.component is None:
        raise ConfigError("report detail needs --component")
    block = detail_report(ComponentAssignment.read(args.assignment), load_dataset(args.dataset), args.component,
                          read_mapping(args.locations), window_days=args.window_days or None)
    write_json([block], args.out)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except (ConfigError, SynthConfigError) as exc:
        print(f"adlink: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BcTimeout as exc:
        print(f"adlink: timeout: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    except StageError as exc:
        if isinstance(exc.cause, BcTimeout):
            print(f"adlink: timeout in {exc.stage}: {exc.cause}", file=sys.stderr)
            return EXIT_TIMEOUT
        print(f"adlink: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())

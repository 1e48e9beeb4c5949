"""Command-line interface.

Subcommands: ingest, regen, index build, score, eval, report. Every run is
driven by one JSON config file (--config); --offline restricts execution to
scripted backends.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .dataset import (
    Rejection,
    evaluation_to_record,
    ingest_auxiliary,
    regenerate_analytic,
    split_stats,
)
from .retrieval import HashingEmbedder, build_index
from .runner import (
    ConfigError,
    ExperimentConfig,
    build_backends,
    load_dataset,
    rebuild_report_from_traces,
    run_experiment,
    run_strategy,
)
from .dataset import DatasetSplit
from .reporting import emit_report, write_run_log

log = logging.getLogger(__name__)


def _stats_dict(split) -> dict:
    stats = split_stats(split)
    return {
        "count": stats.count,
        "scored_count": stats.scored_count,
        "avg_tokens": round(stats.avg_tokens, 2),
        "score_range": [str(stats.score_range[0]), str(stats.score_range[1])],
        "mean_overall": round(stats.mean_overall, 4),
        "std_overall": round(stats.std_overall, 4),
    }


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config)
    ingest, train, test = load_dataset(cfg)
    summary = {
        "raw_count": ingest.raw_count,
        "retained_count": ingest.retained_count,
        "dropped_count": ingest.dropped_count,
        "train": _stats_dict(train) if train.essays else {"count": 0},
        "test": _stats_dict(test) if test.essays else {"count": 0},
    }
    if cfg.auxiliary_path:
        aux = ingest_auxiliary(cfg.auxiliary_path)
        summary["auxiliary"] = {
            "raw_count": aux.raw_count,
            "retained_count": aux.retained_count,
            "dropped_count": aux.dropped_count,
        }
    if args.audit:
        audit_path = Path(args.audit)
        audit_path.parent.mkdir(parents=True, exist_ok=True)
        with open(audit_path, "w", encoding="utf-8") as handle:
            for record_id, violations in ingest.dropped:
                handle.write(
                    json.dumps(
                        {"id": record_id, "violations": [str(v) for v in violations]},
                        sort_keys=True,
                    )
                    + "\n"
                )
        summary["audit"] = str(audit_path)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_regen(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config)
    _, train, test = load_dataset(cfg)
    essays = [e for e in train.essays + test.essays if e.overall is not None]
    if args.limit is not None:
        essays = essays[: args.limit]
    backends, _ = build_backends(cfg, offline=args.offline)
    backend_id = args.backend or next(iter(cfg.backends))
    if backend_id not in backends:
        raise ConfigError(f"unknown backend {backend_id!r}")
    backend = backends[backend_id]
    model = cfg.backends[backend_id].model

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    accepted_path = cfg.output_dir / "regenerated.jsonl"
    rejected_path = cfg.output_dir / "regen_rejections.jsonl"

    def _one(essay):
        return essay.id, regenerate_analytic(
            essay, backend, tolerance=args.tolerance, model=model
        )

    accepted = 0
    rejected = 0
    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool, open(
        accepted_path, "w", encoding="utf-8"
    ) as acc_handle, open(rejected_path, "w", encoding="utf-8") as rej_handle:
        for essay_id, outcome in pool.map(_one, essays):
            if isinstance(outcome, Rejection):
                rejected += 1
                rej_handle.write(
                    json.dumps(
                        {"id": essay_id, "cause": outcome.cause, "detail": outcome.detail},
                        sort_keys=True,
                        ensure_ascii=False,
                    )
                    + "\n"
                )
            else:
                accepted += 1
                acc_handle.write(
                    json.dumps(evaluation_to_record(essay_id, outcome), ensure_ascii=False)
                    + "\n"
                )
    print(
        json.dumps(
            {
                "processed": len(essays),
                "accepted": accepted,
                "rejected": rejected,
                "accepted_file": str(accepted_path),
                "rejections_file": str(rejected_path),
            },
            indent=2,
        )
    )
    return 0


def cmd_index_build(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config)
    _, train, _ = load_dataset(cfg)
    embedder = HashingEmbedder(dim=cfg.embedder_dim, ngram=cfg.embedder_ngram)
    index = build_index(train.essays, embedder)
    out = Path(args.out) if args.out else (cfg.index_path or cfg.output_dir / "index.jsonl")
    index.save(out)
    print(json.dumps({"entries": len(index), "embedder": embedder.id, "path": str(out)}, indent=2))
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config)
    _, train, test = load_dataset(cfg)
    strategy = next((s for s in cfg.strategies if s.name == args.strategy), None)
    if strategy is None:
        raise ConfigError(f"unknown strategy {args.strategy!r}")
    pool = {e.id: e for e in test.essays + train.essays}
    if args.essay_id not in pool:
        raise ConfigError(f"essay {args.essay_id!r} not found in dataset")
    essay = pool[args.essay_id]
    backends, _ = build_backends(cfg, offline=args.offline)
    index = None
    embedder = None
    if strategy.exemplar_source == "retrieval" and strategy.k_shots > 0:
        embedder = HashingEmbedder(dim=cfg.embedder_dim, ngram=cfg.embedder_ngram)
        from .retrieval import RetrievalIndex

        if cfg.index_path and cfg.index_path.exists():
            index = RetrievalIndex.load(cfg.index_path, train.by_id(), embedder.id)
        else:
            index = build_index(train.essays, embedder)
    single = DatasetSplit(name="single", essays=[essay])
    results = run_strategy(cfg, strategy, single, train, backends, index, embedder)
    print(json.dumps(results[0].to_json_dict(), indent=2, ensure_ascii=False))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config)
    report = run_experiment(
        cfg,
        limit=args.limit,
        offline=args.offline,
        only_strategies=args.strategy or None,
    )
    emit_report(report, cfg.output_dir, figures=not args.no_figures)
    write_run_log(report, cfg.output_dir)
    for run in report.runs:
        acc = run.metrics.accuracy.get(0.5, 0.0)
        print(
            f"{run.config.name}: n={run.metrics.n_scored} acc@0.5={acc:.4f} "
            f"f1={run.metrics.macro_f1:.4f} rmse={run.metrics.rmse:.4f} "
            f"mae={run.metrics.mae:.4f} excluded={run.metrics.n_excluded}"
        )
    print(f"report: {cfg.output_dir}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config)
    report = rebuild_report_from_traces(cfg)
    emit_report(report, cfg.output_dir, figures=not args.no_figures)
    print(f"report re-emitted: {cfg.output_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ielts-aes",
        description="Criterion-aware IELTS Writing Task 2 scoring and evaluation harness",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="ingest corpora and print split statistics")
    p_ingest.add_argument("--config", required=True)
    p_ingest.add_argument("--audit", help="write drop audit JSONL to this path")
    p_ingest.set_defaults(func=cmd_ingest)

    p_regen = sub.add_parser("regen", help="re-generate analytic scores")
    p_regen.add_argument("--config", required=True)
    p_regen.add_argument("--limit", type=int, default=None)
    p_regen.add_argument("--offline", action="store_true")
    p_regen.add_argument("--tolerance", type=float, default=0.25)
    p_regen.add_argument("--backend", default=None)
    p_regen.set_defaults(func=cmd_regen)

    p_index = sub.add_parser("index", help="retrieval index operations")
    index_sub = p_index.add_subparsers(dest="index_command", required=True)
    p_build = index_sub.add_parser("build", help="build and persist the exemplar index")
    p_build.add_argument("--config", required=True)
    p_build.add_argument("--out", default=None)
    p_build.set_defaults(func=cmd_index_build)

    p_score = sub.add_parser("score", help="score one essay with one strategy")
    p_score.add_argument("--config", required=True)
    p_score.add_argument("--strategy", required=True)
    p_score.add_argument("--essay-id", required=True)
    p_score.add_argument("--offline", action="store_true")
    p_score.set_defaults(func=cmd_score)

    p_eval = sub.add_parser("eval", help="run the full evaluation")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--strategy", action="append", help="restrict to these strategies")
    p_eval.add_argument("--limit", type=int, default=None, help="truncate the test split")
    p_eval.add_argument("--offline", action="store_true", help="scripted backends only")
    p_eval.add_argument("--no-figures", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_report = sub.add_parser("report", help="re-emit the report from traces")
    p_report.add_argument("--config", required=True)
    p_report.add_argument("--no-figures", action="store_true")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

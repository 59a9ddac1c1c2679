"""Command-line interface: per-stage subcommands plus a full pipeline run."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline

log = logging.getLogger("topiclens")


def _add_ingest(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("ingest", help="parse records, split engager groups, write corpus.bin")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--window", type=int, default=7, help="trailing-average window in days")
    p.add_argument("--tz-offset", type=int, default=0, help="bucketing offset from UTC, hours")
    p.add_argument("--out", required=True, type=Path)


def _add_embed(sub) -> None:
    p = sub.add_parser("embed", help="embed cleaned non-retweet documents")
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--model", default="text-embedding-ada-002")
    p.add_argument("--url", default="", help="embedding service base URL")
    p.add_argument("--cache-dir", type=Path, default=None)
    p.add_argument("--offline", action="store_true", help="use the deterministic hash embedder")
    p.add_argument("--offline-dim", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out", required=True, type=Path)


def _add_reduce(sub) -> None:
    p = sub.add_parser("reduce", help="reduce embedding dimensionality")
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--neighbors", type=int, default=15)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--min-dist", type=float, default=0.1)
    p.add_argument("--out", required=True, type=Path)


def _add_cluster(sub) -> None:
    p = sub.add_parser("cluster", help="cluster reduced embeddings into topics")
    p.add_argument("--reduced", required=True, type=Path)
    p.add_argument("--grid", default="10,25,50,100,200", help="comma-separated grid values")
    p.add_argument("--max-workers", type=int, default=4)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--report", required=True, type=Path, help="tuning report CSV")


def _add_filter(sub) -> None:
    p = sub.add_parser("filter", help="drop topics dominated by few users")
    p.add_argument("--topics", required=True, type=Path)
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--multiplier", type=float, default=1.5)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--report", required=True, type=Path, help="half-line report CSV")


def _add_diverge(sub) -> None:
    p = sub.add_parser("diverge", help="score topics by between-group divergence")
    p.add_argument("--topics", required=True, type=Path)
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--multiplier", type=float, default=4.0)
    p.add_argument("--out", required=True, type=Path)


def _add_bias(sub) -> None:
    p = sub.add_parser("bias", help="within-topic semantic-bias measurement")
    p.add_argument("--topics", required=True, type=Path)
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--corpus", required=True, type=Path)
    p.add_argument("--mass", type=float, default=0.95)
    p.add_argument("--min-group", type=int, default=5)
    p.add_argument("--overlap", choices=("measure", "mass"), default="measure")
    p.add_argument("--max-workers", type=int, default=4)
    p.add_argument("--out", required=True, type=Path)


def _add_bias_report(sub) -> None:
    p = sub.add_parser("bias-report", help="stratified summary from a bias table")
    p.add_argument("--in", dest="bias_csv", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)


def _add_report(sub) -> None:
    p = sub.add_parser("report", help="figures and strata summary from pipeline outputs")
    p.add_argument("--out-dir", required=True, type=Path, help="pipeline output directory")


def _add_run(sub) -> None:
    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--force", action="store_true", help="ignore cached stage results")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topiclens",
        description="Topic discovery and group-divergence analysis over a post stream",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (
        _add_ingest,
        _add_embed,
        _add_reduce,
        _add_cluster,
        _add_filter,
        _add_diverge,
        _add_bias,
        _add_bias_report,
        _add_report,
        _add_run,
    ):
        add(sub)
    return parser


def _print(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True, default=str))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "ingest":
            _print(pipeline.stage_ingest(args.input, args.out, args.window, args.tz_offset))
        elif args.command == "embed":
            cache = args.cache_dir or args.out.parent / "embed_cache"
            _print(
                pipeline.stage_embed(
                    args.corpus,
                    args.out,
                    offline=args.offline,
                    offline_dim=args.offline_dim,
                    model=args.model,
                    url=args.url,
                    cache_dir=cache,
                    batch_size=args.batch_size,
                )
            )
        elif args.command == "reduce":
            _print(
                pipeline.stage_reduce(
                    args.embeddings,
                    args.out,
                    dim=args.dim,
                    neighbors=args.neighbors,
                    epochs=args.epochs,
                    seed=args.seed,
                    min_dist=args.min_dist,
                )
            )
        elif args.command == "cluster":
            _print(
                pipeline.stage_cluster(
                    args.reduced,
                    args.out,
                    args.report,
                    grid=pipeline.parse_grid(args.grid),
                    max_workers=args.max_workers,
                )
            )
        elif args.command == "filter":
            _print(
                pipeline.stage_filter(
                    args.topics,
                    args.corpus,
                    args.out,
                    args.report,
                    multiplier=args.multiplier,
                )
            )
        elif args.command == "diverge":
            _print(
                pipeline.stage_diverge(
                    args.topics, args.corpus, args.out, multiplier=args.multiplier
                )
            )
        elif args.command == "bias":
            _print(
                pipeline.stage_bias(
                    args.topics,
                    args.embeddings,
                    args.corpus,
                    args.out,
                    mass=args.mass,
                    min_group=args.min_group,
                    overlap=args.overlap,
                    max_workers=args.max_workers,
                )
            )
        elif args.command == "bias-report":
            _print(pipeline.write_strata_report(args.bias_csv, args.out))
        elif args.command == "report":
            out = args.out_dir
            _print(
                pipeline.stage_report(
                    out,
                    out / "corpus.bin",
                    out / "topics_filtered.bin",
                    out / "halfline.csv",
                    out / "divergence.csv",
                    out / "bias.csv",
                    out / "strata.json",
                )
            )
        elif args.command == "run":
            config = pipeline.load_config(args.config)
            result = pipeline.run_pipeline(config, force=args.force)
            _print(
                {
                    "executed": result.executed_stages,
                    "skipped": [r.name for r in result.runs if not r.executed],
                    "output_dir": str(config.output_dir),
                }
            )
    except pipeline.PipelineError as exc:
        log.error("%s", exc)
        return 2
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

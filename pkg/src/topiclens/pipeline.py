"""Pipeline orchestration: one config in, a directory of artifacts out.

Stages run in a fixed order (ingest, embed, reduce, cluster, filter,
diverge, bias, report). Every stage's inputs are content-hashed into a key
stored in manifest.json; a re-run skips stages whose key and outputs are
unchanged. Partial outputs survive failures, so a fixed pipeline resumes
where it stopped.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import artifacts
from .clusterer import tune_hdbscan
from .corpus import (
    GroupedCorpus,
    assign_groups,
    clean_text,
    first_post_series,
    parse_corpus,
    split_threshold,
)
from .divergence import divergence_table, engagement_scatter_stats, rank_outlier_topics
from .embedder import EmbeddingCache, ServiceConfig, embed_batch, embed_offline
from .reducer import reduce_embeddings
from .semantic_bias import (
    BiasResult,
    InsufficientTopic,
    IntervalSet,
    compute_topic_bias,
    stratified_compare,
    stratum_of,
    volume_breadth_correlations,
)
from .svg import Point, RefLine, render_box, render_scatter
from .topic_filter import TopicConcentration, filter_topics, user_half_line_from_counts

log = logging.getLogger(__name__)

STAGE_ORDER = (
    "ingest",
    "embed",
    "reduce",
    "cluster",
    "filter",
    "diverge",
    "bias",
    "report",
)

# Primary artifact per stage, in stage order.
PRIMARY_ARTIFACTS = (
    "corpus.bin",
    "embeddings.bin",
    "reduced.bin",
    "topics.bin",
    "topics_filtered.bin",
    "divergence.csv",
    "bias.csv",
    "strata.json",
)

FIGURE_NAMES = (
    "fig_user_half_line.svg",
    "fig_engagement.svg",
    "fig_overlap.svg",
    "fig_volume_early.svg",
    "fig_volume_late.svg",
    "fig_strata_box.svg",
)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# Configuration

_SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "input": {"records": (str, None)},
    "split": {"window": (int, 7), "timezone_offset_hours": (int, 0)},
    "embed": {
        "offline": (bool, False),
        "offline_dim": (int, 64),
        "model": (str, "text-embedding-ada-002"),
        "url": (str, ""),
        "cache_dir": (str, ""),
        "batch_size": (int, 256),
        "max_inflight": (int, 4),
    },
    "reduce": {
        "dim": (int, 5),
        "neighbors": (int, 15),
        "epochs": (int, 200),
        "seed": (int, 42),
        "min_dist": (float, 0.1),
    },
    "cluster": {"grid": (str, "10,25,50,100,200"), "max_workers": (int, 4)},
    "filter": {"multiplier": (float, 1.5)},
    "diverge": {"multiplier": (float, 4.0)},
    "bias": {
        "mass": (float, 0.95),
        "min_group": (int, 5),
        "lda_space": (str, "original"),
        "overlap": (str, "measure"),
        "ridge": (float, 1e-3),
        "max_workers": (int, 4),
    },
    "output": {"dir": (str, None)},
}

_REQUIRED = (("input", "records"), ("output", "dir"))


@dataclass
class PipelineConfig:
    values: dict[str, dict[str, object]]
    base_dir: Path = field(default_factory=Path)

    def __getitem__(self, section_key: tuple[str, str]):
        section, key = section_key
        return self.values[section][key]

    def path(self, section: str, key: str) -> Path:
        raw = str(self.values[section][key])
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path("output", "dir")

    def section(self, name: str) -> dict[str, object]:
        return dict(self.values[name])


def _parse_value(section: str, key: str, raw: str, typ: type):
    try:
        if typ is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return typ(raw)
    except ValueError as exc:
        raise ValueError(f"[{section}] {key}: {exc}")


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate an INI config. Unknown sections or keys are errors."""
    path = Path(path)
    parser = configparser.ConfigParser()
    with path.open() as fh:
        parser.read_file(fh)
    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ValueError(f"unknown config key {key!r} in section [{section}]")
            typ, _ = _SCHEMA[section][key]
            values[section][key] = _parse_value(section, key, raw, typ)
    for section, keys in _SCHEMA.items():
        values.setdefault(section, {})
        for key, (_, default) in keys.items():
            values[section].setdefault(key, default)
    for section, key in _REQUIRED:
        if values[section][key] is None:
            raise ValueError(f"config is missing required key {key!r} in [{section}]")
    config = PipelineConfig(values=values, base_dir=path.parent)
    _validate(config)
    return config


def _validate(config: PipelineConfig) -> None:
    records = config.path("input", "records")
    if not records.exists():
        raise ValueError(f"input records file not found: {records}")
    if not 0.0 < float(config[("bias", "mass")]) < 1.0:
        raise ValueError("bias mass must lie strictly between 0 and 1")
    for section in ("filter", "diverge"):
        if float(config[(section, "multiplier")]) <= 0:
            raise ValueError(f"[{section}] multiplier must be positive")
    if config[("bias", "lda_space")] not in ("original", "reduced"):
        raise ValueError("bias lda_space must be 'original' or 'reduced'")
    if config[("bias", "overlap")] not in ("measure", "mass"):
        raise ValueError("bias overlap must be 'measure' or 'mass'")
    if int(config[("split", "window")]) < 1:
        raise ValueError("split window must be positive")
    grid = str(config[("cluster", "grid")])
    try:
        parsed = [int(v) for v in grid.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"cluster grid is not a comma-separated integer list: {grid!r}")
    if not parsed:
        raise ValueError("cluster grid must be non-empty")


def parse_grid(raw: str) -> list[int]:
    return [int(v) for v in str(raw).split(",") if v.strip()]


# ---------------------------------------------------------------------------
# Stage implementations (reused by the CLI one-shots)


def stage_ingest(
    records_path: Path, out_path: Path, window: int = 7, tz_offset_hours: int = 0
) -> dict:
    with open(records_path, encoding="utf-8") as fh:
        documents, report = parse_corpus(fh)
    if not documents:
        raise ValueError("no valid documents in input")
    series = first_post_series(documents, tz_offset_hours=tz_offset_hours)
    threshold = split_threshold(series, window=window)
    grouped = assign_groups(documents, threshold)
    artifacts.save_corpus(out_path, grouped)
    n_early, n_late = grouped.analysis_user_counts()
    return {
        "documents": len(documents),
        "malformed": report.n_malformed,
        "duplicates": report.n_duplicates,
        "threshold_date": threshold.isoformat(),
        "users_early": grouped.group_size("E"),
        "users_late": grouped.group_size("L"),
        "analysis_users_early": n_early,
        "analysis_users_late": n_late,
    }


def stage_embed(
    corpus_path: Path,
    out_path: Path,
    *,
    offline: bool,
    offline_dim: int = 64,
    model: str = "",
    url: str = "",
    cache_dir: Path | None = None,
    batch_size: int = 256,
    max_inflight: int = 4,
) -> dict:
    grouped = artifacts.load_corpus(corpus_path)
    pairs = []
    for doc in grouped.topic_documents():
        cleaned = clean_text(doc.text)
        if cleaned:
            pairs.append((doc.doc_id, cleaned))
    if not pairs:
        raise ValueError("no embeddable documents (all retweets or empty after cleaning)")
    doc_ids = [p[0] for p in pairs]
    texts = [p[1] for p in pairs]
    if offline:
        matrix = embed_offline(texts, offline_dim)
        meta = {"source": "offline-hash", "model": f"hash-{offline_dim}"}
    else:
        if not url:
            raise ValueError("embedding service url required unless offline=true")
        if cache_dir is None:
            raise ValueError("cache_dir required for remote embedding")
        cache = EmbeddingCache(cache_dir)
        service = ServiceConfig(
            url=url,
            model=model,
            batch_size=batch_size,
            max_inflight=max_inflight,
        )
        matrix = embed_batch(texts, service, cache).astype(np.float32)
        meta = {"source": "service", "model": model}
    artifacts.save_matrix(out_path, "embeddings", doc_ids, matrix.astype("<f4"), meta)
    return {"rows": len(doc_ids), "dim": int(matrix.shape[1]), **meta}


def stage_reduce(
    embeddings_path: Path,
    out_path: Path,
    *,
    dim: int = 5,
    neighbors: int = 15,
    epochs: int = 200,
    seed: int = 42,
    min_dist: float = 0.1,
) -> dict:
    doc_ids, matrix, _ = artifacts.load_matrix(embeddings_path, "embeddings")
    reduced = reduce_embeddings(
        matrix.astype(float),
        dim=dim,
        n_neighbors=neighbors,
        epochs=epochs,
        seed=seed,
        min_dist=min_dist,
    )
    artifacts.save_matrix(
        out_path,
        "reduced",
        doc_ids,
        reduced.astype("<f8"),
        {"dim": dim, "neighbors": neighbors, "epochs": epochs, "seed": seed},
    )
    return {"rows": len(doc_ids), "dim": dim}


def stage_cluster(
    reduced_path: Path,
    out_path: Path,
    report_path: Path,
    *,
    grid: list[int],
    max_workers: int = 4,
) -> dict:
    doc_ids, reduced, _ = artifacts.load_matrix(reduced_path, "reduced")
    result = tune_hdbscan(reduced, grid=grid, max_workers=max_workers)
    model = result.model
    report_rows = [
        {
            "min_samples": c.min_samples,
            "min_cluster_size": c.min_cluster_size,
            "topic_count": c.topic_count,
            "noise_count": c.noise_count,
            "dbcv": c.dbcv,
            "note": c.note,
        }
        for c in result.report
    ]
    artifacts.save_topics(
        out_path,
        doc_ids,
        model.labels,
        {
            "min_samples": model.min_samples,
            "min_cluster_size": model.min_cluster_size,
            "dbcv": model.dbcv,
            "topic_count": model.topic_count,
            "tuning": report_rows,
        },
    )
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["min_samples", "min_cluster_size", "topic_count", "noise_count", "dbcv"])
        for row in report_rows:
            writer.writerow(
                [
                    row["min_samples"],
                    row["min_cluster_size"],
                    row["topic_count"],
                    row["noise_count"],
                    "" if row["dbcv"] is None else repr(row["dbcv"]),
                ]
            )
    return {
        "topic_count": model.topic_count,
        "noise": model.noise_count,
        "min_samples": model.min_samples,
        "min_cluster_size": model.min_cluster_size,
        "dbcv": model.dbcv,
    }


def _user_of_docs(grouped: GroupedCorpus) -> dict[str, str]:
    return {d.doc_id: d.user_id for d in grouped.documents}


def stage_filter(
    topics_path: Path,
    corpus_path: Path,
    out_path: Path,
    report_path: Path,
    *,
    multiplier: float = 1.5,
) -> dict:
    doc_ids, labels, meta = artifacts.load_topics(topics_path)
    grouped = artifacts.load_corpus(corpus_path)
    user_of = _user_of_docs(grouped)
    topic_users: dict[int, dict[str, int]] = {}
    for doc_id, label in zip(doc_ids, labels):
        if label < 0:
            continue
        counts = topic_users.setdefault(int(label), {})
        user = user_of[doc_id]
        counts[user] = counts.get(user, 0) + 1
    concentrations = [
        TopicConcentration(
            topic_id=t,
            tweet_count=sum(counts.values()),
            user_half_line=user_half_line_from_counts(counts),
        )
        for t, counts in sorted(topic_users.items())
    ]
    if len(concentrations) >= 4:
        result = filter_topics(concentrations, multiplier=multiplier)
        retained = list(result.retained)
        cutoff = result.cutoff
    else:
        log.warning("only %d topics: concentration filter skipped", len(concentrations))
        retained = [c.topic_id for c in concentrations]
        cutoff = float("-inf")
    out_meta = dict(meta)
    out_meta["filter_multiplier"] = multiplier
    out_meta["half_line_cutoff"] = cutoff
    artifacts.save_topics(out_path, doc_ids, labels, out_meta, retained=retained)
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["topic_id", "tweet_count", "user_half_line", "retained"])
        for c in concentrations:
            writer.writerow(
                [c.topic_id, c.tweet_count, repr(c.user_half_line), int(c.topic_id in set(retained))]
            )
    return {"topics": len(concentrations), "retained": len(retained), "cutoff": cutoff}


def _group_topic_counts(
    doc_ids: list[str], labels: np.ndarray, grouped: GroupedCorpus, retained: set[int]
) -> dict[int, tuple[int, int]]:
    user_of = _user_of_docs(grouped)
    counts: dict[int, list[int]] = {t: [0, 0] for t in retained}
    for doc_id, label in zip(doc_ids, labels):
        t = int(label)
        if t in counts:
            group = grouped.group_of[user_of[doc_id]]
            counts[t][0 if group == "E" else 1] += 1
    return {t: (ne, nl) for t, (ne, nl) in counts.items()}


def stage_diverge(
    topics_path: Path, corpus_path: Path, out_path: Path, *, multiplier: float = 4.0
) -> dict:
    doc_ids, labels, meta = artifacts.load_topics(topics_path)
    grouped = artifacts.load_corpus(corpus_path)
    retained = set(meta.get("retained_topics", []))
    if not retained:
        raise ValueError("topics artifact has no retained topics (run the filter stage)")
    counts = _group_topic_counts(doc_ids, labels, grouped, retained)
    table = divergence_table(counts)
    outliers = (
        {d.topic_id: d for d in rank_outlier_topics(table, multiplier=multiplier)}
        if len(table) >= 4
        else {}
    )
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["topic_id", "n_early", "n_late", "p", "q", "score", "dominant", "outlier_flag"])
        for d in table:
            writer.writerow(
                [
                    d.topic_id,
                    d.n_early,
                    d.n_late,
                    repr(d.p),
                    repr(d.q),
                    repr(d.score),
                    d.dominant,
                    int(d.topic_id in outliers),
                ]
            )
    return {"topics": len(table), "outliers": len(outliers)}


def stage_bias(
    topics_path: Path,
    embeddings_path: Path,
    corpus_path: Path,
    out_path: Path,
    *,
    mass: float = 0.95,
    min_group: int = 5,
    overlap: str = "measure",
    ridge: float = 1e-3,
    max_workers: int = 4,
) -> dict:
    doc_ids, labels, meta = artifacts.load_topics(topics_path)
    try:
        emb_ids, matrix, _ = artifacts.load_matrix(embeddings_path, "embeddings")
    except artifacts.ArtifactError:
        emb_ids, matrix, _ = artifacts.load_matrix(embeddings_path, "reduced")
    grouped = artifacts.load_corpus(corpus_path)
    retained = sorted(set(meta.get("retained_topics", [])))
    if not retained:
        raise ValueError("topics artifact has no retained topics (run the filter stage)")
    row_of = {d: i for i, d in enumerate(emb_ids)}
    user_of = _user_of_docs(grouped)
    matrix = matrix.astype(float)
    topic_rows: dict[int, tuple[list[int], list[int]]] = {t: ([], []) for t in retained}
    for doc_id, label in zip(doc_ids, labels):
        t = int(label)
        if t in topic_rows and doc_id in row_of:
            group = grouped.group_of[user_of[doc_id]]
            topic_rows[t][0 if group == "E" else 1].append(row_of[doc_id])

    def run(t: int) -> BiasResult | InsufficientTopic:
        rows_e, rows_l = topic_rows[t]
        return compute_topic_bias(
            t,
            matrix[rows_e],
            matrix[rows_l],
            mass=mass,
            min_group=min_group,
            ridge=ridge,
            overlap_mode=overlap,
        )

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        outcomes = list(pool.map(run, retained))
    results = [r for r in outcomes if isinstance(r, BiasResult)]
    skipped = [r for r in outcomes if isinstance(r, InsufficientTopic)]
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "topic_id",
                "n_E",
                "n_L",
                "volume_ratio_E",
                "ratio_E",
                "ratio_L",
                "shared",
                "only_E",
                "only_L",
                "stratum",
            ]
        )
        for r in results:
            writer.writerow(
                [
                    r.topic_id,
                    r.n_early,
                    r.n_late,
                    repr(r.volume_ratio_early),
                    repr(r.ratio_early),
                    repr(r.ratio_late),
                    repr(r.shared),
                    repr(r.only_early),
                    repr(r.only_late),
                    stratum_of(r.volume_ratio_early),
                ]
            )
    for s in skipped:
        log.info(
            "topic %d skipped in bias stage: groups %d/%d below minimum %d",
            s.topic_id,
            s.n_early,
            s.n_late,
            min_group,
        )
    return {"topics": len(results), "insufficient": [s.topic_id for s in skipped]}


def load_bias_rows(path: Path) -> list[BiasResult]:
    """BiasResult rows reconstructed from bias.csv (regions omitted)."""
    rows = []
    empty = IntervalSet(intervals=())
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                BiasResult(
                    topic_id=int(rec["topic_id"]),
                    n_early=int(rec["n_E"]),
                    n_late=int(rec["n_L"]),
                    volume_ratio_early=float(rec["volume_ratio_E"]),
                    ratio_early=float(rec["ratio_E"]),
                    ratio_late=float(rec["ratio_L"]),
                    shared=float(rec["shared"]),
                    only_early=float(rec["only_E"]),
                    only_late=float(rec["only_L"]),
                    region_early=empty,
                    region_late=empty,
                )
            )
    return rows


def _strata_payload(results: list[BiasResult], insufficient: list[int]) -> dict:
    report = stratified_compare(results)
    strata = []
    for s in report.strata:
        strata.append(
            {
                "index": s.index,
                "label": s.label,
                "size": s.size,
                "mean_ratio_E": s.mean_ratio_early,
                "mean_ratio_L": s.mean_ratio_late,
                "welch_t": None if s.welch is None else s.welch.t,
                "welch_df": None if s.welch is None else s.welch.df,
                "p_value": None if s.welch is None else s.welch.p_value,
                "note": s.note,
            }
        )
    correlations: dict[str, float | None] = {"early": None, "late": None}
    if len(results) >= 2:
        try:
            r_e, r_l = volume_breadth_correlations(results)
            correlations = {"early": r_e, "late": r_l}
        except ValueError as exc:
            log.info("correlations unavailable: %s", exc)
    return {
        "strata": strata,
        "correlations": correlations,
        "insufficient_topics": sorted(insufficient),
        "n_topics": len(results),
    }


def write_strata_report(bias_csv: Path, out_path: Path, insufficient: list[int] | None = None) -> dict:
    results = load_bias_rows(bias_csv)
    payload = _strata_payload(results, insufficient or [])
    out_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return payload


def stage_report(
    out_dir: Path,
    corpus_path: Path,
    topics_path: Path,
    halfline_csv: Path,
    divergence_csv: Path,
    bias_csv: Path,
    strata_json: Path,
) -> dict:
    grouped = artifacts.load_corpus(corpus_path)
    _, _, topic_meta = artifacts.load_topics(topics_path)
    retained = set(topic_meta.get("retained_topics", []))
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)

    # Topic concentration scatter (half line vs size).
    half_points = []
    with open(halfline_csv, newline="") as fh:
        for rec in csv.DictReader(fh):
            css = "pt" if int(rec["retained"]) else "pt-excluded"
            half_points.append(
                Point(float(rec["user_half_line"]), float(rec["tweet_count"]), f"topic {rec['topic_id']}", css)
            )
    (fig_dir / "fig_user_half_line.svg").write_text(
        render_scatter(
            half_points,
            x_label="share of users producing half the topic's posts",
            y_label="posts in topic",
            title="Topic concentration",
            log_y=True,
        )
    )

    # Engagement scatter with the identity and per-capita reference lines.
    with open(divergence_csv, newline="") as fh:
        div_rows = list(csv.DictReader(fh))
    counts = {int(r["topic_id"]): (int(r["n_early"]), int(r["n_late"])) for r in div_rows}
    n_early_users, n_late_users = grouped.analysis_user_counts()
    stats = engagement_scatter_stats(counts, n_early_users, n_late_users)
    eng_points = []
    for r in div_rows:
        css = "pt-muted"
        if int(r["outlier_flag"]):
            css = "pt-early" if r["dominant"] == "E" else "pt-late"
        eng_points.append(
            Point(float(r["n_early"]), float(r["n_late"]), f"topic {r['topic_id']}", css)
        )
    (fig_dir / "fig_engagement.svg").write_text(
        render_scatter(
            eng_points,
            reference_lines=[
                RefLine(1.0, label="y=x"),
                RefLine(stats.slope, label=f"y={stats.slope:.2f}x"),
            ],
            x_label="early-group posts in topic",
            y_label="late-group posts in topic",
            title="Per-topic volume by group",
            log_x=True,
            log_y=True,
        )
    )

    bias_rows = load_bias_rows(bias_csv)
    strata_css = {0: "pt-early", 1: "pt", 2: "pt-late"}
    if bias_rows:
        (fig_dir / "fig_overlap.svg").write_text(
            render_scatter(
                [
                    Point(r.ratio_early, r.ratio_late, f"topic {r.topic_id}")
                    for r in bias_rows
                ],
                reference_lines=[RefLine(1.0, label="y=x")],
                x_label="early share of discussion range",
                y_label="late share of discussion range",
                title="Within-topic range overlap",
            )
        )
        (fig_dir / "fig_volume_early.svg").write_text(
            render_scatter(
                [
                    Point(
                        r.volume_ratio_early,
                        r.ratio_early,
                        f"topic {r.topic_id}",
                        strata_css[stratum_of(r.volume_ratio_early)],
                    )
                    for r in bias_rows
                ],
                x_label="early share of topic volume",
                y_label="early share of discussion range",
                title="Volume vs range, early group",
            )
        )
        (fig_dir / "fig_volume_late.svg").write_text(
            render_scatter(
                [
                    Point(
                        1.0 - r.volume_ratio_early,
                        r.ratio_late,
                        f"topic {r.topic_id}",
                        strata_css[stratum_of(r.volume_ratio_early)],
                    )
                    for r in bias_rows
                ],
                x_label="late share of topic volume",
                y_label="late share of discussion range",
                title="Volume vs range, late group",
            )
        )
        groups = []
        for idx, label in ((0, "volume share < 1/3"), (1, "1/3 to 2/3"), (2, "above 2/3")):
            bucket = [r for r in bias_rows if stratum_of(r.volume_ratio_early) == idx]
            if not bucket:
                continue
            groups.append(
                (
                    label,
                    [
                        ("early", [r.ratio_early for r in bucket]),
                        ("late", [r.ratio_late for r in bucket]),
                    ],
                )
            )
        if groups:
            (fig_dir / "fig_strata_box.svg").write_text(
                render_box(
                    groups,
                    y_label="share of discussion range",
                    title="Range share by volume stratum",
                )
            )

    insufficient = sorted(retained - {r.topic_id for r in bias_rows})
    payload = _strata_payload(bias_rows, insufficient)
    payload["engagement"] = {
        "n_topics": stats.n_topics,
        "frac_late_above_xy": stats.frac_late_above_xy,
        "frac_early_above_xy": stats.frac_early_above_xy,
        "frac_on_xy": stats.frac_on_xy,
        "per_capita_slope": stats.slope,
        "frac_below_percapita": stats.frac_below_percapita,
        "frac_above_percapita": stats.frac_above_percapita,
        "users_early": n_early_users,
        "users_late": n_late_users,
    }
    strata_json.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return {"figures": sorted(p.name for p in fig_dir.glob("*.svg"))}


# ---------------------------------------------------------------------------
# Orchestration


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_key(params: dict, inputs: list[Path]) -> str:
    payload = {
        "params": params,
        "inputs": {p.name: _hash_file(p) for p in inputs},
    }
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


@dataclass
class StageRun:
    name: str
    executed: bool
    outputs: dict[str, str]
    summary: dict = field(default_factory=dict)


@dataclass
class PipelineResult:
    manifest: dict
    runs: list[StageRun]

    @property
    def executed_stages(self) -> list[str]:
        return [r.name for r in self.runs if r.executed]


def run_pipeline(config: PipelineConfig, force: bool = False) -> PipelineResult:
    """Execute all stages, skipping those whose inputs are unchanged."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out / "corpus.bin",
        "embeddings": out / "embeddings.bin",
        "reduced": out / "reduced.bin",
        "topics": out / "topics.bin",
        "tuning": out / "tuning.csv",
        "filtered": out / "topics_filtered.bin",
        "halfline": out / "halfline.csv",
        "divergence": out / "divergence.csv",
        "bias": out / "bias.csv",
        "strata": out / "strata.json",
    }
    records = config.path("input", "records")
    embed_cfg = config.section("embed")
    cache_dir = (
        config.path("embed", "cache_dir")
        if embed_cfg["cache_dir"]
        else out / "embed_cache"
    )
    figures = [out / "figures" / name for name in FIGURE_NAMES]

    stages = [
        (
            "ingest",
            config.section("split"),
            [records],
            [paths["corpus"]],
            lambda: stage_ingest(
                records,
                paths["corpus"],
                window=int(config[("split", "window")]),
                tz_offset_hours=int(config[("split", "timezone_offset_hours")]),
            ),
        ),
        (
            "embed",
            {k: str(v) for k, v in embed_cfg.items() if k != "cache_dir"},
            [paths["corpus"]],
            [paths["embeddings"]],
            lambda: stage_embed(
                paths["corpus"],
                paths["embeddings"],
                offline=bool(embed_cfg["offline"]),
                offline_dim=int(embed_cfg["offline_dim"]),
                model=str(embed_cfg["model"]),
                url=str(embed_cfg["url"]),
                cache_dir=cache_dir,
                batch_size=int(embed_cfg["batch_size"]),
                max_inflight=int(embed_cfg["max_inflight"]),
            ),
        ),
        (
            "reduce",
            config.section("reduce"),
            [paths["embeddings"]],
            [paths["reduced"]],
            lambda: stage_reduce(
                paths["embeddings"],
                paths["reduced"],
                dim=int(config[("reduce", "dim")]),
                neighbors=int(config[("reduce", "neighbors")]),
                epochs=int(config[("reduce", "epochs")]),
                seed=int(config[("reduce", "seed")]),
                min_dist=float(config[("reduce", "min_dist")]),
            ),
        ),
        (
            "cluster",
            config.section("cluster"),
            [paths["reduced"]],
            [paths["topics"], paths["tuning"]],
            lambda: stage_cluster(
                paths["reduced"],
                paths["topics"],
                paths["tuning"],
                grid=parse_grid(config[("cluster", "grid")]),
                max_workers=int(config[("cluster", "max_workers")]),
            ),
        ),
        (
            "filter",
            config.section("filter"),
            [paths["topics"], paths["corpus"]],
            [paths["filtered"], paths["halfline"]],
            lambda: stage_filter(
                paths["topics"],
                paths["corpus"],
                paths["filtered"],
                paths["halfline"],
                multiplier=float(config[("filter", "multiplier")]),
            ),
        ),
        (
            "diverge",
            config.section("diverge"),
            [paths["filtered"], paths["corpus"]],
            [paths["divergence"]],
            lambda: stage_diverge(
                paths["filtered"],
                paths["corpus"],
                paths["divergence"],
                multiplier=float(config[("diverge", "multiplier")]),
            ),
        ),
        (
            "bias",
            config.section("bias"),
            [
                paths["filtered"],
                paths["reduced"]
                if config[("bias", "lda_space")] == "reduced"
                else paths["embeddings"],
                paths["corpus"],
            ],
            [paths["bias"]],
            lambda: stage_bias(
                paths["filtered"],
                paths["reduced"]
                if config[("bias", "lda_space")] == "reduced"
                else paths["embeddings"],
                paths["corpus"],
                paths["bias"],
                mass=float(config[("bias", "mass")]),
                min_group=int(config[("bias", "min_group")]),
                overlap=str(config[("bias", "overlap")]),
                ridge=float(config[("bias", "ridge")]),
                max_workers=int(config[("bias", "max_workers")]),
            ),
        ),
        (
            "report",
            {},
            [
                paths["corpus"],
                paths["filtered"],
                paths["halfline"],
                paths["divergence"],
                paths["bias"],
            ],
            [paths["strata"], *figures],
            lambda: stage_report(
                out,
                paths["corpus"],
                paths["filtered"],
                paths["halfline"],
                paths["divergence"],
                paths["bias"],
                paths["strata"],
            ),
        ),
    ]

    manifest_path = out / "manifest.json"
    previous = {}
    if manifest_path.exists():
        try:
            previous = json.loads(manifest_path.read_text()).get("stages", {})
        except ValueError:
            log.warning("manifest unreadable; all stages will run")
    new_stages: dict[str, dict] = {}
    runs: list[StageRun] = []

    def persist() -> dict:
        artifact_hashes = {}
        for artifact in PRIMARY_ARTIFACTS:
            path = out / artifact
            if path.exists():
                artifact_hashes[artifact] = _hash_file(path)
        manifest = {"artifacts": artifact_hashes, "stages": new_stages}
        manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        return manifest

    for name, params, inputs, outputs, fn in stages:
        try:
            key = _stage_key({k: str(v) for k, v in params.items()}, inputs)
        except FileNotFoundError as exc:
            raise PipelineError(name, exc)
        prev = previous.get(name)
        reusable = (
            not force
            and prev is not None
            and prev.get("key") == key
            and all(Path(out / rel).exists() for rel in prev.get("outputs", {}))
            and all(
                _hash_file(out / rel) == digest
                for rel, digest in prev.get("outputs", {}).items()
            )
        )
        if reusable:
            new_stages[name] = prev
            runs.append(StageRun(name, False, dict(prev["outputs"]), prev.get("summary", {})))
            continue
        log.info("running stage %s", name)
        try:
            summary = fn() or {}
        except Exception as exc:  # noqa: BLE001 - report stage and cause
            persist()  # completed stages stay resumable
            raise PipelineError(name, exc)
        produced = {}
        for p in outputs:
            if p.exists():
                produced[str(p.relative_to(out))] = _hash_file(p)
        record = {"key": key, "outputs": produced, "summary": summary}
        new_stages[name] = record
        runs.append(StageRun(name, True, produced, summary))
    return PipelineResult(manifest=persist(), runs=runs)

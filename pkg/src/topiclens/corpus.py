"""Corpus ingestion and engager-group splitting.

Parses line-delimited post records, cleans text, builds the daily series of
first-time posters, and splits users into early (E) / late (L) groups around
the date where the trailing-window average of new users bottoms out.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import IO, Iterable, Iterator

import re

log = logging.getLogger(__name__)

GROUP_EARLY = "E"
GROUP_LATE = "L"

# Replacement uses a space, not the empty string, so removals can never
# splice two fragments into a new mention/URL token (keeps cleaning idempotent).
_URL_RE = re.compile(r"https?://\S+|\bt\.co/\S+")
_MENTION_RE = re.compile(r"@\w+")
_WS_RE = re.compile(r"\s+")

_REQUIRED_FIELDS = ("doc_id", "user_id", "timestamp", "text")


@dataclass(frozen=True)
class Document:
    """One post: author, UTC timestamp, raw text, retweet flag."""

    doc_id: str
    user_id: str
    timestamp: datetime
    text: str
    is_retweet: bool = False


@dataclass(frozen=True)
class DailySeries:
    """Contiguous daily counts of first-time posters, missing days filled with 0."""

    start: date
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.counts:
            raise ValueError("daily series must be non-empty")
        if any(c < 0 for c in self.counts):
            raise ValueError("daily counts must be non-negative")

    def __len__(self) -> int:
        return len(self.counts)

    def dates(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(len(self.counts))]

    def items(self) -> Iterator[tuple[date, int]]:
        for i, c in enumerate(self.counts):
            yield self.start + timedelta(days=i), c


@dataclass
class ParseReport:
    """Per-run ingestion bookkeeping: skipped lines and duplicate ids."""

    n_parsed: int = 0
    n_malformed: int = 0
    n_duplicates: int = 0
    malformed_lines: list[int] = field(default_factory=list)


@dataclass
class GroupedCorpus:
    """Documents plus the user -> group map induced by the threshold date.

    A user is in group E iff their first post (retweets included) falls
    strictly before midnight UTC of ``threshold_date``. Documents before
    ``analysis_start`` are kept for bookkeeping but excluded from every
    analysis view.
    """

    documents: list[Document]
    threshold_date: date
    group_of: dict[str, str]
    analysis_start: date

    def group_size(self, group: str) -> int:
        return sum(1 for g in self.group_of.values() if g == group)

    def analysis_documents(self) -> list[Document]:
        cutoff = _midnight_utc(self.analysis_start)
        return [d for d in self.documents if d.timestamp >= cutoff]

    def topic_documents(self) -> list[Document]:
        """Analysis-window documents eligible for topic modeling (no retweets)."""
        return [d for d in self.analysis_documents() if not d.is_retweet]

    def analysis_user_counts(self) -> tuple[int, int]:
        """Distinct users with at least one analysis-window document, per group."""
        users = {d.user_id for d in self.analysis_documents()}
        n_early = sum(1 for u in users if self.group_of[u] == GROUP_EARLY)
        return n_early, len(users) - n_early


def _midnight_utc(day: date) -> datetime:
    return datetime(day.year, day.month, day.day, tzinfo=timezone.utc)


def _parse_timestamp(raw: str) -> datetime:
    # Python 3.10 fromisoformat rejects a trailing Z.
    ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def parse_corpus(
    record_stream: Iterable[str] | IO[str],
    collection_window: tuple[date, date] | None = None,
) -> tuple[list[Document], ParseReport]:
    """Parse line-delimited JSON records into Documents.

    Malformed lines are skipped with a warning carrying the 1-based line
    number; duplicate doc_ids keep the first occurrence. ``collection_window``
    optionally rejects records timestamped outside [start, end].
    """
    documents: list[Document] = []
    seen: set[str] = set()
    report = ParseReport()
    for lineno, line in enumerate(record_stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
            if not isinstance(raw, dict):
                raise ValueError("record is not an object")
            missing = [f for f in _REQUIRED_FIELDS if f not in raw]
            if missing:
                raise ValueError(f"missing fields: {', '.join(missing)}")
            text = str(raw["text"])
            if not text.strip():
                raise ValueError("empty text")
            ts = _parse_timestamp(str(raw["timestamp"]))
            if collection_window is not None:
                lo, hi = collection_window
                if not (_midnight_utc(lo) <= ts < _midnight_utc(hi) + timedelta(days=1)):
                    raise ValueError(f"timestamp {ts.isoformat()} outside collection window")
            doc = Document(
                doc_id=str(raw["doc_id"]),
                user_id=str(raw["user_id"]),
                timestamp=ts,
                text=text,
                is_retweet=bool(raw.get("is_retweet", False)),
            )
        except (ValueError, TypeError) as exc:
            report.n_malformed += 1
            report.malformed_lines.append(lineno)
            log.warning("line %d: skipping malformed record (%s)", lineno, exc)
            continue
        if doc.doc_id in seen:
            report.n_duplicates += 1
            log.warning("line %d: duplicate doc_id %r, keeping first", lineno, doc.doc_id)
            continue
        seen.add(doc.doc_id)
        documents.append(doc)
        report.n_parsed += 1
    return documents, report


def clean_text(text: str) -> str:
    """Strip @-mentions and URLs (http/https and bare t.co links), squeeze whitespace."""
    text = _URL_RE.sub(" ", text)
    text = _MENTION_RE.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()


def first_post_times(documents: Iterable[Document]) -> dict[str, datetime]:
    """Earliest timestamp per user over all documents, retweets included."""
    first: dict[str, datetime] = {}
    for doc in documents:
        prev = first.get(doc.user_id)
        if prev is None or doc.timestamp < prev:
            first[doc.user_id] = doc.timestamp
    return first


def first_post_series(
    documents: Iterable[Document], tz_offset_hours: int = 0
) -> DailySeries:
    """Daily counts of users making their first post, bucketed by UTC date.

    ``tz_offset_hours`` shifts the bucketing clock for corpora where local-day
    boundaries matter.
    """
    documents = list(documents)
    first = first_post_times(documents)
    if not first:
        raise ValueError("cannot build a daily series from an empty corpus")
    offset = timedelta(hours=tz_offset_hours)
    # The series spans the whole corpus timeline, not just first-post days.
    all_days = [(d.timestamp + offset).date() for d in documents]
    start, end = min(all_days), max(all_days)
    counts = [0] * ((end - start).days + 1)
    for ts in first.values():
        counts[((ts + offset).date() - start).days] += 1
    return DailySeries(start=start, counts=tuple(counts))


def split_threshold(series: DailySeries, window: int = 7) -> date:
    """Date minimizing the trailing ``window``-day average of new users.

    The window ends at the returned date (inclusive); ties break to the
    earliest eligible date.
    """
    if window < 1:
        raise ValueError("window must be positive")
    if len(series) < window:
        raise ValueError(f"series has {len(series)} days, needs at least {window}")
    counts = series.counts
    best_idx = window - 1
    best_sum = sum(counts[:window])
    run = best_sum
    for i in range(window, len(counts)):
        run += counts[i] - counts[i - window]
        if run < best_sum:
            best_sum = run
            best_idx = i
    return series.start + timedelta(days=best_idx)


def assign_groups(
    documents: list[Document],
    threshold_date: date,
    analysis_start: date | None = None,
) -> GroupedCorpus:
    """Split users into early/late engagers around ``threshold_date``.

    First posts strictly before midnight UTC of the threshold put a user in
    group E, otherwise L. ``analysis_start`` defaults to the threshold date.
    """
    if analysis_start is None:
        analysis_start = threshold_date
    cutoff = _midnight_utc(threshold_date)
    first = first_post_times(documents)
    group_of = {
        user: (GROUP_EARLY if ts < cutoff else GROUP_LATE) for user, ts in first.items()
    }
    return GroupedCorpus(
        documents=list(documents),
        threshold_date=threshold_date,
        group_of=group_of,
        analysis_start=analysis_start,
    )

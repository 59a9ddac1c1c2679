"""Topic filtering by user concentration.

Topics where a small share of users produces half the content are dropped:
the "user half line" of each topic is fenced with the IQR rule and low-side
outliers (few users dominating) are excluded.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Document

__all__ = [
    "TopicConcentration",
    "FilterResult",
    "user_half_line",
    "user_half_line_from_counts",
    "iqr_fences",
    "filter_topics",
]


@dataclass(frozen=True)
class TopicConcentration:
    topic_id: int
    tweet_count: int
    user_half_line: float


@dataclass(frozen=True)
class FilterResult:
    retained: tuple[int, ...]
    excluded: tuple[int, ...]
    cutoff: float


def user_half_line_from_counts(counts: Mapping[str, int]) -> float:
    """Fraction of distinct users needed to account for half the documents.

    Users are ranked by contribution, ties broken by user id so the metric is
    deterministic; "half" is ceil(total / 2).
    """
    if not counts:
        raise ValueError("topic has no documents")
    total = sum(counts.values())
    half = math.ceil(total / 2)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    cum = 0
    for m, (_, c) in enumerate(ranked, start=1):
        cum += c
        if cum >= half:
            return m / len(counts)
    raise AssertionError("cumulative count never reached half")  # pragma: no cover


def user_half_line(topic_documents: Sequence[Document]) -> float:
    """User half line of one topic's documents."""
    return user_half_line_from_counts(Counter(d.user_id for d in topic_documents))


def iqr_fences(values: Iterable[float], multiplier: float) -> tuple[float, float]:
    """(low, high) Tukey fences with interpolated quartiles.

    Quartiles sit at position p*(n-1) of the sorted values with linear
    interpolation between neighbors.
    """
    vals = np.asarray(list(values), dtype=float)
    if vals.size < 4:
        raise ValueError("need at least 4 values for quartile fences")
    q1, q3 = np.percentile(vals, [25.0, 75.0])
    iqr = q3 - q1
    return q1 - multiplier * iqr, q3 + multiplier * iqr


def filter_topics(
    concentrations: Sequence[TopicConcentration], multiplier: float = 1.5
) -> FilterResult:
    """Drop topics whose user half line falls below the low IQR fence.

    Only the low side is fenced: a low half line means few users produced
    half the topic's content. High-side topics are kept.
    """
    if len(concentrations) < 4:
        raise ValueError("need at least 4 topics to compute fences")
    low, _ = iqr_fences([c.user_half_line for c in concentrations], multiplier)
    retained = tuple(c.topic_id for c in concentrations if c.user_half_line >= low)
    excluded = tuple(c.topic_id for c in concentrations if c.user_half_line < low)
    return FilterResult(retained=retained, excluded=excluded, cutoff=low)

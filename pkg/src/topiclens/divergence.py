"""Between-group topic divergence.

Normalizes each group's tweet volume into a distribution over retained
topics, scores every topic by its contribution to the Jensen-Shannon
divergence between the two distributions (log base 2), and flags outlier
topics with the IQR rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import GROUP_EARLY, GROUP_LATE
from .topic_filter import iqr_fences

__all__ = [
    "TopicDivergence",
    "ScatterStats",
    "topic_distributions",
    "topic_divergence",
    "divergence_table",
    "rank_outlier_topics",
    "engagement_scatter_stats",
]


@dataclass(frozen=True)
class TopicDivergence:
    topic_id: int
    n_early: int
    n_late: int
    p: float  # early group's probability of this topic
    q: float  # late group's probability of this topic
    score: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.p + self.q)

    @property
    def dominant(self) -> str:
        return GROUP_EARLY if self.p > self.q else GROUP_LATE


def topic_distributions(
    counts: Mapping[int, tuple[int, int]]
) -> tuple[dict[int, float], dict[int, float]]:
    """Per-group topic distributions from {topic_id: (n_early, n_late)} counts.

    Each group's counts are normalized over the retained topics only; a group
    with zero tweets across all topics has no distribution and is an error.
    """
    if not counts:
        raise ValueError("no retained topics")
    total_e = sum(ne for ne, _ in counts.values())
    total_l = sum(nl for _, nl in counts.values())
    if total_e == 0 or total_l == 0:
        raise ValueError("a group has no tweets in the retained topics")
    p = {t: ne / total_e for t, (ne, _) in counts.items()}
    q = {t: nl / total_l for t, (_, nl) in counts.items()}
    return p, q


def topic_divergence(p_i: float, q_i: float) -> float:
    """One topic's Jensen-Shannon contribution, log base 2.

    0 * log(0/m) is taken as 0; a topic with no mass in either group scores 0.
    """
    if p_i < 0 or q_i < 0 or p_i > 1 or q_i > 1:
        raise ValueError("proportions must lie in [0, 1]")
    m = 0.5 * (p_i + q_i)
    if m == 0.0:
        return 0.0
    score = 0.0
    if p_i > 0.0:
        score += 0.5 * p_i * math.log2(p_i / m)
    if q_i > 0.0:
        score += 0.5 * q_i * math.log2(q_i / m)
    return score


def divergence_table(
    counts: Mapping[int, tuple[int, int]]
) -> list[TopicDivergence]:
    """Score every retained topic, ordered by topic id."""
    p, q = topic_distributions(counts)
    return [
        TopicDivergence(
            topic_id=t,
            n_early=counts[t][0],
            n_late=counts[t][1],
            p=p[t],
            q=q[t],
            score=topic_divergence(p[t], q[t]),
        )
        for t in sorted(counts)
    ]


def rank_outlier_topics(
    divergences: Sequence[TopicDivergence], multiplier: float = 4.0
) -> list[TopicDivergence]:
    """Topics whose score exceeds the high IQR fence, descending by score.

    Ties in score break by topic id so the ranking is deterministic.
    """
    _, high = iqr_fences([d.score for d in divergences], multiplier)
    flagged = [d for d in divergences if d.score > high]
    return sorted(flagged, key=lambda d: (-d.score, d.topic_id))


@dataclass(frozen=True)
class ScatterStats:
    """Side-of-line fractions for the per-topic engagement scatter.

    Points are (n_early, n_late) per topic; the reference lines are y = x and
    the per-capita line y = slope * x with slope |late users| / |early users|.
    Fractions use strict inequalities; ties sit on the line.
    """

    n_topics: int
    frac_late_above_xy: float
    frac_early_above_xy: float
    frac_on_xy: float
    slope: float
    frac_below_percapita: float
    frac_above_percapita: float
    per_capita_early: tuple[float, ...]
    per_capita_late: tuple[float, ...]


def engagement_scatter_stats(
    counts: Mapping[int, tuple[int, int]], size_early: int, size_late: int
) -> ScatterStats:
    """Summary of per-topic group counts against the y=x and per-capita lines."""
    if size_early <= 0 or size_late <= 0:
        raise ValueError("group sizes must be positive")
    if not counts:
        raise ValueError("no topics")
    slope = size_late / size_early
    n = len(counts)
    late_above = early_above = on_line = below_pc = above_pc = 0
    for ne, nl in counts.values():
        if nl > ne:
            late_above += 1
        elif ne > nl:
            early_above += 1
        else:
            on_line += 1
        if nl < slope * ne:
            below_pc += 1
        elif nl > slope * ne:
            above_pc += 1
    topics = sorted(counts)
    return ScatterStats(
        n_topics=n,
        frac_late_above_xy=late_above / n,
        frac_early_above_xy=early_above / n,
        frac_on_xy=on_line / n,
        slope=slope,
        frac_below_percapita=below_pc / n,
        frac_above_percapita=above_pc / n,
        per_capita_early=tuple(counts[t][0] / size_early for t in topics),
        per_capita_late=tuple(counts[t][1] / size_late for t in topics),
    )

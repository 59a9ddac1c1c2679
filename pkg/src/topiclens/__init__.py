"""topiclens: compare how two engagement cohorts discuss a topic stream.

Pipeline stages: ingest and split a post corpus into early/late engager
groups, embed cleaned texts, reduce dimensionality, cluster into topics,
filter user-dominated topics, rank topics by between-group divergence, and
measure within-topic semantic bias via density-region overlap.
"""

__version__ = "0.1.0"

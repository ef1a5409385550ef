"""Capped per-cluster sampling of the union point cloud."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DensePointSet
from .labeling import ClusterPartition


@dataclass(frozen=True)
class SamplerConfig:
    n_max: int = 512
    seed: int = 0

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError("n_max must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass
class UnionCloud:
    """Concatenation of every view's dense points."""

    positions: np.ndarray  # (n, 3)
    colors: np.ndarray  # (n, 3)
    views: np.ndarray  # (n,) source view index
    pixels: np.ndarray  # (n, 2) source (u, v)

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def from_point_sets(cls, sets: Sequence[DensePointSet]) -> "UnionCloud":
        if not sets:
            return cls(np.empty((0, 3)), np.empty((0, 3)), np.empty(0, np.int64), np.empty((0, 2), np.int64))
        return cls(
            np.concatenate([s.positions for s in sets]),
            np.concatenate([s.colors for s in sets]),
            np.concatenate([np.full(len(s), s.view_index, dtype=np.int64) for s in sets]),
            np.concatenate([s.source_pixels for s in sets]),
        )


@dataclass
class FilteredCloud:
    positions: np.ndarray
    colors: np.ndarray
    views: np.ndarray
    pixels: np.ndarray
    retained_indices: np.ndarray  # sorted indices into the union cloud
    per_cluster_counts: list[tuple[tuple[int, ...], int]]

    def __len__(self) -> int:
        return len(self.positions)


def cluster_rng(seed: int, cluster_ordinal: int) -> np.random.Generator:
    """Independent stream per (seed, cluster ordinal)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(cluster_ordinal)]))


def sample_cluster(cluster: np.ndarray, config: SamplerConfig, cluster_ordinal: int) -> np.ndarray:
    """Up to ``n_max`` distinct members of ``cluster``, drawn uniformly, sorted."""
    cluster = np.asarray(cluster, dtype=np.int64)
    if len(cluster) == 0:
        raise ValueError("cannot sample an empty cluster")
    if len(cluster) <= config.n_max:
        return np.sort(cluster)
    rng = cluster_rng(config.seed, cluster_ordinal)
    pick = rng.choice(len(cluster), size=config.n_max, replace=False)
    return np.sort(cluster[pick])


def downsample(partition: ClusterPartition, cloud: UnionCloud, config: SamplerConfig) -> FilteredCloud:
    kept = []
    counts = []
    for ordinal, (key, members) in enumerate(zip(partition.keys, partition.members)):
        chosen = sample_cluster(members, config, ordinal)
        kept.append(chosen)
        counts.append((tuple(int(x) for x in key), len(chosen)))
    idx = np.sort(np.concatenate(kept)) if kept else np.empty(0, dtype=np.int64)
    return FilteredCloud(
        cloud.positions[idx],
        cloud.colors[idx],
        cloud.views[idx],
        cloud.pixels[idx],
        idx,
        counts,
    )


def reduction_ratio(n_before: int, n_after: int) -> float:
    return 1.0 - n_after / n_before if n_before else 0.0

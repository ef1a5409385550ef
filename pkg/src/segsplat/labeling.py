"""Segment-aware label vectors and structural clusters.

Each lifted point gets a tuple of segment labels: the label of its source
pixel followed by the labels it lands on when projected into a few nearby
context views. Points sharing an identical tuple form one structural cluster.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import CameraView, DensePointSet, project_points, round_pixel, in_frame
from .mdbscan import SegmentationMap

OUT_OF_FRAME = -1


def context_views(source_index: int, total_views: int, dimension: int = 3) -> list[int]:
    """The ``dimension - 1`` views nearest to ``source_index`` by ordinal distance.

    Ties go to the lower index; views are 1-based and the sequence is not wrapped.
    """
    if not 1 <= source_index <= total_views:
        raise ValueError(f"source index {source_index} outside 1..{total_views}")
    if dimension < 2:
        raise ValueError("label dimension must be at least 2")
    if dimension > total_views:
        raise ValueError("label dimension exceeds view count")
    others = [j for j in range(1, total_views + 1) if j != source_index]
    others.sort(key=lambda j: (abs(j - source_index), j))
    return sorted(others[: dimension - 1])


def lookup_labels(points: np.ndarray, segmap: SegmentationMap, camera: CameraView) -> np.ndarray:
    """Segment label under each projected point, or -1 if it misses the frame."""
    u, v, _ = project_points(points, camera.intrinsics, camera.pose)
    ok = in_frame(u, v, camera.intrinsics)
    out = np.full(len(u), OUT_OF_FRAME, dtype=np.int64)
    if ok.any():
        out[ok] = segmap.labels[round_pixel(v[ok]), round_pixel(u[ok])]
    return out


def label_points(
    points: DensePointSet,
    segmaps: dict[int, SegmentationMap],
    cameras: dict[int, CameraView],
    context: Sequence[int],
) -> np.ndarray:
    """Label vectors for every point of one view, shape ``(n, 1 + len(context))``."""
    src = points.source_pixels
    out = np.empty((len(points), 1 + len(context)), dtype=np.int64)
    out[:, 0] = segmaps[points.view_index].labels[src[:, 1], src[:, 0]]
    for k, j in enumerate(context):
        out[:, k + 1] = lookup_labels(points.positions, segmaps[j], cameras[j])
    return out


def label_point(
    point_index: int,
    points: DensePointSet,
    segmaps: dict[int, SegmentationMap],
    cameras: dict[int, CameraView],
    context: Sequence[int],
) -> tuple[int, ...]:
    """Label vector of a single point of ``points`` (see :func:`label_points`)."""
    sub = DensePointSet(
        points.view_index,
        points.positions[point_index : point_index + 1],
        points.colors[point_index : point_index + 1],
        points.source_pixels[point_index : point_index + 1],
    )
    return tuple(int(x) for x in label_points(sub, segmaps, cameras, context)[0])


def label_cloud(
    cloud: Sequence[DensePointSet],
    segmaps: dict[int, SegmentationMap],
    cameras: dict[int, CameraView],
    dimension: int = 3,
    total_views: int | None = None,
) -> np.ndarray:
    """Label vectors for the concatenation of ``cloud`` in order."""
    n_views = total_views if total_views is not None else len(cameras)
    parts = [
        label_points(ps, segmaps, cameras, context_views(ps.view_index, n_views, dimension))
        for ps in cloud
    ]
    if not parts:
        return np.empty((0, dimension), dtype=np.int64)
    return np.concatenate(parts)


@dataclass
class ClusterPartition:
    """Points grouped by identical label vector, in lexicographic vector order."""

    keys: np.ndarray  # (k, D) unique label vectors, lexicographically sorted
    point_to_cluster: np.ndarray  # (n,) cluster ordinal of each point
    members: list[np.ndarray] = field(repr=False)  # sorted global indices per cluster

    @property
    def clusters(self) -> dict[tuple[int, ...], np.ndarray]:
        return {tuple(int(x) for x in k): m for k, m in zip(self.keys, self.members)}

    def __len__(self) -> int:
        return len(self.members)

    def sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.members], dtype=np.int64)


def build_partition(label_vectors: np.ndarray) -> ClusterPartition:
    lv = np.asarray(label_vectors, dtype=np.int64)
    if lv.ndim != 2:
        raise ValueError("label vectors must be a 2-D array")
    if len(lv) == 0:
        return ClusterPartition(lv[:0], np.empty(0, dtype=np.int64), [])
    keys, inverse = np.unique(lv, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.cumsum(np.bincount(inverse, minlength=len(keys)))[:-1]
    members = np.split(order, bounds)
    return ClusterPartition(keys, inverse, members)


def dump_label_records(cloud: Sequence[DensePointSet], label_vectors: np.ndarray) -> str:
    """Debug text: one ``view u v l0 l1 ...`` line per point."""
    lines = []
    i = 0
    for ps in cloud:
        for (u, v) in ps.source_pixels:
            lines.append(" ".join(str(int(x)) for x in (ps.view_index, u, v, *label_vectors[i])))
            i += 1
    return "\n".join(lines) + ("\n" if lines else "")

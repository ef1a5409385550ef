"""Grid DBSCAN region segmentation of RGB images.

A pixel's neighbourhood is the set of its 4- or 8-adjacent pixels whose RGB
distance is at most ``color_eps``. Pixels with at least ``min_pts`` such
neighbours are core pixels; core pixels linked through neighbourhoods form
clusters. Non-core pixels touching a core neighbour join the cluster of the
closest (in RGB) one. Remaining noise pixels are absorbed front by front into
the adjacent segment of the closest neighbouring pixel, so every pixel ends
up labelled and every segment stays spatially connected.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numba
import numpy as np


class Connectivity(str, Enum):
    FOUR = "four"
    EIGHT = "eight"


@dataclass(frozen=True)
class SegmentationParams:
    color_eps: float = 0.08
    min_pts: int = 3
    connectivity: Connectivity = Connectivity.FOUR

    def __post_init__(self):
        if not self.color_eps > 0:
            raise ValueError("color_eps must be positive")
        if int(self.min_pts) != self.min_pts or self.min_pts < 1:
            raise ValueError("min_pts must be a positive integer")
        object.__setattr__(self, "connectivity", Connectivity(self.connectivity))


@dataclass
class SegmentationMap:
    labels: np.ndarray  # (H, W) int64
    num_segments: int

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


_OFFSETS4 = np.array([[-1, 0], [0, -1], [0, 1], [1, 0]], dtype=np.int64)
_OFFSETS8 = np.array(
    [[-1, -1], [-1, 0], [-1, 1], [0, -1], [0, 1], [1, -1], [1, 0], [1, 1]], dtype=np.int64
)


def neighbor_offsets(connectivity) -> np.ndarray:
    return _OFFSETS8 if Connectivity(connectivity) is Connectivity.EIGHT else _OFFSETS4


@numba.njit(cache=True, inline="always")
def _dist2(img, y0, x0, y1, x1):
    d0 = img[y0, x0, 0] - img[y1, x1, 0]
    d1 = img[y0, x0, 1] - img[y1, x1, 1]
    d2 = img[y0, x0, 2] - img[y1, x1, 2]
    return d0 * d0 + d1 * d1 + d2 * d2


@numba.njit(cache=True, nogil=True)
def _segment_kernel(img, eps2, min_pts, offsets):
    H, W = img.shape[0], img.shape[1]
    n_off = offsets.shape[0]
    npx = H * W

    core = np.zeros((H, W), dtype=np.bool_)
    for y in range(H):
        for x in range(W):
            cnt = 0
            for k in range(n_off):
                yy = y + offsets[k, 0]
                xx = x + offsets[k, 1]
                if 0 <= yy < H and 0 <= xx < W and _dist2(img, y, x, yy, xx) <= eps2:
                    cnt += 1
            core[y, x] = cnt >= min_pts

    labels = np.full((H, W), -1, dtype=np.int64)
    queue = np.empty(npx, dtype=np.int64)
    n_clusters = 0
    # core clusters: BFS over core-to-core reachability, seeds in row-major order
    for y in range(H):
        for x in range(W):
            if not core[y, x] or labels[y, x] >= 0:
                continue
            lab = n_clusters
            n_clusters += 1
            labels[y, x] = lab
            head = 0
            tail = 0
            queue[tail] = y * W + x
            tail += 1
            while head < tail:
                p = queue[head]
                head += 1
                py = p // W
                px = p - py * W
                for k in range(n_off):
                    yy = py + offsets[k, 0]
                    xx = px + offsets[k, 1]
                    if 0 <= yy < H and 0 <= xx < W and core[yy, xx] and labels[yy, xx] < 0:
                        if _dist2(img, py, px, yy, xx) <= eps2:
                            labels[yy, xx] = lab
                            queue[tail] = yy * W + xx
                            tail += 1

    # border pixels: closest density-reachable core neighbour, ties -> lowest label
    border = np.full((H, W), -1, dtype=np.int64)
    for y in range(H):
        for x in range(W):
            if core[y, x]:
                continue
            best = -1
            best_d = np.inf
            for k in range(n_off):
                yy = y + offsets[k, 0]
                xx = x + offsets[k, 1]
                if 0 <= yy < H and 0 <= xx < W and core[yy, xx]:
                    d = _dist2(img, y, x, yy, xx)
                    if d <= eps2:
                        lab = labels[yy, xx]
                        if d < best_d or (d == best_d and lab < best):
                            best_d = d
                            best = lab
            border[y, x] = best
    for y in range(H):
        for x in range(W):
            if border[y, x] >= 0:
                labels[y, x] = border[y, x]

    # noise absorption, one synchronous front at a time
    frontier = np.empty(npx, dtype=np.int64)
    n_front = 0
    for y in range(H):
        for x in range(W):
            if labels[y, x] >= 0:
                frontier[n_front] = y * W + x
                n_front += 1
    unlabeled = npx - n_front
    mark = np.zeros(npx, dtype=np.bool_)
    cand = np.empty(npx, dtype=np.int64)
    cand_lab = np.empty(npx, dtype=np.int64)
    while unlabeled > 0:
        if n_front == 0:
            # no labelled pixel reachable: open a new segment at the first free pixel
            for p in range(npx):
                if labels[p // W, p % W] < 0:
                    labels[p // W, p % W] = n_clusters
                    n_clusters += 1
                    frontier[0] = p
                    n_front = 1
                    unlabeled -= 1
                    break
            continue
        n_cand = 0
        for i in range(n_front):
            p = frontier[i]
            py = p // W
            px = p - py * W
            for k in range(n_off):
                yy = py + offsets[k, 0]
                xx = px + offsets[k, 1]
                if 0 <= yy < H and 0 <= xx < W and labels[yy, xx] < 0:
                    q = yy * W + xx
                    if not mark[q]:
                        mark[q] = True
                        cand[n_cand] = q
                        n_cand += 1
        for i in range(n_cand):
            q = cand[i]
            qy = q // W
            qx = q - qy * W
            best = -1
            best_d = np.inf
            for k in range(n_off):
                yy = qy + offsets[k, 0]
                xx = qx + offsets[k, 1]
                if 0 <= yy < H and 0 <= xx < W and labels[yy, xx] >= 0:
                    d = _dist2(img, qy, qx, yy, xx)
                    lab = labels[yy, xx]
                    if d < best_d or (d == best_d and lab < best):
                        best_d = d
                        best = lab
            cand_lab[i] = best
        for i in range(n_cand):
            q = cand[i]
            labels[q // W, q % W] = cand_lab[i]
            frontier[i] = q
        n_front = n_cand
        unlabeled -= n_cand

    # renumber by first appearance in row-major order
    remap = np.full(n_clusters, -1, dtype=np.int64)
    nxt = 0
    for y in range(H):
        for x in range(W):
            lab = labels[y, x]
            if remap[lab] < 0:
                remap[lab] = nxt
                nxt += 1
            labels[y, x] = remap[lab]
    return labels, nxt


def segment(image: np.ndarray, params: SegmentationParams | None = None) -> SegmentationMap:
    """Segment an ``H x W x 3`` RGB image with values in [0, 1]."""
    params = params or SegmentationParams()
    img = np.ascontiguousarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an HxWx3 image, got shape {img.shape}")
    labels, n = _segment_kernel(
        img, float(params.color_eps) ** 2, int(params.min_pts), neighbor_offsets(params.connectivity)
    )
    return SegmentationMap(labels, int(n))


def segment_sizes(segmap: SegmentationMap) -> list[tuple[int, int]]:
    counts = np.bincount(segmap.labels.ravel(), minlength=segmap.num_segments)
    return [(i, int(c)) for i, c in enumerate(counts)]


def core_mask(image: np.ndarray, params: SegmentationParams) -> np.ndarray:
    """Core-pixel mask; exposed for diagnostics and tests."""
    img = np.asarray(image, dtype=np.float64)
    H, W = img.shape[:2]
    eps2 = float(params.color_eps) ** 2
    counts = np.zeros((H, W), dtype=np.int64)
    for dy, dx in neighbor_offsets(params.connectivity):
        shifted = np.full_like(img, np.inf)
        ys = slice(max(dy, 0), H + min(dy, 0))
        yd = slice(max(-dy, 0), H + min(-dy, 0))
        xs = slice(max(dx, 0), W + min(dx, 0))
        xd = slice(max(-dx, 0), W + min(-dx, 0))
        shifted[yd, xd] = img[ys, xs]
        with np.errstate(invalid="ignore"):
            d = img - shifted
            counts += ((d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]) <= eps2)
    return counts >= params.min_pts

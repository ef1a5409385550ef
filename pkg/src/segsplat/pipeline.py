"""End-to-end initialisation: segment, label, cluster, sample, initialise."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import CameraView, DensePointSet
from .downsample import FilteredCloud, SamplerConfig, UnionCloud, downsample, reduction_ratio
from .labeling import ClusterPartition, build_partition, label_cloud
from .mdbscan import Connectivity, SegmentationMap, SegmentationParams, segment
from .splat.gaussians import GaussianSet, init_gaussians
from .splat.optim import OptimRates


@dataclass
class PipelineConfig:
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    label_dim: int = 3
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    iterations: int = 300
    rates: OptimRates = field(default_factory=OptimRates)
    refine_poses: bool = True
    workers: int = 1
    out: Path = Path("out")

    def __post_init__(self):
        if self.label_dim < 2:
            raise ValueError("label dimension must be at least 2")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    _KEYS = {
        "color_eps": float, "min_pts": int, "connectivity": str, "label_dim": int,
        "n_max": int, "seed": int, "iterations": int, "refine_poses": None, "workers": int,
        "out": Path, "lr_positions": float, "lr_log_scales": float, "lr_rotations": float,
        "lr_opacity_logits": float, "lr_colors": float, "lr_poses": float,
    }

    @classmethod
    def from_mapping(cls, kv: dict, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        """Build from flat ``key -> value`` pairs (strings or typed values)."""
        cfg = base or cls()
        unknown = set(kv) - set(cls._KEYS)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")

        def get(key, default):
            if key not in kv or kv[key] is None:
                return default
            conv = cls._KEYS[key]
            val = kv[key]
            if conv is None:
                return val if isinstance(val, bool) else str(val).lower() in ("1", "true", "yes", "on")
            return conv(val)

        seg = SegmentationParams(
            get("color_eps", cfg.segmentation.color_eps),
            get("min_pts", cfg.segmentation.min_pts),
            Connectivity(get("connectivity", cfg.segmentation.connectivity.value)),
        )
        rates = OptimRates(**{
            f.name: get(f"lr_{f.name}", getattr(cfg.rates, f.name)) for f in fields(OptimRates)
        })
        return replace(
            cfg,
            segmentation=seg,
            label_dim=get("label_dim", cfg.label_dim),
            sampler=SamplerConfig(get("n_max", cfg.sampler.n_max), get("seed", cfg.sampler.seed)),
            iterations=get("iterations", cfg.iterations),
            rates=rates,
            refine_poses=get("refine_poses", cfg.refine_poses),
            workers=get("workers", cfg.workers),
            out=get("out", cfg.out),
        )

    def to_text(self) -> str:
        rows = {
            "color_eps": self.segmentation.color_eps,
            "min_pts": self.segmentation.min_pts,
            "connectivity": self.segmentation.connectivity.value,
            "label_dim": self.label_dim,
            "n_max": self.sampler.n_max,
            "seed": self.sampler.seed,
            "iterations": self.iterations,
            "refine_poses": str(self.refine_poses).lower(),
            "workers": self.workers,
            "out": self.out,
        }
        rows.update({f"lr_{f.name}": getattr(self.rates, f.name) for f in fields(OptimRates)})
        return "".join(f"{k} = {v}\n" for k, v in rows.items())


@dataclass
class PipelineResult:
    segmaps: dict[int, SegmentationMap]
    label_vectors: np.ndarray
    partition: ClusterPartition
    cloud: UnionCloud
    filtered: FilteredCloud
    gaussians: GaussianSet
    timings: dict[str, float]

    @property
    def reduction_ratio(self) -> float:
        return reduction_ratio(len(self.cloud), len(self.filtered))

    def report(self) -> dict:
        return {
            "points_before": len(self.cloud),
            "points_after": len(self.filtered),
            "clusters": len(self.partition),
            "reduction_ratio": self.reduction_ratio,
            "segments_per_view": {str(k): m.num_segments for k, m in sorted(self.segmaps.items())},
            "seconds": {k: round(v, 6) for k, v in self.timings.items()},
        }


def segment_views(views: Sequence[CameraView], params: SegmentationParams, workers: int = 1) -> dict[int, SegmentationMap]:
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as ex:
            maps = list(ex.map(lambda v: segment(v.image, params), views))
    else:
        maps = [segment(v.image, params) for v in views]
    return {v.index: m for v, m in zip(views, maps)}


def run_pipeline(
    views: Sequence[CameraView],
    dense_points: Sequence[DensePointSet],
    config: PipelineConfig | None = None,
    segmaps: dict[int, SegmentationMap] | None = None,
) -> PipelineResult:
    config = config or PipelineConfig()
    cameras = {v.index: v for v in views}
    timings = {}

    t0 = time.perf_counter()
    if segmaps is None:
        segmaps = segment_views(views, config.segmentation, config.workers)
    timings["segment"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    lv = label_cloud(dense_points, segmaps, cameras, config.label_dim, total_views=len(views))
    timings["label"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    partition = build_partition(lv)
    timings["cluster"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cloud = UnionCloud.from_point_sets(dense_points)
    filtered = downsample(partition, cloud, config.sampler)
    timings["downsample"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    gaussians = init_gaussians(filtered)
    timings["init"] = time.perf_counter() - t0
    return PipelineResult(segmaps, lv, partition, cloud, filtered, gaussians, timings)


def label_dimension_sweep(
    views: Sequence[CameraView],
    dense_points: Sequence[DensePointSet],
    dims: Sequence[int],
    config: PipelineConfig | None = None,
) -> list[dict]:
    """Cluster and retained-point counts for several label dimensions.

    Segmentation is shared across rows. Context lists for increasing
    dimensions are nested, so cluster counts can only grow.
    """
    config = config or PipelineConfig()
    segmaps = segment_views(views, config.segmentation, config.workers)
    rows = []
    for d in dims:
        res = run_pipeline(views, dense_points, replace(config, label_dim=d), segmaps=segmaps)
        rows.append({
            "label_dim": d,
            "clusters": len(res.partition),
            "points_before": len(res.cloud),
            "points_after": len(res.filtered),
            "reduction_ratio": res.reduction_ratio,
        })
    return rows


def format_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    keys = list(rows[0])
    cells = [[_cell(r[k]) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    line = lambda vals: "  ".join(v.rjust(w) for v, w in zip(vals, widths))  # noqa: E731
    return "\n".join([line(keys), line(["-" * w for w in widths])] + [line(c) for c in cells]) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return "inf" if np.isinf(v) else f"{v:.4f}"
    return str(v)

"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .core import CameraPose
from .pipeline import PipelineConfig, format_table, label_dimension_sweep, run_pipeline, segment_views
from .splat import metrics
from .splat.optim import NumericalError, optimize
from .splat.raster import render
from .synth import Profile, SceneSpec, dense_points_from_depth, generate, reference_scene

log = logging.getLogger("segsplat")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="RNG seed")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--config", type=Path, default=None, help="flat key = value config file")
    p.add_argument("--workers", type=int, default=None, help="threads for per-view work")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="segsplat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic scene")
    p.add_argument("--profile", choices=[x.value for x in Profile], default="mixed")
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--holdout", type=int, default=0, help="extra test views between training views")
    p.add_argument("--size", type=int, default=64, help="image width and height")
    p.add_argument("--noise", type=float, default=0.0, help="pixel noise standard deviation")

    p = sub.add_parser("segment", parents=[common], help="segment every manifest image")
    p.add_argument("--manifest", type=Path, required=True)
    _seg_args(p)

    p = sub.add_parser("pipeline", parents=[common], help="segment, label, downsample, initialise")
    p.add_argument("--manifest", type=Path, required=True)
    _seg_args(p)
    p.add_argument("--label-dim", type=int, default=None)
    p.add_argument("--n-max", type=int, default=None)
    p.add_argument("--sweep-label-dims", default=None, help="comma list, e.g. 3,6,12")
    p.add_argument("--dump-labels", action="store_true", help="write per-point label records")

    p = sub.add_parser("train", parents=[common], help="optimise Gaussians and poses")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--gaussians", type=Path, required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--freeze-poses", action="store_true")

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM on held-out views")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--gaussians", type=Path, nargs="+", required=True, help="one PLY, or two to compare")
    p.add_argument("--holdout", default=None, help="comma list of view indices (default: test split)")

    p = sub.add_parser("render", parents=[common], help="render Gaussians at manifest views")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--gaussians", type=Path, required=True)
    p.add_argument("--views", default=None, help="comma list of view indices (default: all)")
    return parser


def _seg_args(p):
    p.add_argument("--color-eps", type=float, default=None)
    p.add_argument("--min-pts", type=int, default=None)
    p.add_argument("--connectivity", choices=["four", "eight"], default=None)


def _config(args) -> PipelineConfig:
    kv = io.read_config(args.config) if args.config else {}
    cfg = PipelineConfig.from_mapping(kv)
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "workers": args.workers,
        "color_eps": getattr(args, "color_eps", None),
        "min_pts": getattr(args, "min_pts", None),
        "connectivity": getattr(args, "connectivity", None),
        "label_dim": getattr(args, "label_dim", None),
        "n_max": getattr(args, "n_max", None),
        "iterations": getattr(args, "iterations", None),
    }
    cfg = PipelineConfig.from_mapping({k: v for k, v in overrides.items() if v is not None}, base=cfg)
    if getattr(args, "freeze_poses", False):
        cfg = replace(cfg, refine_poses=False)
    return cfg


def _parse_indices(text: str) -> list[int]:
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad index list {text!r}") from None
    if not out:
        raise UsageError("empty view list")
    return out


# --- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.views < 2:
        raise UsageError("--views must be at least 2")
    if not 0 <= args.holdout <= args.views - 1:
        raise UsageError("--holdout must be between 0 and views - 1")
    if args.size < 8:
        raise UsageError("--size must be at least 8")
    seed = args.seed if args.seed is not None else 0
    out = io.ensure_dir(args.out or Path("out"))
    spec = reference_scene(args.profile, args.views, seed=seed, holdout_views=args.holdout)
    spec = replace(spec, width=args.size, height=args.size, focal=float(args.size), noise_std=args.noise)
    bundle = generate(spec)
    write_bundle(bundle, out)
    print(f"wrote {len(bundle.views)} training and {len(bundle.holdout)} holdout views to {out}")
    return EXIT_OK


def write_bundle(bundle, out: Path) -> io.SceneManifest:
    (out / "images").mkdir(exist_ok=True)
    (out / "depth").mkdir(exist_ok=True)
    records = []
    all_views = [(v, d, "train") for v, d in zip(bundle.views, bundle.depth_maps)]
    all_views += [(v, d, "test") for v, d in zip(bundle.holdout, bundle.holdout_depths)]
    for view, depth, split in all_views:
        img = f"images/view_{view.index:03d}.png"
        dep = f"depth/view_{view.index:03d}.depth"
        io.write_png(out / img, view.image)
        io.write_depth(out / dep, depth)
        records.append(io.ViewRecord(view.index, img, view.intrinsics, view.pose, dep, split))
    manifest = io.SceneManifest(bundle.spec.name, records, root=out)
    io.write_manifest(out / "manifest.txt", manifest)
    return manifest


def _load_training(manifest: io.SceneManifest, need_depth: bool):
    recs = manifest.train_records()
    if len(recs) < 1:
        raise io.FormatError("manifest has no training views")
    views = [manifest.load_view(r) for r in recs]
    dense = None
    if need_depth:
        dense = [dense_points_from_depth(v, manifest.load_depth(r)) for v, r in zip(views, recs)]
    return views, dense


def cmd_segment(args) -> int:
    cfg = _config(args)
    manifest = io.read_manifest(args.manifest)
    views = [manifest.load_view(r) for r in manifest.views]
    out = io.ensure_dir(cfg.out / "seg")
    for idx, segmap in segment_views(views, cfg.segmentation, cfg.workers).items():
        io.write_label_png(out / f"view_{idx:03d}.png", segmap)
        print(f"view {idx}: {segmap.num_segments} segments")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    manifest = io.read_manifest(args.manifest)
    views, dense = _load_training(manifest, need_depth=True)
    out = io.ensure_dir(cfg.out)

    if args.sweep_label_dims:
        dims = _parse_indices(args.sweep_label_dims)
        if max(dims) > len(views):
            raise UsageError("label dimension exceeds view count")
        rows = label_dimension_sweep(views, dense, dims, cfg)
        table = format_table(rows)
        (out / "label_dim_sweep.txt").write_text(table)
        print(table, end="")
        return EXIT_OK
    if cfg.label_dim > len(views):
        raise UsageError("label dimension exceeds view count")

    res = run_pipeline(views, dense, cfg)
    seg_dir = io.ensure_dir(out / "seg")
    for idx, segmap in res.segmaps.items():
        io.write_label_png(seg_dir / f"view_{idx:03d}.png", segmap)
    io.write_point_ply(out / "filtered.ply", res.filtered.positions, res.filtered.colors)
    io.write_gaussian_ply(out / "gaussians_init.ply", res.gaussians)
    with open(out / "clusters.txt", "w") as fh:
        fh.write("# label_vector retained\n")
        for key, count in res.filtered.per_cluster_counts:
            fh.write(f"{' '.join(map(str, key))} {count}\n")
    if args.dump_labels:
        from .labeling import dump_label_records

        (out / "labels.txt").write_text(dump_label_records(dense, res.label_vectors))
    report = res.report()
    report.update({"label_dim": cfg.label_dim, "n_max": cfg.sampler.n_max, "seed": cfg.sampler.seed,
                   "gaussian_ply_bytes": (out / "gaussians_init.ply").stat().st_size})
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if cfg.iterations < 1:
        raise UsageError("--iterations must be at least 1")
    manifest = io.read_manifest(args.manifest)
    views, _ = _load_training(manifest, need_depth=False)
    g0 = io.read_gaussian_ply(args.gaussians)
    out = io.ensure_dir(cfg.out)
    losses = []
    try:
        g, poses, _ = optimize(
            g0, views, cfg.iterations, cfg.rates, refine_poses=cfg.refine_poses,
            workers=cfg.workers, callback=lambda it, loss: losses.append(loss),
        )
    except NumericalError:
        io.write_csv_losses(out / "loss.csv", losses)
        raise
    io.write_csv_losses(out / "loss.csv", losses)
    io.write_gaussian_ply(out / "gaussians_final.ply", g)
    refined = io.SceneManifest(
        manifest.scene,
        [replace(manifest.record(v.index), pose=p, image=str((manifest.root / manifest.record(v.index).image).resolve()), depth=None)
         for v, p in zip(views, poses)],
    )
    io.write_manifest(out / "poses.txt", refined)
    print(f"loss {losses[0]:.6g} -> {losses[-1]:.6g} over {len(losses)} iterations")
    return EXIT_OK


def evaluate(manifest: io.SceneManifest, g, indices) -> list[dict]:
    rows = []
    for idx in indices:
        view = manifest.load_view(manifest.record(idx))
        img = render(g, view).rgb
        rows.append({"view": idx, "psnr": metrics.psnr(img, view.image), "ssim": metrics.ssim(img, view.image)})
    return rows


def cmd_eval(args) -> int:
    manifest = io.read_manifest(args.manifest)
    if args.holdout is not None:
        indices = _parse_indices(args.holdout)
    else:
        indices = [r.index for r in manifest.views if r.split == "test"]
    if not indices:
        raise UsageError("no holdout views given")
    for idx in indices:
        try:
            manifest.record(idx)
        except KeyError:
            raise UsageError(f"view {idx} is not in the manifest") from None
    if len(args.gaussians) > 2:
        raise UsageError("pass one or two Gaussian PLY files")
    sets = [io.read_gaussian_ply(p) for p in args.gaussians]
    results = [evaluate(manifest, g, indices) for g in sets]
    sizes = [p.stat().st_size for p in args.gaussians]
    rows = []
    for k, idx in enumerate(indices):
        row = {"view": idx}
        for j, res in enumerate(results):
            tag = "" if len(results) == 1 else "ABCD"[j] + "_"
            row[f"{tag}psnr"] = res[k]["psnr"]
            row[f"{tag}ssim"] = res[k]["ssim"]
        if len(results) == 2:
            row["d_psnr"] = row["B_psnr"] - row["A_psnr"]
            row["d_ssim"] = row["B_ssim"] - row["A_ssim"]
        rows.append(row)
    table = format_table(rows)
    size_lines = "".join(
        f"{'ABCD'[j] + ' ' if len(sizes) > 1 else ''}size_bytes {s} gaussians {g.count} ({p})\n"
        for j, (s, g, p) in enumerate(zip(sizes, sets, args.gaussians))
    )
    if len(sizes) == 2:
        size_lines += f"size_ratio {sizes[1] / sizes[0]:.4f}\n"
    text = table + size_lines
    if args.out is not None:
        io.ensure_dir(args.out)
        (args.out / "metrics.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_render(args) -> int:
    manifest = io.read_manifest(args.manifest)
    g = io.read_gaussian_ply(args.gaussians)
    indices = _parse_indices(args.views) if args.views else [r.index for r in manifest.views]
    out = io.ensure_dir(args.out or Path("out"))
    for idx in indices:
        try:
            rec = manifest.record(idx)
        except KeyError:
            raise UsageError(f"view {idx} is not in the manifest") from None
        view = manifest.load_view(rec)
        io.write_png(out / f"render_{idx:03d}.png", render(g, view).rgb)
    print(f"rendered {len(indices)} views to {out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "segment": cmd_segment, "pipeline": cmd_pipeline,
    "train": cmd_train, "eval": cmd_eval, "render": cmd_render,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.FormatError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

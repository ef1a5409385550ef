"""Procedural multi-view scenes with exact depth.

Scenes are built from textured rectangles (boxes are six of them) and are
ray cast at pixel centres with nearest-hit shading, so every pixel lifts to a
point lying exactly on a known surface. The first camera defines the world
frame; the remaining cameras sit on a horizontal arc aimed at the scene
centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import CameraIntrinsics, CameraPose, CameraView, DensePointSet, backproject_pixels

MAX_REGION_CELLS = 1 << 20


@dataclass(frozen=True)
class Pattern:
    """Surface colouring in face-local units.

    ``solid`` uses ``colors[0]``; ``checker`` alternates ``colors[0]`` and
    ``colors[1]``; ``palette`` draws one random colour per cell.
    """

    kind: str = "solid"
    colors: tuple = ((0.5, 0.5, 0.5),)
    cell: float = 1.0

    def __post_init__(self):
        if self.kind not in ("solid", "checker", "palette"):
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if self.kind != "solid" and not self.cell > 0:
            raise ValueError("cell size must be positive")
        if self.kind == "checker" and len(self.colors) < 2:
            raise ValueError("checker pattern needs two colours")


@dataclass(frozen=True)
class Rect:
    origin: tuple
    edge_u: tuple
    edge_v: tuple
    pattern: Pattern = Pattern()

    def __post_init__(self):
        eu = np.asarray(self.edge_u, dtype=np.float64)
        ev = np.asarray(self.edge_v, dtype=np.float64)
        if np.linalg.norm(eu) <= 0 or np.linalg.norm(ev) <= 0:
            raise ValueError("rectangle edges must have positive length")
        if abs(eu @ ev) > 1e-9 * np.linalg.norm(eu) * np.linalg.norm(ev):
            raise ValueError("rectangle edges must be perpendicular")


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple
    pattern: Pattern = Pattern()
    yaw_deg: float = 0.0

    def __post_init__(self):
        if min(self.size) <= 0:
            raise ValueError("box extents must be positive")

    def axes(self) -> np.ndarray:
        a = np.deg2rad(self.yaw_deg)
        c, s = np.cos(a), np.sin(a)
        return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])

    def faces(self) -> list[Rect]:
        ax = self.axes()
        half = 0.5 * np.asarray(self.size, dtype=np.float64)
        ctr = np.asarray(self.center, dtype=np.float64)
        out = []
        for k in range(3):
            i, j = [m for m in range(3) if m != k]
            eu = ax[i] * 2 * half[i]
            ev = ax[j] * 2 * half[j]
            for sign in (-1.0, 1.0):
                origin = ctr + sign * ax[k] * half[k] - ax[i] * half[i] - ax[j] * half[j]
                out.append(Rect(tuple(origin), tuple(eu), tuple(ev), self.pattern))
        return out

    def contains(self, p: np.ndarray) -> bool:
        local = self.axes() @ (np.asarray(p, dtype=np.float64) - np.asarray(self.center))
        return bool(np.all(np.abs(local) < 0.5 * np.asarray(self.size)))


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    n_views: int = 3
    holdout_views: int = 0
    width: int = 64
    height: int = 64
    focal: float = 64.0
    radius: float = 4.0
    span_deg: float = 30.0
    seed: int = 0
    noise_std: float = 0.0
    name: str = "scene"

    def __post_init__(self):
        if self.n_views < 2:
            raise ValueError("a scene needs at least 2 views")
        if self.width < 8 or self.height < 8:
            raise ValueError("images must be at least 8x8")
        if not 0 <= self.holdout_views <= self.n_views - 1:
            raise ValueError("holdout views must fit between training views")
        if not self.primitives:
            raise ValueError("scene has no primitives")


@dataclass
class SyntheticBundle:
    spec: SceneSpec
    views: list[CameraView]
    depth_maps: list[np.ndarray]
    dense_points: list[DensePointSet]
    region_ids: list[np.ndarray]
    holdout: list[CameraView] = field(default_factory=list)
    holdout_depths: list[np.ndarray] = field(default_factory=list)
    holdout_region_ids: list[np.ndarray] = field(default_factory=list)
    faces: list[Rect] = field(default_factory=list, repr=False)


class Profile(str, Enum):
    FLAT_DOMINANT = "flat_dominant"
    TEXTURE_DOMINANT = "texture_dominant"
    MIXED = "mixed"


SKY = (0.45, 0.65, 0.9)


def _q(c) -> tuple:
    """Snap a colour to the 8-bit grid so PNG round trips are lossless."""
    return tuple(float(x) for x in np.round(np.asarray(c, dtype=np.float64) * 255.0) / 255.0)


def _backdrop(z: float = 14.0, half: float = 40.0, color=SKY) -> Rect:
    return Rect((-half, -half, z), (2 * half, 0.0, 0.0), (0.0, 2 * half, 0.0), Pattern("solid", (color,)))


def reference_scene(profile: Profile | str, n_views: int = 3, seed: int = 0, holdout_views: int = 0) -> SceneSpec:
    """Frozen scenes used by the acceptance suite."""
    profile = Profile(profile)
    if profile is Profile.FLAT_DOMINANT:
        prims = (
            _backdrop(),
            Box((0.0, 0.3, 4.0), (0.9, 0.9, 0.9), Pattern("palette", cell=0.25), yaw_deg=20.0),
            Box((-0.9, 0.6, 4.6), (0.5, 0.5, 0.5), Pattern("solid", ((0.8, 0.3, 0.2),))),
        )
    elif profile is Profile.TEXTURE_DOMINANT:
        prims = (
            _backdrop(),
            Rect((-8.0, -5.0, 5.5), (16.0, 0.0, 0.0), (0.0, 10.0, 0.0), Pattern("palette", cell=0.25)),
        )
    else:
        prims = (
            _backdrop(),
            Rect((-8.0, 0.0, 5.5), (16.0, 0.0, 0.0), (0.0, 5.0, 0.0), Pattern("palette", cell=0.25)),
            Box((0.4, -0.5, 4.2), (0.8, 0.8, 0.8), Pattern("checker", ((0.95, 0.9, 0.2), (0.2, 0.2, 0.6)), cell=0.4), yaw_deg=30.0),
        )
    return SceneSpec(prims, n_views=n_views, holdout_views=holdout_views, seed=seed, name=profile.value)


def arc_poses(spec: SceneSpec) -> tuple[list[CameraPose], list[CameraPose]]:
    """Training and holdout poses on the arc; view 1 is the identity."""
    span = np.deg2rad(spec.span_deg)
    train = np.linspace(0.0, span, spec.n_views)
    gaps = [int(np.floor((g + 0.5) * (spec.n_views - 1) / spec.holdout_views)) for g in range(spec.holdout_views)]
    hold = [0.5 * (train[g] + train[g + 1]) for g in gaps]
    return [_arc_pose(spec.radius, a) for a in train], [_arc_pose(spec.radius, a) for a in hold]


def _arc_pose(radius: float, angle: float) -> CameraPose:
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
    centroid = np.array([0.0, 0.0, radius])
    center = centroid - radius * np.array([s, 0.0, c])
    return CameraPose(R, -R @ center)


def expand_faces(primitives: Sequence) -> list[Rect]:
    faces: list[Rect] = []
    for p in primitives:
        faces.extend(p.faces() if isinstance(p, Box) else [p])
    return faces


def _face_tables(faces: Sequence[Rect], seed: int):
    """Per-face cell grid sizes, region-id offsets and palette tables."""
    dims, offsets, palettes = [], [], []
    base = 0
    for f_idx, f in enumerate(faces):
        pat = f.pattern
        if pat.kind == "solid":
            nu = nv = 1
        else:
            nu = int(np.ceil(np.linalg.norm(f.edge_u) / pat.cell - 1e-9))
            nv = int(np.ceil(np.linalg.norm(f.edge_v) / pat.cell - 1e-9))
        if nu * nv > MAX_REGION_CELLS:
            raise ValueError(f"face {f_idx} has too many pattern cells")
        dims.append((nu, nv))
        offsets.append(base)
        base += nu * nv
        if pat.kind == "palette":
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), f_idx]))
            palettes.append(rng.integers(0, 256, size=(nu, nv, 3)).astype(np.float64) / 255.0)
        else:
            palettes.append(None)
    return dims, offsets, palettes


def raycast(faces: Sequence[Rect], intr: CameraIntrinsics, pose: CameraPose, seed: int):
    """Nearest-hit ray cast at integer pixel centres.

    Returns ``(depth, image, region_ids)``.
    """
    H, W = intr.height, intr.width
    v, u = np.mgrid[0:H, 0:W].astype(np.float64)
    dirs_cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    dirs = dirs_cam @ pose.rotation  # rows: R^T d
    c = pose.center
    depth = np.full((H, W), np.inf)
    hit_face = np.full((H, W), -1, dtype=np.int64)
    hit_a = np.zeros((H, W))
    hit_b = np.zeros((H, W))
    for f_idx, f in enumerate(faces):
        o = np.asarray(f.origin, dtype=np.float64)
        eu = np.asarray(f.edge_u, dtype=np.float64)
        ev = np.asarray(f.edge_v, dtype=np.float64)
        n = np.cross(eu, ev)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((o - c) @ n) / denom
            p = c + s[..., None] * dirs
            a = (p - o) @ eu / (eu @ eu)
            b = (p - o) @ ev / (ev @ ev)
        ok = (np.abs(denom) > 1e-12) & (s > 1e-9) & (a >= 0) & (a < 1) & (b >= 0) & (b < 1) & (s < depth)
        depth = np.where(ok, s, depth)
        hit_face = np.where(ok, f_idx, hit_face)
        hit_a = np.where(ok, a, hit_a)
        hit_b = np.where(ok, b, hit_b)
    if np.any(hit_face < 0):
        raise ValueError("scene does not cover every pixel; enlarge the backdrop")

    dims, offsets, palettes = _face_tables(faces, seed)
    image = np.zeros((H, W, 3))
    region = np.zeros((H, W), dtype=np.int64)
    for f_idx, f in enumerate(faces):
        m = hit_face == f_idx
        if not m.any():
            continue
        pat = f.pattern
        nu, nv = dims[f_idx]
        iu = np.minimum((hit_a[m] * np.linalg.norm(f.edge_u) / (pat.cell if pat.kind != "solid" else np.inf)).astype(np.int64), nu - 1)
        iv = np.minimum((hit_b[m] * np.linalg.norm(f.edge_v) / (pat.cell if pat.kind != "solid" else np.inf)).astype(np.int64), nv - 1)
        region[m] = offsets[f_idx] + iu * nv + iv
        if pat.kind == "solid":
            image[m] = _q(pat.colors[0])
        elif pat.kind == "checker":
            cols = np.array([_q(pat.colors[0]), _q(pat.colors[1])])
            image[m] = cols[(iu + iv) % 2]
        else:
            image[m] = palettes[f_idx][iu, iv]
    return depth, image, region


def generate(spec: SceneSpec) -> SyntheticBundle:
    faces = expand_faces(spec.primitives)
    train_poses, hold_poses = arc_poses(spec)
    for pose in train_poses + hold_poses:
        for prim in spec.primitives:
            if isinstance(prim, Box) and prim.contains(pose.center):
                raise ValueError("a camera lies inside a primitive")
    intr = CameraIntrinsics(spec.focal, spec.focal, spec.width / 2, spec.height / 2, spec.width, spec.height)
    noise_rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 7919]))

    def render_view(index, pose):
        depth, img, region = raycast(faces, intr, pose, spec.seed)
        if spec.noise_std > 0:
            img = np.clip(img + noise_rng.normal(0.0, spec.noise_std, img.shape), 0.0, 1.0)
            img = np.round(img * 255.0) / 255.0
        return CameraView(index, intr, pose, img), depth, region

    bundle = SyntheticBundle(spec, [], [], [], [], faces=faces)
    for i, pose in enumerate(train_poses, start=1):
        view, depth, region = render_view(i, pose)
        bundle.views.append(view)
        bundle.depth_maps.append(depth)
        bundle.region_ids.append(region)
        bundle.dense_points.append(dense_points_from_depth(view, depth))
    for k, pose in enumerate(hold_poses):
        view, depth, region = render_view(spec.n_views + 1 + k, pose)
        bundle.holdout.append(view)
        bundle.holdout_depths.append(depth)
        bundle.holdout_region_ids.append(region)
    return bundle


def dense_points_from_depth(view: CameraView, depth: np.ndarray) -> DensePointSet:
    """Lift every pixel of ``view`` using ``depth``; row-major order."""
    H, W = depth.shape
    v, u = np.mgrid[0:H, 0:W]
    u = u.ravel()
    v = v.ravel()
    pts = backproject_pixels(u.astype(np.float64), v.astype(np.float64), depth.ravel(), view.intrinsics, view.pose)
    return DensePointSet(view.index, pts, view.image.reshape(-1, 3), np.stack([u, v], axis=1))


def face_distance(points: np.ndarray, face: Rect) -> np.ndarray:
    """Unsigned distance from points to the plane of ``face``."""
    eu = np.asarray(face.edge_u, dtype=np.float64)
    ev = np.asarray(face.edge_v, dtype=np.float64)
    n = np.cross(eu, ev)
    n /= np.linalg.norm(n)
    return np.abs((np.asarray(points) - np.asarray(face.origin)) @ n)


def region_face(region_ids: np.ndarray, faces: Sequence[Rect], seed: int = 0) -> np.ndarray:
    """Face index owning each region id."""
    _, offsets, _ = _face_tables(faces, seed)
    return np.searchsorted(np.asarray(offsets), region_ids, side="right") - 1

"""File formats: PLY clouds and splats, PNG images and label maps, depth
rasters, the scene manifest and flat ``key = value`` config files."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import CameraIntrinsics, CameraPose, CameraView
from .mdbscan import SegmentationMap
from .splat.gaussians import GaussianSet

SH_C0 = 0.28209479177387814
MANIFEST_VERSION = "1"


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


# --- PLY -----------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_NP_TO_PLY = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort", "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


def write_ply(path, fields: dict[str, np.ndarray], comments: tuple[str, ...] = ()) -> None:
    """Binary little-endian PLY with a single ``vertex`` element."""
    names = list(fields)
    n = len(next(iter(fields.values()))) if fields else 0
    dtype = np.dtype([(k, "<" + np.asarray(v).dtype.str[1:]) for k, v in fields.items()])
    data = np.empty(n, dtype=dtype)
    for k in names:
        data[k] = fields[k]
    header = ["ply", "format binary_little_endian 1.0"]
    header += [f"comment {c}" for c in comments]
    header.append(f"element vertex {n}")
    for k in names:
        header.append(f"property {_NP_TO_PLY[dtype[k].str[1:]]} {k}")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def read_ply(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise FormatError(f"{path}: not a PLY file")
        props = []
        count = None
        fmt = None
        in_vertex = False
        while True:
            line = fh.readline()
            if not line:
                raise FormatError(f"{path}: truncated header")
            tok = line.decode("ascii").split()
            if not tok or tok[0] == "comment":
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    count = int(tok[2])
                elif count is not None:
                    raise FormatError(f"{path}: only a single vertex element is supported")
            elif tok[0] == "property" and in_vertex:
                if tok[1] == "list":
                    raise FormatError(f"{path}: list properties are not supported")
                props.append((tok[2], "<" + _PLY_TYPES[tok[1]]))
            elif tok[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
        if count is None:
            raise FormatError(f"{path}: no vertex element")
        dtype = np.dtype(props)
        raw = fh.read(dtype.itemsize * count)
        if len(raw) != dtype.itemsize * count:
            raise FormatError(f"{path}: expected {count} vertices")
    data = np.frombuffer(raw, dtype=dtype)
    return {name: data[name].copy() for name, _ in props}


def write_point_ply(path, positions: np.ndarray, colors: np.ndarray) -> None:
    rgb = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
    pos = np.asarray(positions, dtype=np.float64)
    write_ply(path, {"x": pos[:, 0], "y": pos[:, 1], "z": pos[:, 2],
                     "red": rgb[:, 0], "green": rgb[:, 1], "blue": rgb[:, 2]})


def read_point_ply(path) -> tuple[np.ndarray, np.ndarray]:
    d = read_ply(path)
    try:
        pos = np.stack([d["x"], d["y"], d["z"]], axis=1).astype(np.float64)
        col = np.stack([d["red"], d["green"], d["blue"]], axis=1).astype(np.float64) / 255.0
    except KeyError as exc:
        raise FormatError(f"{path}: missing property {exc}") from None
    return pos, col


_SPLAT_FIELDS = (
    ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
    + ["red", "green", "blue"]
)


def write_gaussian_ply(path, g: GaussianSet) -> None:
    """3DGS-style vertex layout, all properties stored as doubles.

    Raw RGB is appended after the quaternion so colours survive a round
    trip bit-exactly; ``f_dc_*`` is kept for external viewers.
    """
    dc = (g.colors - 0.5) / SH_C0
    cols = [g.positions[:, 0], g.positions[:, 1], g.positions[:, 2],
            np.zeros(g.count), np.zeros(g.count), np.zeros(g.count),
            dc[:, 0], dc[:, 1], dc[:, 2], g.opacity_logits,
            g.log_scales[:, 0], g.log_scales[:, 1], g.log_scales[:, 2],
            g.rotations[:, 0], g.rotations[:, 1], g.rotations[:, 2], g.rotations[:, 3],
            g.colors[:, 0], g.colors[:, 1], g.colors[:, 2]]
    write_ply(path, {k: np.asarray(c, dtype=np.float64) for k, c in zip(_SPLAT_FIELDS, cols)})


def read_gaussian_ply(path) -> GaussianSet:
    d = read_ply(path)
    try:
        col = lambda *ks: np.stack([d[k] for k in ks], axis=1).astype(np.float64)  # noqa: E731
        return GaussianSet(
            col("x", "y", "z"),
            col("scale_0", "scale_1", "scale_2"),
            col("rot_0", "rot_1", "rot_2", "rot_3"),
            d["opacity"].astype(np.float64),
            col("red", "green", "blue") if "red" in d else col("f_dc_0", "f_dc_1", "f_dc_2") * SH_C0 + 0.5,
        )
    except KeyError as exc:
        raise FormatError(f"{path}: missing property {exc}") from None


# --- images ----------------------------------------------------------------

def write_png(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, optimize=False)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_label_png(path, segmap: SegmentationMap) -> None:
    """16-bit grayscale label image plus a ``num_segments=<n>`` sidecar."""
    if segmap.num_segments > 65535:
        raise FormatError(f"{segmap.num_segments} segments do not fit in 16 bits")
    Image.fromarray(segmap.labels.astype(np.uint16)).save(path)
    Path(str(path) + ".txt").write_text(f"num_segments={segmap.num_segments}\n")


def read_label_png(path) -> SegmentationMap:
    with Image.open(path) as im:
        labels = np.asarray(im).astype(np.int64)
    side = Path(str(path) + ".txt")
    n = int(labels.max()) + 1
    if side.exists():
        key, _, val = side.read_text().strip().partition("=")
        if key != "num_segments":
            raise FormatError(f"{side}: expected num_segments=<n>")
        n = int(val)
    return SegmentationMap(labels, n)


def write_depth(path, depth: np.ndarray) -> None:
    """Text header line ``DEPTH32 <width> <height>`` then little-endian float32 rows."""
    d = np.asarray(depth)
    H, W = d.shape
    with open(path, "wb") as fh:
        fh.write(f"DEPTH32 {W} {H}\n".encode("ascii"))
        fh.write(d.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    with open(path, "rb") as fh:
        tok = fh.readline().decode("ascii").split()
        if len(tok) != 3 or tok[0] != "DEPTH32":
            raise FormatError(f"{path}: bad depth header")
        W, H = int(tok[1]), int(tok[2])
        raw = fh.read()
    if len(raw) != 4 * W * H:
        raise FormatError(f"{path}: expected {W}x{H} float32 values")
    return np.frombuffer(raw, dtype="<f4").reshape(H, W).astype(np.float64)


# --- manifest ----------------------------------------------------------------

@dataclass
class ViewRecord:
    index: int
    image: str
    intrinsics: CameraIntrinsics
    pose: CameraPose
    depth: str | None = None
    split: str = "train"


@dataclass
class SceneManifest:
    scene: str
    views: list[ViewRecord]
    units: str = "arbitrary scene units"
    root: Path = field(default_factory=Path)

    def train_records(self) -> list[ViewRecord]:
        return [v for v in self.views if v.split == "train"]

    def record(self, index: int) -> ViewRecord:
        for v in self.views:
            if v.index == index:
                return v
        raise KeyError(index)

    def load_view(self, rec: ViewRecord) -> CameraView:
        img = read_png(self.root / rec.image)
        if img.shape[:2] != (rec.intrinsics.height, rec.intrinsics.width):
            raise FormatError(f"view {rec.index}: image size does not match intrinsics")
        return CameraView(rec.index, rec.intrinsics, rec.pose, img)

    def load_depth(self, rec: ViewRecord) -> np.ndarray:
        if rec.depth is None:
            raise FormatError(
                f"view {rec.index} has no depth; generate a scene with `synth` or supply dense depth"
            )
        d = read_depth(self.root / rec.depth)
        if d.shape != (rec.intrinsics.height, rec.intrinsics.width):
            raise FormatError(f"view {rec.index}: depth size does not match intrinsics")
        return d


def _fmt(xs) -> str:
    return " ".join(repr(float(x)) for x in xs)


def write_manifest(path, manifest: SceneManifest) -> None:
    lines = [
        "# segsplat scene manifest",
        f"version = {MANIFEST_VERSION}",
        f"scene = {manifest.scene}",
        f"units = {manifest.units}",
    ]
    for v in manifest.views:
        k = v.intrinsics
        lines += [
            "",
            f"[view {v.index}]",
            f"split = {v.split}",
            f"image = {v.image}",
            f"intrinsics = {_fmt([k.fx, k.fy, k.cx, k.cy])} {k.width} {k.height}",
            f"rotation = {_fmt(v.pose.rotation.ravel())}",
            f"translation = {_fmt(v.pose.translation)}",
        ]
        if v.depth is not None:
            lines.append(f"depth = {v.depth}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> SceneManifest:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: manifest not found")
    header: dict[str, str] = {}
    blocks: list[tuple[int, dict[str, str]]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            tok = line[1:-1].split()
            if len(tok) != 2 or tok[0] != "view":
                raise FormatError(f"{path}:{lineno}: bad section {line!r}")
            blocks.append((int(tok[1]), {}))
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected key = value")
        (blocks[-1][1] if blocks else header)[key.strip()] = val.strip()
    if header.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {header.get('version')!r}")
    views = []
    for idx, kv in blocks:
        try:
            intr = kv["intrinsics"].split()
            k = CameraIntrinsics(float(intr[0]), float(intr[1]), float(intr[2]), float(intr[3]), int(intr[4]), int(intr[5]))
            R = np.array([float(x) for x in kv["rotation"].split()]).reshape(3, 3)
            t = np.array([float(x) for x in kv["translation"].split()])
            pose = CameraPose(R, t)
            rec = ViewRecord(idx, kv["image"], k, pose, kv.get("depth"), kv.get("split", "train"))
        except (KeyError, IndexError, ValueError) as exc:
            raise FormatError(f"{path}: view {idx}: {exc}") from None
        for ref in (rec.image, rec.depth):
            if ref is not None and not (path.parent / ref).exists():
                raise FormatError(f"{path}: view {idx}: missing file {ref}")
        views.append(rec)
    return SceneManifest(header.get("scene", "scene"), views, header.get("units", ""), path.parent)


# --- config ----------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected key = value")
        out[key.strip()] = val.strip()
    return out


def write_csv_losses(path, losses) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,loss\n")
        for i, v in enumerate(losses):
            fh.write(f"{i},{float(v)!r}\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"{p} is not writable")
    return p

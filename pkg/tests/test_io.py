import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segsplat import io
from segsplat.core import CameraIntrinsics, CameraPose
from segsplat.mdbscan import SegmentationMap
from segsplat.splat import GaussianSet
from conftest import random_pose


def random_gaussians(rng, n):
    q = rng.normal(size=(n, 4))
    return GaussianSet(
        rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), q / np.linalg.norm(q, axis=1, keepdims=True),
        rng.normal(size=n), rng.uniform(size=(n, 3)),
    )


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 50))
def test_gaussian_ply_bit_exact(tmp_path_factory, seed, n):
    path = tmp_path_factory.mktemp("ply") / "g.ply"
    g = random_gaussians(np.random.default_rng(seed), n)
    io.write_gaussian_ply(path, g)
    h = io.read_gaussian_ply(path)
    for name in ("positions", "log_scales", "rotations", "opacity_logits", "colors"):
        assert getattr(g, name).tobytes() == getattr(h, name).tobytes()


def test_gaussian_ply_size_proportional_to_count(tmp_path):
    rng = np.random.default_rng(0)
    sizes = []
    for n in (10, 20, 40):
        io.write_gaussian_ply(tmp_path / f"{n}.ply", random_gaussians(rng, n))
        sizes.append((tmp_path / f"{n}.ply").stat().st_size)
    per = (sizes[2] - sizes[1]) / 20
    assert per == (sizes[1] - sizes[0]) / 10 == 20 * 8


def test_gaussian_ply_dc_fallback(tmp_path):
    rng = np.random.default_rng(1)
    g = random_gaussians(rng, 5)
    dc = (g.colors - 0.5) / io.SH_C0
    fields = {"x": g.positions[:, 0], "y": g.positions[:, 1], "z": g.positions[:, 2],
              "f_dc_0": dc[:, 0], "f_dc_1": dc[:, 1], "f_dc_2": dc[:, 2], "opacity": g.opacity_logits}
    fields.update({f"scale_{i}": g.log_scales[:, i] for i in range(3)})
    fields.update({f"rot_{i}": g.rotations[:, i] for i in range(4)})
    io.write_ply(tmp_path / "x.ply", fields)
    np.testing.assert_allclose(io.read_gaussian_ply(tmp_path / "x.ply").colors, g.colors, atol=1e-14)


def test_point_ply_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    pos = rng.normal(size=(30, 3))
    col = rng.integers(0, 256, size=(30, 3)) / 255.0
    io.write_point_ply(tmp_path / "p.ply", pos, col)
    p2, c2 = io.read_point_ply(tmp_path / "p.ply")
    assert p2.tobytes() == pos.tobytes() and c2.tobytes() == col.tobytes()


def test_ply_header_layout(tmp_path):
    io.write_gaussian_ply(tmp_path / "g.ply", random_gaussians(np.random.default_rng(0), 2))
    head = (tmp_path / "g.ply").read_bytes().split(b"end_header\n")[0].decode()
    assert "format binary_little_endian 1.0" in head and "element vertex 2" in head
    assert "property double f_dc_0" in head and "property double rot_3" in head


def test_ply_errors(tmp_path):
    (tmp_path / "bad.ply").write_bytes(b"nope\n")
    with pytest.raises(io.FormatError):
        io.read_ply(tmp_path / "bad.ply")
    io.write_ply(tmp_path / "pts.ply", {"x": np.zeros(3)})
    with pytest.raises(io.FormatError):
        io.read_gaussian_ply(tmp_path / "pts.ply")


def test_png_lossless(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(7, 9, 3)) / 255.0
    io.write_png(tmp_path / "a.png", img)
    assert io.read_png(tmp_path / "a.png").tobytes() == img.tobytes()


def test_label_png_roundtrip(tmp_path):
    labels = np.random.default_rng(0).integers(0, 700, size=(12, 10))
    m = SegmentationMap(labels, 701)
    io.write_label_png(tmp_path / "s.png", m)
    back = io.read_label_png(tmp_path / "s.png")
    assert np.array_equal(back.labels, labels) and back.num_segments == 701


def test_depth_roundtrip(tmp_path):
    d = np.random.default_rng(0).uniform(1, 10, size=(5, 8)).astype(np.float32).astype(np.float64)
    io.write_depth(tmp_path / "d.depth", d)
    assert io.read_depth(tmp_path / "d.depth").tobytes() == d.tobytes()
    assert (tmp_path / "d.depth").read_bytes().startswith(b"DEPTH32 8 5\n")
    (tmp_path / "e.depth").write_bytes(b"DEPTH32 8 5\n\x00")
    with pytest.raises(io.FormatError):
        io.read_depth(tmp_path / "e.depth")


def test_manifest_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    intr = CameraIntrinsics(64.0, 64.5, 31.5, 32.25, 64, 48)
    for name in ("a.png", "b.png", "a.depth"):
        (tmp_path / name).write_bytes(b"")
    recs = [
        io.ViewRecord(1, "a.png", intr, CameraPose.identity(), "a.depth"),
        io.ViewRecord(2, "b.png", intr, random_pose(rng), None, "test"),
    ]
    io.write_manifest(tmp_path / "m.txt", io.SceneManifest("demo", recs, "metres"))
    back = io.read_manifest(tmp_path / "m.txt")
    assert back.scene == "demo" and back.units == "metres"
    for a, b in zip(recs, back.views):
        assert (a.index, a.image, a.intrinsics, a.depth, a.split) == (b.index, b.image, b.intrinsics, b.depth, b.split)
        assert a.pose.rotation.tobytes() == b.pose.rotation.tobytes()
        assert a.pose.translation.tobytes() == b.pose.translation.tobytes()
    assert [r.index for r in back.train_records()] == [1]
    with pytest.raises(io.FormatError, match="synth"):
        back.load_depth(back.record(2))


def test_manifest_errors(tmp_path):
    with pytest.raises(io.FormatError):
        io.read_manifest(tmp_path / "missing.txt")
    (tmp_path / "m.txt").write_text("version = 1\n[view 1]\nimage = nothere.png\n"
                                    "intrinsics = 1 1 0 0 4 4\nrotation = 1 0 0 0 1 0 0 0 1\ntranslation = 0 0 0\n")
    with pytest.raises(io.FormatError, match="missing file"):
        io.read_manifest(tmp_path / "m.txt")
    (tmp_path / "v.txt").write_text("version = 9\n")
    with pytest.raises(io.FormatError):
        io.read_manifest(tmp_path / "v.txt")


def test_config_and_losses(tmp_path):
    (tmp_path / "c.txt").write_text("# comment\ncolor_eps = 0.1  # inline\n\nn_max=64\n")
    assert io.read_config(tmp_path / "c.txt") == {"color_eps": "0.1", "n_max": "64"}
    io.write_csv_losses(tmp_path / "l.csv", [3.5, 1.25])
    assert (tmp_path / "l.csv").read_text() == "iteration,loss\n0,3.5\n1,1.25\n"

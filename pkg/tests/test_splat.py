import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from segsplat.core import CameraIntrinsics
from segsplat.splat import GaussianSet, init_from_points, init_gaussians, photometric_loss, psnr, render, ssim
from segsplat.splat.gaussians import logit, quat_to_rotmat
from segsplat.splat.optim import image_sq_error
from segsplat.splat.raster import ALPHA_MAX, project_gaussians, view_loss_and_grad
from conftest import five_splat_problem, gradient_errors, small_view


def splats(positions, scale=0.1, opacity=0.5, colors=None):
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(p)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1
    return GaussianSet(
        p, np.full((n, 3), np.log(scale)), rot, np.full(n, float(logit(opacity))),
        np.ones((n, 3)) if colors is None else np.asarray(colors, dtype=np.float64),
    )


# --- init --------------------------------------------------------------------

def test_tetrahedron_scales():
    tet = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) / np.sqrt(8)
    g = init_from_points(tet, np.zeros((4, 3)))
    np.testing.assert_allclose(np.exp(g.log_scales), 1.0, atol=1e-12)
    np.testing.assert_allclose(g.rotations, [[1, 0, 0, 0]] * 4)
    np.testing.assert_allclose(g.opacities, 0.1)


def test_colors_verbatim():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(10, 3))
    cols = np.tile([0.2, 0.4, 0.6], (10, 1))
    g = init_from_points(pts, cols)
    assert np.array_equal(g.colors, cols) and np.array_equal(g.positions, pts)


def test_knn_bruteforce_oracle():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, size=(100, 3))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    np.fill_diagonal(d, np.inf)
    ref = np.sort(d, axis=1)[:, :3].mean(axis=1)
    g = init_from_points(pts, np.zeros((100, 3)))
    np.testing.assert_allclose(np.exp(g.log_scales[:, 0]), ref, rtol=0, atol=1e-12)
    assert np.all(g.log_scales == g.log_scales[:, :1])


def test_few_points_fallback():
    pts = np.array([[0.0, 0, 0], [3, 4, 0]])
    g = init_from_points(pts, np.zeros((2, 3)))
    np.testing.assert_allclose(np.exp(g.log_scales), 0.05)
    with pytest.raises(ValueError):
        init_from_points(np.empty((0, 3)), np.empty((0, 3)))


def test_init_from_cloud_object(flat_bundle):
    from segsplat.pipeline import run_pipeline

    res = run_pipeline(flat_bundle.views, flat_bundle.dense_points)
    g = init_gaussians(res.filtered)
    assert g.count == len(res.filtered)


# --- rasterizer ----------------------------------------------------------------

def test_empty_set_renders_black():
    img = render(GaussianSet.empty(), small_view())
    assert not img.rgb.any() and not img.alpha.any()


def test_opaque_splat_symmetry():
    view = small_view(size=16)
    g = splats([[0.0, 0.0, 3.0]], scale=0.3, opacity=1 - 1e-9)
    img = render(g, view).rgb[..., 0]
    assert np.unravel_index(np.argmax(img), img.shape) == (8, 8)
    core = img[1:, 1:]  # centred on (8, 8) after dropping row/col 0
    np.testing.assert_allclose(core, core[::-1], atol=1e-6)
    np.testing.assert_allclose(core, core[:, ::-1], atol=1e-6)
    np.testing.assert_allclose(core, core.T, atol=1e-6)


def test_two_layer_compositing():
    view = small_view(size=16)
    g = splats([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]], opacity=0.5)
    img = render(g, view)
    assert img.rgb[8, 8, 0] == pytest.approx(0.75, abs=1e-12)
    assert img.alpha[8, 8] == pytest.approx(0.75, abs=1e-12)


def back_to_front(proj, H, W):
    """Reference compositor: walks the depth order backwards, no early exit."""
    img = np.zeros((H, W, 3))
    ys, xs = np.mgrid[0:H, 0:W]
    for gid in proj.order[::-1]:
        x0, x1, y0, y1 = proj.bbox[gid]
        inside = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
        dx, dy = xs - proj.means2d[gid, 0], ys - proj.means2d[gid, 1]
        a, b, c = proj.conics[gid]
        al = np.minimum(proj.opacities[gid] * np.exp(-0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy), ALPHA_MAX)
        al = np.where(inside, al, 0.0)[..., None]
        img = al * proj.colors[gid] + (1 - al) * img
    return img


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_front_and_back_compositing_agree(seed):
    g, views = five_splat_problem(seed)
    v = views[1]
    proj = project_gaussians(g, v.intrinsics, v.pose.rotation, v.pose.translation)
    ref = back_to_front(proj, 16, 16)
    out = render(g, v)
    np.testing.assert_allclose(out.rgb, ref, atol=1e-9)
    assert out.rgb.min() >= 0 and out.rgb.max() <= 1
    assert out.alpha.min() >= 0 and out.alpha.max() <= 1


def test_behind_camera_culled():
    g = splats([[0.0, 0.0, -2.0]], opacity=0.9)
    assert not render(g, small_view()).rgb.any()


def test_depth_ties_break_by_index():
    # equal depth: the lower index is composited first
    g = splats([[0.0, 0.0, 2.0], [0.0, 0.0, 2.0]], opacity=0.5, colors=[[1, 0, 0], [0, 1, 0]])
    px = render(g, small_view()).rgb[8, 8]
    assert px[0] == pytest.approx(0.5) and px[1] == pytest.approx(0.25)


def test_render_deterministic():
    g, views = five_splat_problem(3)
    a = render(g, views[0]).rgb
    b = render(g.copy(), views[0]).rgb
    assert a.tobytes() == b.tobytes()


def test_gradients_match_finite_differences():
    g, views = five_splat_problem(0)
    errs = gradient_errors(g, views)
    assert max(errs.values()) < 1e-3, errs


def test_quaternion_rotation_orthonormal():
    q = np.random.default_rng(0).normal(size=(20, 4))
    R = quat_to_rotmat(q / np.linalg.norm(q, axis=1, keepdims=True))
    np.testing.assert_allclose(R @ R.transpose(0, 2, 1), np.broadcast_to(np.eye(3), R.shape), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(R), 1.0)


# --- loss ----------------------------------------------------------------------

def test_loss_zero_for_own_render():
    g, views = five_splat_problem(1)
    own = [v.__class__(v.index, v.intrinsics, v.pose, render(g, v).rgb) for v in views]
    assert photometric_loss(g, own) == 0.0


def test_loss_black_vs_white():
    view = small_view(size=8, image=np.ones((8, 8, 3)))
    assert photometric_loss(GaussianSet.empty(), [view]) == 12 * 16
    assert image_sq_error(np.zeros((2, 2, 3)), np.ones((2, 2, 3))) == 12


def test_loss_naive_loop_oracle():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(5, 6, 3)), rng.uniform(size=(5, 6, 3))
    ref = 0.0
    for y in range(5):
        for x in range(6):
            for c in range(3):
                ref += (a[y, x, c] - b[y, x, c]) ** 2
    assert image_sq_error(a, b) == pytest.approx(ref, abs=1e-9)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        image_sq_error(np.zeros((2, 2, 3)), np.zeros((3, 2, 3)))
    intr = CameraIntrinsics(8, 8, 4, 4, 9, 8)
    with pytest.raises(ValueError):
        view_loss_and_grad(GaussianSet.empty(), intr, np.eye(3), np.zeros(3), np.zeros((8, 8, 3)))


# --- metrics -------------------------------------------------------------------

def test_metric_identities():
    img = np.random.default_rng(0).uniform(size=(16, 16, 3))
    assert psnr(img, img) == float("inf")
    assert ssim(img, img) == pytest.approx(1.0)


def test_psnr_closed_form():
    a = np.zeros((10, 10, 3))
    assert psnr(a, a + 0.1) == pytest.approx(20.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(11, 40), st.integers(11, 40))
def test_ssim_matches_skimage(seed, h, w):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(h, w, 3))
    b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
    ref = structural_similarity(
        a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0, channel_axis=2
    )
    assert abs(ssim(a, b) - ref) < 1e-6


def test_psnr_reference():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(size=(12, 12, 3)), rng.uniform(size=(12, 12, 3))
    from skimage.metrics import peak_signal_noise_ratio

    assert psnr(a, b) == pytest.approx(peak_signal_noise_ratio(a, b, data_range=1.0), abs=1e-6)


def test_metric_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))

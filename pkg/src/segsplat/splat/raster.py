"""CPU splatting rasterizer with an analytic backward pass.

Gaussians are projected with the local affine (EWA) approximation, sorted
front to back by camera depth and alpha-composited per pixel inside their
3-sigma bounding boxes. The backward pass walks the same lists back to front,
rebuilding transmittance by division, and returns gradients for every
Gaussian parameter and for the world-to-camera rotation and translation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..core import CameraIntrinsics, CameraView
from .gaussians import GaussianSet, covariances, quat_rotmat_vjp, sigmoid

NEAR = 0.01
BLUR = 0.3  # screen-space dilation added to every 2D covariance
ALPHA_MAX = 0.99
T_MIN = 1e-4
BOX_SIGMA = 3.0


@dataclass
class RenderedImage:
    rgb: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)


@dataclass
class Projection:
    """Screen-space Gaussians for one camera plus backward-pass intermediates."""

    means2d: np.ndarray
    conics: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    bbox: np.ndarray  # (n, 4) x0, x1, y0, y1 inclusive
    order: np.ndarray  # visible Gaussian ids, front to back
    pc: np.ndarray
    J: np.ndarray
    cov_cam: np.ndarray
    cov2d: np.ndarray
    cov3d: np.ndarray
    Rq: np.ndarray
    s2: np.ndarray
    qn: np.ndarray
    qnorm: np.ndarray
    R: np.ndarray
    visible: np.ndarray


def project_gaussians(g: GaussianSet, intr: CameraIntrinsics, R: np.ndarray, t: np.ndarray) -> Projection:
    n = g.count
    cov3d, Rq, s2, qn, qnorm = covariances(g)
    pc = g.positions @ R.T + t
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    front = z > NEAR
    zs = np.where(front, z, 1.0)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = intr.fx / zs
    J[:, 0, 2] = -intr.fx * x / zs**2
    J[:, 1, 1] = intr.fy / zs
    J[:, 1, 2] = -intr.fy * y / zs**2
    cov_cam = R @ cov3d @ R.T
    cov2d = J @ cov_cam @ J.transpose(0, 2, 1)
    cov2d[:, 0, 0] += BLUR
    cov2d[:, 1, 1] += BLUR
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    lam = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = BOX_SIGMA * np.sqrt(lam)
    means2d = np.stack([intr.fx * x / zs + intr.cx, intr.fy * y / zs + intr.cy], axis=1)
    with np.errstate(invalid="ignore"):
        x0 = np.maximum(0, np.ceil(means2d[:, 0] - radius))
        x1 = np.minimum(intr.width - 1, np.floor(means2d[:, 0] + radius))
        y0 = np.maximum(0, np.ceil(means2d[:, 1] - radius))
        y1 = np.minimum(intr.height - 1, np.floor(means2d[:, 1] + radius))
        visible = front & (det > 0) & (x0 <= x1) & (y0 <= y1) & np.isfinite(radius)
    bbox = np.zeros((n, 4), dtype=np.int64)
    bbox[visible] = np.stack([x0, x1, y0, y1], axis=1)[visible].astype(np.int64)
    ids = np.flatnonzero(visible)
    order = ids[np.argsort(z[ids], kind="stable")]
    return Projection(
        means2d, conics, sigmoid(g.opacity_logits), g.colors, bbox, order.astype(np.int64),
        pc, J, cov_cam, cov2d, cov3d, Rq, s2, qn, qnorm, R, visible,
    )


@numba.njit(cache=True, nogil=True)
def _forward_kernel(order, means2d, conics, opac, colors, bbox, H, W):
    img = np.zeros((H, W, 3))
    T = np.ones((H, W))
    last = np.full((H, W), -1, dtype=np.int64)
    for r in range(order.shape[0]):
        gid = order[r]
        mx = means2d[gid, 0]
        my = means2d[gid, 1]
        ca = conics[gid, 0]
        cb = conics[gid, 1]
        cc = conics[gid, 2]
        o = opac[gid]
        for py in range(bbox[gid, 2], bbox[gid, 3] + 1):
            dy = py - my
            for px in range(bbox[gid, 0], bbox[gid, 1] + 1):
                t = T[py, px]
                if t < T_MIN:
                    continue
                dx = px - mx
                power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                al = o * np.exp(power)
                if al > ALPHA_MAX:
                    al = ALPHA_MAX
                w = al * t
                img[py, px, 0] += w * colors[gid, 0]
                img[py, px, 1] += w * colors[gid, 1]
                img[py, px, 2] += w * colors[gid, 2]
                T[py, px] = t * (1.0 - al)
                last[py, px] = r
    return img, T, last


@numba.njit(cache=True, nogil=True)
def _backward_kernel(order, means2d, conics, opac, colors, bbox, T_final, last, dL_dC):
    n = means2d.shape[0]
    H, W = T_final.shape
    g_mean = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_opac = np.zeros(n)
    g_color = np.zeros((n, 3))
    T = T_final.copy()
    S = np.zeros((H, W, 3))
    for r in range(order.shape[0] - 1, -1, -1):
        gid = order[r]
        mx = means2d[gid, 0]
        my = means2d[gid, 1]
        ca = conics[gid, 0]
        cb = conics[gid, 1]
        cc = conics[gid, 2]
        o = opac[gid]
        c0 = colors[gid, 0]
        c1 = colors[gid, 1]
        c2 = colors[gid, 2]
        for py in range(bbox[gid, 2], bbox[gid, 3] + 1):
            dy = py - my
            for px in range(bbox[gid, 0], bbox[gid, 1] + 1):
                if r > last[py, px]:
                    continue
                dx = px - mx
                power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                G = np.exp(power)
                al = o * G
                clamped = al > ALPHA_MAX
                if clamped:
                    al = ALPHA_MAX
                inv = 1.0 / (1.0 - al)
                tk = T[py, px] * inv
                w = al * tk
                d0 = dL_dC[py, px, 0]
                d1 = dL_dC[py, px, 1]
                d2 = dL_dC[py, px, 2]
                g_color[gid, 0] += d0 * w
                g_color[gid, 1] += d1 * w
                g_color[gid, 2] += d2 * w
                dL_dal = (
                    d0 * (c0 * tk - S[py, px, 0] * inv)
                    + d1 * (c1 * tk - S[py, px, 1] * inv)
                    + d2 * (c2 * tk - S[py, px, 2] * inv)
                )
                S[py, px, 0] += c0 * w
                S[py, px, 1] += c1 * w
                S[py, px, 2] += c2 * w
                T[py, px] = tk
                if clamped:
                    continue
                g_opac[gid] += dL_dal * G
                dL_dpow = dL_dal * al
                g_mean[gid, 0] += dL_dpow * (ca * dx + cb * dy)
                g_mean[gid, 1] += dL_dpow * (cb * dx + cc * dy)
                g_conic[gid, 0] += -0.5 * dL_dpow * dx * dx
                g_conic[gid, 1] += -dL_dpow * dx * dy
                g_conic[gid, 2] += -0.5 * dL_dpow * dy * dy
    return g_mean, g_conic, g_opac, g_color


def rasterize(proj: Projection, H: int, W: int):
    return _forward_kernel(
        proj.order, proj.means2d, proj.conics, proj.opacities,
        np.ascontiguousarray(proj.colors), proj.bbox, H, W,
    )


def render(g: GaussianSet, camera: CameraView) -> RenderedImage:
    """Composite ``g`` as seen by ``camera`` over a black background."""
    return render_pose(g, camera.intrinsics, camera.pose.rotation, camera.pose.translation)


def render_pose(g: GaussianSet, intr: CameraIntrinsics, R: np.ndarray, t: np.ndarray) -> RenderedImage:
    if g.count == 0:
        return RenderedImage(np.zeros((intr.height, intr.width, 3)), np.zeros((intr.height, intr.width)))
    proj = project_gaussians(g, intr, R, t)
    img, T, _ = rasterize(proj, intr.height, intr.width)
    return RenderedImage(img, 1.0 - T)


@dataclass
class ViewGradients:
    loss: float
    image: np.ndarray
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    rotation_cam: np.ndarray  # dL/dR of the world-to-camera rotation (3x3)
    translation_cam: np.ndarray  # dL/dt


def view_loss_and_grad(
    g: GaussianSet, intr: CameraIntrinsics, R: np.ndarray, t: np.ndarray, target: np.ndarray
) -> ViewGradients:
    """Squared-error loss of one view and its gradient w.r.t. everything."""
    H, W = intr.height, intr.width
    n = g.count
    if target.shape != (H, W, 3):
        raise ValueError(f"target shape {target.shape} does not match {H}x{W}x3")
    if n == 0:
        img = np.zeros((H, W, 3))
        return ViewGradients(
            float(np.sum((img - target) ** 2)), img, np.zeros((0, 3)), np.zeros((0, 3)),
            np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)), np.zeros((3, 3)), np.zeros(3),
        )
    proj = project_gaussians(g, intr, R, t)
    img, T, last = rasterize(proj, H, W)
    resid = img - target
    loss = float(np.sum(resid * resid))
    gm, gcon, go, gcol = _backward_kernel(
        proj.order, proj.means2d, proj.conics, proj.opacities,
        np.ascontiguousarray(proj.colors), proj.bbox, T, last, 2.0 * resid,
    )
    vis = proj.visible
    op = proj.opacities
    g_logit = go * op * (1.0 - op)

    # conic -> 2D covariance
    Q = np.empty((n, 2, 2))
    Q[:, 0, 0] = proj.conics[:, 0]
    Q[:, 0, 1] = Q[:, 1, 0] = proj.conics[:, 1]
    Q[:, 1, 1] = proj.conics[:, 2]
    GQ = np.empty((n, 2, 2))
    GQ[:, 0, 0] = gcon[:, 0]
    GQ[:, 0, 1] = GQ[:, 1, 0] = 0.5 * gcon[:, 1]
    GQ[:, 1, 1] = gcon[:, 2]
    G2 = -(Q @ GQ @ Q)

    J, M = proj.J, proj.cov_cam
    GM = J.transpose(0, 2, 1) @ G2 @ J
    GJ = 2.0 * (G2 @ J @ M)

    x, y, z = proj.pc[:, 0], proj.pc[:, 1], np.where(vis, proj.pc[:, 2], 1.0)
    fx, fy = intr.fx, intr.fy
    gpc = np.zeros((n, 3))
    gpc[:, 0] = gm[:, 0] * fx / z - GJ[:, 0, 2] * fx / z**2
    gpc[:, 1] = gm[:, 1] * fy / z - GJ[:, 1, 2] * fy / z**2
    gpc[:, 2] = (
        -gm[:, 0] * fx * x / z**2
        - gm[:, 1] * fy * y / z**2
        - GJ[:, 0, 0] * fx / z**2
        + GJ[:, 0, 2] * 2 * fx * x / z**3
        - GJ[:, 1, 1] * fy / z**2
        + GJ[:, 1, 2] * 2 * fy * y / z**3
    )
    gpc[~vis] = 0.0
    GM[~vis] = 0.0

    # camera-space covariance -> world covariance and camera rotation
    G3 = R.T @ GM @ R
    GR_cam = 2.0 * (GM @ R @ proj.cov3d).sum(axis=0) + gpc.T @ g.positions
    g_t = gpc.sum(axis=0)

    # world covariance -> scales and quaternion
    G3Rq = G3 @ proj.Rq
    GRq = 2.0 * G3Rq * proj.s2[:, None, :]
    g_ls = 2.0 * proj.s2 * np.sum(proj.Rq * G3Rq, axis=1)
    g_qn = quat_rotmat_vjp(proj.qn, GRq)
    g_q = (g_qn - proj.qn * np.sum(proj.qn * g_qn, axis=1, keepdims=True)) / proj.qnorm

    return ViewGradients(
        loss, img, gpc @ R, g_ls, g_q, g_logit, gcol, GR_cam, g_t,
    )

"""Joint optimisation of Gaussians and camera poses under an L2 photometric loss."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import CameraPose, CameraView, so3_exp, so3_right_jacobian
from .gaussians import GaussianSet
from .raster import render_pose, view_loss_and_grad

log = logging.getLogger(__name__)

GROUPS = ("positions", "log_scales", "rotations", "opacity_logits", "colors")


class NumericalError(RuntimeError):
    def __init__(self, group: str, iteration: int | None = None):
        self.group = group
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite values in {group}{where}")


@dataclass
class OptimRates:
    """Per-group learning rates; ``positions`` is multiplied by the scene extent."""

    positions: float = 1.6e-4
    log_scales: float = 5e-3
    rotations: float = 1e-3
    opacity_logits: float = 5e-2
    colors: float = 2.5e-3
    poses: float = 1e-4


class Adam:
    def __init__(self, shape, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        """Return the parameter update (to be added)."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return -self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class OptimState:
    rates: OptimRates
    pose_increments: np.ndarray  # (n_views, 6): axis-angle, translation
    iteration: int = 0
    optimizers: dict = field(default_factory=dict, repr=False)


def apply_increment(pose: CameraPose, increment: np.ndarray) -> CameraPose:
    """Left-compose an (axis-angle, translation) increment onto ``pose``."""
    E = so3_exp(increment[:3])
    return CameraPose(E @ pose.rotation, E @ pose.translation + increment[3:])


def scene_extent(views: Sequence[CameraView]) -> float:
    """1.1 x the largest camera distance from the mean camera centre."""
    centers = np.array([v.pose.center for v in views])
    r = float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()) * 1.1
    return r if r > 0 else 1.0


def photometric_loss(g: GaussianSet, views: Sequence[CameraView], poses: Sequence[CameraPose] | None = None) -> float:
    """Sum over views of squared RGB differences between target and render."""
    if not views:
        raise ValueError("need at least one view")
    poses = poses if poses is not None else [v.pose for v in views]
    total = 0.0
    for v, p in zip(views, poses):
        img = render_pose(g, v.intrinsics, p.rotation, p.translation).rgb
        total += image_sq_error(img, v.image)
    return total


def image_sq_error(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d))


def _skew_vee(A: np.ndarray) -> np.ndarray:
    """Vector ``phi`` with ``<A, skew(phi)> = phi . vee``."""
    return np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])


def loss_and_grad(
    g: GaussianSet,
    views: Sequence[CameraView],
    increments: np.ndarray,
    workers: int = 1,
):
    """Total loss plus gradients for Gaussian groups and pose increments.

    Views are evaluated independently (optionally in threads) and summed in
    view order so the result does not depend on ``workers``.
    """
    def one(k):
        v = views[k]
        pose = apply_increment(v.pose, increments[k])
        res = view_loss_and_grad(g, v.intrinsics, pose.rotation, pose.translation, v.image)
        E = so3_exp(increments[k, :3])
        A = E.T @ (res.rotation_cam @ v.pose.rotation.T + np.outer(res.translation_cam, v.pose.translation))
        g_pose = np.concatenate([so3_right_jacobian(increments[k, :3]).T @ _skew_vee(A), res.translation_cam])
        return res, g_pose

    if workers > 1 and len(views) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, range(len(views))))
    else:
        results = [one(k) for k in range(len(views))]

    grads = {name: np.zeros_like(getattr(g, name)) for name in GROUPS}
    loss = 0.0
    pose_grad = np.zeros_like(increments)
    for k, (res, g_pose) in enumerate(results):
        loss += res.loss
        for name in GROUPS:
            grads[name] += getattr(res, name)
        pose_grad[k] = g_pose
    return loss, grads, pose_grad


def optimize(
    g: GaussianSet,
    views: Sequence[CameraView],
    iterations: int,
    rates: OptimRates | None = None,
    refine_poses: bool = True,
    workers: int = 1,
    extent: float | None = None,
    callback=None,
):
    """Adam on all Gaussian groups and per-view pose increments.

    The first view's pose stays fixed. Returns ``(gaussians, poses, losses)``
    where ``losses[i]`` is the loss before the i-th update.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rates = rates or OptimRates()
    g = g.copy()
    extent = scene_extent(views) if extent is None else extent
    lrs = {
        "positions": rates.positions * extent,
        "log_scales": rates.log_scales,
        "rotations": rates.rotations,
        "opacity_logits": rates.opacity_logits,
        "colors": rates.colors,
    }
    state = OptimState(rates, np.zeros((len(views), 6)))
    state.optimizers = {name: Adam(getattr(g, name).shape, lrs[name]) for name in GROUPS}
    pose_opt = Adam(state.pose_increments.shape, rates.poses)
    losses = []
    for it in range(iterations):
        loss, grads, pose_grad = loss_and_grad(g, views, state.pose_increments, workers)
        if not np.isfinite(loss):
            raise NumericalError("loss", it)
        for name in GROUPS:
            if not np.all(np.isfinite(grads[name])):
                raise NumericalError(name, it)
        if not np.all(np.isfinite(pose_grad)):
            raise NumericalError("poses", it)
        losses.append(loss)
        for name in GROUPS:
            arr = getattr(g, name)
            arr += state.optimizers[name].step(grads[name])
        g.rotations /= np.linalg.norm(g.rotations, axis=1, keepdims=True)
        np.clip(g.colors, 0.0, 1.0, out=g.colors)
        if refine_poses and len(views) > 1:
            pose_grad[0] = 0.0
            state.pose_increments += pose_opt.step(pose_grad)
            state.pose_increments[0] = 0.0
        state.iteration += 1
        if callback is not None:
            callback(it, loss)
        if it % 50 == 0:
            log.debug("iteration %d loss %.6g", it, loss)
    poses = [apply_increment(v.pose, state.pose_increments[k]) for k, v in enumerate(views)]
    return g, poses, np.array(losses)

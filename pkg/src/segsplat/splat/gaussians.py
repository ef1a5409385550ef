"""Gaussian parameter container, initialisation and quaternion algebra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

INIT_OPACITY = 0.1
MIN_SCALE = 1e-4


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class GaussianSet:
    positions: np.ndarray  # (n, 3)
    log_scales: np.ndarray  # (n, 3)
    rotations: np.ndarray  # (n, 4) unit quaternions, (w, x, y, z)
    opacity_logits: np.ndarray  # (n,)
    colors: np.ndarray  # (n, 3)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(-1)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        for name in ("log_scales", "rotations", "opacity_logits", "colors"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, expected {n}")

    @property
    def count(self) -> int:
        return len(self.positions)

    def __len__(self) -> int:
        return self.count

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            self.positions.copy(),
            self.log_scales.copy(),
            self.rotations.copy(),
            self.opacity_logits.copy(),
            self.colors.copy(),
        )

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(np.empty((0, 3)), np.empty((0, 3)), np.empty((0, 4)), np.empty(0), np.empty((0, 3)))


def knn_mean_distance(points: np.ndarray, k: int = 3) -> np.ndarray:
    """Mean Euclidean distance from each point to its ``k`` nearest others."""
    tree = cKDTree(points)
    d, _ = tree.query(points, k=k + 1)
    return d[:, 1:].mean(axis=1)


def init_gaussians(cloud) -> GaussianSet:
    """Initialise from anything carrying ``positions`` and ``colors`` (e.g. a FilteredCloud)."""
    return init_from_points(cloud.positions, cloud.colors)


def init_from_points(positions: np.ndarray, colors: np.ndarray) -> GaussianSet:
    """One isotropic Gaussian per point, sized by its 3-NN spacing."""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        raise ValueError("cannot initialise Gaussians from an empty cloud")
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if n < 4:
        scale = np.full(n, max(MIN_SCALE, 0.01 * diag))
    else:
        scale = np.clip(knn_mean_distance(pts), MIN_SCALE, max(MIN_SCALE, diag))
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianSet(
        pts.copy(),
        np.repeat(np.log(scale)[:, None], 3, axis=1),
        rot,
        np.full(n, float(logit(INIT_OPACITY))),
        np.asarray(colors, dtype=np.float64).reshape(-1, 3).copy(),
    )


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (already normalised) quaternions, shape (n, 3, 3)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def quat_rotmat_vjp(q: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Pull back a gradient on R(q) to the normalised quaternion components."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    g = lambda i, j: G[..., i, j]  # noqa: E731
    gw = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1))
    gx = 2 * (
        y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2)
        + z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2)
    )
    gy = 2 * (
        -2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
        - w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2)
    )
    gz = 2 * (
        -2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1)
        + y * g(1, 2) + x * g(2, 0) + y * g(2, 1)
    )
    return np.stack([gw, gx, gy, gz], -1)


def covariances(g: GaussianSet):
    """World-space covariances plus the pieces needed for the backward pass."""
    norms = np.linalg.norm(g.rotations, axis=1, keepdims=True)
    qn = g.rotations / norms
    Rq = quat_to_rotmat(qn)
    s2 = np.exp(2.0 * g.log_scales)
    cov = (Rq * s2[:, None, :]) @ Rq.transpose(0, 2, 1)
    return cov, Rq, s2, qn, norms

"""Camera types, pinhole projection and rigid-transform helpers.

Every function here is pure and works in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BEHIND_EPS = 1e-9


class BehindCameraError(ValueError):
    """Raised when a point sits at or behind the camera plane."""


class InvalidDepthError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if int(self.width) != self.width or int(self.height) != self.height or self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive integers")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform ``x_cam = R @ x_world + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not is_rotation(R):
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def compose(self, other: "CameraPose") -> "CameraPose":
        """Return ``self ∘ other``: apply ``other`` first, then ``self``."""
        R = self.rotation @ other.rotation
        return CameraPose(R, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "CameraPose":
        Rt = self.rotation.T
        return CameraPose(Rt, -Rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class CameraView:
    index: int
    intrinsics: CameraIntrinsics
    pose: CameraPose
    image: np.ndarray = field(repr=False)

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.shape != (self.intrinsics.height, self.intrinsics.width, 3):
            raise ValueError(
                f"image shape {img.shape} does not match intrinsics "
                f"{self.intrinsics.height}x{self.intrinsics.width}"
            )
        object.__setattr__(self, "image", img)

    def with_pose(self, pose: CameraPose) -> "CameraView":
        return CameraView(self.index, self.intrinsics, pose, self.image)


@dataclass
class DensePointSet:
    """Points lifted from one view, one entry per source pixel."""

    view_index: int
    positions: np.ndarray  # (n, 3) world
    colors: np.ndarray  # (n, 3) RGB in [0, 1]
    source_pixels: np.ndarray  # (n, 2) integer (u, v)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.source_pixels = np.asarray(self.source_pixels, dtype=np.int64).reshape(-1, 2)
        n = len(self.positions)
        if len(self.colors) != n or len(self.source_pixels) != n:
            raise ValueError("positions, colors and source_pixels must have equal length")

    def __len__(self) -> int:
        return len(self.positions)


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.abs(R.T @ R - np.eye(3)).max() <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula: axis-angle vector to rotation matrix."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < 1e-8:
        # second-order Taylor expansion, exact to float precision here
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def so3_right_jacobian(omega: np.ndarray) -> np.ndarray:
    """J_r with ``exp(w + dw) ~= exp(w) exp(J_r(w) dw)``."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return (
        np.eye(3)
        - (1.0 - np.cos(theta)) / theta**2 * K
        + (theta - np.sin(theta)) / theta**3 * K @ K
    )


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    return so3_exp(axis / np.linalg.norm(axis) * angle)


def look_at(center: np.ndarray, target: np.ndarray, up=(0.0, -1.0, 0.0)) -> CameraPose:
    """World-to-camera pose for a camera at ``center`` looking at ``target``.

    Camera axes follow the x-right, y-down, z-forward convention.
    """
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraPose(R, -R @ center)


def project_points(points: np.ndarray, intrinsics: CameraIntrinsics, pose: CameraPose):
    """Vectorised projection. Returns ``(u, v, depth)`` arrays.

    Points with depth <= 1e-9 get ``u = v = nan``; callers treat them as
    out of frame.
    """
    pc = pose.apply(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = pc[:, 2]
    ok = z > BEHIND_EPS
    zs = np.where(ok, z, 1.0)
    u = np.where(ok, intrinsics.fx * pc[:, 0] / zs + intrinsics.cx, np.nan)
    v = np.where(ok, intrinsics.fy * pc[:, 1] / zs + intrinsics.cy, np.nan)
    return u, v, z


def project(point, camera: CameraView) -> tuple[float, float, float]:
    u, v, z = project_points(np.asarray(point, dtype=np.float64)[None], camera.intrinsics, camera.pose)
    if not z[0] > BEHIND_EPS:
        raise BehindCameraError(f"point is behind the camera (depth {z[0]:.3g})")
    return float(u[0]), float(v[0]), float(z[0])


def backproject_pixels(u, v, depth, intrinsics: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise InvalidDepthError("depth must be positive")
    pc = np.stack(
        [(u - intrinsics.cx) * d / intrinsics.fx, (v - intrinsics.cy) * d / intrinsics.fy, d], axis=-1
    )
    R, t = pose.rotation, pose.translation
    return (pc - t) @ R


def backproject(u: float, v: float, depth: float, camera: CameraView) -> np.ndarray:
    return backproject_pixels(u, v, depth, camera.intrinsics, camera.pose)


def in_frame(u, v, intrinsics: CameraIntrinsics):
    """True where the rounded pixel lies inside the image.

    Works elementwise on arrays; NaN coordinates are never in frame.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        ru = np.floor(u + 0.5)
        rv = np.floor(v + 0.5)
        res = (ru >= 0) & (ru < intrinsics.width) & (rv >= 0) & (rv < intrinsics.height)
    return bool(res) if res.ndim == 0 else res


def round_pixel(x):
    """Round-half-up to the nearest integer pixel."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)

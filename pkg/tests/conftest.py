import numpy as np
import pytest

from segsplat.core import CameraIntrinsics, CameraPose, CameraView, rotation_about_axis
from segsplat.synth import generate, reference_scene


@pytest.fixture(scope="session")
def flat_bundle():
    return generate(reference_scene("flat_dominant", 3))


@pytest.fixture(scope="session")
def mixed_bundle():
    return generate(reference_scene("mixed", 3, holdout_views=1))


def random_pose(rng) -> CameraPose:
    axis = rng.normal(size=3)
    R = rotation_about_axis(axis, rng.uniform(-np.pi, np.pi))
    return CameraPose(R, rng.normal(size=3))


def small_view(index=1, size=16, focal=16.0, pose=None, image=None) -> CameraView:
    intr = CameraIntrinsics(focal, focal, size / 2, size / 2, size, size)
    img = np.zeros((size, size, 3)) if image is None else image
    return CameraView(index, intr, pose or CameraPose.identity(), img)


def five_splat_problem(seed=0, size=16):
    """Five random Gaussians, two small views and random targets."""
    from segsplat.core import so3_exp
    from segsplat.splat.gaussians import GaussianSet

    rng = np.random.default_rng(seed)
    n = 5
    q = rng.normal(size=(n, 4))
    g = GaussianSet(
        np.column_stack([rng.uniform(-0.4, 0.4, n), rng.uniform(-0.4, 0.4, n), rng.uniform(2.5, 3.5, n)]),
        np.log(rng.uniform(0.08, 0.2, size=(n, 3))),
        q / np.linalg.norm(q, axis=1, keepdims=True),
        rng.normal(0.0, 0.7, n),
        rng.uniform(0.1, 0.9, size=(n, 3)),
    )
    views = [
        small_view(1, size, image=rng.uniform(size=(size, size, 3))),
        small_view(2, size, pose=CameraPose(so3_exp([0.02, -0.05, 0.01]), np.array([0.15, -0.05, 0.02])),
                   image=rng.uniform(size=(size, size, 3))),
    ]
    return g, views


def gradient_errors(g, views, step=1e-5):
    """Relative error of analytic vs central-difference gradients per group."""
    from segsplat.splat.optim import GROUPS, apply_increment, loss_and_grad, photometric_loss

    inc = np.zeros((len(views), 6))
    inc[1] = [0.01, -0.02, 0.015, 0.01, 0.02, -0.01]
    _, grads, pose_grad = loss_and_grad(g, views, inc)

    def loss_at(gg, ii):
        return photometric_loss(gg, views, [apply_increment(v.pose, ii[k]) for k, v in enumerate(views)])

    errors = {}
    for name in GROUPS:
        arr = getattr(g, name)
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            gp, gm = g.copy(), g.copy()
            getattr(gp, name)[idx] += step
            getattr(gm, name)[idx] -= step
            fd[idx] = (loss_at(gp, inc) - loss_at(gm, inc)) / (2 * step)
        errors[name] = np.linalg.norm(grads[name] - fd) / max(np.linalg.norm(fd), 1e-12)
    fd = np.zeros_like(inc)
    for idx in np.ndindex(inc.shape):
        ip, im = inc.copy(), inc.copy()
        ip[idx] += step
        im[idx] -= step
        fd[idx] = (loss_at(g, ip) - loss_at(g, im)) / (2 * step)
    errors["poses"] = np.linalg.norm(pose_grad - fd) / max(np.linalg.norm(fd), 1e-12)
    return errors


ACCEPTANCE_LINES: dict[str, str] = {}


def report_criterion(tag: str, ok: bool, detail: str) -> None:
    line = f"{tag} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[tag] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for tag in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[tag])

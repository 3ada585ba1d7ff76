import numpy as np
import pytest

from oig.core import CameraView, GaussianScene


def unit_quat(rng=None):
    if rng is None:
        return np.array([1.0, 0.0, 0.0, 0.0])
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def make_scene(n=5, seed=0, features=False, gt=False, spread=1.0):
    rng = np.random.default_rng(seed)
    scene = GaussianScene(
        positions=rng.normal(scale=spread, size=(n, 3)),
        scales=rng.uniform(0.05, 0.3, size=(n, 3)),
        rotations=np.array([unit_quat(rng) for _ in range(n)]),
        opacities=rng.uniform(0.2, 0.9, size=n),
        colors=rng.uniform(size=(n, 3)),
        features=rng.normal(size=(n, 6)) if features else None,
        gt_labels=rng.integers(0, 3, size=n) if gt else None,
    )
    return scene


def make_view(view_id=0, width=16, height=16, fx=20.0, fy=20.0, distance=4.0):
    w2c = np.eye(4)
    w2c[2, 3] = distance  # camera looks down +z at the origin
    return CameraView(view_id=view_id, width=width, height=height,
                      fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
                      world_to_camera=w2c)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

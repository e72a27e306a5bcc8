from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from markerslam import kernels
from markerslam.geometry import Pose, so3_exp

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "markerslam" / "scenarios"


def random_pose(rng: np.random.Generator, trans: float = 3.0, max_angle: float = 3.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose.from_rt(so3_exp(axis * rng.uniform(0.0, max_angle)), rng.uniform(-trans, trans, 3))


def random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=kernels.BACKENDS)
def backend(request):
    prev = kernels.backend
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(prev)

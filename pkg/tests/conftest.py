"""Shared fixtures: small deterministic flow fields used across the suite.

Scenes come from the synthetic generator with frozen tuple seeds so every
test run sees bit-identical data.  The acceptance module registers one
summary line per criterion; the terminal-summary hook below prints them
after the run regardless of output capture.
"""

from __future__ import annotations

import numpy as np
import pytest

from egoflow import (
    CameraMotion,
    FlowField,
    InverseDepths,
    SceneConfig,
    generate_scene,
    predict_flow,
)


def make_points(n: int, seed: int = 0) -> np.ndarray:
    """Uniform points in the standard frame, deterministic per seed."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.5, 0.5, (n, 2))


def make_clean_field(
    n: int = 40,
    seed: int = 0,
    t=(0.6, -0.3, 0.2),
    omega=(0.05, -0.02, 0.01),
    depth_range=(2.0, 10.0),
):
    """Noiseless flow field with known motion and depths.

    Returns (flow, motion, rho).  The direction is normalized but not
    canonicalized, so callers can exercise both hemispheres.
    """
    rng = np.random.default_rng(seed)
    points = rng.uniform(-0.5, 0.5, (n, 2))
    t = np.asarray(t, dtype=np.float64)
    t = t / np.linalg.norm(t)
    motion = CameraMotion(t, np.asarray(omega, dtype=np.float64))
    rho = 1.0 / rng.uniform(depth_range[0], depth_range[1], n)
    depths = InverseDepths(rho=rho, valid=np.ones(n, dtype=bool))
    flow = predict_flow(motion, depths, points)
    return flow, motion, rho


@pytest.fixture(scope="session")
def clean_scene():
    """Noise-free generated scene, N=400."""
    return generate_scene(
        SceneConfig(n_points=400, noise_fraction_of_mean_flow=0.0, seed=(1, 0))
    )


@pytest.fixture(scope="session")
def noisy_scene():
    """Gaussian-noise-only scene, N=400."""
    return generate_scene(SceneConfig(n_points=400, seed=(1, 1)))


@pytest.fixture(scope="session")
def contaminated_scene():
    """30% planted outliers on top of Gaussian noise, N=400."""
    return generate_scene(
        SceneConfig(n_points=400, outlier_fraction=0.3, seed=(1, 2))
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "CRITERION_LINES", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)

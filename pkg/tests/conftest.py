import numpy as np
import pytest

from sweepfit.core import (
    ScalingPoly,
    SuperellipseProfile,
    SweepAxis,
    SweepPrimitive,
)
from sweepfit.voxels import VoxelGrid, grid_from_indicator


def make_primitive(ctrl, a=0.2, b=0.2, d=2.0, coeffs=(0.0, 0.0)):
    return SweepPrimitive(
        profile=SuperellipseProfile(a, b, d),
        axis=SweepAxis(np.asarray(ctrl, dtype=float)),
        scaling=ScalingPoly(np.asarray(coeffs, dtype=float)),
    )


def straight_tube(a=0.2, b=0.2, d=2.0, coeffs=(0.0, 0.0), z0=-0.4, z1=0.4):
    zm = 0.5 * (z0 + z1)
    return make_primitive([[0, 0, z0], [0, 0, zm], [0, 0, z1]], a, b, d, coeffs)


def random_primitive(rng, n=3, k=2):
    """Primitive with parameters drawn from the documented sampling boxes."""
    ctrl = rng.uniform(-0.5, 0.5, size=(n, 3))
    a, b = rng.uniform(0.01, 0.5, size=2)
    d = rng.uniform(0.3, 5.0)
    coeffs = rng.uniform(-0.5, 0.5, size=k)
    return make_primitive(ctrl, a, b, d, coeffs)


def segment_distance(pts, p0, p1):
    """Distance from each point to the segment p0-p1."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    seg = p1 - p0
    t = np.clip((pts - p0) @ seg / (seg @ seg), 0.0, 1.0)
    closest = p0 + t[:, None] * seg
    return np.linalg.norm(pts - closest, axis=1)


@pytest.fixture(scope="session")
def cylinder_grid() -> VoxelGrid:
    def inside(p):
        return (p[:, 0] ** 2 + p[:, 1] ** 2 <= 0.16**2) & (np.abs(p[:, 2]) <= 0.3)

    return grid_from_indicator(inside, 64)


@pytest.fixture(scope="session")
def lbend_grid() -> VoxelGrid:
    corner = np.array([0.15, 0.0, -0.25])
    a0 = np.array([-0.35, 0.0, -0.25])
    b1 = np.array([0.15, 0.0, 0.3])

    def inside(p):
        return (segment_distance(p, a0, corner) <= 0.09) | (
            segment_distance(p, corner, b1) <= 0.09
        )

    return grid_from_indicator(inside, 64)


@pytest.fixture(scope="session")
def half_torus_grid() -> VoxelGrid:
    ring_r, tube_r = 0.28, 0.09

    def inside(p):
        rad = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)
        return ((rad - ring_r) ** 2 + p[:, 2] ** 2 <= tube_r**2) & (p[:, 1] >= 0.0)

    return grid_from_indicator(inside, 64)


@pytest.fixture(scope="session")
def tapered_capsule_grid() -> VoxelGrid:
    from sweepfit.occupancy import oracle_occupancy

    prim = straight_tube(a=0.22, b=0.22, coeffs=(-0.5, -0.1), z0=-0.3, z1=0.3)

    def inside(p):
        return oracle_occupancy(prim, p).astype(bool)

    return grid_from_indicator(inside, 64)


@pytest.fixture(scope="session")
def sphere_grid() -> VoxelGrid:
    def inside(p):
        return (p**2).sum(axis=1) <= 0.38**2

    return grid_from_indicator(inside, 32)

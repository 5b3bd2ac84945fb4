"""Medial-axis extraction from voxel grids and primitive warm starts.

The skeleton is the sloped ridge of the exact Euclidean distance
transform: cell centers whose distance does not grow faster than a slope
threshold toward any 26-neighbor, pruned by a fraction of the global
maximum distance.  Cells outside the grid count as empty, so shapes
touching the boundary still get finite distances.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .assembly import Assembly
from .core import (
    CONTROL_RANGE,
    PROFILE_AB_RANGE,
    ScalingPoly,
    SuperellipseProfile,
    SweepAxis,
    SweepPrimitive,
)
from .voxels import VoxelGrid


@dataclass(frozen=True)
class SkeletonPoints:
    points: np.ndarray   # (N, 3) cell centers, strictly interior
    radii: np.ndarray    # (N,) distance-to-boundary in cube units

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        rad = np.atleast_1d(np.asarray(self.radii, dtype=np.float64))
        if pts.shape[0] != rad.shape[0] or pts.shape[1] != 3:
            raise ValueError("points and radii must be (N, 3) and (N,)")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "radii", rad)


def _feature_offsets(grid: VoxelGrid) -> np.ndarray:
    """(3, R, R, R) integer offsets from each cell to its nearest unoccupied
    cell center (cells outside the grid count as unoccupied)."""
    occ = grid.cells
    padded = np.pad(occ, 1, constant_values=False)
    ind = ndimage.distance_transform_edt(padded, return_distances=False, return_indices=True)
    own = np.indices(padded.shape)
    return (ind - own)[:, 1:-1, 1:-1, 1:-1]


def distance_transform(grid: VoxelGrid) -> np.ndarray:
    """Exact Euclidean distance (cube units) from occupied cell centers to the
    nearest unoccupied cell center; 0 on unoccupied cells.

    Computed from the integer feature transform so values are exactly
    sqrt(integer) / R.
    """
    off = _feature_offsets(grid)
    sq = (off.astype(np.int64) ** 2).sum(axis=0)
    dist = np.sqrt(sq.astype(np.float64)) / grid.resolution
    dist[~grid.cells] = 0.0
    return dist


_PAIR_DIRECTIONS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
][14:]  # 13 representatives, one per opposite pair


def _ridge_mask(grid: VoxelGrid, dist: np.ndarray, min_angle_deg: float) -> np.ndarray:
    """Medial cells: some opposite neighbor pair sees the boundary in
    directions at least min_angle_deg apart.

    Toward-boundary directions come from the exact feature transform, so on
    flat walls the test is quantization-free: crossing a tube axis the two
    neighbors look at opposite walls (~180 degrees, whatever the taper
    slope), while the 45-degree sheets and corner spokes of box edges score
    exactly 90 degrees.  The plain 26-neighborhood local-maximum ridge is
    kept as well; it contributes the plateau cells of blob-like shapes.
    """
    occ = grid.cells
    r = grid.resolution
    off = _feature_offsets(grid).astype(np.float64)
    norm = np.sqrt((off**2).sum(axis=0))
    norm[norm == 0] = 1.0
    unit = off / norm
    unit[:, ~occ] = 0.0  # background cells never form a valid pair
    unit_p = np.pad(unit, ((0, 0), (1, 1), (1, 1), (1, 1)))
    occ_p = np.pad(occ, 1, constant_values=False)
    cos_limit = np.cos(np.radians(min_angle_deg))
    medial = np.zeros_like(occ)
    for dx, dy, dz in _PAIR_DIRECTIONS:
        plus = unit_p[:, 1 + dx : 1 + dx + r, 1 + dy : 1 + dy + r, 1 + dz : 1 + dz + r]
        minus = unit_p[:, 1 - dx : 1 - dx + r, 1 - dy : 1 - dy + r, 1 - dz : 1 - dz + r]
        both = (
            occ_p[1 + dx : 1 + dx + r, 1 + dy : 1 + dy + r, 1 + dz : 1 + dz + r]
            & occ_p[1 - dx : 1 - dx + r, 1 - dy : 1 - dy + r, 1 - dz : 1 - dz + r]
        )
        cos_pair = (plus * minus).sum(axis=0)
        medial |= both & (cos_pair <= cos_limit)
    local_max = ndimage.maximum_filter(dist, size=3, mode="constant") == dist
    return occ & (medial | local_max)


def extract_medial_axis(
    grid: VoxelGrid,
    prune_ratio: float = 0.3,
    max_points: int | None = None,
    min_angle_deg: float = 120.0,
) -> SkeletonPoints:
    """Medial-axis cell centers with their boundary distances.

    Keeps occupied cells where opposite neighbors see the boundary in
    directions >= min_angle_deg apart (plus distance-transform local
    maxima), pruned to distance >= prune_ratio times the global maximum.
    An optional cap subsamples with a deterministic stride.
    """
    if not 0.0 <= prune_ratio < 1.0:
        raise ValueError(f"prune_ratio must be in [0, 1), got {prune_ratio}")
    if grid.count() == 0:
        raise ValueError("cannot extract a skeleton from an empty grid")
    dist = distance_transform(grid)
    ridge = _ridge_mask(grid, dist, min_angle_deg)
    keep = ridge & (dist >= prune_ratio * dist.max())
    idx = np.argwhere(keep)
    radii = dist[keep]
    points = -0.5 + (idx + 0.5) / grid.resolution
    if max_points is not None and points.shape[0] > max_points:
        stride = int(np.ceil(points.shape[0] / max_points))
        points = points[::stride]
        radii = radii[::stride]
    return SkeletonPoints(points=points, radii=radii)


def _farthest_point_clusters(points: np.ndarray, count: int, rng) -> list[np.ndarray]:
    """Farthest-point center seeding then one nearest-center assignment pass."""
    n = points.shape[0]
    centers = [int(rng.integers(n))]
    d2 = ((points - points[centers[0]]) ** 2).sum(axis=1)
    while len(centers) < count:
        nxt = int(np.argmax(d2))
        centers.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    cpts = points[centers]
    assign = np.argmin(
        ((points[:, None, :] - cpts[None, :, :]) ** 2).sum(axis=2), axis=1
    )
    return [np.nonzero(assign == i)[0] for i in range(count)]


def _cluster_primitive(points, radii, n, k, rng) -> SweepPrimitive:
    mean = points.mean(axis=0)
    centered = points - mean
    if points.shape[0] >= 2:
        cov = centered.T @ centered
        _, vecs = np.linalg.eigh(cov)
        direction = vecs[:, -1]
    else:
        direction = np.array([1.0, 0.0, 0.0])
    proj = centered @ direction
    lo_t, hi_t = float(proj.min()), float(proj.max())
    if hi_t - lo_t < 1e-9:
        half = max(float(np.median(radii)), 1e-3)
        lo_t, hi_t = -half, half
    ctrl = mean[None, :] + np.linspace(lo_t, hi_t, n)[:, None] * direction[None, :]
    ctrl = np.clip(ctrl, CONTROL_RANGE[0], CONTROL_RANGE[1])
    radius = float(np.clip(np.median(radii), PROFILE_AB_RANGE[0], PROFILE_AB_RANGE[1]))
    return SweepPrimitive(
        profile=SuperellipseProfile(radius, radius, 2.0),
        axis=SweepAxis(ctrl),
        scaling=ScalingPoly(np.zeros(k)),
    )


def initialize_primitives(
    skel: SkeletonPoints,
    count: int,
    seed: int,
    n: int = 3,
    k: int = 2,
) -> Assembly:
    """Warm-start assembly: cluster the skeleton, fit a line segment per
    cluster, spread control points along it, radius from the median cluster
    radius; all gates start at 0.5."""
    if count < 1:
        raise ValueError(f"need at least one primitive, got {count}")
    if skel.points.shape[0] == 0:
        raise ValueError("cannot initialize from an empty skeleton")
    rng = np.random.default_rng(seed)
    pts = skel.points
    rad = skel.radii
    if pts.shape[0] < count:
        warnings.warn(
            f"skeleton has {pts.shape[0]} points for {count} primitives; "
            "duplicating clusters with jitter",
            stacklevel=2,
        )
        reps = int(np.ceil(count / pts.shape[0]))
        pts = np.tile(pts, (reps, 1))
        rad = np.tile(rad, reps)
        pts = pts + rng.normal(scale=1e-3, size=pts.shape)
    clusters = _farthest_point_clusters(pts, count, rng)
    prims = []
    for members in clusters:
        if members.size == 0:
            members = np.array([int(rng.integers(pts.shape[0]))])
        prims.append(_cluster_primitive(pts[members], rad[members], n, k, rng))
    return Assembly(primitives=tuple(prims), gates=np.full(count, 0.5))

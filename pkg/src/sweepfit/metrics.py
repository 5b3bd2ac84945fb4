"""Evaluation of abstractions against voxel targets: IoU, chamfer, F-score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from .assembly import Assembly, select_primitives, voxelize
from .occupancy import TriMesh, sweep_mesh
from .voxels import VoxelGrid

DEFAULT_F1_THRESHOLD = 0.05
DEFAULT_SURFACE_SAMPLES = 16384


@dataclass(frozen=True)
class MetricReport:
    iou: float
    chamfer: float
    f1: float
    threshold: float = DEFAULT_F1_THRESHOLD

    def to_dict(self) -> dict:
        return {
            "iou": self.iou,
            "chamfer": self.chamfer,
            "f1": self.f1,
            "threshold": self.threshold,
        }


def _cells(g) -> np.ndarray:
    return g.cells if isinstance(g, VoxelGrid) else np.asarray(g, dtype=bool)


def voxel_iou(a, b) -> float:
    """|a AND b| / |a OR b|; 1 when both grids are empty."""
    ca, cb = _cells(a), _cells(b)
    if ca.shape != cb.shape:
        raise ValueError(f"resolution mismatch: {ca.shape} vs {cb.shape}")
    union = np.logical_or(ca, cb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(ca, cb).sum() / union)


def _check_point_set(x) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if pts.shape[0] == 0:
        raise ValueError("point set is empty")
    return pts


def chamfer_distance(x, y, squared: bool = False, workers: int = 1) -> float:
    """Symmetric halved-mean nearest-neighbor distance between point sets."""
    xp, yp = _check_point_set(x), _check_point_set(y)
    dx, _ = cKDTree(yp).query(xp, workers=workers)
    dy, _ = cKDTree(xp).query(yp, workers=workers)
    if squared:
        dx, dy = dx**2, dy**2
    return float(0.5 * dx.mean() + 0.5 * dy.mean())


def f_score(x, y, tau: float = DEFAULT_F1_THRESHOLD, workers: int = 1) -> float:
    """Harmonic mean of precision and recall at distance threshold tau."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    xp, yp = _check_point_set(x), _check_point_set(y)
    dx, _ = cKDTree(yp).query(xp, workers=workers)
    dy, _ = cKDTree(xp).query(yp, workers=workers)
    precision = float((dx <= tau).mean())
    recall = float((dy <= tau).mean())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# Surface point sampling
# ---------------------------------------------------------------------------

def grid_surface_mesh(grid: VoxelGrid) -> TriMesh:
    """Marching-cubes isosurface of the (zero-padded) occupancy at level 0.5."""
    vol = np.pad(grid.cells.astype(np.float64), 1)
    verts, faces, _, _ = measure.marching_cubes(vol, level=0.5)
    # index space of the padded volume -> world: center of cell i at (i+0.5)/R-0.5
    verts = (verts - 0.5) / grid.resolution - 0.5
    return TriMesh(vertices=verts, triangles=faces.astype(np.int64))


def sample_mesh_surface(mesh: TriMesh, count: int, seed: int = 0) -> np.ndarray:
    """Area-uniform point sample of a triangle mesh surface."""
    v = mesh.vertices
    tri = v[mesh.triangles]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = 0.5 * np.linalg.norm(cross, axis=1)
    total = area.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    pick = rng.choice(area.shape[0], size=count, p=area / total)
    r1 = rng.random(count)
    r2 = rng.random(count)
    s = np.sqrt(r1)
    w0 = 1.0 - s
    w1 = s * (1.0 - r2)
    w2 = s * r2
    t = tri[pick]
    return w0[:, None] * t[:, 0] + w1[:, None] * t[:, 1] + w2[:, None] * t[:, 2]


def assembly_surface_mesh(assembly: Assembly, frame_count: int = 96,
                          contour_count: int = 64, threshold: float = 0.5) -> TriMesh:
    """Concatenated sweep meshes of the selected primitives."""
    sel = select_primitives(assembly, threshold)
    verts = []
    tris = []
    offset = 0
    for prim in sel.primitives:
        mesh = sweep_mesh(prim, frame_count, contour_count)
        verts.append(mesh.vertices)
        tris.append(mesh.triangles + offset)
        offset += mesh.vertices.shape[0]
    return TriMesh(vertices=np.concatenate(verts), triangles=np.concatenate(tris))


def evaluate_assembly(
    assembly: Assembly,
    grid: VoxelGrid,
    tau: float = DEFAULT_F1_THRESHOLD,
    surface_samples: int = DEFAULT_SURFACE_SAMPLES,
    seed: int = 0,
) -> MetricReport:
    """IoU against the re-voxelized union plus chamfer/F1 between surface
    samples of the target isosurface and of the swept primitives."""
    pred_grid = voxelize(assembly, grid.resolution)
    iou = voxel_iou(pred_grid, grid)
    target_pts = sample_mesh_surface(grid_surface_mesh(grid), surface_samples, seed)
    pred_pts = sample_mesh_surface(assembly_surface_mesh(assembly), surface_samples, seed + 1)
    return MetricReport(
        iou=iou,
        chamfer=chamfer_distance(target_pts, pred_pts),
        f1=f_score(target_pts, pred_pts, tau),
        threshold=tau,
    )

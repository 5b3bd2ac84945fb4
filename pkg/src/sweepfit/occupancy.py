"""Occupancy machinery for sweep primitives.

Four views of the same solid:
  * key-point samples (axis points + transformed profile contours),
  * an explicit triangle mesh (lofted slices + fan caps),
  * a smooth occupancy field, differentiable in all primitive parameters,
  * a dense hard-threshold oracle used to verify the smooth field.

The smooth field treats each of m profile frames as a soft slab: with local
coordinates (u, v, w) of a query in frame i (w along the tangent) the slab
membership is sigmoid(kappa*(h_i - |w|)) * sigmoid(kappa_g*(1 - g(u, v)))
where h_i is half the spacing to neighboring frame origins and g is the
scaled profile implicit; the field is the smooth union 1 - prod(1 - mu_i).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import (
    Frame,
    SweepPrimitive,
    axis_point,
    axis_velocity,
    pack_params,
    param_bounds,
    scaling_value,
    slice_points,
    to_unconstrained,
    transport_frame_arrays,
    unpack_params,
    from_unconstrained,
)

# Sigmoid arguments below -SIGMOID_CUTOFF contribute < 2e-15 and are dropped;
# partial union products below PROD_FLOOR are treated as a full hit.
SIGMOID_CUTOFF = 34.0
PROD_FLOOR = 1e-30

DEFAULT_ORACLE_FRAMES = 512


@dataclass(frozen=True)
class FieldConfig:
    """Smooth-field discretization: frame count and sigmoid sharpnesses.

    cutoff and prod_floor trade accuracy for speed: sigmoid arguments below
    -cutoff are dropped (error < e^-cutoff per slab) and the union product
    is truncated below prod_floor.  The defaults keep both errors far below
    every stated tolerance; the fitter runs with looser values.
    """

    frames: int = 48
    kappa: float = 200.0
    kappa_g: float = 60.0
    cutoff: float = SIGMOID_CUTOFF
    prod_floor: float = PROD_FLOOR

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError(f"need at least 2 frames, got {self.frames}")
        if self.kappa <= 0 or self.kappa_g <= 0:
            raise ValueError("sharpness parameters must be positive")


@dataclass(frozen=True)
class KeyPointCloud:
    axis_points: np.ndarray
    slice_points: np.ndarray  # (frames, contour, 3)

    @property
    def total(self) -> int:
        return self.axis_points.shape[0] + self.slice_points.shape[0] * self.slice_points.shape[1]

    def all_points(self) -> np.ndarray:
        return np.concatenate([self.axis_points, self.slice_points.reshape(-1, 3)])


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    metadata: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Frame batches
# ---------------------------------------------------------------------------

def _frame_batch(p: SweepPrimitive, m: int):
    """Transport frames plus per-frame scale and slab half-width arrays."""
    ts = np.linspace(0.0, 1.0, m)
    origins, tangents, normals, binormals = transport_frame_arrays(p.axis, ts)
    scales = np.atleast_1d(scaling_value(p.scaling, ts))
    gaps = np.linalg.norm(np.diff(origins, axis=0), axis=1)
    half = np.empty(m)
    half[0] = gaps[0] / 2.0
    half[-1] = gaps[-1] / 2.0
    if m > 2:
        half[1:-1] = (gaps[:-1] + gaps[1:]) / 4.0
    return ts, origins, tangents, normals, binormals, scales, half


# ---------------------------------------------------------------------------
# Key points
# ---------------------------------------------------------------------------

def sample_keypoints(
    p: SweepPrimitive,
    axis_count: int = 124,
    frame_count: int = 15,
    contour_count: int = 50,
) -> KeyPointCloud:
    """Axis samples plus scaled, frame-transformed profile contours."""
    if axis_count < 2 or frame_count < 2 or contour_count < 2:
        raise ValueError("all sample counts must be >= 2")
    axis_pts = np.atleast_2d(axis_point(p.axis, np.linspace(0.0, 1.0, axis_count)))
    ts, origins, tangents, normals, binormals, scales, _ = _frame_batch(p, frame_count)
    slices = np.empty((frame_count, contour_count, 3))
    for i in range(frame_count):
        fr = Frame(origins[i], tangents[i], normals[i], binormals[i])
        slices[i] = slice_points(p.profile, float(scales[i]), fr, contour_count)
    return KeyPointCloud(axis_points=axis_pts, slice_points=slices)


# ---------------------------------------------------------------------------
# Explicit mesh
# ---------------------------------------------------------------------------

def sweep_mesh(p: SweepPrimitive, frame_count: int = 64, contour_count: int = 50) -> TriMesh:
    """Lofted side surface between consecutive slices plus fan caps.

    V = m*c + 2, F = 2*c*m; closed and two-manifold whenever the sweep does
    not self-intersect (then it is still a valid triangle soup, flagged in
    metadata["possibly_self_intersecting"]).
    """
    m, c = frame_count, contour_count
    if m < 2 or c < 3:
        raise ValueError(f"need frame_count >= 2 and contour_count >= 3, got {m}, {c}")
    ts, origins, tangents, normals, binormals, scales, _ = _frame_batch(p, m)
    verts = np.empty((m * c + 2, 3))
    for i in range(m):
        fr = Frame(origins[i], tangents[i], normals[i], binormals[i])
        verts[i * c : (i + 1) * c] = slice_points(p.profile, float(scales[i]), fr, c)
    verts[m * c] = verts[0:c].mean(axis=0)
    verts[m * c + 1] = verts[(m - 1) * c : m * c].mean(axis=0)

    tris = np.empty((2 * c * m, 3), dtype=np.int64)
    row = 0
    for i in range(m - 1):
        base = i * c
        for j in range(c):
            j2 = (j + 1) % c
            tris[row] = (base + j, base + j2, base + c + j)
            tris[row + 1] = (base + c + j, base + j2, base + c + j2)
            row += 2
    start, end = m * c, m * c + 1
    for j in range(c):
        j2 = (j + 1) % c
        tris[row] = (start, j2, j)
        tris[row + 1] = (end, (m - 1) * c + j, (m - 1) * c + j2)
        row += 2

    meta = {
        "closed": True,
        "possibly_self_intersecting": _self_intersection_suspect(
            p, ts, origins, scales
        ),
    }
    return TriMesh(vertices=verts, triangles=tris, metadata=meta)


def _self_intersection_suspect(p, ts, origins, scales) -> bool:
    """Cheap necessary-style heuristic: local curvature vs profile reach, and
    far-apart slices coming closer than their combined reach."""
    reach = scales * math.hypot(p.profile.a, p.profile.b)
    delta = 1e-3
    vel = np.atleast_2d(axis_velocity(p.axis, ts))
    v_hi = np.atleast_2d(axis_velocity(p.axis, np.clip(ts + delta, 0, 1)))
    v_lo = np.atleast_2d(axis_velocity(p.axis, np.clip(ts - delta, 0, 1)))
    acc = (v_hi - v_lo) / (2 * delta)
    speed = np.linalg.norm(vel, axis=1)
    speed = np.where(speed < 1e-12, 1e-12, speed)
    curv = np.linalg.norm(np.cross(vel, acc), axis=1) / speed**3
    if np.any(curv * reach > 1.0):
        return True
    # pairwise: arc distance long but chord shorter than combined reach
    gaps = np.linalg.norm(np.diff(origins, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(gaps)])
    chord = np.linalg.norm(origins[:, None, :] - origins[None, :, :], axis=2)
    arc_d = np.abs(arc[:, None] - arc[None, :])
    combined = reach[:, None] + reach[None, :]
    return bool(np.any((arc_d > 1.5 * combined) & (chord < combined)))


# ---------------------------------------------------------------------------
# Smooth field
# ---------------------------------------------------------------------------

@njit(cache=True)
def _soft_field_kernel(pts, origins, tangents, normals, binormals, half_w,
                       scales, a, b, d, kappa, kappa_g, cutoff, prod_floor, out):
    P = pts.shape[0]
    m = origins.shape[0]
    rho = (1.0 + cutoff / kappa_g) ** (1.0 / d)
    band = cutoff / kappa
    r2 = np.empty(m)
    for i in range(m):
        af = a * scales[i]
        bf = b * scales[i]
        rr = rho * rho * (af * af + bf * bf) + (half_w[i] + band) ** 2
        r2[i] = rr
    for q in range(P):
        px, py, pz = pts[q, 0], pts[q, 1], pts[q, 2]
        prod = 1.0
        for i in range(m):
            dx = px - origins[i, 0]
            dy = py - origins[i, 1]
            dz = pz - origins[i, 2]
            if dx * dx + dy * dy + dz * dz > r2[i]:
                continue
            w = dx * tangents[i, 0] + dy * tangents[i, 1] + dz * tangents[i, 2]
            aw = kappa * (half_w[i] - abs(w))
            if aw < -cutoff:
                continue
            u = dx * normals[i, 0] + dy * normals[i, 1] + dz * normals[i, 2]
            v = dx * binormals[i, 0] + dy * binormals[i, 1] + dz * binormals[i, 2]
            ru = abs(u) / (a * scales[i])
            rv = abs(v) / (b * scales[i])
            rm = ru if ru > rv else rv
            if rm > rho:
                continue
            g = 0.0
            if ru > 0.0:
                g += math.exp(d * math.log(ru))
            if rv > 0.0:
                g += math.exp(d * math.log(rv))
            ag = kappa_g * (1.0 - g)
            if ag < -cutoff:
                continue
            sw = 1.0 / (1.0 + math.exp(-aw))
            sg = 1.0 / (1.0 + math.exp(-ag))
            prod *= 1.0 - sw * sg
            if prod < prod_floor:
                prod = 0.0
                break
        out[q] = 1.0 - prod


@njit(cache=True)
def _oracle_kernel(pts, origins, tangents, normals, binormals, h_lo, h_hi,
                   scales, a, b, d, out):
    P = pts.shape[0]
    m = origins.shape[0]
    r2 = np.empty(m)
    for i in range(m):
        af = a * scales[i]
        bf = b * scales[i]
        hw = max(h_lo[i], h_hi[i])
        r2[i] = af * af + bf * bf + hw * hw
    for q in range(P):
        px, py, pz = pts[q, 0], pts[q, 1], pts[q, 2]
        hit = 0
        for i in range(m):
            dx = px - origins[i, 0]
            dy = py - origins[i, 1]
            dz = pz - origins[i, 2]
            if dx * dx + dy * dy + dz * dz > r2[i]:
                continue
            w = dx * tangents[i, 0] + dy * tangents[i, 1] + dz * tangents[i, 2]
            if w < -h_lo[i] or w > h_hi[i]:
                continue
            u = dx * normals[i, 0] + dy * normals[i, 1] + dz * normals[i, 2]
            v = dx * binormals[i, 0] + dy * binormals[i, 1] + dz * binormals[i, 2]
            ru = abs(u) / (a * scales[i])
            rv = abs(v) / (b * scales[i])
            if ru > 1.0 or rv > 1.0:
                continue
            g = 0.0
            if ru > 0.0:
                g += math.exp(d * math.log(ru))
            if rv > 0.0:
                g += math.exp(d * math.log(rv))
            if g <= 1.0:
                hit = 1
                break
        out[q] = hit


def _as_query_array(query):
    q = np.asarray(query, dtype=np.float64)
    single = q.ndim == 1
    q = np.ascontiguousarray(np.atleast_2d(q))
    if q.shape[1] != 3:
        raise ValueError(f"queries must be (…, 3), got shape {q.shape}")
    return q, single


def _field_with_frames(profile, batch, pts, cfg: FieldConfig) -> np.ndarray:
    _, origins, tangents, normals, binormals, scales, half = batch
    out = np.empty(pts.shape[0])
    _soft_field_kernel(
        pts, origins, tangents, normals, binormals, half, scales,
        profile.a, profile.b, profile.d,
        cfg.kappa, cfg.kappa_g, cfg.cutoff, cfg.prod_floor, out,
    )
    return out


def soft_occupancy(p: SweepPrimitive, query, cfg: FieldConfig | None = None):
    """Smooth occupancy in [0, 1]; differentiable in query and parameters."""
    cfg = cfg or FieldConfig()
    pts, single = _as_query_array(query)
    batch = _frame_batch(p, cfg.frames)
    out = _field_with_frames(p.profile, batch, pts, cfg)
    return float(out[0]) if single else out


def oracle_occupancy(p: SweepPrimitive, query, dense_frames: int = DEFAULT_ORACLE_FRAMES):
    """Hard {0,1} occupancy via dense slab sampling; the verification oracle.

    Slabs tile the axis exactly (each frame owns half the gap to either
    neighbor, seam-guarded by 1e-12) so interior points can't fall through
    floating-point cracks between consecutive slabs.
    """
    if dense_frames < 64:
        raise ValueError(f"oracle needs at least 64 dense frames, got {dense_frames}")
    pts, single = _as_query_array(query)
    _, origins, tangents, normals, binormals, scales, _ = _frame_batch(p, dense_frames)
    gaps = np.linalg.norm(np.diff(origins, axis=0), axis=1)
    h_lo = np.empty(dense_frames)
    h_hi = np.empty(dense_frames)
    h_lo[0] = gaps[0] / 2.0
    h_lo[1:] = gaps / 2.0
    h_hi[-1] = gaps[-1] / 2.0
    h_hi[:-1] = gaps / 2.0
    h_lo += 1e-12
    h_hi += 1e-12
    out = np.empty(pts.shape[0], dtype=np.uint8)
    _oracle_kernel(
        pts, origins, tangents, normals, binormals, h_lo, h_hi, scales,
        p.profile.a, p.profile.b, p.profile.d, out,
    )
    return int(out[0]) if single else out


def union_boltzmann(values, alpha: float) -> float:
    """Boltzmann-weighted union: sum(v*e^(a*v)) / sum(e^(a*v)), overflow-safe."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("union_boltzmann needs at least one value")
    z = alpha * v
    z = z - z.max()
    w = np.exp(z)
    return float((v * w).sum() / w.sum())


# ---------------------------------------------------------------------------
# Parameter gradients
# ---------------------------------------------------------------------------

def grad_params(
    p: SweepPrimitive,
    queries,
    cfg: FieldConfig | None = None,
    step: float = 1e-3,
) -> np.ndarray:
    """d soft_occupancy / d parameter via central differences.

    Differentiation happens in the unconstrained (sigmoid-reparameterized)
    coordinates, one column per packed parameter; rows follow the queries.
    """
    cfg = cfg or FieldConfig()
    pts, _ = _as_query_array(queries)
    lo, hi = param_bounds(p.n, p.k)
    z0 = to_unconstrained(pack_params(p), lo, hi)
    grad = np.empty((pts.shape[0], z0.size))
    for j in range(z0.size):
        zp = z0.copy()
        zp[j] += step
        zm = z0.copy()
        zm[j] -= step
        fp = soft_occupancy(unpack_params(from_unconstrained(zp, lo, hi), p.n, p.k), pts, cfg)
        fm = soft_occupancy(unpack_params(from_unconstrained(zm, lo, hi), p.n, p.k), pts, cfg)
        grad[:, j] = (fp - fm) / (2.0 * step)
    return grad


# ---------------------------------------------------------------------------
# Point-in-mesh (orientation-signed z-ray crossings)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _winding_kernel(qx, qy, qz, tri_x, tri_y, tri_z, bin_start, bin_items,
                    nbx, nby, lox, loy, sx, sy, out):
    for q in range(qx.shape[0]):
        bx = int((qx[q] - lox) / sx)
        by = int((qy[q] - loy) / sy)
        if bx < 0 or bx >= nbx or by < 0 or by >= nby:
            out[q] = 0
            continue
        b = bx * nby + by
        wind = 0
        for s in range(bin_start[b], bin_start[b + 1]):
            t = bin_items[s]
            x1, x2, x3 = tri_x[t, 0], tri_x[t, 1], tri_x[t, 2]
            y1, y2, y3 = tri_y[t, 0], tri_y[t, 1], tri_y[t, 2]
            area2 = (x2 - x1) * (y3 - y1) - (y2 - y1) * (x3 - x1)
            if area2 == 0.0:
                continue
            w3 = (x2 - x1) * (qy[q] - y1) - (y2 - y1) * (qx[q] - x1)
            w1 = (x3 - x2) * (qy[q] - y2) - (y3 - y2) * (qx[q] - x2)
            w2 = (x1 - x3) * (qy[q] - y3) - (y1 - y3) * (qx[q] - x3)
            if area2 > 0.0:
                if w1 < 0.0 or w2 < 0.0 or w3 < 0.0:
                    continue
            else:
                if w1 > 0.0 or w2 > 0.0 or w3 > 0.0:
                    continue
            z = (w1 * tri_z[t, 0] + w2 * tri_z[t, 1] + w3 * tri_z[t, 2]) / area2
            if z > qz[q]:
                wind += 1 if area2 > 0.0 else -1
        out[q] = wind


def mesh_winding(mesh: TriMesh, queries) -> np.ndarray:
    """Signed count of mesh sheets above each query along +z.

    Equals the coverage multiplicity for a consistently outward-oriented
    surface: 0 outside, 1 inside an embedded sweep, >=2 where a
    self-intersecting sweep overlaps itself.
    """
    pts, single = _as_query_array(queries)
    v = mesh.vertices
    tv = v[mesh.triangles]
    tri_x = np.ascontiguousarray(tv[:, :, 0])
    tri_y = np.ascontiguousarray(tv[:, :, 1])
    tri_z = np.ascontiguousarray(tv[:, :, 2])

    lox, hix = tri_x.min(), tri_x.max()
    loy, hiy = tri_y.min(), tri_y.max()
    nbx = nby = max(8, min(128, int(math.sqrt(mesh.triangles.shape[0] / 4)) or 8))
    sx = max((hix - lox) / nbx, 1e-12)
    sy = max((hiy - loy) / nby, 1e-12)

    ix0 = np.clip(((tri_x.min(axis=1) - lox) / sx).astype(np.int64), 0, nbx - 1)
    ix1 = np.clip(((tri_x.max(axis=1) - lox) / sx).astype(np.int64), 0, nbx - 1)
    iy0 = np.clip(((tri_y.min(axis=1) - loy) / sy).astype(np.int64), 0, nby - 1)
    iy1 = np.clip(((tri_y.max(axis=1) - loy) / sy).astype(np.int64), 0, nby - 1)

    spans_x = ix1 - ix0 + 1
    spans_y = iy1 - iy0 + 1
    counts = spans_x * spans_y
    total = int(counts.sum())
    tri_ids = np.repeat(np.arange(mesh.triangles.shape[0]), counts)
    # enumerate each triangle's covered bins
    offs = np.concatenate([[0], np.cumsum(counts)])
    local = np.arange(total) - offs[tri_ids]
    bx = ix0[tri_ids] + local // spans_y[tri_ids]
    by = iy0[tri_ids] + local % spans_y[tri_ids]
    bins = bx * nby + by

    order = np.argsort(bins, kind="stable")
    bins_sorted = bins[order]
    items = tri_ids[order]
    bin_start = np.zeros(nbx * nby + 1, dtype=np.int64)
    np.add.at(bin_start, bins_sorted + 1, 1)
    bin_start = np.cumsum(bin_start)

    out = np.empty(pts.shape[0], dtype=np.int64)
    _winding_kernel(
        np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
        np.ascontiguousarray(pts[:, 2]), tri_x, tri_y, tri_z,
        bin_start, items, nbx, nby, float(lox), float(loy), float(sx), float(sy), out,
    )
    return out[0] if single else out


def mesh_contains(mesh: TriMesh, queries):
    """Inside test from signed z-ray crossings (union semantics)."""
    w = mesh_winding(mesh, queries)
    return (w >= 1) if isinstance(w, np.ndarray) else w >= 1


# ---------------------------------------------------------------------------
# OBJ export
# ---------------------------------------------------------------------------

def write_obj(meshes, fh, group_names=None) -> None:
    """ASCII OBJ: 'v x y z' then 1-based 'f i j k', 9 significant digits, LF."""
    if isinstance(meshes, TriMesh):
        meshes = [meshes]
    offset = 0
    for idx, mesh in enumerate(meshes):
        if group_names is not None:
            fh.write(f"g {group_names[idx]}\n")
        for vx, vy, vz in mesh.vertices:
            fh.write(f"v {vx:.9g} {vy:.9g} {vz:.9g}\n")
        for t0, t1, t2 in mesh.triangles:
            fh.write(f"f {t0 + 1 + offset} {t1 + 1 + offset} {t2 + 1 + offset}\n")
        offset += mesh.vertices.shape[0]

"""Sweep-surface primitives.

A primitive is a superellipse profile swept along a clamped quadratic
B-spline axis while being rescaled by a low-degree polynomial.  The whole
solid is described by the flat vector

    [c1x, c1y, c1z, ..., cnx, cny, cnz, a, b, d, f1, ..., fk]

of length 3n + k + 3 (14 floats for the default n=3, k=2).  Profile
orientation along the axis is fixed by parallel-transport frames, so the
vector above is the complete description.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

# Parameter boxes used for bound enforcement (fitting, editing).
PROFILE_AB_RANGE = (0.01, 0.5)
PROFILE_D_RANGE = (0.3, 5.0)
CONTROL_RANGE = (-0.5, 0.5)
SCALING_COEFF_RANGE = (-0.5, 0.5)

# Positivity floor for the exposed profile scale and the softplus blend
# width that keeps the floor differentiable.
SCALE_FLOOR = 0.05
SCALE_BLEND_WIDTH = 0.01

SPLINE_DEGREE = 2

RECORD_VERSION = 1


class InvalidPrimitiveError(ValueError):
    """The primitive is geometrically unusable (e.g. fully degenerate axis)."""


@dataclass(frozen=True)
class SuperellipseProfile:
    """Closed 2D profile |x/a|^d + |y/b|^d = 1."""

    a: float
    b: float
    d: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.d > 0):
            raise ValueError(
                f"profile parameters must be positive, got a={self.a}, b={self.b}, d={self.d}"
            )


@dataclass(frozen=True)
class SweepAxis:
    """Clamped quadratic B-spline through n >= 3 control points."""

    control_points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.control_points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 3:
            raise ValueError(f"need an (n>=3, 3) control point array, got shape {pts.shape}")
        pts = np.ascontiguousarray(pts)
        pts.flags.writeable = False
        object.__setattr__(self, "control_points", pts)

    @property
    def n(self) -> int:
        return self.control_points.shape[0]


@dataclass(frozen=True)
class ScalingPoly:
    """Profile scale polynomial f1*t^k + ... + fk*t + 1 (constant term fixed)."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=np.float64))
        if c.ndim != 1 or c.size < 1:
            raise ValueError(f"need a 1D coefficient array, got shape {c.shape}")
        c = np.ascontiguousarray(c)
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def k(self) -> int:
        return self.coeffs.shape[0]


@dataclass(frozen=True)
class SweepPrimitive:
    profile: SuperellipseProfile
    axis: SweepAxis
    scaling: ScalingPoly

    @property
    def n(self) -> int:
        return self.axis.n

    @property
    def k(self) -> int:
        return self.scaling.k

    @property
    def param_count(self) -> int:
        return 3 * self.n + self.k + 3


@dataclass(frozen=True)
class Frame:
    """Orthonormal right-handed moving frame; binormal = tangent x normal."""

    origin: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    binormal: np.ndarray


# ---------------------------------------------------------------------------
# Profile
# ---------------------------------------------------------------------------

def profile_point(profile: SuperellipseProfile, theta):
    """Parametric superellipse point(s) at polar angle theta (radians)."""
    th = np.asarray(theta, dtype=np.float64)
    c = np.cos(th)
    s = np.sin(th)
    e = 2.0 / profile.d
    x = profile.a * np.abs(c) ** e * np.sign(c)
    y = profile.b * np.abs(s) ** e * np.sign(s)
    return np.stack([x, y], axis=-1)


def profile_implicit(profile: SuperellipseProfile, p):
    """Implicit value |x/a|^d + |y/b|^d: <1 inside, 1 on the curve, >1 outside."""
    q = np.asarray(p, dtype=np.float64)
    x = q[..., 0]
    y = q[..., 1]
    return (np.abs(x) / profile.a) ** profile.d + (np.abs(y) / profile.b) ** profile.d


# ---------------------------------------------------------------------------
# Axis: clamped quadratic B-spline
# ---------------------------------------------------------------------------

def spline_knots(n: int, degree: int = SPLINE_DEGREE) -> np.ndarray:
    """Clamped knot vector with uniform interior knots for n control points."""
    segments = n - degree
    interior = np.arange(1, segments) / segments
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


@njit(cache=True)
def _deboor_kernel(ctrl, knots, degree, ts, out):
    n = ctrl.shape[0]
    dim = ctrl.shape[1]
    work = np.empty((degree + 1, dim))
    for q in range(ts.shape[0]):
        t = ts[q]
        span = degree
        while span < n - 1 and knots[span + 1] <= t:
            span += 1
        for j in range(degree + 1):
            for c in range(dim):
                work[j, c] = ctrl[span - degree + j, c]
        for r in range(1, degree + 1):
            for j in range(degree, r - 1, -1):
                i = span - degree + j
                denom = knots[i + degree - r + 1] - knots[i]
                alpha = (t - knots[i]) / denom if denom > 0.0 else 0.0
                for c in range(dim):
                    work[j, c] = (1.0 - alpha) * work[j - 1, c] + alpha * work[j, c]
        for c in range(dim):
            out[q, c] = work[degree, c]


def _deboor(ctrl: np.ndarray, knots: np.ndarray, degree: int, ts: np.ndarray) -> np.ndarray:
    out = np.empty((ts.shape[0], ctrl.shape[1]))
    _deboor_kernel(
        np.ascontiguousarray(ctrl, dtype=np.float64), knots, degree,
        np.ascontiguousarray(ts, dtype=np.float64), out,
    )
    return out


def axis_point(axis: SweepAxis, t):
    """Point(s) on the axis curve; t outside [0,1] is clamped."""
    ts = np.clip(np.atleast_1d(np.asarray(t, dtype=np.float64)), 0.0, 1.0)
    knots = spline_knots(axis.n)
    out = _deboor(axis.control_points, knots, SPLINE_DEGREE, ts)
    return out[0] if np.ndim(t) == 0 else out


def _derivative_spline(axis: SweepAxis):
    knots = spline_knots(axis.n)
    c = axis.control_points
    denom = knots[1 + SPLINE_DEGREE : 1 + SPLINE_DEGREE + axis.n - 1] - knots[1 : axis.n]
    q = SPLINE_DEGREE * (c[1:] - c[:-1]) / denom[:, None]
    return q, knots[1:-1]


def axis_velocity(axis: SweepAxis, t):
    """Unnormalized first derivative of the axis curve."""
    ts = np.clip(np.atleast_1d(np.asarray(t, dtype=np.float64)), 0.0, 1.0)
    q, dknots = _derivative_spline(axis)
    out = _deboor(q, dknots, SPLINE_DEGREE - 1, ts)
    return out[0] if np.ndim(t) == 0 else out


def axis_tangent(axis: SweepAxis, t):
    """Unit tangent(s); falls back to a secant near parametric cusps."""
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    vel = np.atleast_2d(axis_velocity(axis, ts))
    norms = np.linalg.norm(vel, axis=1)
    scale = max(np.max(np.abs(axis.control_points)), 1.0)
    bad = norms < 1e-12 * scale
    if np.any(bad):
        delta = 1e-4
        lo = np.clip(ts[bad] - delta, 0.0, 1.0)
        hi = np.clip(ts[bad] + delta, 0.0, 1.0)
        sec = axis_point(axis, hi) - axis_point(axis, lo)
        sec_norms = np.linalg.norm(np.atleast_2d(sec), axis=1)
        if np.any(sec_norms < 1e-12 * scale):
            raise InvalidPrimitiveError(
                "axis derivative vanishes and secant fallback is degenerate "
                "(coincident control points)"
            )
        vel[bad] = np.atleast_2d(sec)
        norms = np.linalg.norm(vel, axis=1)
    out = vel / norms[:, None]
    return out[0] if np.ndim(t) == 0 else out


# ---------------------------------------------------------------------------
# Parallel-transport framing
# ---------------------------------------------------------------------------

@njit(cache=True)
def _transport_chain(tangents, seed_normal):
    m = tangents.shape[0]
    normals = np.empty((m, 3))
    binormals = np.empty((m, 3))
    n0 = seed_normal
    normals[0, 0] = n0[0]
    normals[0, 1] = n0[1]
    normals[0, 2] = n0[2]
    for i in range(m):
        tx, ty, tz = tangents[i, 0], tangents[i, 1], tangents[i, 2]
        if i > 0:
            px, py, pz = tangents[i - 1, 0], tangents[i - 1, 1], tangents[i - 1, 2]
            nx, ny, nz = normals[i - 1, 0], normals[i - 1, 1], normals[i - 1, 2]
            # minimal rotation taking the previous tangent to the current one
            cx = py * tz - pz * ty
            cy = pz * tx - px * tz
            cz = px * ty - py * tx
            s = math.sqrt(cx * cx + cy * cy + cz * cz)
            if s > 1e-14:
                d = px * tx + py * ty + pz * tz
                ang = math.atan2(s, d)
                ax, ay, az = cx / s, cy / s, cz / s
                ca = math.cos(ang)
                sa = math.sin(ang)
                dot_an = ax * nx + ay * ny + az * nz
                rx = nx * ca + (ay * nz - az * ny) * sa + ax * dot_an * (1.0 - ca)
                ry = ny * ca + (az * nx - ax * nz) * sa + ay * dot_an * (1.0 - ca)
                rz = nz * ca + (ax * ny - ay * nx) * sa + az * dot_an * (1.0 - ca)
                nx, ny, nz = rx, ry, rz
            normals[i, 0] = nx
            normals[i, 1] = ny
            normals[i, 2] = nz
        # re-orthogonalize against the current tangent
        nx, ny, nz = normals[i, 0], normals[i, 1], normals[i, 2]
        d = nx * tx + ny * ty + nz * tz
        nx -= d * tx
        ny -= d * ty
        nz -= d * tz
        inv = 1.0 / math.sqrt(nx * nx + ny * ny + nz * nz)
        nx *= inv
        ny *= inv
        nz *= inv
        normals[i, 0] = nx
        normals[i, 1] = ny
        normals[i, 2] = nz
        binormals[i, 0] = ty * nz - tz * ny
        binormals[i, 1] = tz * nx - tx * nz
        binormals[i, 2] = tx * ny - ty * nx
    return normals, binormals


def seed_normal(tangent: np.ndarray) -> np.ndarray:
    """World basis vector least aligned with the tangent, made orthogonal."""
    t = np.asarray(tangent, dtype=np.float64)
    k = int(np.argmin(np.abs(t)))
    e = np.zeros(3)
    e[k] = 1.0
    n = e - np.dot(e, t) * t
    return n / np.linalg.norm(n)


def transport_frame_arrays(axis: SweepAxis, ts: np.ndarray):
    """Frames along the axis at the given parameters (transported in order).

    Returns (origins, tangents, normals, binormals), each (len(ts), 3).
    """
    ts = np.asarray(ts, dtype=np.float64)
    origins = np.atleast_2d(axis_point(axis, ts))
    tangents = np.atleast_2d(axis_tangent(axis, ts))
    normals, binormals = _transport_chain(
        np.ascontiguousarray(tangents), seed_normal(tangents[0])
    )
    return origins, tangents, normals, binormals


def parallel_transport_frames(axis: SweepAxis, m: int) -> list[Frame]:
    """m frames at uniform parameters, seeded at t=0 and minimally rotated."""
    if m < 2:
        raise ValueError(f"need at least 2 frames, got {m}")
    ts = np.linspace(0.0, 1.0, m)
    origins, tangents, normals, binormals = transport_frame_arrays(axis, ts)
    return [
        Frame(origins[i].copy(), tangents[i].copy(), normals[i].copy(), binormals[i].copy())
        for i in range(m)
    ]


# ---------------------------------------------------------------------------
# Scaling function
# ---------------------------------------------------------------------------

def scaling_raw(scaling: ScalingPoly, t):
    """Raw polynomial value f1*t^k + ... + fk*t + 1 (may be non-positive)."""
    ts = np.asarray(t, dtype=np.float64)
    coeffs = np.concatenate([scaling.coeffs, [1.0]])
    return np.polyval(coeffs, ts)


def scaling_value(scaling: ScalingPoly, t):
    """Exposed profile scale: raw polynomial with a smooth positivity floor.

    Equals the raw value to double precision once it clears the floor by a
    few blend widths; never drops below SCALE_FLOOR.
    """
    raw = scaling_raw(scaling, t)
    z = (raw - SCALE_FLOOR) / SCALE_BLEND_WIDTH
    return SCALE_FLOOR + SCALE_BLEND_WIDTH * np.logaddexp(0.0, z)


# ---------------------------------------------------------------------------
# Parameter vector
# ---------------------------------------------------------------------------

def pack_params(p: SweepPrimitive) -> np.ndarray:
    """Flatten to [c1..cn, a, b, d, f1..fk] (length 3n + k + 3)."""
    return np.concatenate(
        [
            p.axis.control_points.ravel(),
            [p.profile.a, p.profile.b, p.profile.d],
            p.scaling.coeffs,
        ]
    )


def unpack_params(v: np.ndarray, n: int, k: int) -> SweepPrimitive:
    """Inverse of pack_params for the given control-point and coefficient counts."""
    v = np.asarray(v, dtype=np.float64).ravel()
    expected = 3 * n + k + 3
    if v.size != expected:
        raise ValueError(
            f"parameter vector for n={n}, k={k} must have length {expected}, got {v.size}"
        )
    ctrl = v[: 3 * n].reshape(n, 3)
    a, b, d = v[3 * n : 3 * n + 3]
    coeffs = v[3 * n + 3 :]
    return SweepPrimitive(
        profile=SuperellipseProfile(float(a), float(b), float(d)),
        axis=SweepAxis(ctrl),
        scaling=ScalingPoly(coeffs),
    )


def param_bounds(n: int, k: int):
    """(lo, hi) arrays matching the pack_params layout."""
    lo = np.empty(3 * n + k + 3)
    hi = np.empty(3 * n + k + 3)
    lo[: 3 * n] = CONTROL_RANGE[0]
    hi[: 3 * n] = CONTROL_RANGE[1]
    lo[3 * n] = lo[3 * n + 1] = PROFILE_AB_RANGE[0]
    hi[3 * n] = hi[3 * n + 1] = PROFILE_AB_RANGE[1]
    lo[3 * n + 2] = PROFILE_D_RANGE[0]
    hi[3 * n + 2] = PROFILE_D_RANGE[1]
    lo[3 * n + 3 :] = SCALING_COEFF_RANGE[0]
    hi[3 * n + 3 :] = SCALING_COEFF_RANGE[1]
    return lo, hi


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def from_unconstrained(z, lo, hi):
    """Map unconstrained reals into [lo, hi] with a sigmoid; bounds can't be violated."""
    return lo + (hi - lo) * sigmoid(z)


def to_unconstrained(values, lo, hi, margin: float = 1e-7):
    """Inverse of from_unconstrained; values are nudged strictly inside first."""
    v = np.clip(values, lo + margin * (hi - lo), hi - margin * (hi - lo))
    frac = (v - lo) / (hi - lo)
    return np.log(frac) - np.log1p(-frac)


def clamp_params(v: np.ndarray, n: int, k: int) -> np.ndarray:
    lo, hi = param_bounds(n, k)
    return np.clip(v, lo, hi)


# ---------------------------------------------------------------------------
# Slices
# ---------------------------------------------------------------------------

def slice_points(profile: SuperellipseProfile, scale: float, frame: Frame, num_points: int) -> np.ndarray:
    """Scaled profile mapped into a frame's (normal, binormal) plane."""
    theta = 2.0 * np.pi * np.arange(num_points) / num_points
    xy = profile_point(profile, theta) * scale
    return (
        frame.origin[None, :]
        + xy[:, 0:1] * frame.normal[None, :]
        + xy[:, 1:2] * frame.binormal[None, :]
    )


def profile_slice(
    p: SweepPrimitive,
    t: float,
    num_points: int,
    frame: Frame | None = None,
    transport_steps: int = 128,
) -> np.ndarray:
    """3D contour of the scaled profile at axis parameter t.

    Without an explicit frame the transport is discretized over
    transport_steps uniform sub-parameters of [0, t].
    """
    if frame is None:
        if t <= 0.0:
            ts = np.array([0.0])
        else:
            ts = np.linspace(0.0, t, transport_steps)
        origins, tangents, normals, binormals = transport_frame_arrays(p.axis, ts)
        frame = Frame(origins[-1], tangents[-1], normals[-1], binormals[-1])
    scale = float(scaling_value(p.scaling, t))
    return slice_points(p.profile, scale, frame, num_points)


# ---------------------------------------------------------------------------
# Per-primitive JSON record (shared with the CLI's assembly files)
# ---------------------------------------------------------------------------

def primitive_record(p: SweepPrimitive, gate: float = 1.0) -> dict:
    """Canonical JSON-ready record; field order is part of the format."""
    return {
        "version": RECORD_VERSION,
        "n": p.n,
        "k": p.k,
        "control_points": [[float(x) for x in row] for row in p.axis.control_points],
        "profile": {"a": p.profile.a, "b": p.profile.b, "d": p.profile.d},
        "scaling": [float(x) for x in p.scaling.coeffs],
        "gate": float(gate),
    }


def primitive_from_record(rec: dict) -> tuple[SweepPrimitive, float]:
    if not isinstance(rec, dict):
        raise ValueError("primitive record must be a JSON object")
    allowed = {"version", "n", "k", "control_points", "profile", "scaling", "gate"}
    for key in rec:
        if key not in allowed:
            raise ValueError(f"unknown field '{key}' in primitive record")
    for key in ("version", "n", "k", "control_points", "profile", "scaling"):
        if key not in rec:
            raise ValueError(f"primitive record missing field '{key}'")
    if rec["version"] != RECORD_VERSION:
        raise ValueError(f"unsupported primitive record version {rec['version']}")
    prof = rec["profile"]
    if set(prof) != {"a", "b", "d"}:
        extra = set(prof) - {"a", "b", "d"}
        name = sorted(extra)[0] if extra else "missing a/b/d"
        raise ValueError(f"unknown field '{name}' in profile record")
    ctrl = np.asarray(rec["control_points"], dtype=np.float64)
    if ctrl.shape != (rec["n"], 3):
        raise ValueError(
            f"control_points shape {ctrl.shape} does not match n={rec['n']}"
        )
    coeffs = np.asarray(rec["scaling"], dtype=np.float64)
    if coeffs.shape != (rec["k"],):
        raise ValueError(f"scaling length {coeffs.size} does not match k={rec['k']}")
    gate = float(rec.get("gate", 1.0))
    if not 0.0 <= gate <= 1.0:
        raise ValueError(f"gate {gate} outside [0, 1]")
    prim = SweepPrimitive(
        profile=SuperellipseProfile(float(prof["a"]), float(prof["b"]), float(prof["d"])),
        axis=SweepAxis(ctrl),
        scaling=ScalingPoly(coeffs),
    )
    return prim, gate

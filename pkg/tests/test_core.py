import numpy as np
import pytest
from scipy.interpolate import BSpline

from sweepfit.core import (
    InvalidPrimitiveError,
    ScalingPoly,
    SuperellipseProfile,
    SweepAxis,
    axis_point,
    axis_tangent,
    from_unconstrained,
    pack_params,
    parallel_transport_frames,
    param_bounds,
    primitive_from_record,
    primitive_record,
    profile_implicit,
    profile_point,
    profile_slice,
    scaling_value,
    seed_normal,
    spline_knots,
    to_unconstrained,
    unpack_params,
)
from conftest import make_primitive, random_primitive, straight_tube


# ---------------------------------------------------------------------------
# Superellipse profile
# ---------------------------------------------------------------------------

def test_profile_point_axis_crossings():
    circle = SuperellipseProfile(1.0, 1.0, 2.0)
    assert np.allclose(profile_point(circle, 0.0), [1.0, 0.0])
    ellipse = SuperellipseProfile(2.0, 1.0, 2.0)
    assert np.allclose(profile_point(ellipse, np.pi / 2), [0.0, 1.0], atol=1e-15)


def test_profile_point_quartic_diagonal():
    prof = SuperellipseProfile(1.0, 1.0, 4.0)
    pt = profile_point(prof, np.pi / 4)
    assert np.allclose(pt, [2 ** (-1 / 4), 2 ** (-1 / 4)], atol=1e-12)
    assert abs(abs(pt[0]) ** 4 + abs(pt[1]) ** 4 - 1.0) < 1e-12


def test_profile_implicit_classifies():
    prof = SuperellipseProfile(1.0, 1.0, 2.0)
    assert profile_implicit(prof, [0.0, 0.0]) == 0.0
    assert profile_implicit(prof, [1.0, 0.0]) == 1.0
    assert profile_implicit(prof, [1.2, 0.0]) > 1.0
    assert profile_implicit(prof, [0.3, 0.3]) < 1.0


def test_profile_parametric_implicit_round_trip():
    prof = SuperellipseProfile(0.5, 0.25, 3.0)
    pt = profile_point(prof, 1.1)
    assert abs(profile_implicit(prof, pt) - 1.0) < 1e-9


def test_profile_consistency_random_battery():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(0.01, 0.5, size=(2, 10_000))
    d = rng.uniform(0.3, 5.0, size=10_000)
    theta = rng.uniform(0.0, 2 * np.pi, size=10_000)
    c, s = np.cos(theta), np.sin(theta)
    x = a * np.abs(c) ** (2 / d) * np.sign(c)
    y = b * np.abs(s) ** (2 / d) * np.sign(s)
    g = (np.abs(x) / a) ** d + (np.abs(y) / b) ** d
    assert np.max(np.abs(g - 1.0)) < 1e-9


def test_profile_holder_continuity():
    # |P(t+h) - P(t)| <= 2(a+b) h^min(1, 2/d) over a dense grid
    rng = np.random.default_rng(1)
    theta = np.linspace(0.0, 2 * np.pi, 4097)
    h = theta[1] - theta[0]
    for _ in range(20):
        a, b = rng.uniform(0.01, 0.5, size=2)
        d = rng.uniform(0.3, 5.0)
        pts = profile_point(SuperellipseProfile(a, b, d), theta)
        steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        bound = 2.0 * (a + b) * h ** min(1.0, 2.0 / d)
        assert steps.max() <= bound * 1.01


# ---------------------------------------------------------------------------
# Axis spline
# ---------------------------------------------------------------------------

def test_axis_clamped_endpoints():
    rng = np.random.default_rng(2)
    for n in (3, 4, 5, 7):
        ctrl = rng.uniform(-0.5, 0.5, size=(n, 3))
        axis = SweepAxis(ctrl)
        assert np.array_equal(axis_point(axis, 0.0), ctrl[0])
        assert np.array_equal(axis_point(axis, 1.0), ctrl[-1])


def test_axis_midpoint_bezier():
    axis = SweepAxis([[0, 0, 0], [0.5, 0.5, 0], [1, 0, 0]])
    assert np.allclose(axis_point(axis, 0.5), [0.5, 0.25, 0.0], atol=1e-15)


def test_axis_out_of_range_clamps():
    axis = SweepAxis([[0, 0, 0], [0.5, 0.5, 0], [1, 0, 0]])
    assert np.allclose(axis_point(axis, -3.0), axis_point(axis, 0.0))
    assert np.allclose(axis_point(axis, 7.0), axis_point(axis, 1.0))


def test_axis_matches_scipy_bspline():
    rng = np.random.default_rng(3)
    ts = np.linspace(0.0, 1.0, 257)
    for n in (3, 4, 5, 6, 9):
        ctrl = rng.uniform(-0.5, 0.5, size=(n, 3))
        axis = SweepAxis(ctrl)
        ref = BSpline(spline_knots(n), ctrl, 2)(ts)
        ours = axis_point(axis, ts)
        assert np.max(np.abs(ref - ours)) < 1e-12


def test_axis_tangent_straight_line():
    axis = SweepAxis([[-0.4, 0, 0], [0.0, 0, 0], [0.4, 0, 0]])
    for t in (0.0, 0.3, 1.0):
        assert np.allclose(axis_tangent(axis, t), [1.0, 0.0, 0.0])


def test_axis_tangent_bezier_endpoints():
    axis = SweepAxis([[0, 0, 0], [0.5, 0.5, 0], [1, 0, 0]])
    r = np.sqrt(2) / 2
    assert np.allclose(axis_tangent(axis, 0.0), [r, r, 0.0])
    assert np.allclose(axis_tangent(axis, 1.0), [r, -r, 0.0])


def test_axis_tangent_degenerate_rejected():
    axis = SweepAxis(np.zeros((3, 3)))
    with pytest.raises(InvalidPrimitiveError):
        axis_tangent(axis, 0.5)


def test_axis_tangent_coincident_points_secant_fallback():
    # velocity vanishes at t=0 when c1 == c2; the secant window recovers it
    axis = SweepAxis([[0, 0, 0], [0, 0, 0], [0.4, 0.2, 0]])
    t = axis_tangent(axis, 0.0)
    assert np.isfinite(t).all()
    assert abs(np.linalg.norm(t) - 1.0) < 1e-12


def test_axis_tangent_retrace_cusp_rejected():
    # perfect retrace: derivative and secant both vanish at the cusp
    axis = SweepAxis([[0, 0, 0], [0.4, 0, 0], [0, 0, 0]])
    with pytest.raises(InvalidPrimitiveError):
        axis_tangent(axis, 0.5)


def test_axis_lipschitz():
    rng = np.random.default_rng(4)
    ts = np.linspace(0.0, 1.0, 2049)
    h = ts[1] - ts[0]
    for n in (3, 5):
        ctrl = rng.uniform(-0.5, 0.5, size=(n, 3))
        pts = axis_point(SweepAxis(ctrl), ts)
        steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        # |s'| <= 2 * (n-2) * max leg length for a clamped quadratic
        bound = 2.0 * (n - 2) * np.linalg.norm(np.diff(ctrl, axis=0), axis=1).max()
        assert steps.max() <= bound * h * 1.01


# ---------------------------------------------------------------------------
# Parallel transport frames
# ---------------------------------------------------------------------------

def test_frames_straight_axis_constant():
    axis = SweepAxis([[0, 0, -0.4], [0, 0, 0], [0, 0, 0.4]])
    frames = parallel_transport_frames(axis, 10)
    assert len(frames) == 10
    for fr in frames:
        assert np.array_equal(fr.normal, frames[0].normal)
        assert np.array_equal(fr.binormal, frames[0].binormal)


def test_frames_orthonormal_and_right_handed():
    rng = np.random.default_rng(5)
    for _ in range(50):
        ctrl = rng.uniform(-0.5, 0.5, size=(rng.integers(3, 6), 3))
        frames = parallel_transport_frames(SweepAxis(ctrl), 50)
        for fr in frames:
            m = np.stack([fr.tangent, fr.normal, fr.binormal])
            assert np.max(np.abs(m @ m.T - np.eye(3))) < 1e-9
            assert np.allclose(np.cross(fr.tangent, fr.normal), fr.binormal, atol=1e-9)


def test_frames_planar_arc_rotates_normal_with_tangent():
    # planar arc: the in-plane normal must turn by exactly the tangent turn
    axis = SweepAxis([[0.4, 0, 0], [0.4, 0.4, 0], [0, 0.4, 0]])
    frames = parallel_transport_frames(axis, 200)
    t0, t1 = frames[0].tangent, frames[-1].tangent
    turn = np.arctan2(np.cross(t0, t1)[2], np.dot(t0, t1))
    c, s = np.cos(turn), np.sin(turn)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    assert np.allclose(rot @ frames[0].normal, frames[-1].normal, atol=1e-9)


def test_frames_transport_rotation_small_steps():
    rng = np.random.default_rng(6)
    for _ in range(30):
        ctrl = rng.uniform(-0.5, 0.5, size=(3, 3))
        frames = parallel_transport_frames(SweepAxis(ctrl), 100)
        tangents = np.stack([fr.tangent for fr in frames])
        dots = np.clip((tangents[:-1] * tangents[1:]).sum(axis=1), -1.0, 1.0)
        assert np.arccos(dots).max() < np.pi / 4


def test_seed_normal_orthogonal_and_deterministic():
    t = np.array([0.6, 0.64, 0.48])
    t = t / np.linalg.norm(t)
    n = seed_normal(t)
    assert abs(np.dot(n, t)) < 1e-12
    assert abs(np.linalg.norm(n) - 1.0) < 1e-12
    assert np.array_equal(n, seed_normal(t))


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------

def test_scaling_constant_is_one():
    assert scaling_value(ScalingPoly([0.0, 0.0]), 0.7) == 1.0


def test_scaling_polynomial_value():
    assert scaling_value(ScalingPoly([0.5, 0.5]), 1.0) == 2.0


def test_scaling_floor():
    poly = ScalingPoly([0.0, -0.5])
    ts = np.linspace(0.0, 1.0, 101)
    vals = scaling_value(poly, ts)
    assert np.all(vals >= 0.05)


def test_scaling_negative_raw_still_positive():
    # raw value 1 + (-0.5) + (-0.5) = 0 at t=1 must be floored, not zero
    poly = ScalingPoly([-0.5, -0.5])
    assert scaling_value(poly, 1.0) >= 0.05


def test_scaling_matches_raw_away_from_floor():
    rng = np.random.default_rng(7)
    for _ in range(100):
        coeffs = rng.uniform(-0.5, 0.5, size=2)
        t = rng.uniform(0.0, 1.0)
        raw = coeffs[0] * t**2 + coeffs[1] * t + 1.0
        if raw >= 0.5:
            assert scaling_value(ScalingPoly(coeffs), t) == pytest.approx(raw, abs=1e-12)


def test_scaling_lipschitz():
    ts = np.linspace(0.0, 1.0, 2049)
    h = ts[1] - ts[0]
    vals = scaling_value(ScalingPoly([0.5, -0.5]), ts)
    # |f'| <= |2*f1| + |f2| = 1.5 for the raw polynomial; floor only flattens
    assert np.abs(np.diff(vals)).max() <= 1.5 * h * 1.01


# ---------------------------------------------------------------------------
# Parameter vector
# ---------------------------------------------------------------------------

def test_pack_lengths():
    p3 = straight_tube()
    assert pack_params(p3).size == 14
    p4 = make_primitive([[0, 0, -0.3], [0, 0, -0.1], [0, 0, 0.1], [0, 0, 0.3]])
    assert pack_params(p4).size == 17


def test_pack_ordering():
    p = make_primitive([[1, 2, 3], [4, 5, 6], [7, 8, 9]], a=0.1, b=0.2, d=3.0, coeffs=(0.4, -0.4))
    v = pack_params(p)
    assert np.array_equal(v, [1, 2, 3, 4, 5, 6, 7, 8, 9, 0.1, 0.2, 3.0, 0.4, -0.4])


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(8)
    for n, k in ((3, 2), (4, 2), (5, 3), (3, 1)):
        p = random_primitive(rng, n=n, k=k)
        v = pack_params(p)
        assert np.array_equal(pack_params(unpack_params(v, n, k)), v)


def test_unpack_wrong_length_message():
    with pytest.raises(ValueError, match=r"14.*13|13.*14"):
        unpack_params(np.zeros(13), 3, 2)


def test_reparameterization_round_trip_and_bounds():
    rng = np.random.default_rng(9)
    lo, hi = param_bounds(3, 2)
    v = lo + (hi - lo) * rng.uniform(0.05, 0.95, size=lo.size)
    z = to_unconstrained(v, lo, hi)
    assert np.allclose(from_unconstrained(z, lo, hi), v, atol=1e-12)
    wild = rng.normal(scale=50.0, size=lo.size)
    mapped = from_unconstrained(wild, lo, hi)
    assert np.all(mapped >= lo) and np.all(mapped <= hi)


# ---------------------------------------------------------------------------
# Slices
# ---------------------------------------------------------------------------

def test_profile_slice_straight_axis_is_planar():
    p = straight_tube(a=0.3, b=0.15, d=2.0)
    pts = profile_slice(p, 0.0, 32)
    assert np.allclose(pts[:, 2], -0.4, atol=1e-12)
    xy = pts[:, :2]
    g = profile_implicit(p.profile, xy)
    assert np.max(np.abs(g - 1.0)) < 1e-9


def test_profile_slice_pullback_on_boundary():
    rng = np.random.default_rng(10)
    for _ in range(10):
        p = random_primitive(rng)
        t = rng.uniform(0.0, 1.0)
        from sweepfit.core import scaling_value as sv, transport_frame_arrays

        ts = np.linspace(0.0, t, 128) if t > 0 else np.array([0.0])
        origins, tangents, normals, binormals = transport_frame_arrays(p.axis, ts)
        pts = profile_slice(p, t, 24)
        rel = pts - origins[-1]
        u = rel @ normals[-1]
        v = rel @ binormals[-1]
        scale = sv(p.scaling, t)
        g = profile_implicit(p.profile, np.stack([u / scale, v / scale], axis=-1))
        assert np.max(np.abs(g - 1.0)) < 1e-9


def test_profile_slice_scaling_doubles_extent():
    base = straight_tube(a=0.2, b=0.2)
    # f(0.5) = 2 via f1 = f2 = 2 - wait: 0.25*f1 + 0.5*f2 + 1 = 2
    scaled = straight_tube(a=0.2, b=0.2, coeffs=(2.0, 1.0))
    s0 = profile_slice(base, 0.5, 64)
    s1 = profile_slice(scaled, 0.5, 64)
    ext0 = s0[:, :2].max(axis=0) - s0[:, :2].min(axis=0)
    ext1 = s1[:, :2].max(axis=0) - s1[:, :2].min(axis=0)
    assert np.allclose(ext1, 2.0 * ext0, rtol=1e-9)


# ---------------------------------------------------------------------------
# JSON records
# ---------------------------------------------------------------------------

def test_primitive_record_round_trip():
    rng = np.random.default_rng(11)
    p = random_primitive(rng)
    rec = primitive_record(p, gate=0.75)
    q, gate = primitive_from_record(rec)
    assert gate == 0.75
    assert np.array_equal(pack_params(p), pack_params(q))
    assert list(rec) == ["version", "n", "k", "control_points", "profile", "scaling", "gate"]


def test_primitive_record_rejects_unknown_field():
    rec = primitive_record(straight_tube())
    rec["color"] = "red"
    with pytest.raises(ValueError, match="color"):
        primitive_from_record(rec)

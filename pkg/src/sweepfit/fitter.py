"""Joint optimization of gated sweep primitives against a voxel target.

The loss is a weighted sum of four terms: occupancy reconstruction MSE
(Boltzmann-union of gated per-primitive fields), an overlap penalty, a
parsimony term sqrt(sum of gates), and a one-directional chamfer pull of
the axes toward the medial axis.  All parameters are optimized in
unconstrained coordinates (sigmoid reparameterization for bounded
primitive parameters, logits for gates) with Adam on central finite
differences.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dfield

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .assembly import Assembly, select_primitives  # noqa: F401  (re-exported beside the losses)
from .core import (
    axis_point,
    from_unconstrained,
    pack_params,
    param_bounds,
    scaling_value,
    sigmoid,
    to_unconstrained,
    unpack_params,
)
from .occupancy import FieldConfig, _field_with_frames, _frame_batch
from .skeleton import SkeletonPoints, extract_medial_axis, initialize_primitives
from .voxels import VoxelGrid


class FitDivergedError(RuntimeError):
    """The optimization produced a non-finite loss."""


@dataclass
class FitConfig:
    primitives: int = 8
    control_points: int = 3
    scaling_degree: int = 2
    iterations: int = 2000
    learning_rate: float = 0.01
    seed: int = 0
    lambda1: float = 12.0
    alpha: float = 40.0
    lambda2: float = 6.0
    beta: float | None = None      # signed-min overlap threshold; resolves to 0.8*K
    lambda3: float | None = None   # parsimony weight; resolves to 0.3*K/8
    lambda4: float = 5.0
    lambda4_decay: float = 0.999
    overlap_mode: str = "hinge"    # "hinge" or "min"
    beta_eff: float = 1.2
    volume_points: int = 8192
    surface_points: int = 2048
    axis_samples: int = 64
    gate_cutoff: float = 0.05
    fd_step: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    prune_ratio: float = 0.3
    skeleton_cap: int | None = 4096
    collinear_axis: bool = False
    # coarser, numerically looser field than the evaluation default: the
    # optimizer only needs gradients, not a voxel-sharp transition band
    field: FieldConfig = dfield(
        default_factory=lambda: FieldConfig(frames=16, cutoff=18.0, prod_floor=1e-10)
    )

    def __post_init__(self):
        if self.primitives < 1:
            raise ValueError("need at least one primitive")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.overlap_mode not in ("hinge", "min"):
            raise ValueError(f"unknown overlap_mode {self.overlap_mode!r}")
        if self.beta is None:
            self.beta = 0.8 * self.primitives
        if self.lambda3 is None:
            self.lambda3 = 0.3 * self.primitives / 8.0
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class TestPointSet:
    __test__ = False  # not a pytest class, despite the name

    points: np.ndarray  # (P, 3)
    labels: np.ndarray  # (P,) 0/1 ground-truth occupancy


@dataclass(frozen=True)
class FitResult:
    assembly: Assembly
    trace: list


def build_test_points(grid: VoxelGrid, volume_points: int = 8192,
                      surface_points: int = 2048, seed: int = 0) -> TestPointSet:
    """Stratified cell-center samples: half occupied / half empty plus a
    band of near-surface cells (within 2 cells of the occupancy boundary)."""
    rng = np.random.default_rng(seed)
    occ = grid.cells
    occ_idx = np.argwhere(occ)
    emp_idx = np.argwhere(~occ)

    def pick(pool, count):
        if pool.shape[0] == 0:
            return np.empty((0, 3), dtype=np.int64)
        replace = pool.shape[0] < count
        sel = rng.choice(pool.shape[0], size=count, replace=replace)
        return pool[sel]

    half = volume_points // 2
    chosen = [pick(occ_idx, half), pick(emp_idx, volume_points - half)]

    grown = ndimage.binary_dilation(occ, iterations=2)
    shrunk = ndimage.binary_erosion(occ, iterations=2)
    band_idx = np.argwhere(grown & ~shrunk)
    chosen.append(pick(band_idx, surface_points))

    idx = np.concatenate([c for c in chosen if c.shape[0] > 0])
    points = -0.5 + (idx + 0.5) / grid.resolution
    labels = occ[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.float64)
    return TestPointSet(points=np.ascontiguousarray(points), labels=labels)


# ---------------------------------------------------------------------------
# Per-primitive fields and their Boltzmann assembly
# ---------------------------------------------------------------------------

def _primitive_field(prim, pts, cfg_field: FieldConfig) -> np.ndarray:
    batch = _frame_batch(prim, cfg_field.frames)
    return _field_with_frames(prim.profile, batch, pts, cfg_field)


def primitive_fields(assembly: Assembly, pts: np.ndarray, cfg_field: FieldConfig) -> np.ndarray:
    return np.stack([_primitive_field(p, pts, cfg_field) for p in assembly.primitives])


def assembled_occupancy(fields: np.ndarray, gates: np.ndarray, alpha: float) -> np.ndarray:
    """Boltzmann union of the gated columns, one value per test point."""
    gated = gates[:, None] * fields
    if gated.shape[0] == 1:
        return gated[0]  # singleton Boltzmann is the identity, exactly
    z = alpha * gated
    z = z - z.max(axis=0, keepdims=True)
    w = np.exp(z)
    return (gated * w).sum(axis=0) / w.sum(axis=0)


def _recon_from_fields(fields, gates, labels, alpha) -> float:
    assembled = assembled_occupancy(fields, gates, alpha)
    return float(np.mean((labels - assembled) ** 2))


def _overlap_from_fields(fields, gates, mode, beta, beta_eff) -> float:
    total = (gates[:, None] * fields).sum(axis=0)
    if mode == "hinge":
        return float(np.mean(np.maximum(total - beta_eff, 0.0)))
    return float(np.mean(np.minimum(total - beta, 0.0)))


def _axis_sample_points(prim, samples: int) -> np.ndarray:
    return np.atleast_2d(axis_point(prim.axis, np.linspace(0.0, 1.0, samples)))


def _axis_loss_from_samples(sample_sets, gates, skel_points, cutoff) -> float:
    keep = [s for s, g in zip(sample_sets, gates) if g > cutoff]
    if not keep:
        warnings.warn(
            "no primitive gate exceeds the membership cutoff; axis loss falls "
            "back to all primitives",
            stacklevel=2,
        )
        keep = list(sample_sets)
    pool = np.concatenate(keep)
    dist, _ = cKDTree(pool).query(skel_points, workers=1)
    return float(np.mean(dist))


# ---------------------------------------------------------------------------
# Public loss operations
# ---------------------------------------------------------------------------

def loss_recon(assembly: Assembly, tps: TestPointSet, cfg: FitConfig) -> float:
    """Mean squared error between target occupancy and the assembled field."""
    if tps.points.shape[0] == 0:
        raise ValueError("empty test point set")
    fields = primitive_fields(assembly, tps.points, cfg.field)
    return _recon_from_fields(fields, assembly.gates, tps.labels, cfg.alpha)


def loss_overlap(assembly: Assembly, tps: TestPointSet, cfg: FitConfig) -> float:
    """Penalty on summed gated occupancy beyond a threshold.

    hinge (default): mean(max(sum - beta_eff, 0));
    min:             mean(min(sum - beta, 0)), a signed variant kept for
                     comparability (negative when the field stays under beta).
    """
    fields = primitive_fields(assembly, tps.points, cfg.field)
    return _overlap_from_fields(fields, assembly.gates, cfg.overlap_mode, cfg.beta, cfg.beta_eff)


def loss_parsimony(assembly: Assembly) -> float:
    """sqrt(sum of gates): the continuous relaxation of sqrt(q)."""
    return float(np.sqrt(assembly.gates.sum()))


def loss_axis(assembly: Assembly, skel: SkeletonPoints,
              axis_samples_per_primitive: int = 64, gate_cutoff: float = 0.05) -> float:
    """One-directional chamfer: mean over skeleton points of the distance to
    the nearest axis sample of any sufficiently gated primitive."""
    if skel.points.shape[0] == 0:
        raise ValueError("empty skeleton")
    samples = [_axis_sample_points(p, axis_samples_per_primitive) for p in assembly.primitives]
    return _axis_loss_from_samples(samples, assembly.gates, skel.points, gate_cutoff)


def combine_losses(recon: float, overlap: float, parsimony: float, axis: float,
                   cfg: FitConfig, lambda4_scale: float = 1.0):
    total = (
        cfg.lambda1 * recon
        + cfg.lambda2 * overlap
        + cfg.lambda3 * parsimony
        + cfg.lambda4 * lambda4_scale * axis
    )
    parts = {
        "recon": recon,
        "overlap": overlap,
        "parsimony": parsimony,
        "axis": axis,
    }
    return total, parts


def loss_total(assembly: Assembly, tps: TestPointSet, skel: SkeletonPoints,
               cfg: FitConfig, lambda4_scale: float = 1.0):
    """Weighted sum of the four losses plus the per-term breakdown."""
    fields = primitive_fields(assembly, tps.points, cfg.field)
    recon = _recon_from_fields(fields, assembly.gates, tps.labels, cfg.alpha)
    overlap = _overlap_from_fields(fields, assembly.gates, cfg.overlap_mode, cfg.beta, cfg.beta_eff)
    pars = loss_parsimony(assembly)
    axis = loss_axis(assembly, skel, 64, cfg.gate_cutoff)
    return combine_losses(recon, overlap, pars, axis, cfg, lambda4_scale)


# ---------------------------------------------------------------------------
# Objective over unconstrained coordinates
# ---------------------------------------------------------------------------

class FitObjective:
    """loss_total as a function of the flat unconstrained vector
    [primitive params (K x D), gate logits (K)]; exposes value and a central
    finite-difference gradient with per-primitive field caching."""

    def __init__(self, tps: TestPointSet, skel: SkeletonPoints, cfg: FitConfig):
        self.tps = tps
        self.skel = skel
        self.cfg = cfg
        self.n = cfg.control_points
        self.k = cfg.scaling_degree
        self.kprims = cfg.primitives
        self.dim = 3 * self.n + self.k + 3
        self.lo, self.hi = param_bounds(self.n, self.k)

    def split(self, z: np.ndarray):
        zp = z[: self.kprims * self.dim].reshape(self.kprims, self.dim)
        zg = z[self.kprims * self.dim :]
        return zp, zg

    def decode_primitive(self, zrow: np.ndarray):
        v = from_unconstrained(zrow, self.lo, self.hi)
        if self.cfg.collinear_axis and self.n > 2:
            ctrl = v[: 3 * self.n].reshape(self.n, 3)
            t = np.linspace(0.0, 1.0, self.n)[:, None]
            v = v.copy()
            v[: 3 * self.n] = ((1 - t) * ctrl[0] + t * ctrl[-1]).ravel()
        return unpack_params(v, self.n, self.k)

    def decode(self, z: np.ndarray) -> Assembly:
        zp, zg = self.split(z)
        prims = tuple(self.decode_primitive(zp[i]) for i in range(self.kprims))
        return Assembly(primitives=prims, gates=sigmoid(zg))

    def encode(self, assembly: Assembly) -> np.ndarray:
        zp = np.stack(
            [to_unconstrained(pack_params(p), self.lo, self.hi, margin=1e-3)
             for p in assembly.primitives]
        )
        gates = np.clip(assembly.gates, 1e-6, 1 - 1e-6)
        zg = np.log(gates) - np.log1p(-gates)
        return np.concatenate([zp.ravel(), zg])

    def _evaluate(self, prims, gates, fields, samples, lambda4_scale):
        recon = _recon_from_fields(fields, gates, self.tps.labels, self.cfg.alpha)
        overlap = _overlap_from_fields(
            fields, gates, self.cfg.overlap_mode, self.cfg.beta, self.cfg.beta_eff
        )
        pars = float(np.sqrt(gates.sum()))
        axis = _axis_loss_from_samples(samples, gates, self.skel.points, self.cfg.gate_cutoff)
        return combine_losses(recon, overlap, pars, axis, self.cfg, lambda4_scale)

    def _state(self, z):
        zp, zg = self.split(z)
        prims = [self.decode_primitive(zp[i]) for i in range(self.kprims)]
        gates = np.atleast_1d(sigmoid(zg))
        batches = [_frame_batch(p, self.cfg.field.frames) for p in prims]
        fields = np.stack(
            [
                _field_with_frames(p.profile, batch, self.tps.points, self.cfg.field)
                for p, batch in zip(prims, batches)
            ]
        )
        samples = [_axis_sample_points(p, self.cfg.axis_samples) for p in prims]
        return prims, gates, batches, fields, samples

    def value(self, z: np.ndarray, lambda4_scale: float = 1.0):
        prims, gates, _, fields, samples = self._state(z)
        return self._evaluate(prims, gates, fields, samples, lambda4_scale)

    def _perturbed_field(self, prim, base_batch, j):
        """Field of a perturbed primitive, reusing base frames where the
        parameter cannot change them (profile and scaling parameters)."""
        if j < 3 * self.n:
            batch = _frame_batch(prim, self.cfg.field.frames)
        elif j < 3 * self.n + 3:
            batch = base_batch  # a, b, d leave axis, frames and scales alone
        else:
            ts, origins, tangents, normals, binormals, _, half = base_batch
            scales = np.atleast_1d(scaling_value(prim.scaling, ts))
            batch = (ts, origins, tangents, normals, binormals, scales, half)
        return _field_with_frames(prim.profile, batch, self.tps.points, self.cfg.field)

    def gradient(self, z: np.ndarray, lambda4_scale: float = 1.0) -> np.ndarray:
        h = self.cfg.fd_step
        zp, zg = self.split(z)
        prims, gates, batches, fields, samples = self._state(z)
        grad = np.zeros_like(z)

        # cache the Boltzmann ingredients of the unperturbed columns so a
        # finite-difference evaluation only re-exponentiates one column
        # (alpha * gated <= alpha, so the unshifted exponentials are safe)
        alpha = self.cfg.alpha
        gated = gates[:, None] * fields
        expcol = np.exp(alpha * gated)
        sum_num = (gated * expcol).sum(axis=0)
        sum_den = expcol.sum(axis=0)
        sum_lin = gated.sum(axis=0)
        labels = self.tps.labels
        pars_base = float(np.sqrt(gates.sum()))

        def recon_overlap(i, new_gated):
            new_exp = np.exp(alpha * new_gated)
            num = sum_num - gated[i] * expcol[i] + new_gated * new_exp
            den = sum_den - expcol[i] + new_exp
            recon = float(np.mean((labels - num / den) ** 2))
            lin = sum_lin - gated[i] + new_gated
            if self.cfg.overlap_mode == "hinge":
                overlap = float(np.mean(np.maximum(lin - self.cfg.beta_eff, 0.0)))
            else:
                overlap = float(np.mean(np.minimum(lin - self.cfg.beta, 0.0)))
            return recon, overlap

        # per-primitive skeleton distances: min over a union of sample sets is
        # the min over per-set nearest distances, so one perturbed primitive
        # only needs one small tree query
        skel_pts = self.skel.points
        cutoff = self.cfg.gate_cutoff
        d_each = np.stack(
            [cKDTree(s).query(skel_pts, workers=1)[0] for s in samples]
        )
        member = gates > cutoff
        eff = member if member.any() else np.ones(self.kprims, dtype=bool)
        axis_base = float(d_each[eff].min(axis=0).mean())
        d_other = []
        for i in range(self.kprims):
            others = eff.copy()
            others[i] = False
            if others.any():
                d_other.append(d_each[others].min(axis=0))
            else:
                d_other.append(np.full(skel_pts.shape[0], np.inf))

        for i in range(self.kprims):
            for j in range(self.dim):
                control_param = j < 3 * self.n
                vals = []
                for sign in (+1.0, -1.0):
                    zrow = zp[i].copy()
                    zrow[j] += sign * h
                    prim = self.decode_primitive(zrow)
                    field_i = self._perturbed_field(prim, batches[i], j)
                    recon, overlap = recon_overlap(i, gates[i] * field_i)
                    if control_param and eff[i]:
                        d_new = cKDTree(
                            _axis_sample_points(prim, self.cfg.axis_samples)
                        ).query(skel_pts, workers=1)[0]
                        axis = float(np.minimum(d_other[i], d_new).mean())
                    else:
                        axis = axis_base  # axis set unchanged by this parameter
                    total, _ = combine_losses(
                        recon, overlap, pars_base, axis, self.cfg, lambda4_scale
                    )
                    vals.append(total)
                grad[i * self.dim + j] = (vals[0] - vals[1]) / (2.0 * h)
        base = self.kprims * self.dim
        for i in range(self.kprims):
            vals = []
            for sign in (+1.0, -1.0):
                zg2 = zg.copy()
                zg2[i] += sign * h
                g2 = np.atleast_1d(sigmoid(zg2))
                recon, overlap = recon_overlap(i, g2[i] * fields[i])
                pars = float(np.sqrt(g2.sum()))
                m2 = g2 > cutoff
                eff2 = m2 if m2.any() else np.ones(self.kprims, dtype=bool)
                axis = float(d_each[eff2].min(axis=0).mean())
                total, _ = combine_losses(recon, overlap, pars, axis, self.cfg, lambda4_scale)
                vals.append(total)
            grad[base + i] = (vals[0] - vals[1]) / (2.0 * h)
        return grad


# ---------------------------------------------------------------------------
# Fit driver
# ---------------------------------------------------------------------------

def fit(grid: VoxelGrid, cfg: FitConfig | None = None) -> FitResult:
    """Warm-start from the medial axis, then Adam on finite differences.

    Deterministic given the seed.  The returned assembly carries
    hard-thresholded gates (gate > 0.5 -> 1, else 0) over all K primitives;
    use select_primitives to drop the rejected ones.
    """
    cfg = cfg or FitConfig()
    if grid.count() == 0:
        raise ValueError("cannot fit an empty grid")
    if grid.resolution < 8:
        raise ValueError(f"fitting needs resolution >= 8, got {grid.resolution}")
    skel = extract_medial_axis(grid, cfg.prune_ratio, cfg.skeleton_cap)
    warm = initialize_primitives(
        skel, cfg.primitives, cfg.seed, cfg.control_points, cfg.scaling_degree
    )
    tps = build_test_points(grid, cfg.volume_points, cfg.surface_points, cfg.seed)
    objective = FitObjective(tps, skel, cfg)
    z = objective.encode(warm)

    m = np.zeros_like(z)
    v = np.zeros_like(z)
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    trace = []
    for it in range(cfg.iterations):
        scale4 = cfg.lambda4_decay**it
        total, parts = objective.value(z, scale4)
        zp, zg = objective.split(z)
        record = {
            "iter": it,
            "total": total,
            "recon": parts["recon"],
            "overlap": parts["overlap"],
            "parsimony": parts["parsimony"],
            "axis": parts["axis"],
            "q_soft": float(np.atleast_1d(sigmoid(zg)).sum()),
        }
        trace.append(record)
        if not np.isfinite(total):
            weighted = {
                "recon": cfg.lambda1 * parts["recon"],
                "overlap": cfg.lambda2 * parts["overlap"],
                "parsimony": cfg.lambda3 * parts["parsimony"],
                "axis": cfg.lambda4 * scale4 * parts["axis"],
            }
            bad = [name for name, val in weighted.items() if not np.isfinite(val)]
            raise FitDivergedError(
                f"loss diverged at iteration {it}: non-finite term(s) {bad or ['total']}"
            )
        g = objective.gradient(z, scale4)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** (it + 1))
        vhat = v / (1 - b2 ** (it + 1))
        z = z - cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)

    zp, zg = objective.split(z)
    prims = tuple(objective.decode_primitive(zp[i]) for i in range(cfg.primitives))
    soft_gates = np.atleast_1d(sigmoid(zg))
    hard_gates = np.where(soft_gates > 0.5, 1.0, 0.0)
    return FitResult(assembly=Assembly(primitives=prims, gates=hard_gates), trace=trace)


def config_echo(cfg: FitConfig) -> dict:
    """The fit configuration as written into assembly files."""
    return {
        "primitives": cfg.primitives,
        "control_points": cfg.control_points,
        "scaling_degree": cfg.scaling_degree,
        "iterations": cfg.iterations,
        "learning_rate": cfg.learning_rate,
        "seed": cfg.seed,
        "lambda1": cfg.lambda1,
        "alpha": cfg.alpha,
        "lambda2": cfg.lambda2,
        "beta": cfg.beta,
        "beta_eff": cfg.beta_eff,
        "lambda3": cfg.lambda3,
        "lambda4": cfg.lambda4,
        "lambda4_decay": cfg.lambda4_decay,
        "overlap_mode": cfg.overlap_mode,
        "volume_points": cfg.volume_points,
        "surface_points": cfg.surface_points,
        "field_frames": cfg.field.frames,
        "kappa": cfg.field.kappa,
        "kappa_g": cfg.field.kappa_g,
        "collinear_axis": cfg.collinear_axis,
    }

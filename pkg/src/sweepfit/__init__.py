"""sweepfit: abstraction of voxel shapes as unions of parametric sweep surfaces."""

from .assembly import Assembly, read_assembly, select_primitives, voxelize, write_assembly
from .core import (
    Frame,
    InvalidPrimitiveError,
    ScalingPoly,
    SuperellipseProfile,
    SweepAxis,
    SweepPrimitive,
    axis_point,
    axis_tangent,
    pack_params,
    parallel_transport_frames,
    profile_implicit,
    profile_point,
    profile_slice,
    scaling_value,
    unpack_params,
)
from .fitter import FitConfig, FitResult, fit, loss_axis, loss_overlap, loss_parsimony, loss_recon, loss_total
from .metrics import MetricReport, chamfer_distance, evaluate_assembly, f_score, voxel_iou
from .occupancy import (
    FieldConfig,
    KeyPointCloud,
    TriMesh,
    grad_params,
    mesh_contains,
    oracle_occupancy,
    sample_keypoints,
    soft_occupancy,
    sweep_mesh,
    union_boltzmann,
    write_obj,
)
from .skeleton import SkeletonPoints, distance_transform, extract_medial_axis, initialize_primitives
from .voxels import VoxelGrid, grid_from_indicator, read_sweepvox, write_sweepvox

__version__ = "0.1.0"

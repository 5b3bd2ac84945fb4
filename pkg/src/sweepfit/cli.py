"""Command-line surface: fit, sweep, eval, edit, skeleton, sample.

Exit codes: 0 success, 2 input or validation error, 3 numerical failure.
All randomness is funneled through --seed; identical inputs and flags
produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .assembly import (
    Assembly,
    AssemblyFormatError,
    read_assembly,
    write_assembly,
)
from .core import (
    CONTROL_RANGE,
    PROFILE_AB_RANGE,
    PROFILE_D_RANGE,
    SCALING_COEFF_RANGE,
    ScalingPoly,
    SuperellipseProfile,
    SweepAxis,
    SweepPrimitive,
)
from .fitter import FitConfig, FitDivergedError, config_echo, fit
from .metrics import evaluate_assembly
from .occupancy import sample_keypoints, sweep_mesh, write_obj
from .skeleton import extract_medial_axis
from .voxels import SweepvoxFormatError, read_sweepvox


def _selected_indices(assembly: Assembly) -> np.ndarray:
    idx = assembly.selected_indices()
    if idx.size == 0:
        idx = np.array([int(np.argmax(assembly.gates))])
    return idx


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    grid = read_sweepvox(args.input)
    cfg = FitConfig(
        primitives=args.primitives,
        control_points=args.control_points,
        iterations=args.iters,
        seed=args.seed,
        learning_rate=args.lr,
        overlap_mode=args.overlap_mode,
        collinear_axis=args.collinear,
    )
    result = fit(grid, cfg)
    write_assembly(args.out, result.assembly, config_echo(cfg))
    if args.trace:
        with open(args.trace, "w", newline="\n") as fh:
            for record in result.trace:
                fh.write(json.dumps(record) + "\n")
    return 0


def cmd_sweep(args) -> int:
    assembly, _ = read_assembly(args.assembly)
    if args.primitive is not None:
        if not 0 <= args.primitive < assembly.count:
            raise ValueError(
                f"primitive index {args.primitive} out of range [0, {assembly.count - 1}]"
            )
        indices = [args.primitive]
    else:
        indices = list(_selected_indices(assembly))
    meshes = [
        sweep_mesh(assembly.primitives[i], args.frames, args.contour) for i in indices
    ]
    with open(args.out, "w", newline="\n") as fh:
        write_obj(meshes, fh, group_names=[f"primitive_{i}" for i in indices])
    return 0


def cmd_eval(args) -> int:
    assembly, _ = read_assembly(args.assembly)
    grid = read_sweepvox(args.voxels)
    report = evaluate_assembly(assembly, grid, tau=args.tau)
    with open(args.out, "w", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    return 0


def _rotation_matrix(axis_name: str, degrees: float) -> np.ndarray:
    unit = {"x": 0, "y": 1, "z": 2}
    if axis_name not in unit:
        raise ValueError(f"rotation axis must be x, y or z, got {axis_name!r}")
    c = math.cos(math.radians(degrees))
    s = math.sin(math.radians(degrees))
    i = unit[axis_name]
    j, k = (i + 1) % 3, (i + 2) % 3
    rot = np.zeros((3, 3))
    rot[i, i] = 1.0
    rot[j, j] = c
    rot[k, k] = c
    rot[j, k] = -s
    rot[k, j] = s
    return rot


def _validate_bounds(prim: SweepPrimitive) -> None:
    ctrl = prim.axis.control_points
    if ctrl.min() < CONTROL_RANGE[0] - 1e-12 or ctrl.max() > CONTROL_RANGE[1] + 1e-12:
        raise ValueError(
            f"control points outside {list(CONTROL_RANGE)} after edit"
        )
    for name, val, rng in (
        ("a", prim.profile.a, PROFILE_AB_RANGE),
        ("b", prim.profile.b, PROFILE_AB_RANGE),
        ("d", prim.profile.d, PROFILE_D_RANGE),
    ):
        if not rng[0] <= val <= rng[1]:
            raise ValueError(f"profile {name}={val} outside {list(rng)}")
    coeffs = prim.scaling.coeffs
    if coeffs.size and (
        coeffs.min() < SCALING_COEFF_RANGE[0] or coeffs.max() > SCALING_COEFF_RANGE[1]
    ):
        raise ValueError(f"scaling coefficients outside {list(SCALING_COEFF_RANGE)}")


def cmd_edit(args) -> int:
    assembly, echo = read_assembly(args.assembly)
    if not 0 <= args.primitive < assembly.count:
        raise ValueError(
            f"primitive index {args.primitive} out of range [0, {assembly.count - 1}]"
        )
    prim = assembly.primitives[args.primitive]
    ctrl = prim.axis.control_points.copy()
    profile = {"a": prim.profile.a, "b": prim.profile.b, "d": prim.profile.d}
    coeffs = prim.scaling.coeffs.copy()

    if args.rotate:
        axis_name, _, deg_text = args.rotate.partition(",")
        rot = _rotation_matrix(axis_name.strip(), float(deg_text))
        centroid = ctrl.mean(axis=0)
        ctrl = (ctrl - centroid) @ rot.T + centroid
    if args.translate:
        delta = np.array([float(x) for x in args.translate.split(",")])
        if delta.shape != (3,):
            raise ValueError("--translate needs dx,dy,dz")
        ctrl = ctrl + delta
    if args.scale_coeff:
        idx_text, _, val_text = args.scale_coeff.partition("=")
        idx = int(idx_text)
        if not 0 <= idx < coeffs.size:
            raise ValueError(
                f"scaling coefficient index {idx} out of range [0, {coeffs.size - 1}]"
            )
        coeffs[idx] = float(val_text)
    if args.profile_edit:
        name, _, val_text = args.profile_edit.partition("=")
        name = name.strip()
        if name not in profile:
            raise ValueError(f"profile parameter must be a, b or d, got {name!r}")
        profile[name] = float(val_text)

    edited = SweepPrimitive(
        profile=SuperellipseProfile(profile["a"], profile["b"], profile["d"]),
        axis=SweepAxis(ctrl),
        scaling=ScalingPoly(coeffs),
    )
    _validate_bounds(edited)
    prims = list(assembly.primitives)
    prims[args.primitive] = edited
    write_assembly(args.out, Assembly(tuple(prims), assembly.gates), echo)
    return 0


def cmd_skeleton(args) -> int:
    grid = read_sweepvox(args.input)
    if grid.count() == 0:
        raise ValueError(f"{args.input}: shape is empty")
    skel = extract_medial_axis(grid, args.prune)
    doc = {
        "points": [[float(x) for x in row] for row in skel.points],
        "radii": [float(r) for r in skel.radii],
    }
    with open(args.out, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return 0


def cmd_sample(args) -> int:
    assembly, _ = read_assembly(args.assembly)
    indices = _selected_indices(assembly)
    with open(args.out, "w", newline="\n") as fh:
        for i in indices:
            cloud = sample_keypoints(
                assembly.primitives[i], args.axis_points, args.frames, args.contour
            )
            for x, y, z in cloud.all_points():
                fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sweepfit",
        description="Fit, mesh, evaluate and edit sweep-surface abstractions of voxel shapes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="optimize primitives against a SWEEPVOX shape")
    p.add_argument("input", help="SWEEPVOX voxel file")
    p.add_argument("--primitives", type=int, default=8, help="maximum primitive count K")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--control-points", type=int, default=3)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--overlap-mode", choices=("hinge", "min"), default="hinge")
    p.add_argument("--collinear", action="store_true", help="force straight axes (ablation)")
    p.add_argument("--out", required=True, help="output assembly JSON")
    p.add_argument("--trace", help="optional JSONL convergence trace")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="export selected primitives as an OBJ mesh")
    p.add_argument("assembly")
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--contour", type=int, default=50)
    p.add_argument("--primitive", type=int, help="export a single primitive by index")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="score an assembly against a voxel target")
    p.add_argument("assembly")
    p.add_argument("voxels")
    p.add_argument("--tau", type=float, default=0.05, help="F1 distance threshold")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("edit", help="edit one primitive's parameters")
    p.add_argument("assembly")
    p.add_argument("--primitive", type=int, required=True)
    p.add_argument("--rotate", metavar="AXIS,DEG", help="rigidly rotate the control points")
    p.add_argument("--translate", metavar="DX,DY,DZ")
    p.add_argument("--scale-coeff", metavar="J=V", help="set scaling coefficient j")
    p.add_argument("--profile", dest="profile_edit", metavar="P=V", help="set profile a, b or d")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("skeleton", help="extract medial-axis points")
    p.add_argument("input", help="SWEEPVOX voxel file")
    p.add_argument("--prune", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_skeleton)

    p = sub.add_parser("sample", help="emit key-point clouds of selected primitives")
    p.add_argument("assembly")
    p.add_argument("--axis-points", type=int, default=124)
    p.add_argument("--frames", type=int, default=15)
    p.add_argument("--contour", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "edit" and not any(
        (args.rotate, args.translate, args.scale_coeff, args.profile_edit)
    ):
        print("error: edit needs at least one of --rotate/--translate/--scale-coeff/--profile",
              file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except FitDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (SweepvoxFormatError, AssemblyFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

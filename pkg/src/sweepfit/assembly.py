"""Assemblies: gated collections of sweep primitives and their JSON files."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import SweepPrimitive, primitive_from_record, primitive_record
from .occupancy import DEFAULT_ORACLE_FRAMES, oracle_occupancy
from .voxels import VoxelGrid

ASSEMBLY_VERSION = 1


class AssemblyFormatError(ValueError):
    """Malformed assembly JSON document."""


@dataclass(frozen=True)
class Assembly:
    """K primitives with continuous selection gates in [0, 1]."""

    primitives: tuple
    gates: np.ndarray

    def __post_init__(self):
        prims = tuple(self.primitives)
        gates = np.asarray(self.gates, dtype=np.float64)
        if len(prims) < 1:
            raise ValueError("an assembly needs at least one primitive")
        if gates.shape != (len(prims),):
            raise ValueError(
                f"gate count {gates.shape} does not match primitive count {len(prims)}"
            )
        if np.any((gates < 0) | (gates > 1)):
            raise ValueError("gates must lie in [0, 1]")
        gates = np.ascontiguousarray(gates)
        gates.flags.writeable = False
        object.__setattr__(self, "primitives", prims)
        object.__setattr__(self, "gates", gates)

    @property
    def count(self) -> int:
        return len(self.primitives)

    def selected_indices(self, threshold: float = 0.5) -> np.ndarray:
        return np.nonzero(self.gates > threshold)[0]


def select_primitives(assembly: Assembly, threshold: float = 0.5) -> Assembly:
    """Drop primitives at or below the gate threshold; survivors get gate 1.

    Keeps the max-gate primitive when everything falls below, so at least
    one primitive always survives.
    """
    keep = assembly.selected_indices(threshold)
    if keep.size == 0:
        keep = np.array([int(np.argmax(assembly.gates))])
    prims = tuple(assembly.primitives[i] for i in keep)
    return Assembly(primitives=prims, gates=np.ones(len(prims)))


def assembly_occupancy(assembly: Assembly, queries, threshold: float = 0.5,
                       dense_frames: int = DEFAULT_ORACLE_FRAMES) -> np.ndarray:
    """Hard union occupancy of the selected primitives at the queries."""
    sel = select_primitives(assembly, threshold)
    pts = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    out = np.zeros(pts.shape[0], dtype=bool)
    for prim in sel.primitives:
        remaining = ~out
        if not remaining.any():
            break
        out[remaining] = oracle_occupancy(prim, pts[remaining], dense_frames).astype(bool)
    return out


def voxelize(assembly: Assembly, resolution: int, threshold: float = 0.5,
             dense_frames: int = DEFAULT_ORACLE_FRAMES) -> VoxelGrid:
    """Rasterize the selected union on an R^3 grid over the unit cube."""
    r = resolution
    c = -0.5 + (np.arange(r) + 0.5) / r
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    occ = assembly_occupancy(assembly, pts, threshold, dense_frames)
    return VoxelGrid(occ.reshape(r, r, r))


# ---------------------------------------------------------------------------
# Assembly JSON document
# ---------------------------------------------------------------------------

def assembly_to_doc(assembly: Assembly, fit_config_echo: dict | None = None) -> dict:
    n = assembly.primitives[0].n
    k = assembly.primitives[0].k
    return {
        "version": ASSEMBLY_VERSION,
        "K": assembly.count,
        "n": n,
        "k": k,
        "primitives": [
            primitive_record(p, gate=float(g))
            for p, g in zip(assembly.primitives, assembly.gates)
        ],
        "fit_config_echo": dict(fit_config_echo or {}),
    }


def doc_to_assembly(doc: dict) -> tuple[Assembly, dict]:
    if not isinstance(doc, dict):
        raise AssemblyFormatError("assembly document must be a JSON object")
    allowed = {"version", "K", "n", "k", "primitives", "fit_config_echo"}
    for key in doc:
        if key not in allowed:
            raise AssemblyFormatError(f"unknown field '{key}' in assembly document")
    for key in ("version", "K", "n", "k", "primitives"):
        if key not in doc:
            raise AssemblyFormatError(f"assembly document missing field '{key}'")
    if doc["version"] != ASSEMBLY_VERSION:
        raise AssemblyFormatError(f"unsupported assembly version {doc['version']}")
    records = doc["primitives"]
    if not isinstance(records, list) or len(records) != doc["K"]:
        raise AssemblyFormatError(
            f"expected {doc['K']} primitive records, got {len(records) if isinstance(records, list) else type(records).__name__}"
        )
    prims = []
    gates = []
    for i, rec in enumerate(records):
        try:
            prim, gate = primitive_from_record(rec)
        except ValueError as exc:
            raise AssemblyFormatError(f"primitive {i}: {exc}") from exc
        if prim.n != doc["n"] or prim.k != doc["k"]:
            raise AssemblyFormatError(
                f"primitive {i} has n={prim.n}, k={prim.k}; document declares "
                f"n={doc['n']}, k={doc['k']}"
            )
        prims.append(prim)
        gates.append(gate)
    echo = doc.get("fit_config_echo", {})
    if not isinstance(echo, dict):
        raise AssemblyFormatError("fit_config_echo must be an object")
    return Assembly(primitives=tuple(prims), gates=np.array(gates)), echo


def write_assembly(path, assembly: Assembly, fit_config_echo: dict | None = None) -> None:
    doc = assembly_to_doc(assembly, fit_config_echo)
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_assembly(path) -> tuple[Assembly, dict]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise AssemblyFormatError(f"{path}: invalid JSON ({exc})") from exc
    return doc_to_assembly(doc)

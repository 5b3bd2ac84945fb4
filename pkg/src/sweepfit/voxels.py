"""Binary voxel grids over the unit cube and their on-disk format.

Grids cover [-0.5, 0.5]^3 with R^3 cells; the center of cell (i, j, k) is
(-0.5 + (i+0.5)/R, -0.5 + (j+0.5)/R, -0.5 + (k+0.5)/R).  The SWEEPVOX file
layout is: 8-byte magic "SWEEPVOX", little-endian uint32 R, then R^3 bytes
of 0/1 with x varying fastest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SWEEPVOX_MAGIC = b"SWEEPVOX"


class SweepvoxFormatError(ValueError):
    """Malformed SWEEPVOX payload."""


@dataclass(frozen=True)
class VoxelGrid:
    """cells[i, j, k] indexes x, y, z; True marks occupied."""

    cells: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cells, dtype=bool)
        if c.ndim != 3 or len(set(c.shape)) != 1:
            raise ValueError(f"cells must be a cubic 3D array, got shape {c.shape}")
        if c.shape[0] < 2:
            raise ValueError(f"resolution must be >= 2, got {c.shape[0]}")
        c = np.ascontiguousarray(c)
        c.flags.writeable = False
        object.__setattr__(self, "cells", c)

    @property
    def resolution(self) -> int:
        return self.cells.shape[0]

    @property
    def spacing(self) -> float:
        return 1.0 / self.resolution

    def count(self) -> int:
        return int(self.cells.sum())

    def cell_centers(self, mask: np.ndarray | None = None) -> np.ndarray:
        """World coordinates of cell centers; all cells unless a mask is given."""
        r = self.resolution
        idx = np.argwhere(np.ones_like(self.cells) if mask is None else mask)
        return -0.5 + (idx + 0.5) / r

    def axis_coords(self) -> np.ndarray:
        r = self.resolution
        return -0.5 + (np.arange(r) + 0.5) / r


def grid_from_indicator(fn, resolution: int) -> VoxelGrid:
    """Rasterize an indicator fn(points) -> bool over cell centers."""
    r = resolution
    c = -0.5 + (np.arange(r) + 0.5) / r
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    vals = np.asarray(fn(pts), dtype=bool).reshape(r, r, r)
    return VoxelGrid(vals)


def write_sweepvox(path, grid: VoxelGrid) -> None:
    r = grid.resolution
    # x fastest: serialize with axes reversed to (z, y, x) in C order
    payload = np.transpose(grid.cells, (2, 1, 0)).astype(np.uint8).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(SWEEPVOX_MAGIC)
        fh.write(struct.pack("<I", r))
        fh.write(payload)


def read_sweepvox(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:8] != SWEEPVOX_MAGIC:
        raise SweepvoxFormatError(f"{path}: missing SWEEPVOX magic")
    (r,) = struct.unpack("<I", data[8:12])
    body = data[12:]
    if len(body) != r * r * r:
        raise SweepvoxFormatError(
            f"{path}: expected {r}^3={r * r * r} voxel bytes, got {len(body)}"
        )
    raw = np.frombuffer(body, dtype=np.uint8)
    bad = (raw > 1).nonzero()[0]
    if bad.size:
        raise SweepvoxFormatError(
            f"{path}: invalid voxel byte {raw[bad[0]]} at offset {12 + int(bad[0])}"
        )
    cells = np.transpose(raw.reshape(r, r, r), (2, 1, 0)).astype(bool)
    return VoxelGrid(cells)

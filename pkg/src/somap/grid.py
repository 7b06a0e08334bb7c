"""Map geometry: the voxel grid, Morton (z-order) codes, and point/cell transforms.

The map covers an axis-aligned cube of 2^depth cells per axis starting at
``origin``.  Cells are addressed either by integer (ix, iy, iz) indices or by
their Morton code at the finest level; Morton interleaving puts the x bit
lowest, so sibling order within an octant is x-fastest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

MAX_DEPTH = 15  # packed with num_classes into one wire byte


def _spread_bits(v: int) -> int:
    """Space out the low 16 bits of v so bit k lands at bit 3k."""
    v &= 0xFFFF
    v = (v | (v << 16)) & 0x0000FF0000FF
    v = (v | (v << 8)) & 0x00F00F00F00F
    v = (v | (v << 4)) & 0x0C30C30C30C3
    v = (v | (v << 2)) & 0x249249249249
    return v


_SPREAD8 = np.array([_spread_bits(i) for i in range(256)], dtype=np.int64)


@dataclass(frozen=True)
class MapConfig:
    """Geometry of one scenario's grid: origin, resolution, depth, class count.

    The bounding box edge is cell_size * 2**depth meters.  num_classes is the
    number of object categories C; vectors over classes have length C+1 with
    component 0 reserved for free space.
    """

    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cell_size: float = 1.0
    depth: int = 4
    num_classes: int = 2

    def __post_init__(self):
        if self.cell_size <= 0:
            raise InvalidInputError(f"cell_size must be > 0, got {self.cell_size}")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise InvalidInputError(f"depth must be in [1, {MAX_DEPTH}], got {self.depth}")
        if not 1 <= self.num_classes <= 15:
            raise InvalidInputError(f"num_classes must be in [1, 15], got {self.num_classes}")

    @property
    def cells_per_axis(self) -> int:
        return 1 << self.depth

    @property
    def total_cells(self) -> int:
        return 1 << (3 * self.depth)

    @property
    def vector_length(self) -> int:
        return self.num_classes + 1

    @property
    def edge_length(self) -> float:
        return self.cell_size * self.cells_per_axis

    def cell_of_point(self, point) -> tuple[int, int, int]:
        """Integer cell containing a world point; raises if out of bounds."""
        p = np.asarray(point, dtype=np.float64)
        idx = np.floor((p - np.asarray(self.origin)) / self.cell_size).astype(np.int64)
        n = self.cells_per_axis
        if np.any(idx < 0) or np.any(idx >= n):
            raise InvalidInputError(f"point {tuple(p)} outside map bounding box")
        return int(idx[0]), int(idx[1]), int(idx[2])

    def contains_point(self, point) -> bool:
        p = np.asarray(point, dtype=np.float64)
        rel = (p - np.asarray(self.origin)) / self.cell_size
        return bool(np.all(rel >= 0) and np.all(rel < self.cells_per_axis))

    def cell_center(self, cell) -> np.ndarray:
        c = np.asarray(cell, dtype=np.float64)
        return np.asarray(self.origin) + (c + 0.5) * self.cell_size

    def check_cell(self, cell) -> tuple[int, int, int]:
        ix, iy, iz = (int(v) for v in cell)
        n = self.cells_per_axis
        if not (0 <= ix < n and 0 <= iy < n and 0 <= iz < n):
            raise InvalidInputError(f"cell {(ix, iy, iz)} outside map bounds")
        return ix, iy, iz


def morton_encode(ix, iy, iz):
    """Morton code(s) for cell indices; x occupies the lowest bit of each triplet."""
    ix = np.asarray(ix, dtype=np.int64)
    iy = np.asarray(iy, dtype=np.int64)
    iz = np.asarray(iz, dtype=np.int64)
    code = (
        _SPREAD8[ix & 0xFF]
        | (_SPREAD8[iy & 0xFF] << 1)
        | (_SPREAD8[iz & 0xFF] << 2)
        | (_SPREAD8[(ix >> 8) & 0xFF] << 24)
        | (_SPREAD8[(iy >> 8) & 0xFF] << 25)
        | (_SPREAD8[(iz >> 8) & 0xFF] << 26)
    )
    return code if code.ndim else int(code)


def morton_decode(code, depth: int):
    """Inverse of morton_encode for codes at the given depth."""
    code = np.asarray(code, dtype=np.int64)
    ix = np.zeros_like(code)
    iy = np.zeros_like(code)
    iz = np.zeros_like(code)
    for bit in range(depth):
        ix |= ((code >> (3 * bit)) & 1) << bit
        iy |= ((code >> (3 * bit + 1)) & 1) << bit
        iz |= ((code >> (3 * bit + 2)) & 1) << bit
    if code.ndim:
        return ix, iy, iz
    return int(ix), int(iy), int(iz)


def morton_order_permutation(depth: int) -> np.ndarray:
    """perm[m] = flat (ix, iy, iz) C-order index of the cell with Morton code m."""
    n = 1 << depth
    codes = np.arange(n * n * n, dtype=np.int64)
    ix, iy, iz = morton_decode(codes, depth)
    return (ix * n + iy) * n + iz

"""Background cell grid and relative-coordinate transforms.

Coordinates live in three frames:

* physical, as stored in :class:`~sphx.model.ParticleSystem`;
* normalized, ``x' = (2 x - (hi + lo)) / h_d`` so the longest axis spans
  ``[-1, 1]``;
* cell-relative, ``rel = 2 (x' - x'_cc) / h_c`` with ``x'_cc`` the cell
  center and ``h_c`` the normalized cell edge, so each component is in
  ``[-1, 1]``.

Inverting the cell-relative map gives ``x' = x'_cc + rel * h_c / 2``, so the
offset between two particles is ``(rel_i - rel_j) * h_c / 2`` plus the center
difference. Neighbor tests are evaluated in units of ``h_c / 2`` where the
center difference of cells ``o`` apart is the small integer ``2 o``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .fp16 import Precision, round_to
from .model import Domain, ParticleSystem

__all__ = [
    "CellGrid",
    "RelCoords",
    "GridError",
    "normalize_domain",
    "denormalize_domain",
    "to_relative",
    "rel_distance",
    "update_relative",
    "reconstruct_absolute",
    "rebin",
]


class GridError(ValueError):
    """A particle left the grid or moved further than one cell in a step."""


def normalize_domain(x0, domain: Domain) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    return (2.0 * x0 - (domain.hi_arr + domain.lo_arr)) / domain.h_d


def denormalize_domain(xn, domain: Domain) -> np.ndarray:
    xn = np.asarray(xn, dtype=np.float64)
    return (xn * domain.h_d + (domain.hi_arr + domain.lo_arr)) / 2.0


@njit(cache=True)
def _counting_sort(cell_of, ncells):
    start = np.zeros(ncells + 1, dtype=np.int64)
    for c in cell_of:
        start[c + 1] += 1
    for c in range(ncells):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    order = np.empty(cell_of.size, dtype=np.int64)
    for i in range(cell_of.size):
        c = cell_of[i]
        order[fill[c]] = i
        fill[c] += 1
    return start, order


class CellGrid:
    """Uniform grid of square cells whose edge is at least the cutoff.

    Parameters
    ----------
    domain : Domain
    cutoff : float
        Search radius ``2h`` in physical units.
    cell_edge : float, optional
        Physical edge length. Defaults to ``cutoff``; with periodic axes the
        default is the smallest edge >= cutoff that tiles every periodic span
        exactly.
    """

    def __init__(self, domain: Domain, cutoff: float, cell_edge: float | None = None):
        if cutoff <= 0:
            raise ValueError("cutoff must be positive")
        self.domain = domain
        self.cutoff = float(cutoff)
        spans = domain.spans
        per = np.array(domain.periodic)
        if cell_edge is None:
            cell_edge = self.cutoff
            if per.any():
                cell_edge = max(s / math.floor(s / self.cutoff + 1e-9) for s in spans[per])
        if cell_edge < self.cutoff * (1 - 1e-12):
            raise ValueError(f"cell edge {cell_edge} is smaller than the cutoff {cutoff}")
        self.cell_edge_phys = float(cell_edge)
        ratio = spans / self.cell_edge_phys
        counts = np.ceil(ratio - 1e-9).astype(np.int64)
        for k in np.flatnonzero(per):
            if abs(ratio[k] - round(ratio[k])) > 1e-9:
                raise ValueError(f"periodic span on axis {k} is not a whole number of cells")
            if counts[k] < 3:
                raise ValueError(f"periodic axis {k} needs at least 3 cells, got {counts[k]}")
        self.counts = np.maximum(counts, 1)
        self.periodic = per
        self.h_c = 2.0 * self.cell_edge_phys / domain.h_d
        self.origin_norm = -spans / domain.h_d
        self.cell_coords = np.zeros((0, domain.d), dtype=np.int64)
        self.cell_of = np.zeros(0, dtype=np.int64)
        self.cell_start = np.zeros(self.ncells + 1, dtype=np.int64)
        self.cell_particles = np.zeros(0, dtype=np.int64)

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def ncells(self) -> int:
        return int(np.prod(self.counts))

    @property
    def strides(self) -> np.ndarray:
        # x fastest
        return np.concatenate(([1], np.cumprod(self.counts[:-1]))).astype(np.int64)

    def linear(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=np.int64) @ self.strides

    def unravel(self, lin) -> np.ndarray:
        lin = np.asarray(lin, dtype=np.int64)
        out = np.empty(lin.shape + (self.d,), dtype=np.int64)
        rem = lin.copy()
        for k in range(self.d):
            out[..., k] = rem % self.counts[k]
            rem //= self.counts[k]
        return out

    def centers(self, coords=None) -> np.ndarray:
        """Normalized cell-center coordinates (all cells, or the given ones)."""
        if coords is None:
            coords = self.unravel(np.arange(self.ncells))
        return self.origin_norm + (np.asarray(coords) + 0.5) * self.h_c

    def locate(self, xn: np.ndarray) -> np.ndarray:
        """Cell coordinates of normalized positions.

        A position on a face shared by two cells goes to the lower cell.
        """
        t = (np.atleast_2d(xn) - self.origin_norm) / self.h_c
        idx = np.ceil(t).astype(np.int64) - 1
        return np.clip(idx, 0, self.counts - 1)

    def assign(self, coords: np.ndarray) -> "CellGrid":
        """Rebuild member lists from per-particle cell coordinates."""
        coords = np.ascontiguousarray(coords, dtype=np.int64)
        self.cell_coords = coords
        self.cell_of = self.linear(coords) if len(coords) else np.zeros(0, np.int64)
        self.cell_start, self.cell_particles = _counting_sort(self.cell_of, self.ncells)
        return self

    def members(self, cell: int) -> np.ndarray:
        return self.cell_particles[self.cell_start[cell] : self.cell_start[cell + 1]]

    def occupancy(self) -> np.ndarray:
        return np.diff(self.cell_start)

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_id", "count"])
            for c, n in enumerate(self.occupancy()):
                w.writerow([c, int(n)])

    def __repr__(self) -> str:
        return (f"CellGrid(counts={self.counts.tolist()}, edge={self.cell_edge_phys:g}, "
                f"h_c={self.h_c:g}, periodic={self.periodic.tolist()})")


def rebin(ps: ParticleSystem, grid: CellGrid) -> CellGrid:
    """Rebuild the grid's member lists from float64 particle positions."""
    x = ps.x
    if len(x):
        dom = grid.domain
        bad = ~(np.all((x >= dom.lo_arr) & (x <= dom.hi_arr), axis=1))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise GridError(f"particle {i} at {x[i].tolist()} is outside the grid")
    coords = grid.locate(normalize_domain(x, grid.domain)) if len(x) else np.zeros((0, grid.d), np.int64)
    return grid.assign(coords)


@dataclass
class RelCoords:
    """Cell-relative coordinates stored at ``precision``.

    ``rel`` has the storage dtype of the precision (float16 for FP16) and
    ``cell`` holds per-axis integer cell coordinates.
    """

    rel: np.ndarray
    cell: np.ndarray
    precision: Precision

    @property
    def n(self) -> int:
        return self.rel.shape[0]

    def as_f64(self) -> np.ndarray:
        return np.ascontiguousarray(self.rel, dtype=np.float64)

    def in_range(self) -> bool:
        r = self.as_f64()
        return bool(np.all((r >= -1.0) & (r <= 1.0)))


def to_relative(xn: np.ndarray, grid: CellGrid, prec=Precision.FP64) -> RelCoords:
    """Cell index and cell-relative coordinates of normalized positions."""
    prec = Precision.parse(prec)
    xn = np.atleast_2d(np.asarray(xn, dtype=np.float64))
    cell = grid.locate(xn)
    rel = 2.0 * (xn - grid.centers(cell)) / grid.h_c
    rel = np.clip(rel, -1.0, 1.0)
    return RelCoords(round_to(rel, prec).astype(prec.dtype), cell, prec)


def reconstruct_absolute(rel: RelCoords, grid: CellGrid, normalized: bool = False) -> np.ndarray:
    xn = grid.centers(rel.cell) + rel.as_f64() * (grid.h_c / 2.0)
    return xn if normalized else denormalize_domain(xn, grid.domain)


def _cell_offset(ci, cj, grid: CellGrid) -> np.ndarray:
    o = np.asarray(ci, dtype=np.int64) - np.asarray(cj, dtype=np.int64)
    for k in np.flatnonzero(grid.periodic):
        n = grid.counts[k]
        o[..., k] = (o[..., k] + n // 2) % n - n // 2
    return o


def rel_distance(pi, pj, grid: CellGrid, prec=Precision.FP64) -> float:
    """Distance between two particles given as ``(rel, cell)`` pairs.

    Every operation on the relative terms is rounded into ``prec``. The
    result is returned in normalized units.
    """
    prec = Precision.parse(prec)
    rnd = lambda v: float(round_to(v, prec))  # noqa: E731
    rel_i, cell_i = pi
    rel_j, cell_j = pj
    o = _cell_offset(cell_i, cell_j, grid)
    s = 0.0
    for k in range(grid.d):
        a = rnd(float(rel_i[k]))
        b = rnd(float(rel_j[k]))
        dk = rnd(rnd(a - b) + rnd(2.0 * o[k]))
        s = rnd(s + rnd(dk * dk))
    return rnd(math.sqrt(s)) * (grid.h_c / 2.0)


def rel_cutoff(grid: CellGrid) -> float:
    """The cutoff expressed in half-cell units, before rounding."""
    return 2.0 * grid.cutoff / grid.cell_edge_phys


def update_relative(rel: RelCoords, dx_phys: np.ndarray, grid: CellGrid,
                    prec=None) -> RelCoords:
    """Advance relative coordinates by a physical displacement.

    Components leaving ``[-1, 1]`` move the particle to the neighboring cell
    and shift the component by exactly 2. Each particle may cross at most one
    cell per call.
    """
    prec = rel.precision if prec is None else Precision.parse(prec)
    dx = np.atleast_2d(np.asarray(dx_phys, dtype=np.float64))
    if dx.shape != rel.rel.shape:
        raise ValueError(f"displacement shape {dx.shape} != {rel.rel.shape}")
    too_far = np.abs(dx) >= grid.cell_edge_phys
    if too_far.any():
        i = int(np.flatnonzero(too_far.any(axis=1))[0])
        raise GridError(f"particle {i} would skip a cell (displacement {dx[i].tolist()})")
    inc = round_to(2.0 * dx / grid.cell_edge_phys, prec)
    r = round_to(rel.as_f64() + inc, prec)
    cell = rel.cell.copy()
    up = r > 1.0
    down = r < -1.0
    r = np.where(up, round_to(r - 2.0, prec), r)
    r = np.where(down, round_to(r + 2.0, prec), r)
    cell += up.astype(np.int64) - down.astype(np.int64)
    for k in range(grid.d):
        n = grid.counts[k]
        if grid.periodic[k]:
            cell[:, k] %= n
        else:
            out = (cell[:, k] < 0) | (cell[:, k] >= n)
            if out.any():
                i = int(np.flatnonzero(out)[0])
                raise GridError(f"particle {i} left the grid along axis {k}")
    return RelCoords(r.astype(prec.dtype), cell, prec)

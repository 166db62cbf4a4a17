"""Fixed-radius neighbor search: all-list, cell link-list and RCLL.

All three backends return a :class:`NeighborTable` in canonical form (each
list sorted ascending), so tables from different backends compare with plain
array equality.

The distance test at reduced precision is ``round(sqrt(sum(round(d_k**2))))
< round(cutoff)`` with every intermediate rounded. Emulating that costs
several times more than a float64 test, so each pair is first checked in
float64 on the already-rounded inputs. When that value clears the cutoff by
more than the worst-case accumulated rounding error, the emulated test cannot
disagree with it and is skipped. Only pairs inside the band are emulated.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numba import njit

from .fp16 import Precision, round_jit, round_to
from .grid import CellGrid, RelCoords, rebin, rel_cutoff
from .model import ParticleSystem

__all__ = [
    "NeighborTable",
    "MismatchReport",
    "all_list",
    "cell_link_list",
    "rcll",
    "spatial_sort",
    "mismatch_report",
    "brute_force_reference",
]


@dataclass
class NeighborTable:
    """Per-particle neighbor lists in compressed-row form."""

    offsets: np.ndarray
    indices: np.ndarray
    radius: float
    backend: str = ""
    precision: Precision = Precision.FP64

    @property
    def n(self) -> int:
        return len(self.offsets) - 1

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> np.ndarray:
        return self.indices[self.offsets[i] : self.offsets[i + 1]]

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def n_pairs(self) -> int:
        return int(self.offsets[-1])

    def as_sets(self) -> list[set]:
        return [set(self[i].tolist()) for i in range(self.n)]

    def same_as(self, other: "NeighborTable") -> bool:
        return (np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.indices, other.indices))

    def has_self_entries(self) -> bool:
        rows = np.repeat(np.arange(self.n), self.counts)
        return bool(np.any(rows == self.indices))

    def to_csr(self):
        from scipy.sparse import csr_matrix

        data = np.ones(self.n_pairs, dtype=bool)
        return csr_matrix((data, self.indices, self.offsets), shape=(self.n, self.n))

    def is_symmetric(self) -> bool:
        a = self.to_csr()
        return (a != a.T).nnz == 0

    def permute(self, perm: np.ndarray) -> "NeighborTable":
        """Table of the reordered system ``new[a] = old[perm[a]]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        offsets, indices = _permute_csr(self.offsets, self.indices, perm, inv)
        return NeighborTable(offsets, indices, self.radius, self.backend, self.precision)

    @classmethod
    def from_sets(cls, sets, radius: float, backend: str = "", precision=Precision.FP64):
        counts = np.array([len(s) for s in sets], dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        idx = np.concatenate([np.array(sorted(s), dtype=np.int32) for s in sets]) if len(sets) else np.zeros(0, np.int32)
        return cls(offsets, idx.astype(np.int32), radius, backend, Precision.parse(precision))


@njit(cache=True)
def _sort_segment(buf, lo, hi):
    for a in range(lo + 1, hi):
        v = buf[a]
        b = a - 1
        while b >= lo and buf[b] > v:
            buf[b + 1] = buf[b]
            b -= 1
        buf[b + 1] = v


@njit(cache=True)
def _permute_csr(offsets, indices, perm, inv):
    n = perm.size
    new_off = np.empty(n + 1, dtype=np.int64)
    new_off[0] = 0
    for a in range(n):
        old = perm[a]
        new_off[a + 1] = new_off[a] + offsets[old + 1] - offsets[old]
    new_idx = np.empty(indices.size, dtype=np.int32)
    for a in range(n):
        old = perm[a]
        k = new_off[a]
        for t in range(offsets[old], offsets[old + 1]):
            new_idx[k] = inv[indices[t]]
            k += 1
        _sort_segment(new_idx, new_off[a], new_off[a + 1])
    return new_off, new_idx


@njit(cache=True)
def _emulated_within(pi, pj, shift, spans, d, cut, code):
    """The reduced-precision decision for one pair, every operation rounded.

    Offsets are ``round(round(p_i - p_j) - shift)``; nonzero ``spans``
    entries apply the minimum image instead of ``shift``.
    """
    s = 0.0
    for a in range(d):
        t = round_jit(pi[a] - pj[a], code)
        if spans[a] > 0.0:
            if t > 0.5 * spans[a]:
                t = round_jit(t - spans[a], code)
            elif t < -0.5 * spans[a]:
                t = round_jit(t + spans[a], code)
        else:
            t = round_jit(t - shift[a], code)
        s = round_jit(s + round_jit(t * t, code), code)
    return round_jit(np.sqrt(s), code) < cut


def _bands(cut: float, prec: Precision, d: int):
    # the exact float64 sum of squares of the rounded inputs differs from the
    # emulated one by a few units of roundoff, plus subnormal quanta
    margin = 32.0 * prec.unit_roundoff
    slack = 4.0 * d * prec.tiny
    c2 = cut * cut
    return c2 * (1.0 - margin) - slack, c2 * (1.0 + margin) + slack


@njit(cache=True)
def _grow(buf):
    out = np.empty(max(16, 2 * buf.size), dtype=buf.dtype)
    out[: buf.size] = buf
    return out


@njit(cache=True)
def _all_list_kernel(pos, spans, cut, lo2, hi2, code):
    n, d = pos.shape
    offsets = np.empty(n + 1, dtype=np.int64)
    buf = np.empty(max(16, 8 * n), dtype=np.int32)
    zero = np.zeros(d)
    k = 0
    for i in range(n):
        offsets[i] = k
        if buf.size < k + n:
            buf = _grow(buf)
            while buf.size < k + n:
                buf = _grow(buf)
        for j in range(n):
            s64 = 0.0
            for a in range(d):
                t = pos[i, a] - pos[j, a]
                if spans[a] > 0.0:
                    if t > 0.5 * spans[a]:
                        t -= spans[a]
                    elif t < -0.5 * spans[a]:
                        t += spans[a]
                s64 += t * t
            hit = s64 < lo2
            if not hit and s64 <= hi2:
                hit = _emulated_within(pos[i], pos[j], zero, spans, d, cut, code)
            buf[k] = j
            k += hit and j != i
    offsets[n] = k
    return offsets, buf[:k].copy()


@njit(cache=True)
def _cell_kernel(pos, cell_coords, cell_start, cell_particles, counts, periodic,
                 spans, stencil, relative, cut, lo2, hi2, code, upper=False):
    """Shared candidate loop of the link-list and RCLL backends.

    A candidate offset is ``round(round(p_i - p_j) - shift)``. With absolute
    coordinates the shift is the periodic image ``+-span`` (or 0); with
    relative coordinates it is ``2 o`` for a cell offset ``o``. A zero shift
    leaves the rounded difference unchanged. ``upper`` keeps only ``j > i``;
    the decision is symmetric, so that half determines the table.
    """
    n, d = pos.shape
    ns = stencil.shape[0]
    offsets = np.empty(n + 1, dtype=np.int64)
    buf = np.empty(max(16, 16 * n), dtype=np.int32)
    pi = np.empty(d)
    shift = np.empty((ns, d))
    cells = np.empty(ns, dtype=np.int64)
    nospan = np.zeros(d)
    pend_j = np.empty(64, dtype=np.int64)
    pend_t = np.empty(64, dtype=np.int64)
    strides = np.empty(d, dtype=np.int64)
    s = 1
    for a in range(d):
        strides[a] = s
        s *= counts[a]
    k = 0
    for i in range(n):
        offsets[i] = k
        start = k
        for a in range(d):
            pi[a] = pos[i, a]
        nvalid = 0
        room = 0
        for t in range(ns):
            ok = True
            lin = 0
            for a in range(d):
                o = stencil[t, a]
                c = cell_coords[i, a] + o
                w = 0.0
                if c < 0 or c >= counts[a]:
                    if not periodic[a]:
                        ok = False
                        break
                    if c < 0:
                        c += counts[a]
                        w = -1.0
                    else:
                        c -= counts[a]
                        w = 1.0
                lin += c * strides[a]
                shift[nvalid, a] = 2.0 * o if relative else w * spans[a]
            if ok:
                cells[nvalid] = lin
                room += cell_start[lin + 1] - cell_start[lin]
                nvalid += 1
        while buf.size < k + room:
            buf = _grow(buf)
        if pend_j.size < room:
            pend_j = np.empty(2 * room, dtype=np.int64)
            pend_t = np.empty(2 * room, dtype=np.int64)
        npend = 0
        for t in range(nvalid):
            lin = cells[t]
            sh = shift[t]
            q0 = cell_start[lin]
            if upper:
                # members are ascending within a cell
                while q0 < cell_start[lin + 1] and cell_particles[q0] <= i:
                    q0 += 1
            for q in range(q0, cell_start[lin + 1]):
                j = cell_particles[q]
                s64 = 0.0
                for a in range(d):
                    diff = (pi[a] - pos[j, a]) - sh[a]
                    s64 += diff * diff
                # branch-free append; j == i is dropped the same way
                buf[k] = j
                k += s64 < lo2 and j != i
                band = s64 >= lo2 and s64 <= hi2
                pend_j[npend] = j
                pend_t[npend] = t
                npend += band
        for q in range(npend):
            j = pend_j[q]
            if j != i and _emulated_within(pi, pos[j], shift[pend_t[q]], nospan, d, cut, code):
                buf[k] = j
                k += 1
        _sort_segment(buf, start, k)
    offsets[n] = k
    return offsets, buf[:k].copy()


def _stencil(d: int) -> np.ndarray:
    return np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)[:, ::-1].copy()


def all_list(ps: ParticleSystem, prec=Precision.FP64, cutoff: float | None = None) -> NeighborTable:
    """Check every particle against every other one."""
    prec = Precision.parse(prec)
    cutoff = ps.cutoff if cutoff is None else float(cutoff)
    pos = round_to(ps.x, prec)
    cut = float(round_to(cutoff, prec))
    spans = round_to(ps.domain.spans, prec)
    spans = np.where(np.array(ps.domain.periodic), spans, 0.0)
    lo2, hi2 = _bands(cut, prec, ps.d)
    offsets, idx = _all_list_kernel(np.ascontiguousarray(pos), spans, cut, lo2, hi2, int(prec))
    return NeighborTable(offsets, idx, cutoff, "all", prec)


def _run_cells(pos, grid: CellGrid, relative: bool, cut: float, prec: Precision):
    lo2, hi2 = _bands(cut, prec, grid.d)
    spans = round_to(grid.domain.spans, prec)
    return _cell_kernel(
        np.ascontiguousarray(pos),
        grid.cell_coords,
        grid.cell_start,
        grid.cell_particles,
        grid.counts,
        grid.periodic.astype(np.bool_),
        spans,
        _stencil(grid.d),
        relative,
        cut,
        lo2,
        hi2,
        int(prec),
    )


def cell_link_list(ps: ParticleSystem, grid: CellGrid | None = None, prec=Precision.FP64) -> NeighborTable:
    """Search the particle's own cell and its ``3**d - 1`` neighbors.

    Distances use absolute coordinates rounded into ``prec``. ``grid`` must
    have been rebinned on ``ps``; when omitted a grid with edge ``2h`` is
    built.
    """
    prec = Precision.parse(prec)
    if grid is None:
        grid = rebin(ps, CellGrid(ps.domain, ps.cutoff))
    if grid.cell_coords.shape[0] != ps.n:
        raise ValueError("grid is not binned on this particle system; call rebin first")
    pos = round_to(ps.x, prec)
    cut = float(round_to(grid.cutoff, prec))
    offsets, idx = _run_cells(pos, grid, False, cut, prec)
    return NeighborTable(offsets, idx, grid.cutoff, "cell", prec)


def rcll(rel: RelCoords, grid: CellGrid, prec=None) -> NeighborTable:
    """Cell link-list on cell-relative coordinates.

    Offsets are formed as ``(rel_i - rel_j) - 2 o`` in half-cell units, so the
    cutoff becomes ``2 * cutoff / cell_edge`` (exactly 2 when the edge equals
    the cutoff) and the arithmetic stays well inside the normal range of
    binary16.
    """
    prec = rel.precision if prec is None else Precision.parse(prec)
    if not np.array_equal(grid.cell_coords, rel.cell):
        raise ValueError("grid membership does not match the relative coordinates; call grid.assign(rel.cell)")
    pos = round_to(rel.as_f64(), prec)
    cut = float(round_to(rel_cutoff(grid), prec))
    offsets, idx = _run_cells(pos, grid, True, cut, prec)
    return NeighborTable(offsets, idx, grid.cutoff, "rcll", prec)


def spatial_sort(ps: ParticleSystem) -> np.ndarray:
    """Permutation ordering particles by x, then y, then z."""
    keys = tuple(ps.x[:, k] for k in reversed(range(ps.d)))
    return np.lexsort(keys)


@dataclass(frozen=True)
class MismatchReport:
    incorrect_count: int
    incorrect_percent: float
    oracle_pairs: int


@njit(cache=True)
def _symmetric_difference_count(oa, ia, ob, ib):
    total = 0
    for i in range(oa.size - 1):
        p, pe = oa[i], oa[i + 1]
        q, qe = ob[i], ob[i + 1]
        while p < pe and q < qe:
            if ia[p] == ib[q]:
                p += 1
                q += 1
            elif ia[p] < ib[q]:
                total += 1
                p += 1
            else:
                total += 1
                q += 1
        total += (pe - p) + (qe - q)
    return total


def mismatch_report(candidate: NeighborTable, oracle: NeighborTable) -> MismatchReport:
    """Count directed entries present in exactly one of the two tables."""
    if candidate.n != oracle.n:
        raise ValueError("tables describe different particle counts")
    count = int(_symmetric_difference_count(candidate.offsets, candidate.indices,
                                            oracle.offsets, oracle.indices))
    pairs = oracle.n_pairs
    pct = 100.0 * count / pairs if pairs else 0.0
    return MismatchReport(count, pct, pairs)


def brute_force_reference(x: np.ndarray, cutoff: float, periodic_spans=None) -> list[set]:
    """Plain numpy float64 oracle: ``{j != i : |x_i - x_j| < cutoff}``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = []
    for i in range(len(x)):
        d = x - x[i]
        if periodic_spans is not None:
            for k, span in enumerate(periodic_spans):
                if span:
                    d[:, k] -= span * np.round(d[:, k] / span)
        r = np.sqrt((d * d).sum(axis=1))
        hits = np.flatnonzero(r < cutoff)
        out.append(set(hits[hits != i].tolist()))
    return out

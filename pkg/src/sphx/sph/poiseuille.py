"""Start-up plane Poiseuille flow driven by a body force.

The simulation runs in channel units: lengths in ``L``, times in ``L**2/nu``
and densities in ``rho0``. In these units the channel is ``[0, 1]`` wide, so
absolute coordinates use the whole binary16 range the way a unit-domain code
would. Physical quantities are converted back on output.

Walls are rows of fixed dummy particles wide enough to cover ``2h``. Each
dummy mirrors a fluid row: velocity reversed, density and stress copied.
Viscosity enters through a pairwise Laplacian by default. The closure
``sigma = -p I + mu (grad v + grad v^T)`` with normalized velocity gradients
is kept as ``viscosity="stress"``; it has an undamped odd-even row mode that
the walls excite, so long runs drift away from the series solution.
The flow direction ``x`` is periodic with eight particles per row, the
fewest that still give three cells of edge ``>= 2h``.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from ..fp16 import Precision, round_jit, round_to
from ..grid import (CellGrid, RelCoords, _counting_sort, normalize_domain, rebin, rel_cutoff,
                    to_relative, update_relative)
from ..model import Domain, ParticleSystem, StressState
from ..nnps import NeighborTable, _bands, _cell_kernel, _stencil, cell_link_list, rcll
from .kernel import KernelParams
from .operators import DEGENERACY_RTOL, periodic_spans

__all__ = [
    "Approach",
    "PoiseuilleConfig",
    "PoiseuilleState",
    "PoiseuilleResult",
    "SimulationError",
    "poiseuille_theory",
    "poiseuille_displacement",
    "setup",
    "step_mixed",
    "advance",
    "max_discrepancy",
    "velocity_profile",
    "run",
]


class SimulationError(RuntimeError):
    """The integration went unstable or violated a step-size bound."""


class Approach(enum.Enum):
    """Neighbor-search configuration; everything else runs in float64."""

    I = "I"  # noqa: E741
    II = "II"
    III = "III"

    @classmethod
    def parse(cls, value) -> "Approach":
        if isinstance(value, Approach):
            return value
        return cls(str(value).strip().upper())

    @property
    def backend(self) -> str:
        return "rcll" if self is Approach.III else "cell"

    @property
    def nnps_precision(self) -> Precision:
        return Precision.FP64 if self is Approach.I else Precision.FP16


VISCOSITY_MODELS = ("laplacian", "stress")


@dataclass(frozen=True)

class PoiseuilleConfig:
    """Physical setup in SI units; ``ds`` is a fraction of the width ``L``."""

    L: float = 1e-3
    nu: float = 1e-6
    F: float = 2e-4
    rho0: float = 1e3
    c_factor: float = 10.0
    ds: float = 0.025
    t_end: float = 1.0
    row_particles: int = 8
    viscosity: str = "laplacian"

    def __post_init__(self):
        if self.viscosity not in VISCOSITY_MODELS:
            raise ValueError(f"viscosity must be one of {VISCOSITY_MODELS}, got {self.viscosity!r}")
        for name in ("L", "nu", "F", "rho0", "c_factor", "ds", "t_end"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        n = 1.0 / self.ds
        if abs(n - round(n)) > 1e-9:
            raise ValueError("1/ds must be an integer number of rows")

    @property
    def v_max(self) -> float:
        """Steady centerline velocity ``F L^2 / (8 nu)`` in m/s."""
        return self.F * self.L**2 / (8.0 * self.nu)

    @property
    def time_unit(self) -> float:
        return self.L**2 / self.nu

    @property
    def velocity_unit(self) -> float:
        return self.nu / self.L

    # channel units
    @property
    def force_nd(self) -> float:
        return self.F * self.L**3 / self.nu**2

    @property
    def c_nd(self) -> float:
        return self.c_factor * self.v_max / self.velocity_unit

    @property
    def h_nd(self) -> float:
        return 1.2 * self.ds

    @property
    def dt_nd(self) -> float:
        h = self.h_nd
        return min(0.125 * h * h, 0.25 * h / self.c_nd)

    @property
    def dt(self) -> float:
        return self.dt_nd * self.time_unit

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.dt - 1e-9))

    @property
    def n_rows(self) -> int:
        return int(round(1.0 / self.ds))

    @property
    def wall_layers(self) -> int:
        return int(math.ceil(2.0 * 1.2 - 1e-12))


def _series_terms(y, t, nu, L, tol=1e-14):
    """Yield ``(a_n, k_n, lam_n)`` until terms drop below ``tol`` of the first."""
    n = 0
    first = None
    while True:
        m = 2 * n + 1
        a = 4.0 / (math.pi**3 * m**3)
        lam = m * m * math.pi**2 * nu / L**2
        bound = a * (math.exp(-lam * t) if t > 0 else 1.0)
        if first is None:
            first = bound
        elif bound < tol * first or n > 200000:
            return
        yield a, m * math.pi / L, lam
        n += 1


def poiseuille_theory(y, t: float, cfg: PoiseuilleConfig) -> np.ndarray:
    """Series velocity of the start-up flow at height ``y`` (m) and time ``t`` (s)."""
    y = np.asarray(y, dtype=np.float64)
    F, nu, L = cfg.F, cfg.nu, cfg.L
    v = F / (2.0 * nu) * y * (L - y)
    scale = F * L**2 / nu
    for a, k, lam in _series_terms(y, t, nu, L):
        v = v - scale * a * np.sin(k * y) * math.exp(-lam * t)
    return v


def poiseuille_displacement(y, t: float, cfg: PoiseuilleConfig) -> np.ndarray:
    """Time integral of :func:`poiseuille_theory` from 0 to ``t``."""
    y = np.asarray(y, dtype=np.float64)
    F, nu, L = cfg.F, cfg.nu, cfg.L
    X = F / (2.0 * nu) * y * (L - y) * t
    scale = F * L**2 / nu
    n = 0
    while True:
        m = 2 * n + 1
        a = 4.0 / (math.pi**3 * m**3)
        lam = m * m * math.pi**2 * nu / L**2
        term = scale * a * (-math.expm1(-lam * t)) / lam
        X = X - term * np.sin(m * math.pi * y / L)
        if abs(term) < 1e-16 * abs(F / (8 * nu) * L * L * t) or n > 200000:
            break
        n += 1
    return X


@dataclass
class PoiseuilleState:
    cfg: PoiseuilleConfig
    approach: Approach
    ps: ParticleSystem
    n_fluid: int
    mirror: np.ndarray
    grid: CellGrid
    kp: KernelParams
    rel: RelCoords | None
    x0: np.ndarray
    disp: np.ndarray
    stress: StressState
    step: int = 0
    time_nd: float = 0.0
    table: NeighborTable | None = None
    table_hash: int = 0xCBF29CE484222325

    @property
    def fluid(self) -> np.ndarray:
        return np.arange(self.n_fluid)


def setup(cfg: PoiseuilleConfig, approach) -> PoiseuilleState:
    """Lattice of fluid rows between two dummy-particle walls, at rest."""
    approach = Approach.parse(approach)
    ds = cfg.ds
    nx, ny, nl = cfg.row_particles, cfg.n_rows, cfg.wall_layers
    xs = (np.arange(nx) + 0.5) * ds
    fluid_y = (np.arange(ny) + 0.5) * ds
    pts, mirror = [], []
    for k in range(ny):
        pts += [(x, fluid_y[k]) for x in xs]
    for layer in range(nl):
        for k, y in ((layer, -(layer + 0.5) * ds), (ny - 1 - layer, 1.0 + (layer + 0.5) * ds)):
            pts += [(x, y) for x in xs]
            mirror += [k * nx + c for c in range(nx)]
    x = np.array(pts)
    domain = Domain((0.0, -nl * ds), (nx * ds, 1.0 + nl * ds), periodic=(True, False))
    ps = ParticleSystem.at_rest(domain, x, ds, rho0=1.0)
    grid = CellGrid(domain, ps.cutoff)
    rel = None
    if approach is Approach.III:
        rel = to_relative(normalize_domain(ps.x, domain), grid, Precision.FP64)
        grid.assign(rel.cell)
    else:
        rebin(ps, grid)
    return PoiseuilleState(
        cfg=cfg,
        approach=approach,
        ps=ps,
        n_fluid=nx * ny,
        mirror=np.array(mirror, dtype=np.int64),
        grid=grid,
        kp=KernelParams(ps.h, 2),
        rel=rel,
        x0=ps.x.copy(),
        disp=np.zeros_like(ps.x),
        stress=StressState.zeros(ps.n, 2),
    )


@njit(cache=True, inline="always")
def _dwdr_over_r(r, h, alpha):
    R = r / h
    t = 2.0 - R
    inner = alpha * (-2.0 * R + 1.5 * R * R)
    outer = -0.5 * alpha * t * t
    v = inner if R < 1.0 else outer
    v = v if R < 2.0 else 0.0
    return v / (h * r) if r > 0.0 else 0.0


@njit(cache=True)
def _rates_stress(x, v, rho, p, m, sigma, nf, mirror, offsets, idx, span_x, h, alpha,
                  force, rtol):
    """Fused 2-D rates: normalized velocity gradient, stress, continuity, momentum.

    The sums are those of ``grad_normalized``, ``rhs_density`` and
    ``rhs_momentum`` over fluid rows, with ``mu = 1`` in channel units. Each
    unordered pair is visited once through its ``j > i`` entry and
    contributes to both particles; entries with ``j <= i`` are skipped, so a
    full table and its upper triangle give identical results. Axis ``x`` is
    periodic with span ``span_x``.
    """
    n = x.shape[0]
    npair = idx.size
    gx = np.zeros(npair)
    gy = np.zeros(npair)
    # per particle: du/dx, du/dy, dw/dx, dw/dy numerators, two denominators, two scales
    acc5 = np.zeros((n, 8))
    drho = np.zeros(n)
    for i in range(nf):
        xi, yi = x[i, 0], x[i, 1]
        ui, wi = v[i, 0], v[i, 1]
        for t in range(offsets[i], offsets[i + 1]):
            j = idx[t]
            if j <= i:
                continue
            dx = xi - x[j, 0]
            dx -= span_x * np.rint(dx / span_x)
            dy = yi - x[j, 1]
            c = _dwdr_over_r(np.sqrt(dx * dx + dy * dy), h, alpha)
            ax = c * dx
            ay = c * dy
            gx[t] = ax
            gy[t] = ay
            du = v[j, 0] - ui
            dw = v[j, 1] - wi
            # swapping i and j flips du, dw, ax and ay, so both see the same terms
            tx, ty, tz, tw = du * ax, du * ay, dw * ax, dw * ay
            qx = -dx * ax
            qy = -dy * ay
            acc5[i, 0] += tx
            acc5[i, 1] += ty
            acc5[i, 2] += tz
            acc5[i, 3] += tw
            acc5[i, 4] += qx
            acc5[i, 5] += qy
            acc5[i, 6] += abs(qx)
            acc5[i, 7] += abs(qy)
            flux = -du * ax - dw * ay
            drho[i] += m[j] * flux
            if j < nf:
                acc5[j, 0] += tx
                acc5[j, 1] += ty
                acc5[j, 2] += tz
                acc5[j, 3] += tw
                acc5[j, 4] += qx
                acc5[j, 5] += qy
                acc5[j, 6] += abs(qx)
                acc5[j, 7] += abs(qy)
                drho[j] += m[i] * flux
    for i in range(nf):
        denx, deny, scx, scy = acc5[i, 4], acc5[i, 5], acc5[i, 6], acc5[i, 7]
        okx = scx > 0.0 and abs(denx) >= rtol * scx
        oky = scy > 0.0 and abs(deny) >= rtol * scy
        dudx = acc5[i, 0] / denx if okx else 0.0
        dwdx = acc5[i, 2] / denx if okx else 0.0
        dudy = acc5[i, 1] / deny if oky else 0.0
        dwdy = acc5[i, 3] / deny if oky else 0.0
        sigma[i, 0, 0] = 2.0 * dudx - p[i]
        sigma[i, 1, 1] = 2.0 * dwdy - p[i]
        sigma[i, 0, 1] = dudy + dwdx
        sigma[i, 1, 0] = dwdx + dudy
    for k in range(mirror.size):
        sigma[nf + k] = sigma[mirror[k]]
    acc = np.zeros((n, 2))
    for i in range(nf):
        ri = 1.0 / (rho[i] * rho[i])
        sxx, sxy = sigma[i, 0, 0] * ri, sigma[i, 0, 1] * ri
        syx, syy = sigma[i, 1, 0] * ri, sigma[i, 1, 1] * ri
        for t in range(offsets[i], offsets[i + 1]):
            j = idx[t]
            if j <= i:
                continue
            rj = 1.0 / (rho[j] * rho[j])
            ax, ay = gx[t], gy[t]
            bx = (sxx + sigma[j, 0, 0] * rj) * ax + (sxy + sigma[j, 0, 1] * rj) * ay
            by = (syx + sigma[j, 1, 0] * rj) * ax + (syy + sigma[j, 1, 1] * rj) * ay
            acc[i, 0] += m[j] * bx
            acc[i, 1] += m[j] * by
            if j < nf:
                acc[j, 0] -= m[i] * bx
                acc[j, 1] -= m[i] * by
    for i in range(nf):
        acc[i, 0] += force
    return acc, drho


@njit(cache=True)
def _rates_laplacian(x, v, rho, p, m, sigma, nf, mirror, offsets, idx, span_x, h, alpha,
                     force):
    """Single-pass 2-D rates with pressure stress and a pairwise viscous Laplacian.

    Momentum is ``sum_j m_j (-(p_i/rho_i^2 + p_j/rho_j^2) grad W
    + 2 mu / (rho_i rho_j) (x_ij . grad W) / (r^2 + 0.01 h^2) v_ij) + f``
    with ``mu = 1``. Pairs are visited once as in :func:`_rates_stress`.
    ``sigma`` receives the pressure stress so callers see a consistent state.
    """
    n = x.shape[0]
    drho = np.zeros(n)
    acc = np.zeros((n, 2))
    eta2 = 0.01 * h * h
    half = 0.5 * span_x
    # per-particle factors, hoisted out of the pair loop
    pr = np.empty(n)
    irho = np.empty(n)
    for i in range(n):
        irho[i] = 1.0 / rho[i]
        pr[i] = p[i] * irho[i] * irho[i]
    for i in range(nf):
        xi, yi = x[i, 0], x[i, 1]
        ui, wi = v[i, 0], v[i, 1]
        for t in range(offsets[i], offsets[i + 1]):
            j = idx[t]
            if j <= i:
                continue
            dx = xi - x[j, 0]
            # neighbors sit near zero or near one span apart
            if dx > half:
                dx -= span_x
            elif dx < -half:
                dx += span_x
            dy = yi - x[j, 1]
            r2 = dx * dx + dy * dy
            c = _dwdr_over_r(np.sqrt(r2), h, alpha)
            du = v[j, 0] - ui
            dw = v[j, 1] - wi
            flux = -(du * dx + dw * dy) * c
            pres = -(pr[i] + pr[j]) * c
            lap = 2.0 * irho[i] * irho[j] * (c * r2) / (r2 + eta2)
            bx = pres * dx - lap * du
            by = pres * dy - lap * dw
            drho[i] += m[j] * flux
            acc[i, 0] += m[j] * bx
            acc[i, 1] += m[j] * by
            if j < nf:
                drho[j] += m[i] * flux
                acc[j, 0] -= m[i] * bx
                acc[j, 1] -= m[i] * by
    for i in range(nf):
        acc[i, 0] += force
        sigma[i, 0, 0] = -p[i]
        sigma[i, 1, 1] = -p[i]
        sigma[i, 0, 1] = 0.0
        sigma[i, 1, 0] = 0.0
    for k in range(mirror.size):
        sigma[nf + k] = sigma[mirror[k]]
    return acc, drho


@njit(cache=True)
def _poiseuille_rates(x, v, rho, p, m, sigma, nf, mirror, offsets, idx, span_x, h, alpha,
                      force, rtol, laplacian):
    """Dispatch to the viscous model selected by ``laplacian``."""
    if laplacian:
        return _rates_laplacian(x, v, rho, p, m, sigma, nf, mirror, offsets, idx, span_x, h,
                                alpha, force)
    return _rates_stress(x, v, rho, p, m, sigma, nf, mirror, offsets, idx, span_x, h, alpha,
                         force, rtol)


@njit(cache=True)
def _table_hash(h, offsets, indices):
    """FNV-1a over the ``j > i`` entries, chained across steps.

    Tables are symmetric, so the upper triangle identifies them; a full
    table and its upper triangle hash alike.
    """
    prime = np.uint64(1099511628211)
    for i in range(offsets.size - 1):
        h = (h ^ np.uint64(0xFFFFFFFF)) * prime
        for t in range(offsets[i], offsets[i + 1]):
            j = indices[t]
            if j > i:
                h = (h ^ np.uint64(j)) * prime
    return h


def _search(state: PoiseuilleState) -> NeighborTable:
    a = state.approach
    if a is Approach.III:
        return rcll(state.rel, state.grid, a.nnps_precision)
    return cell_link_list(state.ps, state.grid, a.nnps_precision)


def step_mixed(state: PoiseuilleState, record: bool = True) -> PoiseuilleState:
    """Advance one time step in place.

    Neighbor search follows the approach; rates, integration and positions
    are float64. Approach III carries the cell-relative coordinates forward
    by displacement increments, the others rebin from absolute positions.
    """
    cfg, ps, kp = state.cfg, state.ps, state.kp
    nf, mirror = state.n_fluid, state.mirror
    dt = cfg.dt_nd
    c2 = cfg.c_nd**2

    table = _search(state)
    state.table = table
    if record:
        state.table_hash = int(_table_hash(np.uint64(state.table_hash), table.offsets, table.indices))

    acc, drho = _poiseuille_rates(ps.x, ps.v, ps.rho, ps.p, ps.m, state.stress.sigma, nf, mirror,
                                  table.offsets, table.indices, float(ps.domain.spans[0]),
                                  kp.h, kp.alpha, cfg.force_nd, DEGENERACY_RTOL,
                                  cfg.viscosity == "laplacian")
    ps.v[:nf] += acc[:nf] * dt
    ps.rho[:nf] += drho[:nf] * dt
    ps.p[:nf] = c2 * (ps.rho[:nf] - 1.0)
    dx = np.zeros_like(ps.x)
    dx[:nf] = ps.v[:nf] * dt
    if not np.all(np.isfinite(dx)):
        raise SimulationError(f"non-finite state at step {state.step}")
    if np.abs(dx).max() >= 0.5 * state.grid.cell_edge_phys:
        raise SimulationError(f"step {state.step}: displacement exceeds half a cell")
    ps.x += dx
    ps.domain.wrap(ps.x)
    state.disp += dx

    ps.v[nf:] = -ps.v[mirror]
    ps.rho[nf:] = ps.rho[mirror]
    ps.p[nf:] = ps.p[mirror]

    if state.approach is Approach.III:
        state.rel = update_relative(state.rel, dx, state.grid, Precision.FP64)
        state.grid.assign(state.rel.cell)
    else:
        rebin(ps, state.grid)
    state.step += 1
    state.time_nd += dt
    return state


def velocity_profile(state: PoiseuilleState) -> np.ndarray:
    """Rows ``(y, v_sim, v_theory)`` in SI units, one per fluid row."""
    cfg = state.cfg
    nx = cfg.row_particles
    y = state.ps.x[: state.n_fluid, 1].reshape(-1, nx).mean(axis=1)
    v = state.ps.v[: state.n_fluid, 0].reshape(-1, nx).mean(axis=1)
    t = state.time_nd * cfg.time_unit
    y_si = y * cfg.L
    return np.column_stack([y_si, v * cfg.velocity_unit, poiseuille_theory(y_si, t, cfg)])


def max_discrepancy(state: PoiseuilleState) -> float:
    """Largest distance between simulated and theoretical displacement, in units of ds."""
    cfg = state.cfg
    nf = state.n_fluid
    t = state.time_nd * cfg.time_unit
    X = poiseuille_displacement(state.x0[:nf, 1] * cfg.L, t, cfg) / cfg.L
    err = np.hypot(state.disp[:nf, 0] - X, state.disp[:nf, 1])
    return float(err.max() / cfg.ds)


# --- compiled time loop -------------------------------------------------------
#
# ``_advance`` performs exactly the arithmetic of ``step_mixed`` through the
# same compiled kernels, without returning to Python between steps. A test
# checks the two paths agree bit for bit.

_OK, _NONFINITE, _TOO_FAST, _LEFT_GRID = 0, 1, 2, 3


@njit(cache=True)
def _rebin_coords(x, lo, hi, h_d, origin, h_c, counts, cell):
    n, d = x.shape
    for i in range(n):
        for a in range(d):
            if not (x[i, a] >= lo[a] and x[i, a] <= hi[a]):
                return False
    for i in range(n):
        for a in range(d):
            xn = (2.0 * x[i, a] - (hi[a] + lo[a])) / h_d
            c = np.int64(np.ceil((xn - origin[a]) / h_c)) - 1
            cell[i, a] = min(max(c, 0), counts[a] - 1)
    return True


@njit(cache=True)
def _update_rel(rel, cell, dx, edge, counts, periodic):
    n, d = rel.shape
    for i in range(n):
        for a in range(d):
            r = rel[i, a] + 2.0 * dx[i, a] / edge
            c = cell[i, a]
            if r > 1.0:
                r = r - 2.0
                c += 1
            elif r < -1.0:
                r = r + 2.0
                c -= 1
            if periodic[a]:
                c = c % counts[a]
            elif c < 0 or c >= counts[a]:
                return False
            rel[i, a] = r
            cell[i, a] = c
    return True


@njit(cache=True)
def _search_compiled(coords, cell, counts, periodic, spans, stencil, strides, ncells,
                     relative, cut, lo2, hi2, code):
    """Upper-triangle table, the half the compiled loop consumes."""
    n, d = coords.shape
    pos = np.empty_like(coords)
    for i in range(n):
        for a in range(d):
            pos[i, a] = round_jit(coords[i, a], code)
    lin = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for a in range(d):
            lin[i] += cell[i, a] * strides[a]
    start, members = _counting_sort(lin, ncells)
    return _cell_kernel(pos, cell, start, members, counts, periodic, spans, stencil,
                        relative, cut, lo2, hi2, code, True)


@njit(cache=True)
def _advance(nsteps, x, v, rho, p, m, disp, sigma, nf, mirror, body, dt, c2, h, alpha,
             pspans, lo, hi, h_d, origin, h_c, edge, counts, periodic, stencil, strides,
             ncells, relative, search_spans, cut, lo2, hi2, code, rel, cell,
             companion, rel_c, cell_c, cut_c, lo2_c, hi2_c, code_c, hsh, laplacian):
    n, d = x.shape
    dx = np.zeros((n, d))
    diverged = -1
    for step in range(nsteps):
        coords = rel if relative else x
        offsets, idx = _search_compiled(coords, cell, counts, periodic, search_spans, stencil,
                                        strides, ncells, relative, cut, lo2, hi2, code)
        hsh = _table_hash(hsh, offsets, idx)
        if companion and diverged < 0:
            off_c, idx_c = _search_compiled(rel_c, cell_c, counts, periodic, search_spans,
                                            stencil, strides, ncells, True, cut_c, lo2_c,
                                            hi2_c, code_c)
            same = off_c.size == offsets.size and idx_c.size == idx.size
            if same:
                same = np.all(off_c == offsets) and np.all(idx_c == idx)
            if not same:
                diverged = step

        acc, drho = _poiseuille_rates(x, v, rho, p, m, sigma, nf, mirror, offsets, idx,
                                      pspans[0], h, alpha, body[0], DEGENERACY_RTOL, laplacian)
        for i in range(nf):
            for a in range(d):
                v[i, a] += acc[i, a] * dt
            rho[i] += drho[i] * dt
            p[i] = c2 * (rho[i] - 1.0)
            for a in range(d):
                dx[i, a] = v[i, a] * dt
        for i in range(nf):
            for a in range(d):
                if not np.isfinite(dx[i, a]):
                    return _NONFINITE, step, hsh, diverged
                if abs(dx[i, a]) >= 0.5 * edge:
                    return _TOO_FAST, step, hsh, diverged
        for i in range(nf):
            for a in range(d):
                x[i, a] += dx[i, a]
                if periodic[a]:
                    x[i, a] = lo[a] + np.mod(x[i, a] - lo[a], hi[a] - lo[a])
                disp[i, a] += dx[i, a]
        for k in range(mirror.size):
            j = mirror[k]
            for a in range(d):
                v[nf + k, a] = -v[j, a]
            rho[nf + k] = rho[j]
            p[nf + k] = p[j]

        if relative:
            ok = _update_rel(rel, cell, dx, edge, counts, periodic)
        else:
            ok = _rebin_coords(x, lo, hi, h_d, origin, h_c, counts, cell)
        if companion and diverged < 0:
            ok = ok and _update_rel(rel_c, cell_c, dx, edge, counts, periodic)
        if not ok:
            return _LEFT_GRID, step, hsh, diverged
    return _OK, nsteps, hsh, diverged


def _search_constants(grid: CellGrid, prec: Precision, relative: bool):
    raw = rel_cutoff(grid) if relative else grid.cutoff
    cut = float(round_to(raw, prec))
    lo2, hi2 = _bands(cut, prec, grid.d)
    return cut, lo2, hi2, int(prec)


def advance(state: PoiseuilleState, nsteps: int, companion: RelCoords | None = None) -> int:
    """Compiled equivalent of ``nsteps`` calls to :func:`step_mixed`.

    With ``companion`` (float64 relative coordinates of the same initial
    state) the FP16 RCLL table is also built from those coordinates at every
    step and compared with the primary table. Returns the first step index
    where they differ, or -1.
    """
    cfg, ps, grid = state.cfg, state.ps, state.grid
    relative = state.approach is Approach.III
    prec = state.approach.nnps_precision
    cut, lo2, hi2, code = _search_constants(grid, prec, relative)
    cut_c, lo2_c, hi2_c, code_c = _search_constants(grid, Precision.FP16, True)
    dom = ps.domain
    if relative:
        rel, cell = state.rel.rel, state.rel.cell
        if rel.dtype != np.float64:
            raise ValueError("the compiled loop carries relative coordinates in float64")
    else:
        rel, cell = np.zeros((0, ps.d)), grid.cell_coords
    use_c = companion is not None
    rel_c = companion.rel if use_c else np.zeros((0, ps.d))
    cell_c = companion.cell if use_c else np.zeros((0, ps.d), dtype=np.int64)
    status, done, hsh, diverged = _advance(
        int(nsteps), ps.x, ps.v, ps.rho, ps.p, ps.m, state.disp, state.stress.sigma,
        state.n_fluid, state.mirror, np.array([cfg.force_nd, 0.0]), cfg.dt_nd, cfg.c_nd**2,
        state.kp.h, state.kp.alpha, periodic_spans(ps), dom.lo_arr, dom.hi_arr, dom.h_d,
        grid.origin_norm, grid.h_c, grid.cell_edge_phys, grid.counts,
        grid.periodic.astype(np.bool_), _stencil(ps.d), grid.strides, grid.ncells, relative,
        round_to(dom.spans, prec), cut, lo2, hi2, code, rel, cell,
        use_c, rel_c, cell_c, cut_c, lo2_c, hi2_c, code_c, np.uint64(state.table_hash),
        cfg.viscosity == "laplacian",
    )
    state.step += int(done)
    state.time_nd = state.step * cfg.dt_nd
    state.table_hash = int(hsh)
    if relative:
        grid.assign(state.rel.cell)
    else:
        grid.assign(cell)
    if status == _NONFINITE:
        raise SimulationError(f"non-finite state at step {state.step}")
    if status == _TOO_FAST:
        raise SimulationError(f"step {state.step}: displacement exceeds half a cell")
    if status == _LEFT_GRID:
        raise SimulationError(f"step {state.step}: a particle left the grid")
    return int(diverged)


@dataclass
class PoiseuilleResult:
    approach: Approach
    ds: float
    steps: int
    max_discrepancy_over_ds: float
    table_digest: str
    positions: np.ndarray
    profiles: dict
    wall_seconds: float
    companion_divergence: int | None = None


def run(cfg: PoiseuilleConfig, approach, profile_times=(), progress=None,
        compiled: bool = True, track_rcll: bool = False) -> PoiseuilleResult:
    """Integrate to ``cfg.t_end`` and measure the final discrepancy.

    ``profile_times`` are physical times at which a velocity profile is kept;
    each is taken after the first step reaching it. With ``track_rcll`` (only
    for approach I) the FP16 RCLL table of the same trajectory is compared at
    every step; see :func:`advance`.
    """
    state = setup(cfg, approach)
    companion = None
    if track_rcll:
        if state.approach is not Approach.I:
            raise ValueError("track_rcll applies to approach I only")
        companion = to_relative(normalize_domain(state.ps.x, state.ps.domain), state.grid, Precision.FP64)
    pending = sorted(float(t) for t in profile_times)
    profiles = {}
    n = cfg.n_steps
    dt = cfg.dt_nd * cfg.time_unit
    targets = [min(n, int(math.ceil(t / dt - 1e-9))) for t in pending]
    diverged = -1
    t0 = time.perf_counter()
    while state.step < n:
        stop = n
        if targets:
            stop = min(stop, max(targets[0], state.step + 1))
        if progress is not None:
            stop = min(stop, state.step + 20000)
        if compiled:
            first = state.step
            d = advance(state, stop - first, companion)
            if d >= 0 and diverged < 0:
                diverged = first + d
                companion = None
        else:
            while state.step < stop:
                step_mixed(state)
        state.time_nd = state.step * cfg.dt_nd
        while targets and state.step >= targets[0]:
            profiles[pending.pop(0)] = velocity_profile(state)
            targets.pop(0)
        if progress is not None:
            progress(state.step, n)
    return PoiseuilleResult(
        approach=state.approach,
        ds=cfg.ds,
        steps=n,
        max_discrepancy_over_ds=max_discrepancy(state),
        table_digest=f"{state.table_hash:016x}",
        positions=state.ps.x.copy(),
        profiles=profiles,
        wall_seconds=time.perf_counter() - t0,
        companion_divergence=(diverged if track_rcll else None),
    )


def scaled(cfg: PoiseuilleConfig, **changes) -> PoiseuilleConfig:
    return replace(cfg, **changes)

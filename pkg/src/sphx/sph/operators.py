"""SPH gradient operators and the conservation-law right-hand sides.

Every operator walks the compressed neighbor table once. Kernel gradients are
taken with respect to the first particle, ``grad_i W_ij = dW/dr (x_i - x_j)/r``,
using minimum-image displacements on periodic axes. The geometry can be
computed once per step with :func:`pair_geometry` and shared between
operators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..model import ParticleSystem, StressState
from ..nnps import NeighborTable
from .kernel import KernelParams, dwdR_scalar

__all__ = [
    "PairGeometry",
    "pair_geometry",
    "grad_standard",
    "grad_normalized",
    "rhs_density",
    "rhs_momentum",
    "rhs_energy",
    "momentum_pair_term",
]

DEGENERACY_RTOL = 1e-14


@dataclass
class PairGeometry:
    """Per-entry displacement ``x_i - x_j`` and kernel gradient, aligned with the table."""

    offsets: np.ndarray
    indices: np.ndarray
    disp: np.ndarray
    grad: np.ndarray


def periodic_spans(ps: ParticleSystem) -> np.ndarray:
    return np.where(np.array(ps.domain.periodic), ps.domain.spans, 0.0)


@njit(cache=True)
def _geometry(x, offsets, idx, spans, h, alpha):
    n, d = x.shape
    disp = np.empty((idx.size, d))
    grad = np.empty((idx.size, d))
    for i in range(n):
        for t in range(offsets[i], offsets[i + 1]):
            j = idx[t]
            r2 = 0.0
            for a in range(d):
                dx = x[i, a] - x[j, a]
                if spans[a] > 0.0:
                    dx -= spans[a] * np.rint(dx / spans[a])
                disp[t, a] = dx
                r2 += dx * dx
            r = math.sqrt(r2)
            c = dwdR_scalar(r / h, alpha) / (h * r) if r > 0.0 else 0.0
            for a in range(d):
                grad[t, a] = c * disp[t, a]
    return disp, grad


def pair_geometry(ps: ParticleSystem, nbrs: NeighborTable, kp: KernelParams) -> PairGeometry:
    if nbrs.n != ps.n:
        raise ValueError("neighbor table and particle system sizes differ")
    disp, grad = _geometry(ps.x, nbrs.offsets, nbrs.indices, periodic_spans(ps), kp.h, kp.alpha)
    return PairGeometry(nbrs.offsets, nbrs.indices, disp, grad)


def _geom(ps, nbrs, kp, geom):
    return pair_geometry(ps, nbrs, kp) if geom is None else geom


def _as_columns(f: np.ndarray, n: int):
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != n:
        raise ValueError(f"field has {f.shape[0]} entries, expected {n}")
    return np.ascontiguousarray(f.reshape(n, -1)), f.ndim == 1


@njit(cache=True)
def _grad_standard(f, vol, offsets, idx, grad):
    n, k = f.shape
    d = grad.shape[1]
    out = np.zeros((n, k, d))
    for i in range(n):
        for t in range(offsets[i], offsets[i + 1]):
            j = idx[t]
            for c in range(k):
                w = vol[j] * f[j, c]
                for a in range(d):
                    out[i, c, a] += w * grad[t, a]
    return out


def grad_standard(f, ps: ParticleSystem, nbrs: NeighborTable, kp: KernelParams,
                  geom: PairGeometry | None = None) -> np.ndarray:
    """``sum_j (m_j / rho_j) f_j grad_i W_ij``; shape ``(n, d)`` or ``(n, k, d)``."""
    g = _geom(ps, nbrs, kp, geom)
    cols, scalar = _as_columns(f, ps.n)
    out = _grad_standard(cols, ps.m / ps.rho, g.offsets, g.indices, g.grad)
    return out[:, 0, :] if scalar else out


@njit(cache=True)
def _grad_normalized(f, offsets, idx, disp, grad, rows, rtol):
    n, k = f.shape
    d = grad.shape[1]
    out = np.zeros((n, k, d))
    num = np.empty((k, d))
    den = np.empty(d)
    scale = np.empty(d)
    bad = 0
    for i in rows:
        num[:, :] = 0.0
        den[:] = 0.0
        scale[:] = 0.0
        for t in range(offsets[i], offsets[i + 1]):
            j = idx[t]
            for a in range(d):
                q = -disp[t, a] * grad[t, a]
                den[a] += q
                scale[a] += abs(q)
                for c in range(k):
                    num[c, a] += (f[j, c] - f[i, c]) * grad[t, a]
        degenerate = False
        for a in range(d):
            if scale[a] == 0.0 or abs(den[a]) < rtol * scale[a]:
                degenerate = True
                continue
            for c in range(k):
                out[i, c, a] = num[c, a] / den[a]
        if degenerate:
            bad += 1
    return out, bad


def grad_normalized(f, ps: ParticleSystem, nbrs: NeighborTable, kp: KernelParams,
                    geom: PairGeometry | None = None, rows=None):
    """Volume-free normalized gradient, exact on linear fields.

    Per axis ``sum_j (f_j - f_i) dW/dx / sum_j (x_j - x_i) dW/dx``.

    Returns
    -------
    grad : ndarray
        ``(n, d)`` for a scalar field, ``(n, k, d)`` for ``k`` components.
        Axes with a vanishing denominator are set to 0.
    n_degenerate : int
        Particles with at least one degenerate axis.
    """
    g = _geom(ps, nbrs, kp, geom)
    cols, scalar = _as_columns(f, ps.n)
    rows = np.arange(ps.n) if rows is None else np.asarray(rows, dtype=np.int64)
    out, bad = _grad_normalized(cols, g.offsets, g.indices, g.disp, g.grad, rows, DEGENERACY_RTOL)
    return (out[:, 0, :] if scalar else out), int(bad)


@njit(cache=True)
def _rhs_density(v, m, offsets, idx, grad, rows):
    d = v.shape[1]
    out = np.zeros(v.shape[0])
    for i in rows:
        s = 0.0
        for t in range(offsets[i], offsets[i + 1]):
            j = idx[t]
            dot = 0.0
            for a in range(d):
                dot += (v[i, a] - v[j, a]) * grad[t, a]
            s += m[j] * dot
        out[i] = s
    return out


def rhs_density(ps: ParticleSystem, nbrs: NeighborTable, kp: KernelParams,
                geom: PairGeometry | None = None, rows=None) -> np.ndarray:
    """Continuity rate ``sum_j m_j (v_i - v_j) . grad_i W_ij``."""
    g = _geom(ps, nbrs, kp, geom)
    rows = np.arange(ps.n) if rows is None else np.asarray(rows, dtype=np.int64)
    return _rhs_density(ps.v, ps.m, g.offsets, g.indices, g.grad, rows)


@njit(cache=True)
def _rhs_momentum(sigma, rho, m, body, offsets, idx, grad, rows):
    n, d = sigma.shape[0], sigma.shape[1]
    out = np.zeros((n, d))
    for i in rows:
        ri = 1.0 / (rho[i] * rho[i])
        for t in range(offsets[i], offsets[i + 1]):
            j = idx[t]
            rj = 1.0 / (rho[j] * rho[j])
            for a in range(d):
                acc = 0.0
                for b in range(d):
                    acc += (sigma[i, a, b] * ri + sigma[j, a, b] * rj) * grad[t, b]
                out[i, a] += m[j] * acc
        for a in range(d):
            out[i, a] += body[a]
    return out


def rhs_momentum(ps: ParticleSystem, stress: StressState, body_force, nbrs: NeighborTable,
                 kp: KernelParams, geom: PairGeometry | None = None, rows=None) -> np.ndarray:
    """``sum_j m_j (sigma_i/rho_i^2 + sigma_j/rho_j^2) . grad_i W_ij + f``."""
    g = _geom(ps, nbrs, kp, geom)
    rows = np.arange(ps.n) if rows is None else np.asarray(rows, dtype=np.int64)
    body = np.broadcast_to(np.asarray(body_force, dtype=np.float64), (ps.d,)).copy()
    return _rhs_momentum(stress.sigma, ps.rho, ps.m, body, g.offsets, g.indices, g.grad, rows)


def momentum_pair_term(i: int, j: int, ps: ParticleSystem, stress: StressState,
                       kp: KernelParams) -> np.ndarray:
    """Force that ``j`` exerts on ``i`` in the momentum sum, ``m_i m_j (...) . grad_i W_ij``."""
    dx = ps.x[i] - ps.x[j]
    spans = periodic_spans(ps)
    dx = np.where(spans > 0, dx - spans * np.rint(dx / np.where(spans > 0, spans, 1.0)), dx)
    r = float(np.sqrt(dx @ dx))
    c = dwdR_scalar(r / kp.h, kp.alpha) / (kp.h * r) if r > 0 else 0.0
    grad = c * dx
    s = stress.sigma[i] / ps.rho[i] ** 2 + stress.sigma[j] / ps.rho[j] ** 2
    return ps.m[i] * ps.m[j] * (s @ grad)


@njit(cache=True)
def _rhs_energy(p, rho, m, v, tau, eps, offsets, idx, grad, rows):
    n, d = v.shape
    out = np.zeros(n)
    for i in rows:
        pi = p[i] / (rho[i] * rho[i])
        s = 0.0
        for t in range(offsets[i], offsets[i + 1]):
            j = idx[t]
            dot = 0.0
            for a in range(d):
                dot += (v[i, a] - v[j, a]) * grad[t, a]
            s += m[j] * (pi + p[j] / (rho[j] * rho[j])) * dot
        work = 0.0
        for a in range(d):
            for b in range(d):
                work += tau[i, a, b] * eps[i, a, b]
        out[i] = 0.5 * s + work / rho[i]
    return out


def rhs_energy(ps: ParticleSystem, stress: StressState, nbrs: NeighborTable, kp: KernelParams,
               geom: PairGeometry | None = None, rows=None) -> np.ndarray:
    """``1/2 sum_j m_j (p_i/rho_i^2 + p_j/rho_j^2)(v_i - v_j) . grad_i W_ij + tau:eps / rho_i``."""
    g = _geom(ps, nbrs, kp, geom)
    rows = np.arange(ps.n) if rows is None else np.asarray(rows, dtype=np.int64)
    return _rhs_energy(ps.p, ps.rho, ps.m, ps.v, stress.tau, stress.eps_rate,
                       g.offsets, g.indices, g.grad, rows)

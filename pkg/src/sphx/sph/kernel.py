"""Cubic B-spline smoothing kernel with support ``2h``."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = ["KernelParams", "kernel_w", "kernel_dwdr", "kernel_grad", "alpha_d"]


def alpha_d(h: float, d: int) -> float:
    if d == 1:
        return 1.0 / h
    if d == 2:
        return 15.0 / (7.0 * math.pi * h * h)
    if d == 3:
        return 3.0 / (2.0 * math.pi * h**3)
    raise ValueError(f"dimension must be 1, 2 or 3, got {d}")


@dataclass(frozen=True)
class KernelParams:
    h: float
    d: int

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        alpha_d(self.h, self.d)

    @property
    def alpha(self) -> float:
        return alpha_d(self.h, self.d)

    @property
    def support(self) -> float:
        return 2.0 * self.h


@njit(cache=True, inline="always")
def w_scalar(R, alpha):
    if R < 1.0:
        return alpha * (2.0 / 3.0 - R * R + 0.5 * R * R * R)
    if R < 2.0:
        t = 2.0 - R
        return alpha * t * t * t / 6.0
    return 0.0


@njit(cache=True, inline="always")
def dwdR_scalar(R, alpha):
    if R < 1.0:
        return alpha * (-2.0 * R + 1.5 * R * R)
    if R < 2.0:
        t = 2.0 - R
        return -0.5 * alpha * t * t
    return 0.0


def kernel_w(r, kp: KernelParams):
    """``W(r, h)``; vectorized over ``r``."""
    R = np.asarray(r, dtype=np.float64) / kp.h
    if np.any(R < 0):
        raise ValueError("distance must be non-negative")
    t = 2.0 - R
    w = np.where(R < 1.0, 2.0 / 3.0 - R * R + 0.5 * R**3, np.where(R < 2.0, t**3 / 6.0, 0.0))
    out = kp.alpha * w
    return float(out) if out.ndim == 0 else out


def kernel_dwdr(r, kp: KernelParams):
    """``dW/dr``, the derivative with respect to distance."""
    R = np.asarray(r, dtype=np.float64) / kp.h
    t = 2.0 - R
    dw = np.where(R < 1.0, -2.0 * R + 1.5 * R * R, np.where(R < 2.0, -0.5 * t * t, 0.0))
    out = kp.alpha * dw / kp.h
    return float(out) if out.ndim == 0 else out


def kernel_grad(dx, kp: KernelParams) -> np.ndarray:
    """Gradient with respect to the first particle, ``dx = x_i - x_j``.

    Accepts one displacement or an ``(m, d)`` stack; zero displacement gives
    the zero vector.
    """
    dx = np.asarray(dx, dtype=np.float64)
    r = np.sqrt(np.sum(dx * dx, axis=-1, keepdims=True))
    dwdr = kernel_dwdr(r, kp)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(r > 0, dwdr * dx / np.where(r > 0, r, 1.0), 0.0)
    return g

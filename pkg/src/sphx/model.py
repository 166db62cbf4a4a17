"""Particle and domain state, always held in float64."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Boundary",
    "Domain",
    "ParticleSystem",
    "StressState",
    "build_lattice",
    "build_random_uniform",
    "write_snapshot",
    "read_snapshot",
]

SMOOTHING_RATIO = 1.2


class Boundary(enum.Enum):
    NONE = "none"
    PERIODIC = "periodic"
    WALL = "wall"


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box with optional periodic axes."""

    lo: tuple
    hi: tuple
    periodic: tuple = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or not 1 <= len(lo) <= 3:
            raise ValueError("domain bounds must have matching length 1, 2 or 3")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"empty domain: lo={lo} hi={hi}")
        periodic = tuple(bool(p) for p in self.periodic) or (False,) * len(lo)
        if len(periodic) != len(lo):
            raise ValueError("periodic flags must match the dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "periodic", periodic)

    @classmethod
    def unit(cls, d: int) -> "Domain":
        return cls((0.0,) * d, (1.0,) * d)

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def lo_arr(self) -> np.ndarray:
        return np.array(self.lo)

    @property
    def hi_arr(self) -> np.ndarray:
        return np.array(self.hi)

    @property
    def spans(self) -> np.ndarray:
        return self.hi_arr - self.lo_arr

    @property
    def h_d(self) -> float:
        """Largest axis span, the global normalization length."""
        return float(self.spans.max())

    @property
    def volume(self) -> float:
        return float(np.prod(self.spans))

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lo_arr) & (x <= self.hi_arr), axis=1)

    def wrap(self, x: np.ndarray) -> None:
        """Fold positions back into the box along periodic axes, in place."""
        for k, per in enumerate(self.periodic):
            if per:
                span = self.hi[k] - self.lo[k]
                x[:, k] = self.lo[k] + np.mod(x[:, k] - self.lo[k], span)


@dataclass
class StressState:
    """Per-particle stress tensors, shape ``(n, d, d)``."""

    sigma: np.ndarray
    tau: np.ndarray
    eps_rate: np.ndarray

    @classmethod
    def zeros(cls, n: int, d: int) -> "StressState":
        z = lambda: np.zeros((n, d, d))  # noqa: E731
        return cls(z(), z(), z())

    @classmethod
    def from_pressure(cls, p: np.ndarray, d: int, tau: np.ndarray | None = None,
                      eps_rate: np.ndarray | None = None) -> "StressState":
        n = len(p)
        tau = np.zeros((n, d, d)) if tau is None else tau
        eps_rate = np.zeros((n, d, d)) if eps_rate is None else eps_rate
        sigma = tau - p[:, None, None] * np.eye(d)[None]
        return cls(sigma, tau, eps_rate)

    def is_symmetric(self, atol: float = 0.0) -> bool:
        return all(
            np.allclose(t, np.swapaxes(t, 1, 2), rtol=0.0, atol=atol)
            for t in (self.sigma, self.tau, self.eps_rate)
        )


@dataclass
class ParticleSystem:
    """Structure-of-arrays particle store.

    Every per-particle field is its own contiguous array so a neighbor search
    can stream positions without touching the rest. ``m`` is frozen after
    construction.
    """

    domain: Domain
    x: np.ndarray
    v: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    p: np.ndarray
    e: np.ndarray
    ds: float
    h: float = field(default=None)

    def __post_init__(self):
        n, d = self.x.shape
        if d != self.domain.d:
            raise ValueError(f"positions are {d}-D but domain is {self.domain.d}-D")
        for name in ("rho", "m", "p", "e"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if self.v.shape != (n, d):
            raise ValueError(f"v must have shape ({n}, {d})")
        if self.h is None:
            self.h = SMOOTHING_RATIO * self.ds
        self.m = np.ascontiguousarray(self.m, dtype=np.float64)
        self.m.flags.writeable = False

    @classmethod
    def at_rest(cls, domain: Domain, x: np.ndarray, ds: float, rho0: float = 1.0,
                h: float | None = None) -> "ParticleSystem":
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, domain.d)
        n, d = x.shape
        return cls(
            domain=domain,
            x=x,
            v=np.zeros((n, d)),
            rho=np.full(n, rho0),
            m=np.full(n, rho0 * ds**d),
            p=np.zeros(n),
            e=np.zeros(n),
            ds=float(ds),
            h=h,
        )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def cutoff(self) -> float:
        return 2.0 * self.h

    def total_mass(self) -> float:
        return float(self.m.sum())

    def take(self, perm: np.ndarray) -> "ParticleSystem":
        """Return a copy with every per-particle array reordered by ``perm``."""
        return ParticleSystem(
            domain=self.domain,
            x=np.ascontiguousarray(self.x[perm]),
            v=np.ascontiguousarray(self.v[perm]),
            rho=self.rho[perm],
            m=self.m[perm],
            p=self.p[perm],
            e=self.e[perm],
            ds=self.ds,
            h=self.h,
        )


def build_lattice(domain: Domain, ds: float, jitter: float = 0.0, seed: int = 0,
                  jitter_kind: str = "uniform", rho0: float = 1.0) -> ParticleSystem:
    """Cell-centered lattice with spacing ``ds``.

    The first particle on each axis sits at ``lo + ds/2``. ``jitter`` is a
    fraction of ``ds``: with ``jitter_kind="uniform"`` each coordinate moves by
    a uniform draw in ``[-jitter, jitter] * ds``; with ``"sign"`` it moves by
    exactly ``+-jitter * ds`` with a random sign.
    """
    if ds <= 0:
        raise ValueError("ds must be positive")
    if not 0 <= jitter < 0.5:
        raise ValueError("jitter must lie in [0, 0.5)")
    spans = domain.spans
    if ds > spans.min():
        raise ValueError(f"ds={ds} exceeds the smallest domain span {spans.min()}")
    counts = np.floor(spans / ds + 1e-9).astype(int)
    axes = [domain.lo[k] + (np.arange(counts[k]) + 0.5) * ds for k in range(domain.d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    x = np.stack([g.ravel() for g in mesh], axis=1)
    if jitter > 0:
        rng = np.random.default_rng(seed)
        if jitter_kind == "uniform":
            x += rng.uniform(-jitter, jitter, size=x.shape) * ds
        elif jitter_kind == "sign":
            x += rng.choice((-1.0, 1.0), size=x.shape) * jitter * ds
        else:
            raise ValueError(f"unknown jitter kind {jitter_kind!r}")
    return ParticleSystem.at_rest(domain, x, ds, rho0=rho0)


def build_random_uniform(domain: Domain, n: int, seed: int = 0,
                         rho0: float = 1.0) -> ParticleSystem:
    """``n`` i.i.d. uniform particles; ``ds = (volume / n) ** (1/d)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    x = domain.lo_arr + rng.random((n, domain.d)) * domain.spans
    ds = (domain.volume / n) ** (1.0 / domain.d)
    return ParticleSystem.at_rest(domain, x, ds, rho0=rho0)


_AXES = "xyz"


def write_snapshot(ps: ParticleSystem, path) -> None:
    """CSV with header ``id,x,y[,z],vx,vy[,vz],rho,p``; floats round-trip."""
    d = ps.d
    header = ["id", *_AXES[:d], *(f"v{a}" for a in _AXES[:d]), "rho", "p"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(ps.n):
            row = [i, *ps.x[i], *ps.v[i], ps.rho[i], ps.p[i]]
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def read_snapshot(path, domain: Domain, ds: float, rho0: float = 1.0) -> ParticleSystem:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=np.float64)
    d = domain.d
    if header[: 1 + d] != ["id", *_AXES[:d]]:
        raise ValueError(f"unexpected snapshot header {header}")
    ps = ParticleSystem.at_rest(domain, body[:, 1 : 1 + d], ds, rho0=rho0)
    ps.v[:] = body[:, 1 + d : 1 + 2 * d]
    ps.rho[:] = body[:, 1 + 2 * d]
    ps.p[:] = body[:, 2 + 2 * d]
    return ps

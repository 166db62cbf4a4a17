"""Experiment drivers. Each returns CSV rows and writes nothing itself."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from ..fp16 import Precision, round_to
from ..grid import CellGrid, normalize_domain, rebin, reconstruct_absolute, to_relative, update_relative
from ..model import Domain, ParticleSystem, build_lattice, build_random_uniform
from ..nnps import all_list, cell_link_list, mismatch_report, rcll, spatial_sort
from ..sph.kernel import KernelParams
from ..sph.operators import grad_normalized
from ..sph.poiseuille import Approach, PoiseuilleConfig, SimulationError, run

log = logging.getLogger(__name__)

# rough resident bytes per particle for the square study: positions, cell
# arrays and three neighbor tables of about 18 entries each
_SQUARE_BYTES_PER_PARTICLE = 512
_POISEUILLE_BYTES_PER_PARTICLE = 2048


@dataclass
class ExperimentResult:
    name: str
    header: list
    rows: list
    extra: dict = field(default_factory=dict)


# --- circle -------------------------------------------------------------------


def ring_positions(dR: float, n_ring: int) -> np.ndarray:
    """Target at the origin followed by ``n_ring`` particles at radius ``1 +- dR``."""
    k = np.arange(n_ring)
    theta = 2.0 * np.pi * k / n_ring
    radius = 1.0 + np.where(k % 2 == 0, dR, -dR)
    ring = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    return np.vstack([np.zeros((1, 2)), ring])


def exact_inside(points: np.ndarray, cutoff: float = 1.0) -> np.ndarray:
    """Exact rational test ``x**2 + y**2 < cutoff**2`` on the float64 values."""
    c2 = Fraction(cutoff) ** 2
    return np.array([sum(Fraction(float(v)) ** 2 for v in p) < c2 for p in points])


def circle_count(dR: float, n_ring: int, prec) -> int:
    x = ring_positions(dR, n_ring)
    ps = ParticleSystem.at_rest(Domain((-2.0, -2.0), (2.0, 2.0)), x, ds=1.0)
    found = np.zeros(n_ring + 1, dtype=bool)
    found[all_list(ps, prec, cutoff=1.0)[0]] = True
    truth = np.concatenate([[False], exact_inside(x[1:])])
    return int(np.count_nonzero(found != truth))


def exp_circle(dR_ladder, n_ring: int = 64, precisions=("fp64", "fp32", "fp16")) -> ExperimentResult:
    rows = []
    for prec in precisions:
        for dR in dR_ladder:
            rows.append({"precision": str(Precision.parse(prec)), "dR": dR,
                         "n_ring": n_ring, "incorrect_count": circle_count(dR, n_ring, prec)})
    return ExperimentResult("circle", ["precision", "dR", "n_ring", "incorrect_count"], rows)


# --- square -------------------------------------------------------------------


def square_system(ds: float, dim: int, seed: int) -> tuple[ParticleSystem, CellGrid]:
    n = int(round((1.0 / ds) ** dim))
    ps = build_random_uniform(Domain.unit(dim), n, seed=seed)
    return ps, rebin(ps, CellGrid(ps.domain, ps.cutoff))


def search(backend: str, ps: ParticleSystem, grid: CellGrid, prec):
    """Run one backend on a binned system; RCLL coordinates are derived here."""
    if backend == "all":
        return all_list(ps, prec)
    if backend == "cell":
        return cell_link_list(ps, grid, prec)
    if backend == "rcll":
        rel = to_relative(normalize_domain(ps.x, ps.domain), grid, prec)
        return rcll(rel, grid, prec)
    raise ValueError(f"unknown backend {backend!r}")


def exp_square(ds_ladder, backends=("all", "cell", "rcll"), precisions=("fp16",), dim: int = 2,
               seed: int = 0, all_list_max_n: int = 40_000,
               memory_budget_gb: float = 8.0) -> ExperimentResult:
    """Mismatch of reduced-precision backends against the float64 link-list table.

    The float64 oracle uses the link-list backend, which equals the float64
    all-list table exactly and stays linear in ``n``.
    """
    header = ["ds", "n", "backend", "precision", "incorrect_count", "incorrect_percent", "oracle_pairs"]
    rows, skipped = [], []
    for ds in ds_ladder:
        n = int(round((1.0 / ds) ** dim))
        need = n * _SQUARE_BYTES_PER_PARTICLE / 2**30
        if need > memory_budget_gb:
            log.warning("square: skipping ds=%g (n=%d needs about %.1f GB > budget %.1f GB)",
                        ds, n, need, memory_budget_gb)
            skipped.append({"ds": ds, "reason": "memory"})
            continue
        ps, grid = square_system(ds, dim, seed)
        oracle = cell_link_list(ps, grid, Precision.FP64)
        for backend in backends:
            if backend == "all" and n > all_list_max_n:
                log.info("square: all-list skipped at n=%d (all_list_max_n=%d)", n, all_list_max_n)
                skipped.append({"ds": ds, "backend": backend, "reason": "all_list_max_n"})
                continue
            for prec in precisions:
                rep = mismatch_report(search(backend, ps, grid, prec), oracle)
                rows.append({"ds": ds, "n": n, "backend": backend,
                             "precision": str(Precision.parse(prec)),
                             "incorrect_count": rep.incorrect_count,
                             "incorrect_percent": rep.incorrect_percent,
                             "oracle_pairs": rep.oracle_pairs})
    return ExperimentResult("square", header, rows, {"skipped": skipped})


# --- gradient -----------------------------------------------------------------


def gradient_system(ds: float, jitter: float = 0.19, jitter_kind: str = "sign",
                    seed: int = 0) -> tuple[ParticleSystem, CellGrid]:
    ps = build_lattice(Domain.unit(1), ds, jitter=jitter, seed=seed, jitter_kind=jitter_kind)
    return ps, rebin(ps, CellGrid(ps.domain, ps.cutoff))


def gradient_rmse(ps: ParticleSystem, nbrs) -> tuple[float, int]:
    """RMSE of the normalized gradient of ``x**3`` against ``3 x**2``."""
    x = ps.x[:, 0]
    g, bad = grad_normalized(x**3, ps, nbrs, KernelParams(ps.h, 1))
    return float(np.sqrt(np.mean((g[:, 0] - 3.0 * x**2) ** 2))), bad


def exp_gradient(ds_ladder, backends=("all", "cell", "rcll"), precisions=("fp64", "fp16"),
                 jitter: float = 0.19, jitter_kind: str = "sign", seed: int = 0) -> ExperimentResult:
    header = ["ds", "n", "backend", "precision", "rmse", "n_degenerate"]
    rows = []
    for ds in ds_ladder:
        ps, grid = gradient_system(ds, jitter, jitter_kind, seed)
        for backend in backends:
            for prec in precisions:
                err, bad = gradient_rmse(ps, search(backend, ps, grid, prec))
                rows.append({"ds": ds, "n": ps.n, "backend": backend,
                             "precision": str(Precision.parse(prec)), "rmse": err,
                             "n_degenerate": bad})
    return ExperimentResult("gradient", header, rows)


# --- poiseuille ---------------------------------------------------------------


def exp_poiseuille(approaches=("I", "II", "III"), ds_ladder=(0.025, 0.01, 0.0025),
                   min_ds: float = 0.0025, t_end: float = 1.0, profile_times=(0.1, 1.0),
                   viscosity: str = "laplacian", memory_budget_gb: float = 8.0,
                   progress=None) -> ExperimentResult:
    """Run each approach to ``t_end`` and measure the largest location discrepancy.

    Profiles are returned in ``extra["profiles"]`` keyed by
    ``(approach, ds, t)`` as arrays with columns ``y, v_sim, v_theory``.
    """
    header = ["approach", "ds", "steps", "status", "max_discrepancy_over_ds",
              "centerline_rel_error", "table_digest", "wall_seconds"]
    rows, profiles = [], {}
    for ds in ds_ladder:
        if ds < min_ds:
            log.warning("poiseuille: skipping ds=%g below min_ds=%g", ds, min_ds)
            continue
        cfg = PoiseuilleConfig(ds=ds, t_end=t_end, viscosity=viscosity)
        n = cfg.row_particles * (cfg.n_rows + 2 * cfg.wall_layers)
        need = n * _POISEUILLE_BYTES_PER_PARTICLE / 2**30
        if need > memory_budget_gb:
            log.warning("poiseuille: skipping ds=%g (about %.1f GB > budget %.1f GB)",
                        ds, need, memory_budget_gb)
            continue
        for name in approaches:
            a = Approach.parse(name)
            row = {"approach": a.value, "ds": ds, "steps": cfg.n_steps}
            try:
                res = run(cfg, a, profile_times=profile_times, progress=progress)
            except SimulationError as exc:
                log.error("poiseuille: approach %s at ds=%g aborted: %s", a.value, ds, exc)
                row.update(status=f"unstable: {exc}", max_discrepancy_over_ds=math.nan,
                           centerline_rel_error=math.nan, table_digest="", wall_seconds=math.nan)
                rows.append(row)
                continue
            for t, prof in res.profiles.items():
                profiles[(a.value, ds, t)] = prof
            last = res.profiles[max(res.profiles)] if res.profiles else None
            center = math.nan
            if last is not None:
                mid = len(last) // 2
                center = float(last[mid, 1] / cfg.v_max - 1.0)
            row.update(status="ok", max_discrepancy_over_ds=res.max_discrepancy_over_ds,
                       centerline_rel_error=center, table_digest=res.table_digest,
                       wall_seconds=res.wall_seconds)
            rows.append(row)
    return ExperimentResult("poiseuille", header, rows, {"profiles": profiles})


# --- advection carrier -------------------------------------------------------


@dataclass
class CarrierDrift:
    """Final position error (in ``ds``) and table mismatch of each FP16 carrier."""

    ds: float
    steps: int
    max_shift_over_ds: float
    absolute_error_over_ds: float
    relative_error_over_ds: float
    absolute_mismatch: int
    relative_mismatch: int
    oracle_pairs: int


def advection_drift(ds: float = 0.0005, steps: int = 400, courant: float = 0.05,
                    patch=(0.5, 0.5, 0.55, 0.51)) -> CarrierDrift:
    """Carry a sheared lattice patch with FP16 absolute and FP16 cell-relative coordinates.

    The unit square sets the normalization, so absolute coordinates near
    ``0.5`` have a binary16 spacing of about ``ds``. Each step moves the top
    row by ``courant * ds`` and the bottom row not at all. The float64
    trajectory is the reference for positions and for the final neighbor table.
    """
    dom = Domain.unit(2)
    x0, y0, x1, y1 = patch
    xs = np.arange(x0 + ds / 2, x1, ds)
    ys = np.arange(y0 + ds / 2, y1, ds)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    truth = np.column_stack([X.ravel(), Y.ravel()])
    step = np.zeros_like(truth)
    step[:, 0] = courant * ds * (truth[:, 1] - y0) / (y1 - y0)
    ps = ParticleSystem.at_rest(dom, truth.copy(), ds)
    grid = CellGrid(dom, ps.cutoff)
    absolute = round_to(truth, Precision.FP16)
    rel = to_relative(normalize_domain(truth, dom), grid, Precision.FP16)
    for _ in range(steps):
        truth = truth + step
        absolute = round_to(absolute + step, Precision.FP16)
        rel = update_relative(rel, step, grid, Precision.FP16)
    ps.x[:] = truth
    oracle = cell_link_list(ps, rebin(ps, grid), Precision.FP64)
    frozen = ParticleSystem.at_rest(dom, absolute, ds)
    table_abs = cell_link_list(frozen, rebin(frozen, CellGrid(dom, ps.cutoff)), Precision.FP16)
    grid.assign(rel.cell)
    table_rel = rcll(rel, grid, Precision.FP16)
    back = reconstruct_absolute(rel, grid)
    return CarrierDrift(
        ds=ds,
        steps=steps,
        max_shift_over_ds=float(steps * step[:, 0].max() / ds),
        absolute_error_over_ds=float(np.abs(absolute - truth).max() / ds),
        relative_error_over_ds=float(np.abs(back - truth).max() / ds),
        absolute_mismatch=mismatch_report(table_abs, oracle).incorrect_count,
        relative_mismatch=mismatch_report(table_rel, oracle).incorrect_count,
        oracle_pairs=int(oracle.n_pairs),
    )


# --- scaling ------------------------------------------------------------------


def time_call(fn, repeats: int = 5) -> float:
    """Median wall time of ``fn()`` over ``repeats`` runs after one discarded warmup."""
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _prepared(backend: str, ps: ParticleSystem, prec):
    grid = rebin(ps, CellGrid(ps.domain, ps.cutoff))
    if backend == "rcll":
        rel = to_relative(normalize_domain(ps.x, ps.domain), grid, prec)
        return lambda: rcll(rel, grid, prec)
    if backend == "cell":
        return lambda: cell_link_list(ps, grid, prec)
    return lambda: all_list(ps, prec)


def exp_scaling(n_ladder, backends=("all", "cell", "rcll"), precisions=("fp64",),
                repeats: int = 5, dim: int = 2, seed: int = 0,
                all_list_max_n: int = 100_000) -> ExperimentResult:
    """Median search time per backend, precision and ``n``.

    Only the search call is timed; binning and the relative transform are
    prepared beforehand. Cell backends are timed on the generator's random
    order and after :func:`spatial_sort`.
    """
    header = ["backend", "precision", "n", "ordering", "median_runtime", "repeats"]
    rows = []
    for n in n_ladder:
        base = build_random_uniform(Domain.unit(dim), int(n), seed=seed)
        ordered = base.take(spatial_sort(base))
        for backend in backends:
            if backend == "all" and n > all_list_max_n:
                log.info("scaling: all-list skipped at n=%d", n)
                continue
            variants = [("unsorted", base)] if backend == "all" else [("unsorted", base), ("sorted", ordered)]
            for prec in precisions:
                for label, ps in variants:
                    t = time_call(_prepared(backend, ps, prec), repeats)
                    rows.append({"backend": backend, "precision": str(Precision.parse(prec)),
                                 "n": int(n), "ordering": label, "median_runtime": t,
                                 "repeats": repeats})
    return ExperimentResult("scaling", header, rows)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


# --- dispatch -----------------------------------------------------------------


def run_experiment(spec, progress=None) -> ExperimentResult:
    p = spec.params
    if spec.name == "circle":
        return exp_circle(p["dR_ladder"], p["n_ring"], p["precisions"])
    if spec.name == "square":
        return exp_square(p["ds_ladder"], p["backends"], p["precisions"], p["dim"], spec.seed,
                          p["all_list_max_n"], p["memory_budget_gb"])
    if spec.name == "gradient":
        return exp_gradient(p["ds_ladder"], p["backends"], p["precisions"], p["jitter"],
                            p["jitter_kind"], spec.seed)
    if spec.name == "poiseuille":
        return exp_poiseuille(p["approaches"], p["ds_ladder"], p["min_ds"], p["t_end"],
                              p["profile_times"], p["viscosity"], p["memory_budget_gb"], progress)
    if spec.name == "scaling":
        return exp_scaling(p["n_ladder"], p["backends"], p["precisions"], p["repeats"], p["dim"],
                           spec.seed, p["all_list_max_n"])
    raise ValueError(f"unknown experiment {spec.name!r}")


def write_csv(result: ExperimentResult, out_dir) -> list[Path]:
    """Write the main CSV and any profile dumps; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / f"{result.name}.csv"]
    with open(paths[0], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=result.header)
        w.writeheader()
        for row in result.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    for (approach, ds, t), prof in sorted(result.extra.get("profiles", {}).items()):
        path = out_dir / f"profile_{approach}_ds{ds:g}_t{t:g}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "v_sim", "v_theory"])
            for row in prof:
                w.writerow([repr(float(v)) for v in row])
        paths.append(path)
    return paths

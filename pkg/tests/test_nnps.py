import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import neighbor_sets
from sphx.fp16 import Precision
from sphx.grid import CellGrid, normalize_domain, rebin, rel_cutoff, to_relative
from sphx.model import Domain, ParticleSystem, build_random_uniform
from sphx.nnps import (
    NeighborTable,
    all_list,
    brute_force_reference,
    cell_link_list,
    mismatch_report,
    rcll,
    spatial_sort,
)

seeds = st.integers(0, 2**32 - 1)
BACKENDS = ("all", "cell", "rcll")


def make_system(d, n, seed, periodic=False, cutoff=None):
    dom = Domain((0.0,) * d, (1.0,) * d, (periodic,) * d)
    ps = build_random_uniform(dom, n, seed=seed)
    if cutoff is not None:
        ps.h = cutoff / 2
    return ps


def search(backend, ps, prec):
    grid = rebin(ps, CellGrid(ps.domain, ps.cutoff))
    if backend == "all":
        return all_list(ps, prec)
    if backend == "cell":
        return cell_link_list(ps, grid, prec)
    rel = to_relative(normalize_domain(ps.x, ps.domain), grid, prec)
    return rcll(rel, grid, prec)


def numpy_reduced_all_list(x, cutoff, dtype, spans=None):
    """All-list decisions with numpy's native reduced-precision arithmetic."""
    xr = x.astype(dtype)
    c = dtype(cutoff)
    out = []
    for i in range(len(x)):
        t = xr[i] - xr
        if spans is not None:
            for k, s in enumerate(spans):
                if s:
                    sk = dtype(s)
                    col = t[:, k]
                    col = np.where(col > sk / dtype(2), col - sk, col)
                    col = np.where(col < -sk / dtype(2), col + sk, col)
                    t[:, k] = col
        s = np.zeros(len(x), dtype=dtype)
        for k in range(x.shape[1]):
            s = s + t[:, k] * t[:, k]
        hit = np.flatnonzero(np.sqrt(s) < c)
        out.append(set(hit[hit != i].tolist()))
    return out


def numpy_reduced_rcll(rel, grid, dtype):
    r = rel.astype(dtype)
    c = dtype(rel_cutoff(grid))
    cells = grid.cell_coords
    n = grid.counts
    out = []
    for i in range(len(r)):
        o = cells[i] - cells
        o = np.where(grid.periodic, (o + n // 2) % n - n // 2, o)
        near = np.all(np.abs(o) <= 1, axis=1)
        # x_i - x_j in half-cell units is (rel_i - rel_j) + 2 (c_i - c_j)
        t = (r[i] - r) + (2 * o).astype(dtype)
        s = np.zeros(len(r), dtype=dtype)
        for k in range(r.shape[1]):
            s = s + t[:, k] * t[:, k]
        hit = np.flatnonzero(near & (np.sqrt(s) < c))
        out.append(set(hit[hit != i].tolist()))
    return out


def test_small_examples():
    dom = Domain.unit(1)
    one = ParticleSystem.at_rest(dom, np.array([[0.5]]), ds=0.1)
    for b in BACKENDS:
        assert search(b, one, Precision.FP64).n_pairs == 0
    three = ParticleSystem.at_rest(dom, np.array([[0.4], [0.5], [0.6]]), ds=0.1)
    for b in BACKENDS:
        t = search(b, three, Precision.FP64)
        assert [t[i].tolist() for i in range(3)] == [[1, 2], [0, 2], [0, 1]]


def test_strict_cutoff_at_fp64():
    dom = Domain.unit(2)
    c = 0.1
    x = np.array([[0.3, 0.5], [0.3 + c, 0.5], [0.6, 0.5], [0.6 + c * (1 + 1e-9), 0.5]])
    ps = ParticleSystem.at_rest(dom, x, ds=c / 2.4, h=c / 2)
    for b in BACKENDS:
        assert search(b, ps, Precision.FP64).n_pairs == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 300), seeds, st.booleans())
def test_fp64_backends_equal_brute_force(d, n, seed, periodic):
    ps = make_system(d, n, seed, periodic, cutoff=0.2 if d > 1 else 0.05)
    spans = ps.domain.spans * np.array(ps.domain.periodic) if periodic else None
    ref = neighbor_sets(ps.x, ps.cutoff, spans)
    for b in BACKENDS:
        assert search(b, ps, Precision.FP64).as_sets() == ref


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(2, 200), seeds, st.sampled_from([Precision.FP32, Precision.FP16]),
       st.booleans())
def test_reduced_all_list_matches_native_numpy_arithmetic(d, n, seed, prec, periodic):
    ps = make_system(d, n, seed, periodic, cutoff=0.25)
    spans = ps.domain.spans * np.array(ps.domain.periodic) if periodic else None
    ref = numpy_reduced_all_list(ps.x, ps.cutoff, prec.dtype, spans)
    assert all_list(ps, prec).as_sets() == ref


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(2, 200), seeds, st.sampled_from([Precision.FP32, Precision.FP16]),
       st.booleans())
def test_reduced_rcll_matches_native_numpy_arithmetic(d, n, seed, prec, periodic):
    ps = make_system(d, n, seed, periodic, cutoff=0.25)
    grid = rebin(ps, CellGrid(ps.domain, ps.cutoff))
    rel = to_relative(normalize_domain(ps.x, ps.domain), grid, prec)
    ref = numpy_reduced_rcll(rel.as_f64(), grid, prec.dtype)
    assert rcll(rel, grid, prec).as_sets() == ref


@pytest.mark.parametrize("prec", [Precision.FP16, Precision.FP32])
@pytest.mark.parametrize("backend", ["all", "cell", "rcll"])
def test_prefilter_agrees_with_emulation_near_cutoff(prec, backend):
    """Pairs placed within a few roundoff units of the cutoff take the emulated path."""
    rng = np.random.default_rng(11)
    c = 0.1
    u = prec.unit_roundoff
    centers = rng.uniform(0.25, 0.75, (400, 2))
    theta = rng.uniform(0, 2 * np.pi, 400)
    rel_off = rng.choice([-64, -8, -2, -1, 0, 1, 2, 8, 64], 400) * u
    partner = centers + (c * (1 + rel_off))[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    x = np.empty((800, 2))
    x[0::2], x[1::2] = centers, partner
    ps = ParticleSystem.at_rest(Domain.unit(2), x, ds=c / 2.4, h=c / 2)
    got = search(backend, ps, prec).as_sets()
    if backend == "rcll":
        grid = rebin(ps, CellGrid(ps.domain, ps.cutoff))
        rel = to_relative(normalize_domain(ps.x, ps.domain), grid, prec)
        ref = numpy_reduced_rcll(rel.as_f64(), grid, prec.dtype)
    elif backend == "cell":
        grid = rebin(ps, CellGrid(ps.domain, ps.cutoff))
        ref = numpy_reduced_all_list(ps.x, ps.cutoff, prec.dtype)
        # the link-list only sees pairs in adjacent cells
        cc = grid.cell_coords
        ref = [{j for j in s if np.abs(cc[i] - cc[j]).max() <= 1} for i, s in enumerate(ref)]
    else:
        ref = numpy_reduced_all_list(ps.x, ps.cutoff, prec.dtype)
    assert got == ref


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 250), seeds, st.sampled_from(list(Precision)),
       st.sampled_from(BACKENDS))
def test_symmetric_without_self_entries(d, n, seed, prec, backend):
    t = search(backend, make_system(d, n, seed, cutoff=0.3), prec)
    assert t.is_symmetric()
    assert not t.has_self_entries()
    for i in range(t.n):
        row = t[i]
        assert np.all(np.diff(row) > 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 250), seeds, st.sampled_from(list(Precision)),
       st.sampled_from(BACKENDS))
def test_permutation_equivariance(d, n, seed, prec, backend):
    ps = make_system(d, n, seed, cutoff=0.3)
    perm = np.random.default_rng(seed).permutation(n)
    a = search(backend, ps, prec).permute(perm)
    b = search(backend, ps.take(perm), prec)
    assert a.same_as(b)


def test_spatial_sort_examples():
    dom = Domain.unit(2)
    x = np.array([[0.1, 0.5], [0.1, 0.7], [0.4, 0.2], [0.9, 0.1]])
    ps = ParticleSystem.at_rest(dom, x, ds=0.1)
    assert spatial_sort(ps).tolist() == [0, 1, 2, 3]
    rev = ParticleSystem.at_rest(dom, x[::-1].copy(), ds=0.1)
    assert spatial_sort(rev).tolist() == [3, 2, 1, 0]


def test_mismatch_report_counts_both_directions():
    ps = make_system(2, 200, 5, cutoff=0.15)
    t = all_list(ps)
    rep = mismatch_report(t, t)
    assert (rep.incorrect_count, rep.incorrect_percent) == (0, 0.0)
    i = int(np.argmax(t.counts))
    j = int(t[i][0])
    sets = t.as_sets()
    sets[i].discard(j)
    sets[j].discard(i)
    cand = NeighborTable.from_sets(sets, t.radius)
    rep = mismatch_report(cand, t)
    assert rep.incorrect_count == 2
    assert rep.incorrect_percent == pytest.approx(200.0 / t.n_pairs)


def test_inconsistent_inputs_raise():
    ps = make_system(2, 50, 1, cutoff=0.2)
    grid = CellGrid(ps.domain, ps.cutoff)
    with pytest.raises(ValueError):
        cell_link_list(ps, grid)
    rebin(ps, grid)
    rel = to_relative(normalize_domain(ps.x, ps.domain), grid)
    rel.cell[0] = (rel.cell[0] + 1) % grid.counts
    with pytest.raises(ValueError):
        rcll(rel, grid)
    with pytest.raises(ValueError):
        mismatch_report(all_list(ps), all_list(make_system(2, 49, 1, cutoff=0.2)))


def test_brute_force_reference_matches_oracle():
    ps = make_system(3, 120, 9, periodic=True, cutoff=0.3)
    spans = ps.domain.spans
    assert brute_force_reference(ps.x, ps.cutoff, spans) == neighbor_sets(ps.x, ps.cutoff, spans)


def test_csr_export():
    ps = make_system(2, 100, 2, cutoff=0.2)
    t = cell_link_list(ps)
    a = t.to_csr()
    assert a.shape == (100, 100)
    assert a.nnz == t.n_pairs
    assert (a != a.T).nnz == 0

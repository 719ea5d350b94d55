import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multirestrict import io
from multirestrict.errors import ConvergenceFailure, InvalidInput
from multirestrict.extension import (EvaluationGrid, SampledDensity, bump_density, combine,
                                     conservation_check, constant_density, decay_profile,
                                     evaluate_at, evaluate_extension, lattice_indices, margin,
                                     multilinear_lhs, random_density, slice_norm_direct)
from multirestrict.geometry import Domain, SurfacePatch, SurfaceSystem

from conftest import cap

ARC = SurfacePatch(2, "paraboloid", {}, Domain((0.0,), radius=0.5))


def test_lattice_nodes_inside_and_cell_centred():
    dom = Domain((0.1, -0.2), radius=0.3)
    h = 1 / 40
    J = lattice_indices(dom, h)
    xi = h * (J + 0.5)
    assert np.all(dom.contains(xi))
    # every lattice point of the bounding box inside the ball is present
    axes = [np.arange(-40, 41)] * 2
    G = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2)
    assert dom.contains(h * (G + 0.5)).sum() == len(J)


def test_density_norm_invariant(rng):
    f = random_density(cap((0.0, 0.0)), 1 / 64, rng, "gaussian")
    assert f.l2_norm == pytest.approx((1 / 64) * np.linalg.norm(f.amplitudes), rel=1e-12)
    with pytest.raises(InvalidInput):
        SampledDensity(f.patch, f.h, f.idx, f.amplitudes[:-1])
    with pytest.raises(InvalidInput):
        SampledDensity(f.patch, f.h, f.idx + 1000, f.amplitudes)
    bad = f.amplitudes.copy()
    bad[0] = np.nan
    with pytest.raises(InvalidInput):
        f.with_amplitudes(bad)


def test_constant_density_at_origin_is_volume():
    # box aligned with the lattice: the midpoint rule is exact for f = 1
    p = SurfacePatch(3, "paraboloid", {}, Domain((0.0, 0.0), half_widths=(0.25, 0.125)))
    f = constant_density(p, 1 / 64)
    val = evaluate_at(f, np.zeros((1, 3)))[0]
    assert abs(val - p.domain.volume) <= 1e-8


def test_origin_value_is_weighted_sum(rng):
    f = random_density(cap((0.1, 0.0)), 1 / 50, rng, "gaussian")
    assert evaluate_at(f, np.zeros((1, 3)))[0] == pytest.approx(f.h ** 2 * f.amplitudes.sum(),
                                                                abs=1e-13)


@pytest.mark.parametrize("r", [10.0, 40.0, 160.0])
def test_arc_bump_against_refined_quadrature(r):
    h = 1 / 512
    coarse = bump_density(ARC, h, radius=0.4)
    fine = bump_density(ARC, h / 10, radius=0.4)
    x = np.array([[0.0, r]])
    a, b = evaluate_at(coarse, x)[0], evaluate_at(fine, x)[0]
    assert abs(a - b) <= 1e-6 * abs(b)


@pytest.mark.parametrize("patch,R,dx", [(ARC, 40.0, 0.5), (cap((0.2, -0.1)), 12.0, 0.75)],
                         ids=["R2", "R3"])
def test_fft_spread_matches_direct(patch, R, dx, rng):
    f = random_density(patch, 1 / 64, rng)
    g = EvaluationGrid((1.0,) * patch.ambient_dim, R, dx)
    A = evaluate_extension(f, g, "direct")
    B = evaluate_extension(f, g, "fft_spread")
    assert np.abs(A - B).max() <= 1e-6 * np.abs(A).max()


def test_alias_and_grid_errors(rng):
    f = random_density(cap((0.0, 0.0), 0.5), 1 / 32, rng)
    with pytest.raises(InvalidInput, match="aliased"):
        evaluate_extension(f, EvaluationGrid((0, 0, 0), 5.0, 3.0))
    with pytest.raises(InvalidInput):
        EvaluationGrid((0, 0), 5.0, 4.0)
    with pytest.raises(InvalidInput):
        evaluate_extension(f, EvaluationGrid((0, 0, 0), 1.0, nodes=np.zeros((3, 3))), "fft_spread")
    with pytest.raises(InvalidInput):
        evaluate_extension(f, EvaluationGrid((0, 0), 5.0, 0.5))


@given(st.integers(0, 2 ** 32 - 1), st.complex_numbers(max_magnitude=10),
       st.complex_numbers(max_magnitude=10))
def test_linearity(seed, a, b):
    g = np.random.default_rng(seed)
    f1 = random_density(ARC, 1 / 32, g, "gaussian")
    f2 = random_density(ARC, 1 / 32, g)
    X = g.uniform(-30, 30, (20, 2))
    lhs = evaluate_at(combine([f1, f2], [a, b]), X)
    rhs = a * evaluate_at(f1, X) + b * evaluate_at(f2, X)
    assert np.abs(lhs - rhs).max() <= 1e-12 * (1 + np.abs(rhs).max())


@given(st.integers(0, 2 ** 32 - 1))
def test_triangle_inequality(seed):
    g = np.random.default_rng(seed)
    f = random_density(cap((0.0, 0.3), 0.2), 1 / 40, g, "gaussian")
    X = g.uniform(-50, 50, (30, 3))
    assert np.abs(evaluate_at(f, X)).max() <= f.h ** 2 * np.abs(f.amplitudes).sum() * (1 + 1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.integers(-8, 8), st.integers(-8, 8))
def test_modulation_translates_field(seed, m1, m2):
    g = np.random.default_rng(seed)
    f = random_density(ARC, 1 / 32, g)
    grid = EvaluationGrid((0.0, 0.0), 10.0, 0.5)
    x0 = 0.5 * np.array([m1, m2])
    shifted = evaluate_extension(f.modulated(x0), grid, "fft_spread")
    direct = evaluate_at(f, grid.points() + x0).reshape(grid.shape)
    assert np.abs(shifted - direct).max() <= 1e-6 * np.abs(direct).max()


def test_decay_flat_patch_does_not_decay():
    flat = cap((0.0, 0.0), 0.25, "flat")
    prof = decay_profile(bump_density(flat, 1 / 64), [8, 16, 32, 64], n_dirs=200, gauss_dirs=50)
    assert prof.slope >= -0.05


# -- conservation --------------------------------------------------------------

def test_conservation_base_slice_and_zero(rng):
    f = random_density(cap((0.0, 0.0)), 1 / 64, rng)
    c = conservation_check(f, [0.0])
    assert c.values[0] == pytest.approx(c.expected, rel=1e-6)
    z = f.scaled(0.0)
    c0 = conservation_check(z, [-5.0, 0.0, 5.0])
    assert np.all(c0.values == 0) and c0.deviation == 0


def test_conservation_against_direct_slices(rng):
    f = random_density(cap((0.0, 0.0), 0.2), 1 / 32, rng)
    c = conservation_check(f, [-50, -5, 0, 5, 50])
    assert c.deviation <= 1e-2
    for t, v in zip(c.t_values, c.values):
        # direct quadrature of the slice integral on a 4x finer slice grid
        assert v == pytest.approx(slice_norm_direct(f, t, 4 * c.n_slice), rel=1e-10)


def test_conservation_rounding_level_under_refinement(rng):
    f = random_density(cap((0.0, 0.0), 0.2), 1 / 32, rng)
    d1 = conservation_check(f, [-20, 7, 33]).deviation
    d2 = conservation_check(f, [-20, 7, 33], n_slice=2 * conservation_check(f, [0]).n_slice).deviation
    assert d1 <= 1e-12 and d2 <= 1e-12


def test_conservation_aliased_slice_refused(rng):
    f = random_density(cap((0.0, 0.0), 0.2), 1 / 32, rng)
    with pytest.raises(InvalidInput, match="aliased"):
        conservation_check(f, [0.0], n_slice=4)


# -- multilinear norms ---------------------------------------------------------

def test_multilinear_zero_and_homogeneity(caps, rng):
    f = [random_density(p, 1 / 32, rng) for p in caps.patches]
    grid = EvaluationGrid((0, 0, 0), 6.0, 1.0)
    assert multilinear_lhs(caps, [f[0], f[1].scaled(0)], 1.0, grid) == 0.0
    base = multilinear_lhs(caps, f, 1.5, grid)
    lam = 2.75
    assert multilinear_lhs(caps, [g.scaled(lam) for g in f], 1.5, grid) == pytest.approx(
        lam ** 2 * base, rel=1e-12)
    with pytest.raises(InvalidInput):
        multilinear_lhs(caps, f, 0.0, grid)
    with pytest.raises(InvalidInput):
        multilinear_lhs(caps, f[:1], 1.0, grid)


def test_multilinear_naive_oracle():
    f = constant_density(ARC, 1 / 16)
    s = SurfaceSystem((ARC,))
    grid = EvaluationGrid((0.0, 0.0), 4.0, 0.5)
    got = multilinear_lhs(s, [f], 2.0, grid, "direct")
    # naive double sum over grid nodes and frequency nodes
    tot = 0.0
    for m1 in range(-8, 9):
        for m2 in range(-8, 9):
            x = (0.5 * m1, 0.5 * m2)
            if math.hypot(*x) > 4.0:
                continue
            acc = 0j
            for j in f.idx[:, 0]:
                xi = (j + 0.5) / 16
                acc += (1 / 16) * complex(math.cos(x[0] * xi + x[1] * xi * xi / 2),
                                          math.sin(x[0] * xi + x[1] * xi * xi / 2))
            tot += abs(acc) ** 2 * 0.25
    assert got == pytest.approx(math.sqrt(tot), rel=1e-8)
    assert multilinear_lhs(s, [f], 2.0, grid, "fft_spread") == pytest.approx(math.sqrt(tot), rel=1e-8)


def test_convergence_guard(rng):
    f = random_density(ARC, 1 / 32, rng)
    s = SurfaceSystem((ARC,))
    with pytest.raises(ConvergenceFailure):
        multilinear_lhs(s, [f], 1.0, EvaluationGrid((0, 0), 3.0, 1.5), convergence_guard=True)
    multilinear_lhs(s, [f], 2.0, EvaluationGrid((0, 0), 20.0, 0.25), convergence_guard=True)


# -- margin --------------------------------------------------------------------

def test_margin_examples(rng):
    h = 1 / 32
    c = (h / 2, h / 2)
    p = SurfacePatch(3, "paraboloid", {}, Domain(c, radius=0.1))
    V = Domain(c, radius=1.0)
    f = SampledDensity(p, h, [[0, 0]], [1.0], reference_region=V)
    assert margin(f) == pytest.approx(1.0, abs=1e-15)
    assert margin(f.scaled(0)) == math.inf
    g = random_density(p, h, rng)
    g = SampledDensity(p, h, g.idx, g.amplitudes * (rng.random(len(g.idx)) < 0.3), reference_region=V)
    sup = g.nodes[g.amplitudes != 0]
    scan = min(1.0 - math.dist(x, c) for x in sup)
    assert margin(g) == pytest.approx(scan, abs=1e-14)


# -- persistence ---------------------------------------------------------------

def test_field_roundtrip(tmp_path, rng):
    f = random_density(ARC, 1 / 32, rng)
    grid = EvaluationGrid((0.0, 0.0), 5.0, 0.5)
    E = evaluate_extension(f, grid, "fft_spread")
    io.save_field(tmp_path / "E.bin", E, grid.spacing, grid.center, "arc")
    back, meta = io.load_field(tmp_path / "E.bin")
    assert np.array_equal(back, E)
    assert meta["shape"] == list(E.shape) and meta["patch_id"] == "arc"

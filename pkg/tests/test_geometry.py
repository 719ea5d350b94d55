import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from multirestrict.errors import DegenerateGeometry, DomainError, InvalidInput
from multirestrict.geometry import (Domain, SurfacePatch, SurfaceSystem, check_curvature_condition,
                                    check_transversality, normal_localization_submanifold,
                                    shape_operator, small_eigvec, small_wedge_combination,
                                    wedge_norm)

from conftest import cap


def _laplace_det(M):
    # cofactor expansion, independent of the LAPACK route
    M = [list(r) for r in M]
    if len(M) == 1:
        return M[0][0]
    return sum((-1) ** j * M[0][j] * _laplace_det([r[:j] + r[j + 1:] for r in M[1:]])
               for j in range(len(M)))


def _wedge_oracle(V):
    V = np.asarray(V, float)
    return math.sqrt(max(0.0, _laplace_det((V @ V.T).tolist())))


# -- wedge norms ---------------------------------------------------------------

def test_wedge_examples():
    e = np.eye(3)
    assert wedge_norm([e[0], e[1]]) == pytest.approx(1.0, abs=1e-15)
    assert wedge_norm([e[0], e[0]]) == 0.0
    v = (e[0] + e[1]) / math.sqrt(2)
    assert wedge_norm([e[0], v]) == pytest.approx(_wedge_oracle([e[0], v]), abs=1e-14)
    assert wedge_norm([e[0], v]) == pytest.approx(0.70710678118654752, abs=1e-14)


def test_wedge_errors():
    with pytest.raises(InvalidInput):
        wedge_norm(np.eye(3)[:, :2].T.tolist() + [[1.0, 0.0]])
    with pytest.raises(InvalidInput):
        wedge_norm(np.ones((4, 3)))
    with pytest.raises(InvalidInput):
        wedge_norm([[np.nan, 0.0]])


vecs = st.integers(1, 5).flatmap(
    lambda n: st.integers(1, n).flatmap(
        lambda m: arrays(float, (m, n), elements=st.floats(-3, 3))))


@given(vecs)
def test_wedge_hadamard_and_oracle(V):
    w = wedge_norm(V)
    assert w <= np.prod(np.linalg.norm(V, axis=1)) * (1 + 1e-12) + 1e-12
    # compare squares: the square root amplifies cancellation in the Gram determinant
    scale = np.prod(np.linalg.norm(V, axis=1)) ** 2
    assert w * w == pytest.approx(_wedge_oracle(V) ** 2, abs=1e-9 * (1 + scale))


@given(vecs, st.integers(0, 2 ** 32 - 1))
def test_wedge_orthogonal_invariance(V, seed):
    n = V.shape[1]
    Q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, n)))
    assert wedge_norm(V @ Q.T) == pytest.approx(wedge_norm(V), abs=1e-10)


def test_wedge_hadamard_bulk(rng):
    for _ in range(10_000):
        m = rng.integers(1, 5)
        V = rng.standard_normal((m, 4))
        assert wedge_norm(V) <= np.prod(np.linalg.norm(V, axis=1)) * (1 + 1e-12)


# -- patches -------------------------------------------------------------------

PATCHES = [
    cap((0.1, -0.2), 0.3),
    cap((0.0, 0.0), 0.4, "sphere_cap", rho=1.0),
    cap((0.3, 0.1), 0.2, "cone"),
    cap((0.0, 0.0), 0.3, "cylinder"),
    SurfacePatch(3, "polynomial", {"terms": [{"exponents": [2, 0], "coeff": 1.0}, {"exponents": [1, 1], "coeff": 0.3}, {"exponents": [0, 3], "coeff": -0.5}]},
                 Domain((0.0, 0.0), radius=0.5)),
    SurfacePatch(2, "sphere_cap", {"rho": 1.0}, Domain((0.2,), radius=0.3)),
    SurfacePatch(4, "paraboloid", {"a": [1.0, 2.0, -0.5]}, Domain((0.0, 0.1, 0.0),
                                                                   half_widths=(0.2, 0.1, 0.3))),
]


@pytest.mark.parametrize("patch", PATCHES, ids=lambda p: f"{p.family}{p.ambient_dim}")
def test_closed_form_derivatives_match_differences(patch):
    xi = patch.domain.sample(50)[0]
    xi = xi[patch.domain.inner_distance(xi) > 2e-4]
    t = 1e-4
    g, H = patch.grad(xi), patch.hess(xi)
    for j in range(patch.d):
        e = np.zeros(patch.d)
        e[j] = t
        fd = (patch.phi(xi + e) - patch.phi(xi - e)) / (2 * t)
        assert np.abs(fd - g[:, j]).max() <= 1e-5
        fdg = (patch.grad(xi + e) - patch.grad(xi - e)) / (2 * t)
        assert np.abs(fdg - H[:, :, j]).max() <= 1e-5


@pytest.mark.parametrize("patch", PATCHES, ids=lambda p: f"{p.family}{p.ambient_dim}")
def test_normals_unit_and_orthogonal(patch):
    xi = patch.domain.sample(200)[0]
    N = patch.normal(xi)
    assert np.abs(np.linalg.norm(N, axis=1) - 1).max() <= 1e-12
    T = patch.tangent_basis(xi)
    assert np.abs(np.einsum("bn,bnd->bd", N, T)).max() <= 1e-12


def test_patch_validation():
    with pytest.raises(InvalidInput):
        SurfacePatch(3, "torus", {}, Domain((0.0, 0.0), radius=0.1))
    with pytest.raises(InvalidInput):
        SurfacePatch(3, "paraboloid", {}, Domain((0.0,), radius=0.1))
    with pytest.raises(DomainError):
        cap((0.0, 0.0), 0.2, "cone")
    with pytest.raises(InvalidInput):
        SurfacePatch(3, "paraboloid", {}, Domain((0.0, 0.0), radius=0.5), small_diameter=True)
    small = SurfacePatch(3, "paraboloid", {}, Domain((0.0, 0.0), radius=0.03), small_diameter=True)
    assert small.normal_diam <= small.c_small


def test_deriv_bound_dominates_jet():
    p = cap((0.0, 0.0), 0.3, "sphere_cap", rho=1.0)
    _, g, H = p.jet(p.domain.sample(300)[0])
    assert p.deriv_bound >= max(1.0, np.abs(g).max(), np.abs(H).max())


# -- shape operator ------------------------------------------------------------

def test_shape_operator_examples():
    so = shape_operator(cap((0.0, 0.0)), [0.0, 0.0])
    assert np.allclose(so.matrix, np.eye(2), atol=1e-14)
    flat = cap((0.0, 0.0), family="flat")
    assert np.allclose(shape_operator(flat, [0.1, 0.05]).matrix, 0)
    with pytest.raises(DomainError):
        shape_operator(cap((0.0, 0.0)), [1.0, 0.0])


def _gauss_map_difference(patch, xi, t=1e-3):
    # -dN along tangent curves, expressed in the returned frame
    so = shape_operator(patch, xi)
    E = so.frame                                  # (n, d) orthonormal tangent columns
    Tb = patch.tangent_basis(np.atleast_2d(xi))[0]
    C = np.linalg.lstsq(Tb, E, rcond=None)[0]     # parameter directions of the frame vectors
    cols = []
    for j in range(E.shape[1]):
        dn = (patch.normal(np.atleast_2d(xi + t * C[:, j]))[0]
              - patch.normal(np.atleast_2d(xi - t * C[:, j]))[0]) / (2 * t)
        cols.append(-E.T @ dn)
    return np.array(cols).T


@pytest.mark.parametrize("xi", [(0.0, 0.0), (0.2, -0.1), (-0.3, 0.25)])
def test_sphere_shape_operator_against_gauss_map(xi):
    # sphere cap x_3 = sqrt(1 - |xi|^2): up normal is the outward radial vector
    p = cap((0.0, 0.0), 0.45, "sphere_cap", rho=1.0)
    so = shape_operator(p, xi)
    assert np.allclose(np.abs(so.curvatures), 1.0, atol=1e-6)
    assert np.abs(_gauss_map_difference(p, np.asarray(xi)) - so.matrix).max() <= 1e-6


@pytest.mark.parametrize("patch", PATCHES[:5], ids=lambda p: p.family)
def test_shape_operator_symmetric_and_volume_bound(patch, rng):
    xi = patch.domain.sample(40)[0]
    for x in xi[::4]:
        so = shape_operator(patch, x)
        assert np.abs(so.matrix - so.matrix.T).max() <= 1e-10
        kmax = np.abs(so.curvatures).max()
        for m in range(1, patch.d + 1):
            for _ in range(5):
                v = rng.standard_normal((m, patch.d))
                lhs = wedge_norm((so.matrix @ v.T).T)
                assert lhs <= (kmax ** m + 1e-6) * wedge_norm(v) + 1e-12


# -- certificates --------------------------------------------------------------

def _flat(axis, n=3):
    return SurfacePatch(n, "flat", {}, Domain((0.0,) * (n - 1), radius=0.2), graph_axis=axis)


def test_transversality_coordinate_planes_exact():
    sys3 = SurfaceSystem((_flat(0), _flat(1), _flat(2)))
    c = check_transversality(sys3, 10)
    assert c.min == 1.0
    same = SurfaceSystem((_flat(2), _flat(2)))
    assert check_transversality(same, 10).min == 0.0


def test_transversality_dense_oracle():
    s = SurfaceSystem((cap((-0.5, 0.0), 0.1), cap((0.5, 0.0), 0.1)))
    coarse = check_transversality(s, 100)
    dense = check_transversality(s, 1000)
    assert abs(coarse.min - dense.min) <= 1e-3
    assert coarse.certified <= dense.min
    # brute force: wedge of the two unit normals is |N1 x N2|
    xi1 = s.patches[0].domain.sample(1000)[0]
    xi2 = s.patches[1].domain.sample(1000)[0]
    N1, N2 = s.patches[0].normal(xi1), s.patches[1].normal(xi2)
    brute = min(np.linalg.norm(np.cross(a, N2), axis=1).min() for a in N1)
    assert abs(dense.min - brute) <= 1e-12


def test_identical_patches_below_normal_diam():
    p = cap((0.2, 0.0), 0.2)
    c = check_transversality(SurfaceSystem((p, p)), 50)
    assert c.min <= p.normal_diam


def test_curvature_flat_zero_and_caps_positive(caps):
    flat = SurfaceSystem((_flat(2), _flat(0)))
    assert check_curvature_condition(flat, 0, 20).min == 0.0
    coarse = check_curvature_condition(caps, 0, 100)
    dense = check_curvature_condition(caps, 0, 1000)
    assert coarse.min > 0
    assert abs(coarse.min - dense.min) <= 1e-3


def test_curvature_cylinder_flat_direction_zero():
    # cylinder x3 = xi1^2 / 2 is flat along e2; the flat x1 = 0 has normal e1, so the
    # admissible v-space is span(e2), the cylinder's zero-curvature direction
    cyl = cap((0.0, 0.0), 0.3, "cylinder")
    plane = SurfacePatch(3, "flat", {}, Domain((0.0, 0.0), radius=0.3), graph_axis=0)
    s = SurfaceSystem((cyl, plane))
    c = check_curvature_condition(s, 0, 200)
    assert abs(c.min) <= 1e-6
    xi = np.asarray(c.argmin[0])
    so = shape_operator(cyl, xi)
    e2 = np.array([0.0, 1.0, 0.0])
    assert np.linalg.norm(so.matrix @ (so.frame.T @ e2)) <= 1e-12


def test_certify_and_reverify(caps):
    s = caps.certify(200)
    assert s.nu > 0 and set(s.certificates) == {"transversality", "curvature_0", "curvature_1"}
    assert s.verify_certificates(1e-8)
    assert s.certificates["transversality"].certified == pytest.approx(s.nu)


def test_certified_levels_stable_under_refinement(caps):
    a, b = caps.certify(200), caps.certify(2000)
    for k in a.certificates:
        assert abs(a.certificates[k].min - b.certificates[k].min) <= 1e-3
    assert b.nu1 > 0


def test_system_validation():
    with pytest.raises(InvalidInput):
        SurfaceSystem(())
    with pytest.raises(InvalidInput):
        SurfaceSystem((cap((0, 0)), SurfacePatch(2, "flat", {}, Domain((0.0,), radius=0.1))))
    with pytest.raises(InvalidInput):
        SurfaceSystem(tuple(SurfacePatch(2, "flat", {}, Domain((0.0,), radius=0.1)) for _ in range(3)))


# -- small wedge / small eigenvector -------------------------------------------

def test_small_wedge_examples():
    e = np.eye(3)
    a = small_wedge_combination([e[0], -e[0]], 0.1)
    assert np.allclose(np.abs(a), 1 / math.sqrt(2))
    assert np.linalg.norm(a @ np.array([e[0], -e[0]])) <= 1e-15
    a = small_wedge_combination([e[0], e[1]], 1.0)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    with pytest.raises(InvalidInput, match="precondition"):
        small_wedge_combination([e[0], e[1]], 0.5)
    with pytest.raises(InvalidInput):
        small_wedge_combination([2 * e[0], e[1]], 1.0)


def _near_dependent(rng, m, n, c):
    while True:
        V = rng.standard_normal((m, n))
        V[-1] = V[:-1].T @ rng.standard_normal(m - 1) + rng.uniform(0, 1) * c ** m * rng.standard_normal(n)
        V /= np.linalg.norm(V, axis=1, keepdims=True)
        if wedge_norm(V) <= c ** m:
            return V


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.floats(0.05, 1.0))
def test_small_wedge_postcondition(seed, m, c):
    rng = np.random.default_rng(seed)
    V = _near_dependent(rng, m, 4, c) if m > 1 else None
    if m == 1:
        if c < 1:
            return
        V = rng.standard_normal((1, 4))
        V /= np.linalg.norm(V)
    a = small_wedge_combination(V, c)
    assert abs(np.linalg.norm(a) - 1) <= 1e-8
    assert np.linalg.norm(a @ V) <= c + 1e-8


def _fib_sphere(m):
    i = np.arange(m) + 0.5
    z = 1 - 2 * i / m
    r = np.sqrt(1 - z * z)
    th = math.pi * (1 + math.sqrt(5)) * i
    return np.stack([r * np.cos(th), r * np.sin(th), z], 1)


def test_small_wedge_against_sphere_mesh(rng):
    mesh = _fib_sphere(100_000)
    for _ in range(100):
        V = _near_dependent(rng, 3, 4, 0.3)
        a = small_wedge_combination(V, 0.3)
        got = np.linalg.norm(a @ V)
        best = np.linalg.norm(mesh @ V, axis=1).min()
        assert got <= 0.3 + 1e-8
        # the true minimum can only be lower than the constructed combination
        assert best <= got + 2e-2


def test_small_eigvec_examples():
    v = small_eigvec(np.zeros((3, 3)), 1e-3)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    v = small_eigvec(np.diag([0.01, 1.0]), 0.01)
    assert np.allclose(np.abs(v), [1, 0])
    assert np.linalg.norm(np.diag([0.01, 1.0]) @ v) == pytest.approx(0.01)
    with pytest.raises(InvalidInput):
        small_eigvec(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0)
    with pytest.raises(InvalidInput, match="det"):
        small_eigvec(np.eye(2), 0.5)


def test_small_eigvec_charpoly_oracle(rng):
    eps = 1e-4
    for _ in range(100):
        A = rng.standard_normal((4, 4))
        A = A + A.T
        A *= (eps / abs(np.linalg.det(A))) ** 0.25
        v = small_eigvec(A, eps)
        r = np.linalg.norm(A @ v)
        assert r <= eps ** 0.25 + 1e-8
        roots = np.roots(np.poly(A))
        assert r == pytest.approx(np.abs(roots).min(), rel=1e-6, abs=1e-10)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 5))
def test_small_eigvec_postcondition(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A = A + A.T
    eps = abs(np.linalg.det(A)) * rng.uniform(1, 3) + 1e-300
    v = small_eigvec(A, eps)
    assert np.linalg.norm(A @ v) <= eps ** (1 / n) + 1e-8


# -- localization of the Gauss map ---------------------------------------------

def test_localization_sphere_is_slice():
    p = cap((0.0, 0.0), 0.4, "sphere_cap", rho=1.0)
    r = normal_localization_submanifold(p, [[1.0, 0.0, 0.0]], 0.05)
    # N(zeta) = zeta on the unit sphere, so S~' = S cap {x_1 = 0}
    assert np.abs(r.points[:, 0]).max() <= 1e-8
    assert r.residual_max <= 1e-8 and r.c_tilde <= 1.1 and r.normal_wedge_min > 0


def test_localization_paraboloid_direct_inequality():
    p = cap((0.0, 0.0), 0.4)
    mu = 0.05
    r = normal_localization_submanifold(p, [[1.0, 0.0, 0.0]], mu)
    assert np.abs(r.xi[:, 0]).max() <= 1e-8
    # S~ = {|xi_1| / sqrt(1 + |xi|^2) <= mu}; its distance to {xi_1 = 0} is at most |xi_1|
    xi = p.domain.sample(20_000)[0]
    inS = np.abs(xi[:, 0]) / np.sqrt(1 + (xi ** 2).sum(1)) <= mu
    assert np.abs(xi[inS, 0]).max() <= 1.05 * mu * math.sqrt(1 + 0.4 ** 2)
    assert r.c_tilde <= 1.05 * math.sqrt(1 + 0.4 ** 2)


def test_localization_flat_degenerate():
    with pytest.raises(DegenerateGeometry):
        normal_localization_submanifold(cap((0.0, 0.0), 0.3, "flat"), [[1.0, 0.0, 0.0]], 0.05)
    with pytest.raises(InvalidInput):
        normal_localization_submanifold(cap((0.0, 0.0), 0.3), [[1.0, 0.0, 0.0]], 1.5)

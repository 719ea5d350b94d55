"""Real polynomial systems, sampled varieties and polynomial partitioning."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (ConfigError, DegenerateGeometry, InternalError, InvalidInput,
                     PartitionFailure)
from .geometry import wedge_norm

# ----------------------------------------------------------------------------
# sparse polynomials


class Polynomial:
    """Sparse real polynomial in n variables: {exponent tuple: coefficient}."""

    __slots__ = ("n", "terms", "__dict__")

    def __init__(self, n: int, terms=None):
        self.n = int(n)
        t = {}
        for e, c in (terms or {}).items():
            e = tuple(int(v) for v in e)
            if len(e) != self.n or min(e, default=0) < 0:
                raise InvalidInput(f"bad exponent {e} for n = {self.n}")
            c = float(c)
            if c != 0.0:
                t[e] = t.get(e, 0.0) + c
        self.terms = {e: c for e, c in t.items() if c != 0.0}

    @staticmethod
    def variable(n, i):
        e = [0] * n
        e[i] = 1
        return Polynomial(n, {tuple(e): 1.0})

    @staticmethod
    def constant(n, c):
        return Polynomial(n, {(0,) * n: c})

    @staticmethod
    def variables(n):
        return [Polynomial.variable(n, i) for i in range(n)]

    @property
    def degree(self):
        return max((sum(e) for e in self.terms), default=0)

    def is_zero(self):
        return not self.terms

    def _lift(self, other):
        if isinstance(other, Polynomial):
            if other.n != self.n:
                raise InvalidInput("polynomials in different numbers of variables")
            return other
        return Polynomial.constant(self.n, float(other))

    def __add__(self, other):
        other = self._lift(other)
        t = dict(self.terms)
        for e, c in other.terms.items():
            t[e] = t.get(e, 0.0) + c
        return Polynomial(self.n, t)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial(self.n, {e: c * float(other) for e, c in self.terms.items()})
        other = self._lift(other)
        t = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                t[e] = t.get(e, 0.0) + c1 * c2
        return Polynomial(self.n, t)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = Polynomial.constant(self.n, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.n == other.n and self.terms == other.terms

    def __hash__(self):
        return hash((self.n, tuple(sorted(self.terms.items()))))

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for e, c in sorted(self.terms.items(), key=lambda kv: (-sum(kv[0]), kv[0])):
            mono = "*".join(f"x{i}^{k}" if k > 1 else f"x{i}" for i, k in enumerate(e) if k)
            parts.append(f"{c:+g}" + (f"*{mono}" if mono else ""))
        return " ".join(parts)

    def diff(self, i):
        t = {}
        for e, c in self.terms.items():
            if e[i]:
                e2 = list(e)
                e2[i] -= 1
                t[tuple(e2)] = c * e[i]
        return Polynomial(self.n, t)

    @cached_property
    def gradient(self):
        return [self.diff(i) for i in range(self.n)]

    @cached_property
    def _arrays(self):
        if not self.terms:
            return np.zeros((0, self.n), int), np.zeros(0)
        E = np.array(list(self.terms.keys()), int).reshape(-1, self.n)
        c = np.array(list(self.terms.values()))
        return E, c

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        E, c = self._arrays
        if len(c) == 0:
            return np.zeros(len(X))
        out = np.empty(len(X))
        step = max(1, 4_000_000 // len(c))
        for s in range(0, len(X), step):
            Xs = X[s:s + step]
            acc = np.ones((len(Xs), len(c)))
            for a in range(self.n):
                k = int(E[:, a].max())
                if k:
                    pw = np.ones((len(Xs), k + 1))
                    for j in range(1, k + 1):
                        pw[:, j] = pw[:, j - 1] * Xs[:, a]
                    acc *= pw[:, E[:, a]]
            out[s:s + step] = acc @ c
        return out

    def grad_eval(self, X):
        return np.stack([g(X) for g in self.gradient], -1)

    @property
    def coefficient_scale(self):
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def to_json(self):
        return [{"exponents": list(e), "coeff": c} for e, c in sorted(self.terms.items())]

    @staticmethod
    def from_json(n, items):
        return Polynomial(n, {tuple(it["exponents"]): it["coeff"] for it in items})


def monomial_exponents(n, d, min_degree=0):
    """Exponents of total degree in [min_degree, d], graded then lexicographic."""
    out = []
    for k in range(min_degree, d + 1):
        for c in itertools.combinations_with_replacement(range(n), k):
            e = [0] * n
            for i in c:
                e[i] += 1
            out.append(tuple(e))
    return out


def random_polynomial(n, d, rng):
    """Dense polynomial with standard normal coefficients."""
    return Polynomial(n, {e: rng.standard_normal() for e in monomial_exponents(n, d)})


# ----------------------------------------------------------------------------
# systems


@dataclass(frozen=True, eq=False)
class PolySystem:
    n: int
    polys: tuple

    def __post_init__(self):
        polys = tuple(self.polys)
        object.__setattr__(self, "polys", polys)
        if not polys:
            raise InvalidInput("empty polynomial system")
        if len(polys) > self.n:
            raise InvalidInput(f"m = {len(polys)} polynomials exceed n = {self.n}")
        if any(p.n != self.n for p in polys):
            raise InvalidInput("polynomial dimension mismatch")

    @property
    def m(self):
        return len(self.polys)

    @property
    def degrees(self):
        return tuple(p.degree for p in self.polys)

    def evaluate(self, X):
        return np.stack([p(X) for p in self.polys], -1)

    def jacobian(self, X):
        return np.stack([p.grad_eval(X) for p in self.polys], 1)

    def to_json(self):
        return {"n": self.n, "polys": [p.to_json() for p in self.polys]}

    @staticmethod
    def from_json(d):
        return PolySystem(d["n"], tuple(Polynomial.from_json(d["n"], p) for p in d["polys"]))


def _region_box(region, n):
    if hasattr(region, "extent"):
        return region.c - region.extent, region.c + region.extent
    lo, hi = (np.asarray(v, float) for v in region)
    if lo.shape != (n,) or hi.shape != (n,) or np.any(hi <= lo):
        raise InvalidInput("region must be a box (lo, hi) with lo < hi")
    return lo, hi


def _gn_project(system, X, iters=40, tol=1e-13):
    """Batched Gauss-Newton min-norm projection onto Z(P)."""
    X = X.copy()
    for _ in range(iters):
        F = system.evaluate(X)
        J = system.jacobian(X)
        if system.m == 1:
            g = J[:, 0, :]
            g2 = (g * g).sum(1)
            step = (F[:, 0] / np.where(g2 > 1e-300, g2, np.inf))[:, None] * g
        else:
            step = np.einsum("nij,nj->ni", np.linalg.pinv(J, rcond=1e-12), F)
        X -= step
        if np.all(np.abs(F) <= tol):
            break
    return X


def dedup_points(X, radius):
    """Greedy cover in input order: keep a point unless a kept point lies within radius."""
    if len(X) == 0:
        return np.zeros(len(X), bool)
    tree = cKDTree(X)
    keep = np.zeros(len(X), bool)
    removed = np.zeros(len(X), bool)
    for i in range(len(X)):
        if removed[i]:
            continue
        keep[i] = True
        removed[tree.query_ball_point(X[i], radius)] = True
    return keep


@dataclass(frozen=True, eq=False)
class VarietySample:
    system: PolySystem
    points: np.ndarray
    gradients: np.ndarray      # (M, m, n)
    normals: np.ndarray        # (M, m, n), orthonormal rows spanning the normal space
    margins: np.ndarray        # normalised gradient wedge per point
    residuals: np.ndarray
    spacing: float
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)


def _normal_frames(G):
    Q, _ = np.linalg.qr(np.swapaxes(G, 1, 2))
    return np.swapaxes(Q, 1, 2)


def _margins(G, scale):
    Gn = G / scale[None, :, None]
    out = np.empty(len(G))
    for i in range(len(G)):
        out[i] = wedge_norm(list(Gn[i]))
    return out


def variety_sampler(system: PolySystem, region, grid_res: float, dedup: Optional[float] = None,
                    residual_tol: float = 1e-8) -> VarietySample:
    """Sample Z(P) in a box by Gauss-Newton projection of grid seeds.

    Every point of Z in the region lies within spacing = grid_res sqrt(n) + dedup
    of a returned sample (nearest seed, its projection, then the dedup cover).
    """
    n = system.n
    lo, hi = _region_box(region, n)
    dedup = grid_res / 2 if dedup is None else float(dedup)
    axes = [np.arange(a + grid_res / 2, b, grid_res) for a, b in zip(lo, hi)]
    shape = tuple(len(a) for a in axes)
    total = int(np.prod(shape))
    thr = 1.5 * grid_res * math.sqrt(n) / 2
    cand = []
    step = 1_000_000
    for s in range(0, total, step):
        idx = np.unravel_index(np.arange(s, min(total, s + step)), shape)
        X = np.stack([axes[a][idx[a]] for a in range(n)], 1)
        ok = np.ones(len(X), bool)
        for p in system.polys:
            v = np.abs(p(X[ok]))
            g = np.linalg.norm(p.grad_eval(X[ok]), axis=1)
            sub = v <= thr * g + 1e-300
            ok[np.flatnonzero(ok)[~sub]] = False
        cand.append(X[ok])
    seeds = np.vstack(cand) if cand else np.zeros((0, n))
    diag = {"seeds": total, "candidates": int(len(seeds))}
    if len(seeds):
        X = _gn_project(system, seeds)
        F = np.abs(system.evaluate(X)).max(1)
        inside = np.all((X >= lo - 1e-12) & (X <= hi + 1e-12), axis=1)
        good = np.isfinite(F) & (F <= residual_tol) & inside
        X = X[good]
    else:
        X = seeds
    diag["converged"] = int(len(X))
    if len(X):
        X = X[dedup_points(X, dedup)]
    G = system.jacobian(X) if len(X) else np.zeros((0, system.m, n))
    res = np.abs(system.evaluate(X)).max(1) if len(X) else np.zeros(0)
    if len(X):
        scale = np.linalg.norm(G, axis=2).max(0)
        scale[scale == 0] = 1.0
        margins = _margins(G, scale)
        normals = _normal_frames(G)
    else:
        margins, normals = np.zeros(0), np.zeros((0, system.m, n))
    diag["kept"] = int(len(X))
    return VarietySample(system, X, G, normals, margins, res,
                         grid_res * math.sqrt(n) + dedup, diag)


# ----------------------------------------------------------------------------
# transverse complete intersections


@dataclass(frozen=True)
class TCIResult:
    is_tci: bool
    margin: float
    witness: Optional[np.ndarray]
    vacuous: bool = False
    n_samples: int = 0

    def __iter__(self):
        return iter((self.is_tci, self.margin, self.witness))


def _minors(system):
    """All m x m minors of the Jacobian as polynomials."""
    m, n = system.m, system.n
    G = [p.gradient for p in system.polys]
    out = []
    for cols in itertools.combinations(range(n), m):
        out.append(determinant([[G[i][c] for c in cols] for i in range(m)], n))
    return out


def singular_search(system, seeds, iters=60):
    """Gauss-Newton on P = 0 plus all Jacobian minors = 0 from seeds; best residual point."""
    polys = tuple(system.polys) + tuple(q for q in _minors(system) if not q.is_zero())
    X = np.array(seeds, float)
    for _ in range(iters):
        F = np.stack([p(X) for p in polys], -1)
        J = np.stack([p.grad_eval(X) for p in polys], 1)
        X = X - np.einsum("nij,nj->ni", np.linalg.pinv(J, rcond=1e-12), F)
    F = np.abs(np.stack([p(X) for p in polys], -1)).max(1)
    j = int(np.nanargmin(np.where(np.isfinite(F), F, np.inf)))
    return X[j], float(F[j])


def tci_check(system: PolySystem, region, grid_res: float, n_singular_seeds: int = 20,
              singular_tol: float = 1e-10, margin_tol: float = 1e-6) -> TCIResult:
    """Minimum normalised gradient wedge over samples of Z, plus a Newton search for
    singular points (P = 0 and rank J < m) seeded at the worst samples."""
    Z = variety_sampler(system, region, grid_res)
    if len(Z) == 0:
        return TCIResult(True, math.inf, None, vacuous=True, n_samples=0)
    order = np.argsort(Z.margins, kind="stable")
    j = int(order[0])
    mn = float(Z.margins[j])
    witness = Z.points[j]
    seeds = Z.points[order[:n_singular_seeds]]
    lo, hi = _region_box(region, system.n)
    xs, res = singular_search(system, seeds)
    singular = res <= singular_tol and np.all((xs >= lo - 1e-9) & (xs <= hi + 1e-9))
    if singular:
        return TCIResult(False, 0.0, xs, n_samples=len(Z))
    return TCIResult(mn > margin_tol, mn, witness, n_samples=len(Z))


# ----------------------------------------------------------------------------
# zero-dimensional systems


def zero_dim_count(system: PolySystem, region, grid_res: float = 0.05, dedup: float = 1e-6,
                   residual_tol: float = 1e-10, iters: int = 60) -> np.ndarray:
    """Real solutions in a box of a square system by damped Newton from grid seeds."""
    n = system.n
    if system.m != n:
        raise InvalidInput(f"zero_dim_count needs m = n, got m = {system.m}, n = {n}")
    lo, hi = _region_box(region, n)
    axes = [np.arange(a + grid_res / 2, b, grid_res) for a, b in zip(lo, hi)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
    done = np.zeros((0, n))
    for _ in range(iters):
        F = system.evaluate(X)
        f0 = (F * F).sum(1)
        conv = f0 <= 1e-28
        done = np.vstack([done, X[conv]])
        X, F, f0 = X[~conv], F[~conv], f0[~conv]
        if not len(X):
            break
        J = system.jacobian(X)
        step = np.einsum("nij,nj->ni", np.linalg.pinv(J, rcond=1e-13), F)
        t = np.ones(len(X))
        # halve the step until the residual decreases (at most 10 times)
        bad = np.arange(len(X))
        for _ in range(10):
            Fn = system.evaluate(X[bad] - t[bad, None] * step[bad])
            worse = (Fn * Fn).sum(1) > f0[bad]
            bad = bad[worse]
            if not len(bad):
                break
            t[bad] *= 0.5
        X = X - t[:, None] * step
        # drop stalled seeds (no descent after 10 halvings) and ones far outside the box
        live = np.ones(len(X), bool)
        live[bad] = False
        live &= np.all(np.isfinite(X), axis=1)
        live &= np.all((X > lo - (hi - lo)) & (X < hi + (hi - lo)), axis=1)
        X = X[live]
    X = np.vstack([done, X])
    F = np.abs(system.evaluate(X)).max(1)
    ok = (F <= residual_tol) & np.all((X >= lo) & (X <= hi), axis=1)
    X = X[ok]
    if len(X) == 0:
        return np.zeros((0, n))
    # polish then cluster
    for _ in range(3):
        X = X - np.einsum("nij,nj->ni", np.linalg.pinv(system.jacobian(X), rcond=1e-13),
                          system.evaluate(X))
    X = X[np.lexsort(X.T[::-1])]
    X = X[dedup_points(X, dedup)]
    J = system.jacobian(X)
    scale = np.linalg.norm(J, axis=2).max(0)
    scale[scale == 0] = 1.0
    marg = _margins(J, scale)
    if np.any(marg <= 1e-9):
        raise DegenerateGeometry(f"non-transverse solution at {X[int(np.argmin(marg))].tolist()}")
    bound = int(np.prod(system.degrees))
    if len(X) > bound:
        raise InternalError(f"{len(X)} solutions exceed the Bezout bound {bound}; "
                            "duplicate clusters, raise the dedup radius")
    return X


# ----------------------------------------------------------------------------
# Z_w


def determinant(M, n):
    """Leibniz determinant of a square matrix of polynomials (or numbers)."""
    k = len(M)
    out = Polynomial(n)
    for perm in itertools.permutations(range(k)):
        inv = sum(1 for i in range(k) for j in range(i + 1, k) if perm[i] > perm[j])
        term = Polynomial.constant(n, -1.0 if inv % 2 else 1.0)
        for i in range(k):
            e = M[i][perm[i]]
            term = term * e
            if isinstance(e, Polynomial) and e.is_zero():
                break
        out = out + term
    return out


def multivector_basis(n, grade):
    return list(itertools.combinations(range(n), grade))


def make_zw(system: PolySystem, w) -> PolySystem:
    """Append g_w = grad P_1 ^ ... ^ grad P_m ^ w.

    w holds coefficients over e_I, I in increasing (n-m)-subsets in lexicographic
    order. Sign convention: g_w = sum_I w_I det[grad P_1; ...; grad P_m; e_I1; ...],
    gradient rows first, basis rows last. For the circle with w = e_1, g_w = -2y.
    """
    n, m = system.n, system.m
    basis = multivector_basis(n, n - m)
    w = np.asarray(w, float).reshape(-1)
    if len(w) != len(basis):
        raise InvalidInput(f"w must have {len(basis)} coefficients (grade {n - m} in R^{n}), "
                           f"got {len(w)}")
    G = [p.gradient for p in system.polys]
    g = Polynomial(n)
    for wi, I in zip(w, basis):
        if wi == 0:
            continue
        rows = [list(G[i]) for i in range(m)]
        for a in I:
            rows.append([Polynomial.constant(n, 1.0 if b == a else 0.0) for b in range(n)])
        g = g + wi * determinant(rows, n)
    return PolySystem(n, system.polys + (g,))


def wedge_multivector(vectors, n):
    """Coordinates of v_1 ^ ... ^ v_k over the lexicographic basis e_I."""
    V = np.atleast_2d(np.asarray(vectors, float))
    k = len(V)
    return np.array([np.linalg.det(V[:, list(I)]) for I in multivector_basis(n, k)])


# ----------------------------------------------------------------------------
# ham-sandwich cuts


@dataclass(frozen=True, eq=False)
class Mass:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.points, float))
        w = np.asarray(self.weights, float).reshape(-1)
        if len(P) != len(w):
            raise InvalidInput("points and weights differ in length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidInput("weights must be finite and nonnegative")
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "weights", w)

    @property
    def total(self):
        return math.fsum(self.weights)

    def subset(self, mask):
        return Mass(self.points[mask], self.weights[mask])

    @staticmethod
    def uniform(points):
        P = np.atleast_2d(points)
        return Mass(P, np.full(len(P), 1.0 / len(P)))


def imbalance(values, mass: Mass, wall=0.0):
    """1/2 - min(side mass)/total; sides exclude |value| <= wall."""
    tot = mass.total
    if tot == 0:
        return 0.0
    pos = math.fsum(mass.weights[values > wall])
    neg = math.fsum(mass.weights[values < -wall])
    return max(0.0, 0.5 - min(pos, neg) / tot)


@dataclass(frozen=True, eq=False)
class CutResult:
    poly: Polynomial
    imbalances: np.ndarray
    start: int

    @property
    def max_imbalance(self):
        return float(self.imbalances.max()) if len(self.imbalances) else 0.0


class _Features:
    """Standardised Veronese features x^e, 1 <= |e| <= d."""

    def __init__(self, n, d, X):
        self.n, self.d = n, d
        self.exps = monomial_exponents(n, d, 1)
        self.polys = [Polynomial(n, {e: 1.0}) for e in self.exps]
        F = np.stack([p(X) for p in self.polys], 1)
        self.mu = F.mean(0)
        sd = F.std(0)
        self.sd = np.where(sd > 0, sd, 1.0)

    def __call__(self, X):
        F = np.stack([p(X) for p in self.polys], 1)
        return np.hstack([(F - self.mu) / self.sd, np.ones((len(X), 1))])

    def polynomial(self, theta):
        a, c0 = theta[:-1], theta[-1]
        terms = {(0,) * self.n: float(c0 - np.sum(a * self.mu / self.sd))}
        for e, ak, sk in zip(self.exps, a, self.sd):
            terms[e] = terms.get(e, 0.0) + float(ak / sk)
        return Polynomial(self.n, terms)


def _lm_balance(Phi, groups, weights, theta, temps=(3.0, 1.0, 0.3, 0.1, 0.03, 0.01, 0.003),
                iters=25):
    # a hot start keeps a mass lying wholly on one side inside the tanh's linear range
    j = groups.max() + 1
    tot = np.bincount(groups, weights, minlength=j)
    tot = np.where(tot > 0, tot, 1.0)
    for T in temps:
        lam = 1e-3
        for _ in range(iters):
            v = Phi @ theta
            rms = math.sqrt(float(np.mean(v * v))) or 1.0
            theta = theta / rms
            v = v / rms
            th = np.tanh(v / T)
            s = np.bincount(groups, weights * th, minlength=j) / tot
            sech = (1 - th * th) * weights / T
            Jm = np.zeros((j, Phi.shape[1]))
            np.add.at(Jm, groups, sech[:, None] * Phi)
            Jm /= tot[:, None]
            A = Jm @ Jm.T + lam * np.eye(j)
            step = Jm.T @ np.linalg.solve(A, s)
            cand = theta - step
            vc = Phi @ cand
            rc = math.sqrt(float(np.mean(vc * vc))) or 1.0
            sc = np.bincount(groups, weights * np.tanh(vc / rc / T), minlength=j) / tot
            if np.abs(sc).max() <= np.abs(s).max():
                theta, lam = cand, max(lam / 3, 1e-9)
            else:
                lam *= 4
    return theta


def ham_sandwich_cut(masses: Sequence[Mass], degree: int, tau: float = 0.05, rng=None,
                     starts: int = 12, wall_rel: float = 1e-9) -> CutResult:
    """Polynomial of degree <= ``degree`` whose two sides each hold >= 1/2 - tau of every mass.

    Multi-start Levenberg-Marquardt on tanh-smoothed signed balances over
    standardised Veronese coefficients, with annealed temperature; the exact
    imbalance is recounted with signs. Best start wins (ties: lowest index).
    """
    masses = [m for m in masses]
    if not masses:
        raise InvalidInput("no masses")
    n = masses[0].points.shape[1]
    j = len(masses)
    freedom = math.comb(degree + n, n) - 1
    if freedom < j:
        raise InvalidInput(f"degree {degree} in R^{n} has {freedom} free coefficients < {j} masses")
    rng = rng or np.random.default_rng(0)
    X = np.vstack([m.points for m in masses])
    w = np.concatenate([m.weights for m in masses])
    groups = np.concatenate([np.full(len(m.points), i) for i, m in enumerate(masses)])
    feats = _Features(n, degree, X)
    Phi = feats(X)

    def exact(poly):
        v = poly(X)
        wall = wall_rel * poly.coefficient_scale
        return np.array([imbalance(v[groups == i], masses[i], wall) for i in range(j)])

    if j == 1:
        # weighted median along the first coordinate
        x = X[:, 0]
        order = np.argsort(x, kind="stable")
        cw = np.cumsum(w[order]) / w.sum()
        k = int(np.searchsorted(cw, 0.5))
        lo_v = x[order[k]]
        hi_v = x[order[min(k + 1, len(x) - 1)]]
        med = 0.5 * (lo_v + hi_v) if np.isclose(cw[k], 0.5) and hi_v > lo_v else lo_v
        poly = Polynomial.variable(n, 0) - med
        imb = exact(poly)
        if imb.max() <= tau:
            return CutResult(poly, imb, 0)
    best = None
    for s in range(starts):
        theta = rng.standard_normal(Phi.shape[1])
        theta = _lm_balance(Phi, groups, w, theta)
        poly = feats.polynomial(theta)
        imb = exact(poly)
        if best is None or imb.max() < best.max_imbalance:
            best = CutResult(poly, imb, s)
        if best.max_imbalance <= tau / 4:
            break
    if best.max_imbalance > tau:
        raise PartitionFailure(f"ham-sandwich cut missed tau = {tau}: best imbalance "
                               f"{best.max_imbalance:.4f}", best.max_imbalance)
    return best


# ----------------------------------------------------------------------------
# polynomial partitioning


def degree_schedule(n, S):
    out = []
    for s in range(1, S + 1):
        d = 1
        while math.comb(d + n, n) - 1 < 2 ** (s - 1):
            d += 1
        out.append(d)
    return out


@dataclass(frozen=True, eq=False)
class PartitionResult:
    mass: Mass
    D: int
    S: int
    polys: list
    shifts: list
    cells: dict                 # sign tuple -> mass
    wall_mass: float
    labels: np.ndarray          # per point: cell index into sorted cells, -1 for wall
    imbalances: list
    degenerate: bool
    tau: float

    @property
    def total_degree(self):
        return sum(p.degree for p in self.polys)

    @property
    def shifted(self):
        return [p + c for p, c in zip(self.polys, self.shifts)]

    def signs(self, X):
        """Sign vectors (N, S) in {-1, 0, +1}; 0 marks the wall."""
        return _assign(self.shifted, np.atleast_2d(X))

    def nonwall_masses(self):
        return np.array([self.cells[k] for k in sorted(self.cells)])

    def balance_factor(self):
        """max and min of cell mass / (2^-S (total - wall))."""
        if self.degenerate or not self.cells:
            return 1.0, 1.0
        ref = (self.mass.total - self.wall_mass) / 2 ** self.S
        m = np.array([self.cells.get(k, 0.0) for k in itertools.product((-1, 1), repeat=self.S)])
        return float(m.max() / ref), float(m.min() / ref)

    def to_json(self):
        n = self.mass.points.shape[1]
        return {"D": self.D, "S": self.S, "degenerate": self.degenerate,
                "polys": [p.to_json() for p in self.polys], "shifts": list(self.shifts),
                "degrees": [p.degree for p in self.polys],
                "cells": [{"sign_vector": list(k), "mass": v} for k, v in sorted(self.cells.items())],
                "wall_mass": self.wall_mass, "total_mass": self.mass.total,
                "imbalances": list(self.imbalances), "tau": self.tau, "n": n}


WALL_REL = 1e-9


def _assign(polys, X):
    S = np.zeros((len(X), len(polys)), int)
    for s, q in enumerate(polys):
        v = q(X)
        wall = WALL_REL * q.coefficient_scale
        S[:, s] = np.where(v > wall, 1, np.where(v < -wall, -1, 0))
    return S


def polynomial_partition(mass: Mass, D: int, n: Optional[int] = None, tau: float = 0.05,
                         C_deg: float = 4.0, eps_shift: float = 1e-6, S: Optional[int] = None,
                         rng=None, starts: int = 12) -> PartitionResult:
    """Iterated ham-sandwich bisection into 2^S sign cells, S = floor(n log2 D)."""
    n = mass.points.shape[1] if n is None else n
    if mass.points.shape[1] != n:
        raise InvalidInput("mass dimension != n")
    if D < 1:
        raise InvalidInput("D must be >= 1")
    rng = rng or np.random.default_rng(0)
    S = int(math.floor(n * math.log2(D) + 1e-12)) if S is None else int(S)
    degs = degree_schedule(n, S)
    if sum(degs) > C_deg * D:
        raise ConfigError(f"degree schedule {degs} sums to {sum(degs)} > C_deg * D = "
                          f"{C_deg * D}; use a smaller S")
    pos = mass.weights > 0
    distinct = len(np.unique(mass.points[pos], axis=0)) if pos.any() else 0
    total = mass.total
    if distinct < 2 ** S or S == 0:
        return PartitionResult(mass, D, S, [], [], {(): total}, 0.0,
                               np.zeros(len(mass.points), int), [], True, tau)
    X = mass.points
    polys, shifts, imbs = [], [], []
    signs = np.zeros((len(X), 0), int)
    for s in range(S):
        alive = np.all(signs != 0, axis=1) & pos
        keys = [tuple(r) for r in signs[alive]] if s else [()] * int(alive.sum())
        uniq = sorted(set(keys))
        lab = np.array([uniq.index(k) for k in keys]) if s else np.zeros(int(alive.sum()), int)
        idx = np.flatnonzero(alive)
        masses = [Mass(X[idx[lab == u]], mass.weights[idx[lab == u]]) for u in range(len(uniq))]
        cut = ham_sandwich_cut(masses, degs[s], tau, rng, starts)
        q = cut.poly
        vals = q(X[idx])
        scale = math.sqrt(float(np.mean(vals ** 2))) or 1.0
        c = 0.0
        for attempt in range(20):
            c = float(rng.uniform(-eps_shift, eps_shift)) * scale / 2 ** attempt
            qs = q + c
            wall = WALL_REL * qs.coefficient_scale
            v = qs(X[idx])
            ib = [imbalance(v[lab == u], masses[u], wall) for u in range(len(uniq))]
            if max(ib) <= tau:
                break
        else:
            raise PartitionFailure("shift re-verification failed", max(ib))
        polys.append(q)
        shifts.append(c)
        imbs.append(float(max(ib)))
        signs = np.hstack([signs, _assign([q + c], X)])
    wallpt = np.any(signs == 0, axis=1)
    cells = {}
    labels = np.full(len(X), -1)
    allkeys = list(itertools.product((-1, 1), repeat=S))
    keyidx = {k: i for i, k in enumerate(allkeys)}
    for k in allkeys:
        cells[k] = 0.0
    groups = {}
    for i in np.flatnonzero(~wallpt):
        k = tuple(signs[i])
        labels[i] = keyidx[k]
        groups.setdefault(k, []).append(mass.weights[i])
    for k, ws in groups.items():
        cells[k] = math.fsum(ws)
    wall_mass = math.fsum(mass.weights[wallpt])
    return PartitionResult(mass, D, S, polys, shifts, cells, wall_mass, labels, imbs, False, tau)


# ----------------------------------------------------------------------------
# incidence and ball covers


@dataclass(frozen=True)
class IncidenceResult:
    counts: np.ndarray
    histogram: dict
    max_count: int
    bound: float

    @property
    def passed(self):
        return self.max_count <= self.bound


def tube_cells(tube, partition: PartitionResult, step: Optional[float] = None):
    """Distinct non-wall sign vectors met by samples along the core segment."""
    A, B = tube.endpoints
    L = float(np.linalg.norm(B - A))
    step = tube.core_radius if step is None else step
    k = max(2, int(math.ceil(L / step)) + 1)
    P = A + np.linspace(0, 1, k)[:, None] * (B - A)
    sg = partition.signs(P)
    sg = sg[np.all(sg != 0, axis=1)]
    return {tuple(r) for r in sg}


def cell_incidence_counts(tubes, partition: PartitionResult, C_inc: float = 2.0,
                          step_factor: float = 1.0) -> IncidenceResult:
    counts = np.array([len(tube_cells(T, partition, T.core_radius * step_factor)) for T in tubes],
                      int)
    hist = {int(k): int(v) for k, v in zip(*np.unique(counts, return_counts=True))}
    bound = C_inc * (partition.total_degree + 1)
    return IncidenceResult(counts, hist, int(counts.max()) if len(counts) else 0, bound)


@dataclass(frozen=True)
class BallCover:
    centers: np.ndarray
    radius: float
    qualifying: np.ndarray

    @property
    def count(self):
        return len(self.centers)


def qualifying_points(Z: VarietySample, tube, alpha: float):
    from .wavepackets import tangent_angle

    inT = tube.distance(Z.points) <= tube.radius
    ang = tangent_angle(tube.direction, Z.normals[inT]) if inT.any() else np.zeros(0)
    idx = np.flatnonzero(inT)[ang > alpha]
    return idx


def tube_variety_ball_cover(Z: VarietySample, tube, alpha: float) -> BallCover:
    """Greedy cover of {z in Z cap T: angle(v(T), T_z Z) > alpha} by balls of radius r / alpha."""
    r = tube.radius
    if Z.spacing > r / 10 * (1 + 1e-12):
        raise InvalidInput(f"variety sample spacing {Z.spacing:.4g} exceeds r / 10 = {r / 10:.4g}")
    idx = qualifying_points(Z, tube, alpha)
    P = Z.points[idx]
    rad = r / alpha
    keep = dedup_points(P, rad) if len(P) else np.zeros(0, bool)
    return BallCover(P[keep], rad, idx)

"""Graph hypersurface patches, Gauss map, shape operator and the
transversality / curvature certificates built on them.

A patch is a graph x_a = phi(xi) over the remaining n-1 coordinates, with
phi taken from a small set of closed-form families so that the gradient and
Hessian are exact. Points of the parameter domain U are written ``xi``
(shape ``(..., n-1)``), surface points ``zeta = Sigma(xi)`` (shape ``(..., n)``).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateGeometry, DomainError, InvalidInput, NoSolution

_CHUNK = 200_000


# ----------------------------------------------------------------------------
# parameter domains


@dataclass(frozen=True)
class Domain:
    """Ball (``radius``) or box (``half_widths``) in R^d."""

    center: tuple
    radius: Optional[float] = None
    half_widths: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if (self.radius is None) == (self.half_widths is None):
            raise InvalidInput("domain needs exactly one of radius / half_widths")
        if self.radius is not None:
            if not self.radius > 0:
                raise InvalidInput(f"domain radius must be positive, got {self.radius}")
            object.__setattr__(self, "radius", float(self.radius))
        else:
            hw = tuple(float(v) for v in self.half_widths)
            if len(hw) != len(self.center) or min(hw) <= 0:
                raise InvalidInput(f"bad half_widths {hw} for center {self.center}")
            object.__setattr__(self, "half_widths", hw)

    @property
    def kind(self):
        return "ball" if self.radius is not None else "box"

    @property
    def dim(self):
        return len(self.center)

    @property
    def c(self):
        return np.asarray(self.center)

    @property
    def extent(self):
        """Per-axis half extent of the bounding box."""
        if self.kind == "ball":
            return np.full(self.dim, self.radius)
        return np.asarray(self.half_widths)

    @property
    def volume(self):
        d = self.dim
        if self.kind == "ball":
            return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius ** d
        return float(np.prod(2 * np.asarray(self.half_widths)))

    @property
    def diameter(self):
        return float(2 * np.linalg.norm(self.extent)) if self.kind == "box" else 2 * self.radius

    def inner_distance(self, xi):
        """Signed distance to the complement: > 0 inside, <= 0 outside."""
        y = np.atleast_2d(xi) - self.c
        if self.kind == "ball":
            return self.radius - np.linalg.norm(y, axis=-1)
        return np.min(np.asarray(self.half_widths) - np.abs(y), axis=-1)

    def contains(self, xi, tol=1e-12):
        return self.inner_distance(xi) >= -tol

    def dilate(self, amount):
        if self.kind == "ball":
            return Domain(self.center, radius=self.radius + amount)
        return Domain(self.center, half_widths=tuple(h + amount for h in self.half_widths))

    def grid(self, m):
        """Tensor grid with m points per axis over the bounding box, kept if inside,
        plus box-surface grid points pushed radially onto the sphere for balls.
        Returns (points, spacing, covering_radius)."""
        m = max(int(m), 1)
        d = self.dim
        ext = self.extent
        if m == 1:
            return self.c[None, :].copy(), float(2 * ext.max()), float(np.linalg.norm(ext))
        axes = [np.linspace(-e, e, m) for e in ext]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
        spacing = float(2 * ext.max() / (m - 1))
        if self.kind == "box":
            return pts + self.c, spacing, spacing * math.sqrt(d) / 2
        r = self.radius
        inside = pts[np.linalg.norm(pts, axis=1) <= r * (1 + 1e-12)]
        # box-surface points projected onto the sphere make the axis extremes exact
        surf = pts[np.isclose(np.abs(pts).max(axis=1), r)]
        bnd = surf / np.linalg.norm(surf, axis=1, keepdims=True) * r
        allp = np.unique(np.round(np.vstack([inside, bnd]), 14), axis=0)
        return allp + self.c, spacing, spacing * math.sqrt(d)

    def sample(self, target):
        """Smallest tensor grid holding at least ``target`` points."""
        target = max(int(target), 1)
        m = 1
        while True:
            pts, sp, cov = self.grid(m)
            if len(pts) >= target or m > 4096:
                return pts, sp, cov
            m += 1 if m < 3 else max(1, m // 8)

    def to_dict(self):
        out = {"center": list(self.center)}
        if self.kind == "ball":
            out["radius"] = self.radius
        else:
            out["half_widths"] = list(self.half_widths)
        return out

    @staticmethod
    def from_dict(d):
        return Domain(tuple(d["center"]), d.get("radius"),
                      tuple(d["half_widths"]) if "half_widths" in d else None)


# ----------------------------------------------------------------------------
# closed-form graph families; each returns (phi, grad, hess) for xi of shape (N, d)


def _quad_terms(params, d):
    a = np.broadcast_to(np.asarray(params.get("a", 1.0), float), (d,)).copy()
    b = np.broadcast_to(np.asarray(params.get("vertex", 0.0), float), (d,)).copy()
    c0 = float(params.get("offset", 0.0))
    return a, b, c0


def _paraboloid(xi, params):
    d = xi.shape[1]
    a, b, c0 = _quad_terms(params, d)
    y = xi - b
    phi = 0.5 * (a * y * y).sum(1) + c0
    grad = a * y
    hess = np.broadcast_to(np.diag(a), (len(xi), d, d)).copy()
    return phi, grad, hess


def _cylinder(xi, params):
    d = xi.shape[1]
    axis = int(params.get("axis", 0))
    a = np.zeros(d)
    a[axis] = float(params.get("a", 1.0))
    p = dict(params)
    p["a"] = a
    return _paraboloid(xi, p)


def _sphere_cap(xi, params):
    d = xi.shape[1]
    rho = float(params.get("rho", 1.0))
    b = np.broadcast_to(np.asarray(params.get("vertex", 0.0), float), (d,))
    s = float(params.get("sign", 1.0))
    y = xi - b
    q = rho * rho - (y * y).sum(1)
    if np.any(q <= 0):
        raise DomainError("sphere_cap evaluated outside |xi - vertex| < rho")
    f = np.sqrt(q)
    phi = s * f
    grad = -s * y / f[:, None]
    hess = -s * (np.eye(d)[None] / f[:, None, None]
                 + y[:, :, None] * y[:, None, :] / (f ** 3)[:, None, None])
    return phi, grad, hess


def _cone(xi, params):
    d = xi.shape[1]
    a = float(params.get("a", 1.0))
    b = np.broadcast_to(np.asarray(params.get("vertex", 0.0), float), (d,))
    y = xi - b
    r = np.linalg.norm(y, axis=1)
    if np.any(r <= 0):
        raise DomainError("cone evaluated at its vertex")
    u = y / r[:, None]
    phi = a * r
    grad = a * u
    hess = a * (np.eye(d)[None] - u[:, :, None] * u[:, None, :]) / r[:, None, None]
    return phi, grad, hess


def _flat(xi, params):
    d = xi.shape[1]
    c = np.broadcast_to(np.asarray(params.get("slope", 0.0), float), (d,))
    c0 = float(params.get("offset", 0.0))
    phi = xi @ c + c0
    return phi, np.broadcast_to(c, xi.shape).copy(), np.zeros((len(xi), d, d))


def _polynomial(xi, params):
    d = xi.shape[1]
    terms = params["terms"]
    phi = np.zeros(len(xi))
    grad = np.zeros((len(xi), d))
    hess = np.zeros((len(xi), d, d))
    for t in terms:
        e = np.asarray(t["exponents"], int)
        c = float(t["coeff"])
        if len(e) != d:
            raise InvalidInput(f"monomial {e.tolist()} has wrong arity for d={d}")

        def mono(ex):
            if np.any(ex < 0):
                return np.zeros(len(xi))
            return np.prod(xi ** ex, axis=1)

        phi += c * mono(e)
        for i in range(d):
            if e[i] == 0:
                continue
            ei = e.copy()
            ei[i] -= 1
            grad[:, i] += c * e[i] * mono(ei)
            for j in range(d):
                if ei[j] == 0:
                    continue
                eij = ei.copy()
                eij[j] -= 1
                hess[:, i, j] += c * e[i] * ei[j] * mono(eij)
    return phi, grad, hess


FAMILIES = {
    "paraboloid": _paraboloid,
    "cylinder": _cylinder,
    "sphere_cap": _sphere_cap,
    "cone": _cone,
    "flat": _flat,
    "polynomial": _polynomial,
}


def _freeze(obj):
    if isinstance(obj, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in obj.items()))
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        return tuple(_freeze(v) for v in obj)
    return obj


def _insert(xp, val, axis):
    """Insert ``val`` (shape (N,)) as column ``axis`` of xp (shape (N, d))."""
    return np.insert(xp, axis, val, axis=1) if xp.shape[1] else val[:, None]


# ----------------------------------------------------------------------------
# surface patch


@dataclass(frozen=True, eq=False)
class SurfacePatch:
    """Graph patch x_{graph_axis} = phi(xi), xi in ``domain`` (R^{n-1}).

    Normals take the +1 component on the graph axis:
    N = insert(-grad phi, 1) / sqrt(1 + |grad phi|^2).
    """

    ambient_dim: int
    family: str
    params: dict = field(default_factory=dict)
    domain: Domain = None
    graph_axis: int = -1
    small_diameter: bool = False
    c_small: float = 0.1
    n_smooth: int = 4
    name: str = ""

    def __post_init__(self):
        n = int(self.ambient_dim)
        if n < 2:
            raise InvalidInput(f"ambient_dim must be >= 2, got {n}")
        object.__setattr__(self, "ambient_dim", n)
        ax = int(self.graph_axis) % n
        object.__setattr__(self, "graph_axis", ax)
        if self.family not in FAMILIES:
            raise InvalidInput(f"unknown surface family {self.family!r}; "
                               f"choose from {sorted(FAMILIES)}")
        if self.domain is None:
            object.__setattr__(self, "domain", Domain((0.0,) * (n - 1), radius=0.25))
        if self.domain.dim != n - 1:
            raise InvalidInput(f"domain dimension {self.domain.dim} != n-1 = {n - 1}")
        if self.n_smooth < 4:
            raise InvalidInput("n_smooth must be >= 4")
        # evaluating on a sample raises DomainError for cones through the vertex etc.
        self.jet(self.domain.sample(64)[0])
        if self.small_diameter and self.normal_diam > self.c_small:
            raise InvalidInput(f"normal_diam {self.normal_diam:.4g} exceeds c_small "
                               f"{self.c_small}")

    @property
    def d(self):
        return self.ambient_dim - 1

    def key(self):
        return (self.ambient_dim, self.family, _freeze(self.params), self.domain,
                self.graph_axis)

    def to_dict(self):
        return {"ambient_dim": self.ambient_dim, "family": self.family,
                "params": _jsonable(self.params), "domain": self.domain.to_dict(),
                "graph_axis": self.graph_axis, "small_diameter": self.small_diameter,
                "c_small": self.c_small, "name": self.name}

    @staticmethod
    def from_dict(d):
        return SurfacePatch(ambient_dim=d["ambient_dim"], family=d["family"],
                            params=d.get("params", {}),
                            domain=Domain.from_dict(d["domain"]),
                            graph_axis=d.get("graph_axis", -1),
                            small_diameter=d.get("small_diameter", False),
                            c_small=d.get("c_small", 0.1), name=d.get("name", ""))

    # -- closed-form jets ---------------------------------------------------
    def jet(self, xi):
        xi = np.atleast_2d(np.asarray(xi, float))
        if xi.shape[1] != self.d:
            raise InvalidInput(f"xi has {xi.shape[1]} coordinates, patch needs {self.d}")
        return FAMILIES[self.family](xi, self.params)

    def phi(self, xi):
        return self.jet(xi)[0]

    def grad(self, xi):
        return self.jet(xi)[1]

    def hess(self, xi):
        return self.jet(xi)[2]

    def check_in_domain(self, xi, tol=1e-12):
        xi = np.atleast_2d(xi)
        ok = self.domain.contains(xi, tol)
        if not np.all(ok):
            bad = xi[~ok][0]
            raise DomainError(f"point {bad.tolist()} lies outside the patch domain")

    def embed(self, xi):
        """Sigma(xi) in R^n."""
        xi = np.atleast_2d(np.asarray(xi, float))
        return _insert(xi, self.phi(xi), self.graph_axis)

    def embed_from_phi(self, xi, phi):
        return _insert(np.atleast_2d(xi), phi, self.graph_axis)

    def tangent_basis(self, xi, grad=None):
        """Coordinate tangent vectors d Sigma / d xi_j as columns, shape (N, n, d)."""
        xi = np.atleast_2d(xi)
        g = self.grad(xi) if grad is None else grad
        N = len(xi)
        T = np.zeros((N, self.ambient_dim, self.d))
        others = [a for a in range(self.ambient_dim) if a != self.graph_axis]
        for j, a in enumerate(others):
            T[:, a, j] = 1.0
        T[:, self.graph_axis, :] = g
        return T

    def normal(self, xi, grad=None):
        xi = np.atleast_2d(xi)
        g = self.grad(xi) if grad is None else grad
        u = _insert(-g, np.ones(len(g)), self.graph_axis)
        return u / np.linalg.norm(u, axis=1, keepdims=True)

    def normal_jacobian(self, xi):
        """dN/dxi, shape (N, n, d)."""
        _, g, H = self.jet(xi)
        u = _insert(-g, np.ones(len(g)), self.graph_axis)
        W = np.linalg.norm(u, axis=1)
        du = np.zeros((len(g), self.ambient_dim, self.d))
        others = [a for a in range(self.ambient_dim) if a != self.graph_axis]
        du[:, others, :] = -H
        ud = np.einsum("ni,nij->nj", u, du)
        return du / W[:, None, None] - u[:, :, None] * ud[:, None, :] / (W ** 3)[:, None, None]

    def shape_matrices(self, xi):
        """Shape operator in an orthonormal tangent frame.

        Returns (S, E): S of shape (N, d, d) symmetric, E of shape (N, n, d) with
        orthonormal columns spanning T_zeta S. In coordinates the Weingarten map
        is g^{-1} h with g = I + grad grad^T, h = Hess / W; conjugating by
        g^{1/2} gives the symmetric form g^{-1/2} h g^{-1/2}.
        """
        _, grad, H = self.jet(xi)
        W = np.sqrt(1 + (grad * grad).sum(1))
        g = np.eye(self.d)[None] + grad[:, :, None] * grad[:, None, :]
        lam, Q = np.linalg.eigh(g)
        gm = Q @ (lam[:, :, None] ** -0.5 * np.swapaxes(Q, 1, 2))
        h = H / W[:, None, None]
        S = gm @ h @ gm
        S = 0.5 * (S + np.swapaxes(S, 1, 2))
        E = self.tangent_basis(xi, grad) @ gm
        return S, E

    def ambient_shape(self, xi):
        """Shape operator as an n x n map on R^n (zero on the normal line)."""
        S, E = self.shape_matrices(xi)
        return E @ S @ np.swapaxes(E, 1, 2)

    # -- measured bounds ----------------------------------------------------
    @cached_property
    def _dense(self):
        return self.domain.sample(400 if self.d <= 2 else 1500)[0]

    @cached_property
    def hess_bound(self):
        """sup_U |Hess phi| (operator norm), measured on a dense sample."""
        H = self.hess(self._dense)
        return float(np.linalg.norm(H, 2, axis=(1, 2)).max()) if self.d else 0.0

    @cached_property
    def deriv_bound(self):
        """Measured sup of |d^alpha Sigma| for |alpha| <= n_smooth on a dense sample;
        orders 3 and 4 come from central differences of the exact Hessian."""
        xi = self._dense
        _, g, H = self.jet(xi)
        vals = [1.0, float(np.abs(g).max(initial=0)), float(np.abs(H).max(initial=0))]
        t = 1e-4
        d3 = []
        d4 = []
        for j in range(self.d):
            e = np.zeros(self.d)
            e[j] = t
            xp, xm = xi + e, xi - e
            ok = self.domain.contains(xp, 1e-3) & self.domain.contains(xm, 1e-3)
            if not np.any(ok):
                continue
            try:
                Hp, Hm = self.hess(xp[ok]), self.hess(xm[ok])
            except DomainError:
                continue
            d3.append(np.abs((Hp - Hm) / (2 * t)).max())
            d4.append(np.abs((Hp - 2 * H[ok] + Hm) / t ** 2).max())
        vals += [float(max(d3, default=0.0)), float(max(d4, default=0.0))]
        return 1.05 * max(vals)

    @cached_property
    def normal_diam(self):
        Nv = self.normal(self._dense)
        G = Nv @ Nv.T
        return float(np.sqrt(max(0.0, 2 - 2 * G.min())))

    @cached_property
    def shape_lipschitz(self):
        """Measured Lipschitz constant of the ambient shape operator in xi."""
        xi = self._dense
        t = 1e-5
        tot = np.zeros(len(xi))
        for j in range(self.d):
            e = np.zeros(self.d)
            e[j] = t
            try:
                D = (self.ambient_shape(xi + e) - self.ambient_shape(xi - e)) / (2 * t)
            except DomainError:
                continue
            tot += np.linalg.norm(D, 2, axis=(1, 2)) ** 2
        return 1.05 * float(np.sqrt(tot).max()) if self.d else 0.0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass(frozen=True)
class ShapeOperator:
    matrix: np.ndarray        # (d, d) symmetric, orthonormal-frame coordinates
    frame: np.ndarray         # (n, d) orthonormal columns spanning T_zeta S
    curvatures: np.ndarray    # eigenvalues, ascending
    directions: np.ndarray    # (n, d) principal directions in R^n (columns)


def shape_operator(patch: SurfacePatch, xi) -> ShapeOperator:
    xi = np.asarray(xi, float).reshape(1, -1)
    patch.check_in_domain(xi)
    S, E = patch.shape_matrices(xi)
    lam, V = np.linalg.eigh(S[0])
    return ShapeOperator(S[0], E[0], lam, E[0] @ V)


# ----------------------------------------------------------------------------
# wedge products


def wedge_norm(vectors) -> float:
    """|v_1 ^ ... ^ v_m| as sqrt(det Gram)."""
    try:
        V = np.asarray(vectors, float)
    except ValueError:
        raise InvalidInput("wedge_norm: vectors have mismatched dimensions") from None
    if V.ndim != 2:
        raise InvalidInput("wedge_norm expects a list of equal-length vectors")
    m, n = V.shape
    if m < 1 or m > n:
        raise InvalidInput(f"wedge of {m} vectors in R^{n} is undefined (need 1 <= m <= n)")
    if not np.all(np.isfinite(V)):
        raise InvalidInput("non-finite vector entries")
    return float(batched_wedge(V[None])[0])


def batched_wedge(V):
    """Wedge norms of a batch of frames, V shape (B, m, n)."""
    V = np.asarray(V, float)
    scale = np.linalg.norm(V, axis=2)
    scale = np.where(scale > 0, scale, 1.0)
    U = V / scale[:, :, None]
    B, m, n = U.shape
    if m == n or (m == 2 and n == 3):
        # closed forms; same rounding-level cutoff on the normalised wedge
        if m == n:
            u = np.abs(np.linalg.det(U))
        else:
            u = np.linalg.norm(np.cross(U[:, 0], U[:, 1]), axis=1)
        return np.where(u <= 1e-12, 0.0, u * np.prod(scale, axis=1))
    s = np.linalg.svd(U, compute_uv=False)
    w = np.prod(s, axis=1) * np.prod(scale, axis=1)
    tiny = s[:, -1] <= 1e-12
    return np.where(tiny, 0.0, w)


# ----------------------------------------------------------------------------
# systems and certificates


@dataclass(frozen=True)
class Certificate:
    kind: str
    min: float
    argmin: tuple       # one xi point per patch (lists)
    slack: float
    grid: dict
    skipped: int = 0

    @property
    def certified(self):
        return self.min - self.slack

    def __iter__(self):
        # (min_value, argmin) unpacking
        yield self.min
        yield self.argmin

    def to_dict(self):
        return {"kind": self.kind, "min": self.min,
                "argmin": [list(map(float, a)) for a in self.argmin],
                "slack": self.slack, "certified": self.certified,
                "grid": self.grid, "skipped": self.skipped}


@dataclass(frozen=True, eq=False)
class SurfaceSystem:
    patches: tuple
    nu: Optional[float] = None
    nu1: Optional[float] = None
    certificates: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        k = len(self.patches)
        if k < 1:
            raise InvalidInput("a surface system needs at least one patch")
        n = self.patches[0].ambient_dim
        if any(p.ambient_dim != n for p in self.patches):
            raise InvalidInput("patches live in different ambient dimensions")
        if k > n:
            raise InvalidInput(f"k = {k} patches exceeds ambient dimension n = {n}")

    @property
    def k(self):
        return len(self.patches)

    @property
    def n(self):
        return self.patches[0].ambient_dim

    def certify(self, samples_per_patch=100, curvature_patches=None):
        """Return a copy with nu / nu1 set from fresh certificates."""
        tc = check_transversality(self, samples_per_patch)
        certs = {"transversality": tc}
        nu1 = None
        ls = range(self.k) if curvature_patches is None else curvature_patches
        for l in ls:
            cc = check_curvature_condition(self, l, samples_per_patch)
            certs[f"curvature_{l}"] = cc
            nu1 = cc.certified if nu1 is None else min(nu1, cc.certified)
        return SurfaceSystem(self.patches, tc.certified, nu1, certs)

    def verify_certificates(self, rtol=1e-8):
        """Re-evaluate every stored minimum at its argmin."""
        for name, c in self.certificates.items():
            xis = [np.asarray(a, float) for a in c.argmin]
            if c.kind == "transversality":
                v = transversality_value(self, xis)
            else:
                v = curvature_value(self, int(name.split("_")[1]), xis)
            if not math.isclose(v, c.min, rel_tol=rtol, abs_tol=1e-14):
                return False
        return True


def _product_chunks(sizes, chunk=_CHUNK):
    total = int(np.prod(sizes))
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk))
        yield start, np.stack(np.unravel_index(flat, sizes), axis=1)


def _samples(system, samples_per_patch):
    if samples_per_patch < 1:
        raise InvalidInput("samples_per_patch must be >= 1")
    out = []
    for p in system.patches:
        pts, sp, cov = p.domain.sample(samples_per_patch)
        if len(pts) == 0:
            raise InvalidInput("empty patch domain sample")
        out.append((pts, sp, cov))
    return out


def transversality_value(system, xis):
    Ns = np.stack([p.normal(np.atleast_2d(x))[0] for p, x in zip(system.patches, xis)])
    return float(batched_wedge(Ns[None])[0])


def check_transversality(system: SurfaceSystem, samples_per_patch: int) -> Certificate:
    """Minimum of |N_1 ^ ... ^ N_k| over the product sample grid.

    The slack sum_i L_i rho_i (L_i = sup |Hess phi_i| bounds the Lipschitz
    constant of N_i, rho_i the covering radius) makes ``certified`` a lower
    bound over the whole domain product, since the wedge of unit vectors is
    1-Lipschitz in each argument.
    """
    samp = _samples(system, samples_per_patch)
    normals = [p.normal(s[0]) for p, s in zip(system.patches, samp)]
    sizes = [len(s[0]) for s in samp]
    best, best_idx = math.inf, None
    for _, idx in _product_chunks(sizes):
        V = np.stack([normals[i][idx[:, i]] for i in range(system.k)], axis=1)
        w = batched_wedge(V)
        j = int(np.argmin(w))
        if w[j] < best:
            best, best_idx = float(w[j]), idx[j]
    slack = float(sum(p.hess_bound * s[2] for p, s in zip(system.patches, samp)))
    argmin = tuple(tuple(samp[i][0][best_idx[i]].tolist()) for i in range(system.k))
    grid = {"samples": sizes, "spacing": [s[1] for s in samp],
            "covering_radius": [s[2] for s in samp]}
    return Certificate("transversality", best, argmin, slack, grid)


def _curv_ratio(normals, S_l):
    """normals (B, k, n); S_l (B, n, n). Returns ratio (B,) and skip mask."""
    B, k, n = normals.shape
    if n == 3 and k == 2:
        # the v-space is the line through w = N_1 x N_2
        c = np.cross(normals[:, 0], normals[:, 1])
        wedge = np.linalg.norm(c, axis=1)
        a = (normals[:, 0] ** 2).sum(1)
        b = (normals[:, 1] ** 2).sum(1)
        g = (normals[:, 0] * normals[:, 1]).sum(1)
        disc = np.sqrt(0.25 * (a - b) ** 2 + g * g)
        s = np.sqrt(np.maximum(np.stack([0.5 * (a + b) + disc, 0.5 * (a + b) - disc], 1), 0))
        deficient = s[:, -1] <= 1e-8 * np.maximum(s[:, 0], 1e-300)
        w = c / np.where(wedge > 0, wedge, 1.0)[:, None]
        Sw = np.einsum("bij,bj->bi", S_l, w)
        # component of S w along w is the part off span(N)
        ratio = wedge * np.abs((Sw * w).sum(1))
        return ratio, deficient, s
    U, s, Vh = np.linalg.svd(normals, full_matrices=True)
    deficient = s[:, -1] <= 1e-8 * np.maximum(s[:, 0], 1e-300)
    if n == k:
        return np.full(B, np.inf), np.ones(B, bool), s
    Q = Vh[:, :k, :]                       # rows span span(N)
    Wb = Vh[:, k:, :]                      # rows span the admissible v-space
    SW = S_l @ np.swapaxes(Wb, 1, 2)       # (B, n, n-k)
    PSW = SW - np.swapaxes(Q, 1, 2) @ (Q @ SW)
    sig = np.linalg.svd(PSW, compute_uv=False)[:, -1]
    ratio = np.prod(s, axis=1) * sig
    return ratio, deficient, s


def curvature_value(system, l, xis):
    Ns = np.stack([p.normal(np.atleast_2d(x))[0] for p, x in zip(system.patches, xis)])
    S = system.patches[l].ambient_shape(np.atleast_2d(xis[l]))
    r, skip, _ = _curv_ratio(Ns[None], S)
    return float(r[0])


def check_curvature_condition(system: SurfaceSystem, l: int, samples: int) -> Certificate:
    """Minimum over sampled tuples and unit admissible v of |N_1^...^N_k ^ S v|.

    For a tuple with rank-k normal matrix the admissible v-space is span(N)^perp
    (which lies in T S_l since N_l is among the normals) and the quantity equals
    |N_1^...^N_k| * sigma_min(P S_l W), P the projection off span(N), W an
    orthonormal basis of the v-space. Rank-deficient tuples and k = n systems
    (trivial v-space) are skipped and counted.
    """
    if system.k > system.n:
        raise InvalidInput(f"k = {system.k} > n = {system.n}")
    if not 0 <= l < system.k:
        raise InvalidInput(f"patch index {l} out of range")
    samp = _samples(system, samples)
    normals = [p.normal(s[0]) for p, s in zip(system.patches, samp)]
    S_l = system.patches[l].ambient_shape(samp[l][0])
    sizes = [len(s[0]) for s in samp]
    best, best_idx, skipped = math.inf, None, 0
    sig_n = math.inf
    for _, idx in _product_chunks(sizes, 50_000):
        V = np.stack([normals[i][idx[:, i]] for i in range(system.k)], axis=1)
        r, skip, s = _curv_ratio(V, S_l[idx[:, l]])
        skipped += int(skip.sum())
        r = np.where(skip, np.inf, r)
        if np.any(~skip):
            sig_n = min(sig_n, float(s[~skip, -1].min()))
        j = int(np.argmin(r))
        if r[j] < best:
            best, best_idx = float(r[j]), idx[j]
    grid = {"samples": sizes, "spacing": [s[1] for s in samp],
            "covering_radius": [s[2] for s in samp], "patch": l}
    if best_idx is None or not np.isfinite(best):
        return Certificate("curvature", math.inf, tuple(), 0.0, grid, skipped)
    lr = sum(p.hess_bound * s[2] for p, s in zip(system.patches, samp))
    smax = float(np.linalg.norm(S_l, 2, axis=(1, 2)).max())
    slack = smax * lr * (1 + 4 / sig_n) + system.patches[l].shape_lipschitz * samp[l][2]
    argmin = tuple(tuple(samp[i][0][best_idx[i]].tolist()) for i in range(system.k))
    return Certificate("curvature", best, argmin, float(slack), grid, skipped)


# ----------------------------------------------------------------------------
# small wedge / small eigenvalue constructions


def small_wedge_combination(vectors, c):
    """Unit alpha with |sum alpha_i v_i| <= c, given |v_1 ^ ... ^ v_m| <= c^m.

    Induction from the top: split v_m into its component orthogonal to
    span(v_1..v_{m-1}) and the projection sum beta_i v_i. If the orthogonal
    part is at most c, alpha ~ (-beta, 1) works; otherwise the wedge of the
    first m-1 vectors is below c^{m-1} and we recurse.
    """
    V = np.asarray(vectors, float)
    if V.ndim != 2:
        raise InvalidInput("expected a list of vectors")
    m, n = V.shape
    if not 0 < c <= 1:
        raise InvalidInput(f"c must lie in (0, 1], got {c}")
    if m > n:
        raise InvalidInput(f"{m} vectors in R^{n}")
    if np.any(np.abs(np.linalg.norm(V, axis=1) - 1) > 1e-8):
        raise InvalidInput("inputs must be unit vectors (to 1e-8)")
    w = float(batched_wedge(V[None])[0])
    if w > c ** m * (1 + 1e-12) + 1e-15:
        raise InvalidInput(f"precondition violated: |v_1 ^ ... ^ v_m| = {w:.6g} > c^m = {c ** m:.6g}")
    for top in range(m - 1, -1, -1):
        if top == 0:
            alpha = np.zeros(m)
            alpha[0] = 1.0
            return alpha
        A = V[:top].T
        beta, *_ = np.linalg.lstsq(A, V[top], rcond=None)
        perp = V[top] - A @ beta
        if np.linalg.norm(perp) <= c:
            alpha = np.zeros(m)
            alpha[:top] = -beta
            alpha[top] = 1.0
            return alpha / np.linalg.norm(alpha)
    raise AssertionError("unreachable")


def small_eigvec(A, eps):
    """Unit v with |A v| <= eps^{1/n} for symmetric A with |det A| <= eps:
    the eigenvector of least |eigenvalue|."""
    A = np.asarray(A, float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput("A must be square")
    if np.abs(A - A.T).max(initial=0) > 1e-10:
        raise InvalidInput("A is not symmetric to 1e-10")
    if not eps > 0:
        raise InvalidInput("eps must be positive")
    det = float(np.linalg.det(A))
    if abs(det) > eps * (1 + 1e-9):
        raise InvalidInput(f"precondition violated: |det A| = {abs(det):.6g} > eps = {eps:.6g}")
    lam, V = np.linalg.eigh(0.5 * (A + A.T))
    j = int(np.argmin(np.abs(lam)))
    return V[:, j]


# ----------------------------------------------------------------------------
# localization of the Gauss map near a subspace


@dataclass(frozen=True)
class LocalizationResult:
    xi: np.ndarray             # (M, d) parameter points of S~' (zero set of F)
    points: np.ndarray         # (M, n) surface points
    c_tilde: float             # max over S~ samples of dist to S~' divided by mu
    n_localized: int           # number of S~ samples
    jac_min: float             # min sqrt(det J J^T) over the returned points
    residual_max: float
    normal_wedge_min: float    # min over S~' of |N S~' ^ V|
    seeds: int
    converged: int


def _orthonormal_rows(B, tol=1e-10):
    B = np.atleast_2d(np.asarray(B, float))
    if B.size == 0:
        return B.reshape(0, B.shape[-1] if B.ndim == 2 else 0)
    U, s, Vh = np.linalg.svd(B, full_matrices=False)
    return Vh[s > tol * max(s.max(), 1e-300)]


def _newton_zero(patch, Hp, x0, tol=1e-13, iters=60):
    """Damped minimum-norm Newton for F(xi) = Hp @ N(xi) = 0 from seeds x0."""
    x = np.array(x0, float)
    active = np.ones(len(x), bool)
    F = None
    for _ in range(iters):
        if not np.any(active):
            break
        xa = x[active]
        Fa = patch.normal(xa) @ Hp.T
        Ja = np.einsum("mn,bnd->bmd", Hp, patch.normal_jacobian(xa))
        step = -np.einsum("bdm,bm->bd", np.linalg.pinv(Ja, rcond=1e-12), Fa)
        nrm0 = np.linalg.norm(Fa, axis=1)
        t = np.ones(len(xa))
        newx = xa + step
        for _ in range(20):
            ok = patch.domain.contains(newx, 0.05 * patch.domain.diameter)
            try:
                Fn = np.where(ok[:, None], patch.normal(np.where(ok[:, None], newx, xa)) @ Hp.T, np.inf)
            except DomainError:
                Fn = np.full_like(Fa, np.inf)
            better = np.linalg.norm(Fn, axis=1) < nrm0 * (1 - 1e-4 * t) + 1e-300
            if np.all(better | (nrm0 <= tol)):
                break
            t = np.where(better, t, t / 2)
            newx = np.where(better[:, None], newx, xa + t[:, None] * step)
        idx = np.flatnonzero(active)
        x[idx] = newx
        done = np.linalg.norm(patch.normal(newx) @ Hp.T, axis=1) <= tol
        active[idx[done | (t < 1e-6)]] = False
    F = patch.normal(x) @ Hp.T
    return x, np.linalg.norm(F, axis=1)


def normal_localization_submanifold(patch: SurfacePatch, H_perp, mu: float,
                                    nu3: float = 1e-3, seeds: int = 400,
                                    probe: int = 4000, v_normals=None) -> LocalizationResult:
    """Zero set S~' of F(xi) = pi_{H^perp} N(Sigma(xi)) and its neighbourhood ratio.

    H_perp holds an orthonormal basis (rows) of the orthogonal complement of H.
    S~ = {|pi_{H^perp} N| <= mu} is sampled on a dense grid; each sample's
    distance to S~' is the smaller of its distance to the S~' cloud and its
    distance to its own Newton projection.
    """
    Hp = _orthonormal_rows(H_perp)
    m = len(Hp)
    if m == 0 or Hp.shape[1] != patch.ambient_dim:
        raise InvalidInput("H_perp must be a nonempty list of vectors in R^n")
    if m > patch.d:
        raise InvalidInput(f"codimension {m} exceeds the surface dimension {patch.d}")
    if not 0 < mu < 1:
        raise InvalidInput("mu must lie in (0, 1)")
    x0, _, _ = patch.domain.sample(seeds)
    x, res = _newton_zero(patch, Hp, x0)
    ok = (res <= 1e-10) & patch.domain.contains(x, 1e-12)
    if not np.any(ok):
        raise NoSolution("Newton iteration found no zero of F inside the domain")
    xs = x[ok]
    J = np.einsum("mn,bnd->bmd", Hp, patch.normal_jacobian(xs))
    jd = np.sqrt(np.abs(np.linalg.det(J @ np.swapaxes(J, 1, 2))))
    if jd.min() < nu3:
        raise DegenerateGeometry(f"Jacobian of F is degenerate: sqrt(det J J^T) = "
                                 f"{jd.min():.3g} < nu3 = {nu3}")
    # deduplicate on a fraction of the seed spacing
    from scipy.spatial import cKDTree
    sp = patch.domain.sample(seeds)[1]
    keep = []
    tree_pts = []
    order = np.lexsort(xs.T[::-1])
    for i in order:
        if tree_pts and np.min(np.linalg.norm(np.asarray(tree_pts) - xs[i], axis=1)) < 0.25 * sp:
            continue
        tree_pts.append(xs[i])
        keep.append(i)
    xs = xs[np.sort(keep)]
    jd = jd[np.sort(keep)]
    pts = patch.embed(xs)
    # densify the cloud along S~' by projecting a finer grid
    xf, _, _ = patch.domain.sample(probe)
    Ff = np.linalg.norm(patch.normal(xf) @ Hp.T, axis=1)
    loc = xf[Ff <= mu]
    c_tilde = 0.0
    if len(loc):
        pl, rl = _newton_zero(patch, Hp, loc)
        cloud_x = np.vstack([xs, pl[rl <= 1e-10]])
        tree = cKDTree(patch.embed(cloud_x))
        zl = patch.embed(loc)
        d1, _ = tree.query(zl)
        d2 = np.where(rl <= 1e-10, np.linalg.norm(patch.embed(pl) - zl, axis=1), np.inf)
        c_tilde = float(np.minimum(d1, d2).max() / mu)
    # in-surface normal space of S~' and V_zeta
    S_, E = patch.shape_matrices(xs)
    Nv = patch.normal(xs)
    wmin = math.inf
    for b in range(len(xs)):
        Eb = E[b]                                   # (n, d)
        # tangent space of S~' inside T S = kernel of J restricted via frame
        Jf = (Hp @ patch.normal_jacobian(xs[b:b + 1])[0])  # (m, d) in xi coords
        # xi-directions -> ambient tangents via dSigma; normal space within T S
        T = patch.tangent_basis(xs[b:b + 1])[0]      # (n, d)
        _, sj, vh = np.linalg.svd(Jf)
        ker = vh[m:].T                               # (d, d-m) in xi coords
        tanS1 = T @ ker
        if tanS1.size:
            Qt = _orthonormal_rows(tanS1.T)
            Nin = Eb.T - (Eb.T @ Qt.T) @ Qt         # project frame off tangents of S~'
        else:
            Nin = Eb.T
        Nin = _orthonormal_rows(Nin)
        if v_normals is None:
            proj = Hp - (Hp @ Nv[b])[:, None] * Nv[b][None]
            Vperp = _orthonormal_rows(proj)
            Vb = Eb.T - (Eb.T @ Vperp.T) @ Vperp
            Vb = _orthonormal_rows(Vb)
        else:
            vn = np.atleast_2d(np.asarray(v_normals, float))
            Vb = _orthonormal_rows(vn - (vn @ Nv[b])[:, None] * Nv[b][None])
        frame = np.vstack([Nin, Vb]) if len(Vb) else Nin
        if len(frame) > patch.ambient_dim:
            wmin = 0.0
            continue
        wmin = min(wmin, float(batched_wedge(frame[None])[0]))
    res_out = np.linalg.norm(patch.normal(xs) @ Hp.T, axis=1)
    return LocalizationResult(xs, pts, c_tilde, int(len(loc)), float(jd.min()),
                              float(res_out.max()), wmin, len(x0), int(ok.sum()))

"""The extension operator on a frequency lattice.

E f(x) = h^d sum_j exp(i x . Sigma(xi_j)) f(xi_j), the composite midpoint rule
for the integral of exp(i x . Sigma(xi)) f(xi) over U, with lattice nodes at
xi_j = h (j + 1/2), j in Z^d. Two evaluators: a chunked direct sum, and a
type-1 non-uniform FFT (finufft) for regular grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConvergenceFailure, InvalidInput
from .geometry import Domain, SurfacePatch, SurfaceSystem

NUFFT_EPS = 1e-9
_BLOCK = 4_000_000


def lattice_indices(domain: Domain, h: float, tol: float = 1e-12):
    """Integer indices j with h (j + 1/2) inside ``domain``."""
    lo = np.floor((domain.c - domain.extent) / h - 0.5).astype(int)
    hi = np.ceil((domain.c + domain.extent) / h - 0.5).astype(int)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    J = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, domain.dim)
    keep = domain.contains(h * (J + 0.5), tol)
    return J[keep]


@dataclass(frozen=True, eq=False)
class SampledDensity:
    """Complex amplitudes on lattice nodes xi_j = h (idx_j + 1/2).

    ``support_region`` is where nodes may live (the patch domain for ordinary
    densities, a dilation of it for wave packets); ``reference_region`` is the
    set V used for margins.
    """

    patch: SurfacePatch
    h: float
    idx: np.ndarray
    amplitudes: np.ndarray
    reference_region: Optional[Domain] = None
    support_region: Optional[Domain] = None

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=np.int64).reshape(-1, self.patch.d)
        amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if len(idx) != len(amp):
            raise InvalidInput("idx and amplitudes have different lengths")
        if not self.h > 0:
            raise InvalidInput("lattice spacing must be positive")
        if not np.all(np.isfinite(amp)):
            raise InvalidInput("non-finite amplitudes")
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "amplitudes", amp)
        if self.reference_region is None:
            object.__setattr__(self, "reference_region", self.patch.domain)
        if self.support_region is None:
            object.__setattr__(self, "support_region", self.patch.domain)
        if len(idx) and not np.all(self.support_region.contains(self.nodes, 1e-9)):
            raise InvalidInput("density nodes fall outside the support region")

    @property
    def d(self):
        return self.patch.d

    @property
    def nodes(self):
        return self.h * (self.idx + 0.5)

    @property
    def l2_norm(self):
        return float(self.h ** (self.d / 2) * np.linalg.norm(self.amplitudes))

    def frequencies(self):
        return self.patch.embed(self.nodes) if len(self.idx) else np.zeros((0, self.patch.ambient_dim))

    def with_amplitudes(self, amp):
        return SampledDensity(self.patch, self.h, self.idx, amp, self.reference_region,
                              self.support_region)

    def scaled(self, lam):
        return self.with_amplitudes(lam * self.amplitudes)

    def modulated(self, x0):
        """Multiply by exp(i x0 . Sigma(xi)); E of the result is E f(. + x0)."""
        ph = np.exp(1j * self.frequencies() @ np.asarray(x0, float))
        return self.with_amplitudes(self.amplitudes * ph)

    def __add__(self, other):
        return combine([self, other], [1.0, 1.0])

    def support(self):
        return self.idx[self.amplitudes != 0]


def combine(densities, coeffs):
    """Linear combination on the union of node sets."""
    base = densities[0]
    allidx = np.vstack([f.idx for f in densities])
    uniq, inv = np.unique(allidx, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    amp = np.zeros(len(uniq), complex)
    off = 0
    for f, c in zip(densities, coeffs):
        np.add.at(amp, inv[off:off + len(f.idx)], c * f.amplitudes)
        off += len(f.idx)
    sup = max((f.support_region for f in densities), key=lambda D: D.extent.max())
    return SampledDensity(base.patch, base.h, uniq, amp, base.reference_region, sup)


# ----------------------------------------------------------------------------
# density constructors


def density_from_function(patch: SurfacePatch, h: float, fn=None, reference_region=None):
    idx = lattice_indices(patch.domain, h)
    xi = h * (idx + 0.5)
    amp = np.ones(len(idx), complex) if fn is None else np.asarray(fn(xi), complex)
    return SampledDensity(patch, h, idx, amp, reference_region)


def constant_density(patch, h, value=1.0):
    return density_from_function(patch, h, lambda xi: np.full(len(xi), value, complex))


def bump(xi, center, radius):
    """C-infinity bump exp(1 - 1/(1 - s^2)), s = |xi - center| / radius."""
    s2 = ((xi - np.asarray(center)) ** 2).sum(-1) / radius ** 2
    out = np.zeros(len(xi))
    m = s2 < 1
    out[m] = np.exp(1 - 1 / (1 - s2[m]))
    return out


def bump_density(patch, h, center=None, radius=None):
    c = patch.domain.c if center is None else np.asarray(center, float)
    r = (patch.domain.radius if patch.domain.kind == "ball" else patch.domain.extent.min()) \
        if radius is None else radius
    return density_from_function(patch, h, lambda xi: bump(xi, c, r))


def gaussian_density(patch, h, center=None, width=0.05, x0=None):
    c = patch.domain.c if center is None else np.asarray(center, float)

    def fn(xi):
        g = np.exp(-((xi - c) ** 2).sum(-1) / (2 * width ** 2))
        if x0 is not None:
            g = g * np.exp(-1j * patch.embed(xi) @ np.asarray(x0, float))
        return g

    return density_from_function(patch, h, fn)


def random_density(patch, h, rng, kind="phases"):
    """Random amplitudes: unit-modulus random phases or complex Gaussians."""
    idx = lattice_indices(patch.domain, h)
    if kind == "phases":
        amp = np.exp(2j * np.pi * rng.random(len(idx)))
    elif kind == "gaussian":
        amp = rng.standard_normal(len(idx)) + 1j * rng.standard_normal(len(idx))
    else:
        raise InvalidInput(f"unknown random density kind {kind!r}")
    return SampledDensity(patch, h, idx, amp)


# ----------------------------------------------------------------------------
# evaluation grids


@dataclass(frozen=True, eq=False)
class EvaluationGrid:
    """Regular grid p + dx * m, m in [-K, K]^n (K = ceil(R / dx)), or explicit nodes."""

    center: tuple
    radius: float
    spacing: Optional[float] = None
    nodes: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.nodes is None:
            if self.spacing is None or not self.spacing > 0:
                raise InvalidInput("regular grid needs a positive spacing")
            if self.spacing > math.pi:
                raise InvalidInput(f"grid spacing {self.spacing} exceeds pi")
        else:
            object.__setattr__(self, "nodes", np.atleast_2d(np.asarray(self.nodes, float)))

    @property
    def n(self):
        return len(self.center)

    @property
    def regular(self):
        return self.nodes is None

    @property
    def K(self):
        return int(math.ceil(self.radius / self.spacing - 1e-12))

    @property
    def shape(self):
        return (2 * self.K + 1,) * self.n if self.regular else (len(self.nodes),)

    def points(self):
        if not self.regular:
            return self.nodes
        ax = self.spacing * np.arange(-self.K, self.K + 1)
        P = np.stack(np.meshgrid(*([ax] * self.n), indexing="ij"), -1)
        return P.reshape(-1, self.n) + np.asarray(self.center)

    def inside(self):
        """Mask (grid shape) of nodes with |x - p| <= R."""
        pts = self.points() - np.asarray(self.center)
        return (np.linalg.norm(pts, axis=1) <= self.radius * (1 + 1e-12)).reshape(self.shape)

    def refined(self, factor=2):
        if not self.regular:
            raise InvalidInput("only regular grids can be refined")
        return EvaluationGrid(self.center, self.radius, self.spacing / factor)

    @property
    def cell_volume(self):
        return self.spacing ** self.n


def frequency_diameter(f: SampledDensity):
    """Bounding-box diagonal of Sigma(nodes) (an upper bound for the diameter)."""
    w = f.frequencies()
    if len(w) == 0:
        return 0.0
    return float(np.linalg.norm(w.max(0) - w.min(0)))


def check_alias_free(f: SampledDensity, grid: EvaluationGrid):
    if not grid.regular:
        return
    diam = frequency_diameter(f)
    if grid.spacing * diam > math.pi * (1 + 1e-12):
        raise InvalidInput(f"aliased grid: spacing * frequency diameter = {grid.spacing:.6g} * "
                           f"{diam:.6g} = {grid.spacing * diam:.6g} > pi")


# ----------------------------------------------------------------------------
# evaluators

LAST_NUFFT = {}


def _direct(weights, omega, X):
    out = np.empty(len(X), complex)
    step = max(1, _BLOCK // max(1, len(omega)))
    for s in range(0, len(X), step):
        out[s:s + step] = np.exp(1j * (X[s:s + step] @ omega.T)) @ weights
    return out


def _nufft(weights, omega, grid):
    import finufft

    n = grid.n
    p = np.asarray(grid.center)
    wc = 0.5 * (omega.max(0) + omega.min(0))
    dw = omega - wc
    c = weights * np.exp(1j * (dw @ p))
    theta = [np.ascontiguousarray(grid.spacing * dw[:, i]) for i in range(n)]
    N = grid.shape
    fn = {1: finufft.nufft1d1, 2: finufft.nufft2d1, 3: finufft.nufft3d1}.get(n)
    if fn is None:
        raise InvalidInput(f"fft_spread supports n <= 3, got n = {n}")
    out = fn(*theta, np.ascontiguousarray(c), N, eps=NUFFT_EPS, isign=1, nthreads=1)
    LAST_NUFFT.update(eps=NUFFT_EPS, upsampfac=2.0, modes=list(N), points=len(omega))
    ax = grid.spacing * np.arange(-grid.K, grid.K + 1)
    phase = np.ones(N, complex)
    for i in range(n):
        sh = [1] * n
        sh[i] = -1
        phase = phase * np.exp(1j * wc[i] * (p[i] + ax)).reshape(sh)
    return out * phase


def evaluate_extension(f: SampledDensity, grid: EvaluationGrid, method: str = "direct"):
    """E f on the grid; regular grids return an array of ``grid.shape``."""
    if grid.n != f.patch.ambient_dim:
        raise InvalidInput(f"grid lives in R^{grid.n}, patch in R^{f.patch.ambient_dim}")
    check_alias_free(f, grid)
    if len(f.idx) == 0:
        return np.zeros(grid.shape, complex)
    omega = f.frequencies()
    weights = f.h ** f.d * f.amplitudes
    if method == "direct":
        return _direct(weights, omega, grid.points()).reshape(grid.shape)
    if method == "fft_spread":
        if not grid.regular:
            raise InvalidInput("fft_spread needs a regular grid")
        return _nufft(weights, omega, grid)
    raise InvalidInput(f"unknown method {method!r}")


def evaluate_at(f: SampledDensity, X):
    """Direct evaluation at arbitrary points X (M, n), no alias check."""
    X = np.atleast_2d(np.asarray(X, float))
    if len(f.idx) == 0:
        return np.zeros(len(X), complex)
    return _direct(f.h ** f.d * f.amplitudes, f.frequencies(), X)


# ----------------------------------------------------------------------------
# decay along spheres


def fibonacci_sphere(m, n=3):
    if n == 2:
        t = 2 * np.pi * (np.arange(m) + 0.5) / m
        return np.stack([np.cos(t), np.sin(t)], 1)
    if n != 3:
        raise InvalidInput("sphere meshes are provided for n = 2, 3")
    i = np.arange(m) + 0.5
    z = 1 - 2 * i / m
    r = np.sqrt(1 - z * z)
    t = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([r * np.cos(t), r * np.sin(t), z], 1)


@dataclass(frozen=True)
class DecayProfile:
    radii: np.ndarray
    maxima: np.ndarray
    argmax: np.ndarray
    slope: float
    intercept: float

    def to_dict(self):
        return {"radii": self.radii.tolist(), "maxima": self.maxima.tolist(),
                "slope": self.slope, "intercept": self.intercept}


def loglog_fit(x, y):
    x = np.log(np.asarray(x, float))
    y = np.log(np.asarray(y, float))
    A = np.stack([x, np.ones_like(x)], 1)
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return float(coef[0]), float(coef[1]), resid


def _tangent_frame(v):
    Q, _ = np.linalg.qr(np.hstack([v[:, None], np.eye(len(v))]))
    return Q[:, 1:len(v)].T


def sphere_max(psi: SampledDensity, r: float, dirs, zoom_levels: int = 4, zoom_grid: int = 9,
               start_width: float = 0.1):
    """Max of |E psi| over r * dirs, then zoom on tangent-plane grids around the best."""
    vals = np.abs(evaluate_at(psi, r * dirs))
    j = int(np.argmax(vals))
    best, bdir = float(vals[j]), dirs[j]
    w = start_width
    for _ in range(zoom_levels):
        B = _tangent_frame(bdir)
        o = np.linspace(-w, w, zoom_grid)
        off = np.stack(np.meshgrid(*([o] * len(B)), indexing="ij"), -1).reshape(-1, len(B))
        cand = bdir + off @ B
        cand /= np.linalg.norm(cand, axis=1, keepdims=True)
        cv = np.abs(evaluate_at(psi, r * cand))
        jj = int(np.argmax(cv))
        if cv[jj] > best:
            best, bdir = float(cv[jj]), cand[jj]
        w *= 2.0 / (zoom_grid - 1)
    return best, r * bdir


def decay_profile(psi: SampledDensity, radii, n_dirs: int = 2000, gauss_dirs: int = 2000,
                  zoom_levels: int = 4):
    """Max of |E psi| over spheres |x| = r.

    The mesh is a Fibonacci sphere plus the Gauss image +-N(xi) of supp psi
    (where stationary points put the maximum), refined by zooming on the best
    direction at each radius.
    """
    n = psi.patch.ambient_dim
    dirs = [fibonacci_sphere(n_dirs, n)]
    sup = psi.nodes[psi.amplitudes != 0]
    if len(sup):
        step = max(1, len(sup) // max(1, gauss_dirs))
        N = psi.patch.normal(sup[::step])
        dirs += [N, -N]
    dirs = np.vstack(dirs)
    width = math.sqrt(4 * math.pi / n_dirs) if n == 3 else 2 * math.pi / n_dirs
    maxima, arg = [], []
    for r in radii:
        b, x = sphere_max(psi, r, dirs, zoom_levels, start_width=width)
        maxima.append(b)
        arg.append(x)
    maxima = np.asarray(maxima)
    slope, icpt, _ = loglog_fit(radii, maxima)
    return DecayProfile(np.asarray(radii, float), maxima, np.asarray(arg), slope, icpt)


# ----------------------------------------------------------------------------
# slices x_a = t


@dataclass(frozen=True)
class ConservationResult:
    t_values: np.ndarray
    values: np.ndarray
    expected: float
    deviation: float
    n_slice: int


def _slice_spans(f):
    return f.idx.max(0) - f.idx.min(0) + 1


def slice_norm(f: SampledDensity, t: float, n_slice: int) -> float:
    """L^2 norm over one lattice period of x' -> E f(x', t), x_a = t the graph axis.

    The slice function sum_j b_j exp(i x' . xi_j) is quasi-periodic with period
    P = 2 pi / h; sampling the period on an n_slice^d grid and applying discrete
    Plancherel is exact once n_slice covers the index span of the nodes.
    """
    d = f.d
    if len(f.idx) == 0:
        return 0.0
    b = f.amplitudes * np.exp(1j * t * f.patch.phi(f.nodes))
    rel = (f.idx - f.idx.min(0)) % n_slice
    A = np.zeros((n_slice,) * d, complex)
    np.add.at(A, tuple(rel.T), b)
    F = np.fft.ifftn(A) * n_slice ** d * f.h ** d
    P = 2 * math.pi / f.h
    return float(math.sqrt((P / n_slice) ** d * np.sum(np.abs(F) ** 2)))


def slice_norm_direct(f: SampledDensity, t: float, n_slice: int) -> float:
    """Same quantity by direct summation (independent of the FFT path)."""
    d = f.d
    P = 2 * math.pi / f.h
    ax = P * np.arange(n_slice) / n_slice
    X = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1).reshape(-1, d)
    b = f.amplitudes * np.exp(1j * t * f.patch.phi(f.nodes)) * f.h ** d
    vals = _direct(b, f.nodes, X)
    return float(math.sqrt((P / n_slice) ** d * np.sum(np.abs(vals) ** 2)))


def conservation_check(f: SampledDensity, t_values, n_slice: Optional[int] = None,
                       allow_aliased: bool = False) -> ConservationResult:
    """Slice norms ||E f||_{L^2(x_a = t)} over one lattice period.

    ``expected`` is (2 pi)^{d/2} ||f||, the Plancherel value of the base slice.
    """
    t_values = np.asarray(list(t_values), float)
    span = int(_slice_spans(f).max()) if len(f.idx) else 1
    if n_slice is None:
        n_slice = int(2 ** math.ceil(math.log2(max(span, 2))))
    if n_slice < span and not allow_aliased:
        raise InvalidInput(f"aliased slice grid: {n_slice} points per axis < node index span {span}")
    vals = np.array([slice_norm(f, t, n_slice) for t in t_values])
    expected = (2 * math.pi) ** (f.d / 2) * f.l2_norm
    if expected == 0:
        dev = 0.0 if np.all(vals == 0) else math.inf
    else:
        dev = float(np.max(np.abs(vals - expected)) / expected)
    return ConservationResult(t_values, vals, expected, dev, n_slice)


# ----------------------------------------------------------------------------
# multilinear L^p norms on balls


def product_field(densities, grid, method="fft_spread"):
    out = None
    for f in densities:
        E = evaluate_extension(f, grid, method if grid.regular else "direct")
        out = E if out is None else out * E
    return out


def lp_on_ball(field_vals, grid: EvaluationGrid, p: float) -> float:
    mask = grid.inside() if grid.regular else np.ones(len(field_vals), bool)
    a = np.abs(field_vals[mask])
    if a.size == 0 or not np.any(a):
        return 0.0
    m = a.max()
    return float(m * (grid.cell_volume * np.sum((a / m) ** p)) ** (1 / p))


def multilinear_lhs(system: SurfaceSystem, densities: Sequence[SampledDensity], p: float,
                    grid: EvaluationGrid, method: str = "fft_spread",
                    convergence_guard: bool = False, guard_tol: float = 0.01) -> float:
    """Riemann-sum ||prod_i E_i f_i||_{L^p(B_R(p))} over grid nodes inside the ball."""
    if not p > 0:
        raise InvalidInput(f"p must be positive, got {p}")
    if len(densities) != system.k:
        raise InvalidInput(f"{len(densities)} densities for {system.k} patches")
    for pat, f in zip(system.patches, densities):
        if f.patch is not pat and f.patch.key() != pat.key():
            raise InvalidInput("density patch does not match the system patch")
    if any(len(f.idx) == 0 or not np.any(f.amplitudes) for f in densities):
        return 0.0
    val = lp_on_ball(product_field(densities, grid, method), grid, p)
    if convergence_guard:
        fine = grid.refined(2)
        v2 = lp_on_ball(product_field(densities, fine, method), fine, p)
        rel = abs(v2 - val) / max(abs(v2), 1e-300)
        if rel > guard_tol:
            raise ConvergenceFailure(f"L^p norm changed by {rel:.3%} under grid refinement "
                                     f"(spacing {grid.spacing:g} -> {fine.spacing:g})")
    return val


# ----------------------------------------------------------------------------
# margin


def margin(f: SampledDensity) -> float:
    """dist(supp f, complement of V) over nodes with nonzero amplitude."""
    sup = f.amplitudes != 0
    if not np.any(sup):
        return math.inf
    dist = f.reference_region.inner_distance(f.nodes[sup])
    return float(max(0.0, dist.min()))

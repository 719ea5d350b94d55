"""Experiment harness: exponents, A(R) growth, localized scaling, ball sums."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import rng as rngmod
from .errors import CertificateFailure, InvalidInput
from .extension import (EvaluationGrid, SampledDensity, lattice_indices, loglog_fit,
                        multilinear_lhs)
from .geometry import SurfacePatch, SurfaceSystem, wedge_norm

# ----------------------------------------------------------------------------
# exponent arithmetic


def conjectured_exponent(n: int, k: int) -> Fraction:
    """p(k) = 2(n+k) / (k(n+k-2))."""
    if not (n >= 2 and 1 <= k <= n):
        raise InvalidInput(f"need n >= 2 and 1 <= k <= n, got n={n}, k={k}")
    return Fraction(2 * (n + k), k * (n + k - 2))


def generic_exponent(k: int) -> Fraction:
    """2 / (k - 1), the exponent without curvature."""
    if k < 2:
        raise InvalidInput(f"generic exponent needs k >= 2, got {k}")
    return Fraction(2, k - 1)


# ----------------------------------------------------------------------------
# configuration and reports

FAMILIES = ("random_phases", "focusing", "packet_sparse", "zero")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    system: SurfaceSystem
    p: float
    R_schedule: tuple
    trials: int = 20
    seed: int = 0
    delta: float = 0.0125
    delta0: float = 0.05
    delta1: float = 0.2
    gamma0: float = 0.1
    families: tuple = ("random_phases",)
    h_factor: float = 0.25          # density lattice spacing h = h_factor / R
    dx: float = 0.5                 # spatial grid spacing
    convergence_guard: bool = False
    certificate_samples: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "R_schedule", tuple(float(r) for r in self.R_schedule))
        fam = (self.families,) if isinstance(self.families, str) else tuple(self.families)
        object.__setattr__(self, "families", fam)
        if not self.p > 0:
            raise InvalidInput(f"p must be positive, got {self.p}")
        if self.trials < 1:
            raise InvalidInput("trials must be >= 1")
        if not self.R_schedule or any(b <= a for a, b in zip(self.R_schedule, self.R_schedule[1:])):
            raise InvalidInput("R schedule must be non-empty and increasing")
        if not (0 < self.delta and 4 * self.delta <= self.delta0 and 4 * self.delta0 <= self.delta1):
            raise InvalidInput(f"parameter ordering violated: need delta <= delta0/4 <= delta1/16, "
                               f"got {self.delta}, {self.delta0}, {self.delta1}")
        for f in fam:
            if f not in FAMILIES:
                raise InvalidInput(f"unknown density family {f!r}")

    def echo(self):
        return {"p": self.p, "R_schedule": list(self.R_schedule), "trials": self.trials,
                "seed": self.seed, "delta": self.delta, "delta0": self.delta0,
                "delta1": self.delta1, "gamma0": self.gamma0, "families": list(self.families),
                "h_factor": self.h_factor, "dx": self.dx,
                "convergence_guard": self.convergence_guard,
                "patches": [p.to_dict() for p in self.system.patches]}


@dataclass(frozen=True, eq=False)
class EstimateReport:
    R: np.ndarray
    A: np.ndarray
    argmax: list
    per_family: dict
    slope: float
    intercept: float
    residual: float
    config: dict
    runtime: float = 0.0

    def to_json(self):
        """Primary JSON payload; runtime lives in the run manifest for reproducibility."""
        return {"R": self.R.tolist(), "A": self.A.tolist(), "argmax": self.argmax,
                "per_family": {k: list(v) for k, v in self.per_family.items()},
                "slope": self.slope, "intercept": self.intercept, "residual": self.residual,
                "config": self.config}


# ----------------------------------------------------------------------------
# density families


def _random_phases(patch, h, R, rng):
    idx = lattice_indices(patch.domain, h)
    return SampledDensity(patch, h, idx, np.exp(2j * np.pi * rng.random(len(idx))))


def _focusing(patch, h, R, rng):
    idx = lattice_indices(patch.domain, h)
    x0 = _uniform_ball(patch.ambient_dim, R / 2, rng)
    om = patch.embed(h * (idx + 0.5))
    return SampledDensity(patch, h, idx, np.exp(-1j * om @ x0)), {"x0": x0.tolist()}


def _packet_sparse(patch, h, R, rng, count=3):
    """A few R^{-1/2} frequency cells, each focused at its own point of B_{R/2}."""
    idx = lattice_indices(patch.domain, h)
    xi = h * (idx + 0.5)
    side = R ** -0.5
    cells = np.floor(xi / side).astype(int)
    uniq = np.unique(cells, axis=0)
    pick = uniq[rng.choice(len(uniq), size=min(count, len(uniq)), replace=False)]
    amp = np.zeros(len(idx), complex)
    om = patch.embed(xi)
    for c in pick:
        m = np.all(cells == c, axis=1)
        x0 = _uniform_ball(patch.ambient_dim, R / 2, rng)
        amp[m] = np.exp(-1j * om[m] @ x0 + 2j * np.pi * rng.random())
    return SampledDensity(patch, h, idx, amp)


def _uniform_ball(n, r, rng):
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    return v * r * rng.random() ** (1 / n)


def make_density(family, patch, h, R, rng):
    """(density, description) for one draw of a family."""
    if family == "random_phases":
        return _random_phases(patch, h, R, rng), {}
    if family == "focusing":
        return _focusing(patch, h, R, rng)
    if family == "packet_sparse":
        return _packet_sparse(patch, h, R, rng), {}
    if family == "zero":
        idx = lattice_indices(patch.domain, h)
        return SampledDensity(patch, h, idx, np.zeros(len(idx))), {}
    raise InvalidInput(f"unknown density family {family!r}")


def require_certificates(system: SurfaceSystem, samples=2000) -> SurfaceSystem:
    if system.nu is None or system.nu1 is None:
        system = system.certify(samples)
    if not system.nu > 0:
        raise CertificateFailure(f"transversality certificate not positive: nu = {system.nu:.4g}")
    if system.n > system.k and not system.nu1 > 0:
        raise CertificateFailure(f"curvature certificate not positive: nu1 = {system.nu1:.4g}")
    return system


def ratio_for(system, densities, p, grid, guard=False):
    norms = [f.l2_norm for f in densities]
    den = float(np.prod(norms))
    if den == 0:
        return 0.0
    return multilinear_lhs(system, densities, p, grid, "fft_spread", guard) / den


def measure_A(config: ExperimentConfig) -> EstimateReport:
    """Empirical A(R) = max over seeded trials of ||prod E f_i||_{L^p(B_R)} / prod ||f_i||."""
    t0 = time.perf_counter()
    system = require_certificates(config.system, config.certificate_samples)
    n = system.n
    A, arg = [], []
    per_family = {f: [] for f in config.families}
    for R in config.R_schedule:
        h = config.h_factor / R
        grid = EvaluationGrid((0.0,) * n, R, config.dx)
        best, best_desc = -1.0, None
        for fam in config.families:
            fbest = 0.0
            for t in range(config.trials):
                g = rngmod.stream(config.seed, "measure_A", fam, R, t)
                dens, descs = [], []
                for patch in system.patches:
                    f, desc = make_density(fam, patch, h, R, g)
                    dens.append(f)
                    descs.append(desc)
                r = ratio_for(system, dens, config.p, grid, config.convergence_guard)
                fbest = max(fbest, r)
                if r > best:
                    best, best_desc = r, {"family": fam, "trial": t, "draws": descs}
            per_family[fam].append(fbest)
        A.append(max(best, 0.0))
        arg.append(best_desc)
    A = np.asarray(A)
    R = np.asarray(config.R_schedule)
    if np.all(A > 0) and len(R) >= 2:
        slope, icpt, res = loglog_fit(R, A)
    else:
        slope, icpt, res = 0.0, 0.0, 0.0
    return EstimateReport(R, A, arg, per_family, slope, icpt, res, config.echo(),
                          time.perf_counter() - t0)


# ----------------------------------------------------------------------------
# localized supports


@dataclass(frozen=True, eq=False)
class LocalizedSupportSpec:
    """Per patch: a coordinate slice (axis, value) of the parameter domain or None
    (S_i' = S_i, codimension 0), and the localization radius mu_i."""

    slices: tuple
    mus: tuple
    certificate: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(self.slices))
        object.__setattr__(self, "mus", tuple(float(m) for m in self.mus))
        if len(self.slices) != len(self.mus):
            raise InvalidInput("slices and mus differ in length")

    def codims(self):
        return [0 if s is None else 1 for s in self.slices]

    def mu_factor(self):
        """prod of mu_i over localized patches; codimension-0 patches carry factor 1."""
        return float(np.prod([m for m, s in zip(self.mus, self.slices) if s is not None] or [1.0]))

    def with_mus(self, mus):
        return LocalizedSupportSpec(self.slices, mus, self.certificate)


def slice_points(patch: SurfacePatch, sl, spacing):
    """Parameter points on {xi_axis = value} inside U at the given spacing."""
    axis, value = sl
    dom = patch.domain
    d = patch.d
    others = [a for a in range(d) if a != axis]
    axes = [np.arange(dom.c[a] - dom.extent[a], dom.c[a] + dom.extent[a] + spacing / 2, spacing)
            for a in others]
    if axes:
        G = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(others))
    else:
        G = np.zeros((1, 0))
    xi = np.zeros((len(G), d))
    xi[:, others] = G
    xi[:, axis] = value
    return xi[dom.contains(xi, 1e-12)]


def _normal_plane(patch, xi, sl):
    """Orthonormal basis (rows) of the normal plane to S' at Sigma(xi)."""
    N = patch.normal(xi)
    if sl is None:
        return N[:, None, :]
    axis = sl[0]
    T = patch.tangent_basis(xi)                 # (M, n, d)
    keep = [j for j in range(patch.d) if j != axis]
    out = []
    for i in range(len(xi)):
        Ts = T[i][:, keep]
        u = T[i][:, axis]
        if Ts.shape[1]:
            Q, _ = np.linalg.qr(Ts)
            u = u - Q @ (Q.T @ u)
        u = u - N[i] * (N[i] @ u)
        out.append(np.stack([N[i], u / np.linalg.norm(u)]))
    return np.array(out)


def normal_wedge_certificate(system: SurfaceSystem, spec: LocalizedSupportSpec,
                             samples: int = 15) -> float:
    """min over sampled tuples zeta_i in S_i' of |N S_1' ^ ... ^ N S_k'|."""
    if sum(spec.codims()) > system.n - system.k:
        raise InvalidInput(f"total localized codimension {sum(spec.codims())} exceeds n - k")
    planes = []
    for patch, sl in zip(system.patches, spec.slices):
        if sl is None:
            xi = patch.domain.sample(samples)[0]
        else:
            xi = slice_points(patch, sl, 2 * patch.domain.extent.max() / max(samples - 1, 1))
            if len(xi) == 0:
                raise InvalidInput(f"slice {sl} misses the patch domain")
        planes.append(_normal_plane(patch, xi, sl))
    best = math.inf
    for combo in np.ndindex(*[len(P) for P in planes]):
        vecs = [v for P, c in zip(planes, combo) for v in P[c]]
        best = min(best, wedge_norm(vecs))
    return float(best)


def distance_to_slice(patch, sl, xi, mu):
    """Ambient distance from Sigma(xi) to Sigma(slice), from a KD-tree on a slice sampling
    with spacing <= mu / 20 (distance error <= mu / 40 times the slice's Lipschitz factor)."""
    pts = slice_points(patch, sl, min(mu / 20, 0.01))
    if len(pts) == 0:
        raise InvalidInput(f"slice {sl} misses the patch domain")
    tree = cKDTree(patch.embed(pts))
    d, _ = tree.query(patch.embed(xi))
    return d


def generate_localized_density(patch: SurfacePatch, spec: LocalizedSupportSpec, i: int, seed: int,
                               h: float, labels=()) -> SampledDensity:
    """Random-phase density on nodes within mu_i of S_i' (ambient distance), L^2-normalised."""
    if spec.certificate is not None and not spec.certificate > 0:
        raise InvalidInput(f"normal-wedge certificate {spec.certificate} is not positive")
    idx = lattice_indices(patch.domain, h)
    xi = h * (idx + 0.5)
    sl, mu = spec.slices[i], spec.mus[i]
    if sl is None:
        mask = np.ones(len(idx), bool)
    else:
        mask = distance_to_slice(patch, sl, xi, mu) <= mu
    if not mask.any():
        raise InvalidInput(f"no lattice node within mu = {mu:g} of the slice; increase mu "
                           f"(lattice spacing {h:g})")
    g = rngmod.stream(seed, "localized", i, *labels)
    amp = np.exp(2j * np.pi * g.random(int(mask.sum())))
    f = SampledDensity(patch, h, idx[mask], amp)
    return f.scaled(1.0 / f.l2_norm)


@dataclass(frozen=True)
class LocalizedScaling:
    mus: np.ndarray
    ratios: np.ndarray
    spread: float
    certificate: float
    bound: float = 10.0

    @property
    def passed(self):
        return self.spread <= self.bound

    def to_json(self):
        return {"mus": self.mus.tolist(), "ratios": self.ratios.tolist(), "spread": self.spread,
                "certificate": self.certificate, "bound": self.bound}


def localized_scaling_check(system: SurfaceSystem, spec: LocalizedSupportSpec, R: float,
                            mu_schedule: Sequence[float], trials: int = 2, seed: int = 0,
                            h: Optional[float] = None, dx: float = 1.0, guard: bool = True,
                            localized: Optional[int] = None, scale: float = 1.0) -> LocalizedScaling:
    """Max over trials of ||prod E g_i||_{L^{2/(k-1)}(B_R)} / (mu_factor^{1/2} prod ||g_i||)
    for each mu in the schedule (applied to every localized patch)."""
    k = system.k
    if k < 2:
        raise InvalidInput("localized scaling needs k >= 2")
    p = 2.0 / (k - 1)
    cert = normal_wedge_certificate(system, spec)
    h = 0.25 / R if h is None else h
    grid = EvaluationGrid((0.0,) * system.n, R, dx)
    ratios = []
    for mu in mu_schedule:
        sp = spec.with_mus([mu if s is not None else m for s, m in zip(spec.slices, spec.mus)])
        sp = LocalizedSupportSpec(sp.slices, sp.mus, cert)
        best = 0.0
        for t in range(trials):
            dens = [generate_localized_density(pt, sp, i, seed, h, (mu, t))
                    for i, pt in enumerate(system.patches)]
            dens = [f.scaled(scale) for f in dens]
            nrm = float(np.prod([f.l2_norm for f in dens]))
            if nrm == 0:
                continue
            lhs = multilinear_lhs(system, dens, p, grid, "fft_spread", guard)
            best = max(best, lhs / (math.sqrt(sp.mu_factor()) * nrm))
        ratios.append(best)
    ratios = np.asarray(ratios)
    pos = ratios[ratios > 0]
    spread = float(pos.max() / pos.min()) if len(pos) else 0.0
    return LocalizedScaling(np.asarray(mu_schedule, float), ratios, spread, cert)


# ----------------------------------------------------------------------------
# ball sums


@dataclass(frozen=True)
class BallSum:
    lhs: float
    rhs: float
    ratio: float
    bound: float
    n_balls: int
    vacuous: bool = False

    @property
    def passed(self):
        return self.vacuous or self.ratio <= self.bound

    def to_json(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio, "bound": self.bound,
                "n_balls": self.n_balls, "vacuous": self.vacuous}


def ball_lattice(n, R, delta0, extent=2.0):
    rho = R ** (0.5 + delta0)
    m = int(math.floor(extent * R / rho))
    ax = rho * np.arange(-m, m + 1)
    C = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1).reshape(-1, n)
    return C[np.linalg.norm(C, axis=1) <= extent * R], rho


def ball_norms(decomp, centers, rho):
    """||f_B|| for each ball B(c, rho): norm of the sum of packets whose tubes meet B."""
    from .wavepackets import tube_ball_distances

    ids = decomp.ids
    D = tube_ball_distances(decomp, centers, ids)
    out = np.zeros(len(centers))
    for b in range(len(centers)):
        sel = ids[D[b] <= decomp.tube_radius + rho]
        if len(sel):
            out[b] = decomp.sum_packets(sel).l2_norm
    return out


def ball_sum_check(decomps: Sequence, R: float, delta0: float, C_ball: float = 10.0,
                   eps: float = 0.2, extent: float = 2.0) -> BallSum:
    """l^{2/(k-1)} sum over ball centres of prod_i ||f_{i,B}|| against prod ||f_i||.

    Balls B(x0, R^{1/2+delta0}), x0 in R^{1/2+delta0} Z^n with |x0| <= 2R; k = 1 uses
    the sup over balls (l^infinity).
    """
    k = len(decomps)
    n = decomps[0].n
    C, rho = ball_lattice(n, R, delta0, extent)
    rhs = float(np.prod([d.f.l2_norm for d in decomps]))
    bound = C_ball * (R ** (0.5 - delta0)) ** eps
    if rhs == 0:
        return BallSum(0.0, 0.0, 0.0, bound, len(C), vacuous=True)
    prod = np.ones(len(C))
    for d in decomps:
        prod *= ball_norms(d, C, rho)
    if k == 1:
        lhs = float(prod.max())
    else:
        q = 2.0 / (k - 1)
        lhs = float(np.sum(prod ** q) ** (1 / q))
    return BallSum(lhs, rhs, lhs / rhs, bound, len(C))

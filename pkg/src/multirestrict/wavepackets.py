"""Wave packet decomposition of lattice densities.

Frequency cells A_k are cubes of side R^{-1/2} centred at R^{-1/2} k. Spatial
windows are periodised translates of w(x) = prod_a kappa eta(kappa x_a / r), with
r = P / M the spatial lattice spacing rounded so that M translates tile one
lattice period P = 2 pi / h. Then

    f_T = c^{x0} * (chi_A f),   c^{x0}_m = w_hat(h m) exp(-i h m . x0) / P^d,

is an exact finite convolution, E f_T(x', 0) = W_{x0}(x') E(chi_A f)(x', 0), and
the windows sum to one, so sum_T f_T = f up to rounding.

Per cell the spatial field of chi_A f is sampled on an Nb^d grid of the period;
window tables W_a[i, s] are separable, so all packet norms and every subset sum
reduce to small tensor contractions. Packets are materialised on demand.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft

from .errors import InvalidInput
from .extension import SampledDensity
from .geometry import _insert
from .window import Window

DEFAULT_KAPPA = 4.0


@dataclass(frozen=True, eq=False)
class Tube:
    """Capsule around the core segment c(t), |t| <= R, in the graph frame:
    c(t) = (x_T - grad phi(xi_T) t, height + t) with the graph coordinate inserted
    at ``graph_axis``."""

    xi: np.ndarray
    x: np.ndarray
    direction: np.ndarray
    radius: float
    core_radius: float
    length: float
    height: float
    slope: np.ndarray
    graph_axis: int

    @staticmethod
    def from_line(center, direction, half_length, radius, core_radius=None):
        """Tube of the given radius around the segment center +- half_length * direction."""
        c = np.asarray(center, float)
        v = np.asarray(direction, float)
        v = v / np.linalg.norm(v)
        ax = int(np.argmax(np.abs(v)))
        if v[ax] < 0:
            v = -v
        w = v / v[ax]
        others = [a for a in range(len(c)) if a != ax]
        return Tube(np.zeros(len(c) - 1), c[others], v, float(radius),
                    float(radius if core_radius is None else core_radius),
                    float(half_length * v[ax]), float(c[ax]), -w[others], ax)

    def core_point(self, t):
        t = np.atleast_1d(np.asarray(t, float))
        xp = self.x[None, :] - np.outer(t, self.slope)
        return _insert(xp, self.height + t, self.graph_axis)

    @property
    def endpoints(self):
        e = self.core_point([-self.length, self.length])
        return e[0], e[1]

    def distance(self, X):
        A, B = self.endpoints
        return segment_distance(np.atleast_2d(X), A[None], B[None])[:, 0]

    def core_distance(self, X):
        return np.maximum(0.0, self.distance(X) - self.core_radius)

    def contains(self, X):
        return self.distance(X) <= self.radius

    def meets_ball(self, c, r):
        return bool(self.distance(np.asarray(c, float)[None])[0] <= self.radius + r)

    def perpendicular_basis(self):
        """Orthonormal basis of direction^perp, shape (n-1, n)."""
        v = self.direction[:, None]
        Q, _ = np.linalg.qr(np.hstack([v, np.eye(len(v))]))
        return Q[:, 1:len(v)].T


def random_tubes(count, rng, n=3, lo=0.0, hi=1.0, half_length=0.5, radius=0.02):
    """Tubes with centres uniform in [lo, hi]^n and isotropic directions."""
    C = lo + (hi - lo) * rng.random((count, n))
    V = rng.standard_normal((count, n))
    return [Tube.from_line(c, v, half_length, radius) for c, v in zip(C, V)]


def segment_distance(X, A, B):
    """Distances from points X (m, n) to segments [A_t, B_t] (T, n); returns (m, T)."""
    AB = B - A
    L2 = np.maximum((AB * AB).sum(1), 1e-300)
    out = np.empty((len(X), len(A)))
    step = max(1, 2_000_000 // max(1, len(A)))
    for s in range(0, len(X), step):
        Y = X[s:s + step, None, :] - A[None]
        t = np.clip((Y * AB[None]).sum(-1) / L2, 0, 1)
        D = Y - t[..., None] * AB[None]
        out[s:s + step] = np.sqrt((D * D).sum(-1))
    return out


def _contract(T, mats, transpose):
    # contract axis a of T with mats[a] (axis 1 if transpose else 0), axis order kept
    for Wm in mats:
        T = np.tensordot(T, Wm, axes=([0], [1] if transpose else [0]))
    return T


class PacketDecomposition:
    """Packets f_T of a density f; see the module docstring for the construction."""

    def __init__(self, f: SampledDensity, R: float, delta: float, center=None,
                 kappa: float = DEFAULT_KAPPA, window: Optional[Window] = None,
                 truncation: float = 4.0, drop_tol: float = 1e-12):
        patch = f.patch
        n, d = patch.ambient_dim, patch.d
        if not R >= 16:
            raise InvalidInput(f"R must be >= 16, got {R}")
        if not 0 < delta <= 0.1:
            raise InvalidInput(f"delta must lie in (0, 0.1], got {delta}")
        if not 0 < kappa < 2 * math.pi:
            raise InvalidInput(f"kappa must lie in (0, 2 pi), got {kappa}")
        cell = R ** -0.5
        qf = cell / f.h
        q = int(round(qf))
        if q < 1 or abs(qf - q) > 1e-9 * max(1.0, qf):
            raise InvalidInput(f"density spacing h = {f.h:g} does not divide the cell side "
                               f"R^(-1/2) = {cell:g}")
        self.f, self.patch, self.R, self.delta = f, patch, float(R), float(delta)
        self.kappa, self.window = float(kappa), window or Window()
        self.h, self.q, self.d, self.n = f.h, q, d, n
        self.axis = patch.graph_axis
        p = np.zeros(n) if center is None else np.asarray(center, float)
        if p.shape != (n,):
            raise InvalidInput(f"center must have {n} coordinates")
        self.center = p
        self.height = float(p[self.axis])
        self.pproj = np.delete(p, self.axis)
        self.cell_side = cell
        self.core_radius = R ** ((1 + delta) / 2)
        self.tube_radius = R ** (0.5 + delta)
        self.period = 2 * math.pi / f.h
        self.M = max(1, int(round(self.period / self.core_radius)))
        self.spacing = self.period / self.M
        # c_m != 0 iff |h m| < kappa / spacing
        self.H = max(0, int(math.ceil(kappa / (f.h * self.spacing))) - 1)
        self.Nb = scipy.fft.next_fast_len(q + 2 * self.H + 1)
        self.truncation = truncation
        # packet nodes lie within H nodes of a cell meeting supp f
        grow = math.sqrt(d) * (self.H + q) * f.h
        self.support_region = f.support_region.dilate(grow)
        self.reference_region = f.reference_region.dilate(grow)

        # spatial lattice representatives near the projected centre
        i0 = np.ceil((self.pproj - self.period / 2) / self.spacing - 1e-12).astype(int)
        self.x0_axes = [self.spacing * (i0[a] + np.arange(self.M)) for a in range(d)]
        xs = self.period * np.arange(self.Nb) / self.Nb
        m = np.arange(1, self.H + 1)
        wh = self.spacing * self.window.hat(self.spacing * f.h * m / kappa)
        w0 = self.spacing * float(self.window.hat(0.0))
        self.W = []
        for a in range(d):
            ph = f.h * (xs[None, :] - self.x0_axes[a][:, None])
            Wa = w0 + 2 * np.tensordot(np.cos(ph[..., None] * m), wh, axes=([2], [0]))
            self.W.append(Wa / self.period)

        # cells
        g = f.amplitudes * np.exp(1j * self.height * patch.phi(f.nodes)) if len(f.idx) \
            else f.amplitudes
        self._g = g
        if len(f.idx):
            K = (2 * f.idx + 1 + q) // (2 * q)
            keys, inv = np.unique(K, axis=0, return_inverse=True)
            inv = inv.reshape(-1)
        else:
            keys, inv = np.zeros((0, d), int), np.zeros(0, int)
        self.cells = keys
        self._jlo, self._G = [], []
        for c in range(len(keys)):
            sel = inv == c
            J = f.idx[sel]
            jlo = -((q + 1 - 2 * q * keys[c]) // 2)  # first index of cell k
            box = np.zeros((self.Nb,) * d, complex)
            box[tuple((J - jlo).T)] = g[sel]
            self._jlo.append(jlo)
            self._G.append(scipy.fft.ifftn(box) * self.Nb ** d)
        self._norm2 = np.array([
            f.h ** d / self.Nb ** d * _contract(np.abs(G) ** 2, [Wa ** 2 for Wa in self.W], True)
            for G in self._G
        ]).reshape(len(keys), -1) if len(keys) else np.zeros((0, self.M ** d))

        # bookkeeping: truncation and drops
        grids = np.meshgrid(*self.x0_axes, indexing="ij")
        self._X0 = np.stack([gg.ravel() for gg in grids], 1)
        inside = np.linalg.norm(self._X0 - self.pproj, axis=1) <= truncation * R
        fn = f.l2_norm
        norms = np.sqrt(self._norm2)
        tiny = norms <= drop_tol * fn
        self.kept = (~tiny) & inside[None, :]
        self.dropped_mass = float(np.sqrt(self._norm2[tiny & inside[None, :]].sum()))
        self.truncated_mass = float(np.sqrt(self._norm2[:, ~inside].sum()))

        # per-cell geometry
        self.cell_xi = cell * keys.astype(float)
        if len(keys):
            _, gr, _ = patch.jet(self.cell_xi)
            self.cell_slope = gr
            self.cell_dir = patch.normal(self.cell_xi, gr)
        else:
            self.cell_slope = np.zeros((0, d))
            self.cell_dir = np.zeros((0, n))

    # -- inventory ----------------------------------------------------------
    @property
    def per_cell(self):
        return self.M ** self.d

    @property
    def ids(self):
        return np.flatnonzero(self.kept.ravel())

    def __len__(self):
        return int(self.kept.sum())

    @property
    def norms(self):
        """||f_T||_{L^2} for every packet id (kept or not)."""
        return np.sqrt(self._norm2.ravel())

    def _split(self, pid):
        c, r = divmod(int(pid), self.per_cell)
        return c, np.unravel_index(r, (self.M,) * self.d)

    def tube(self, pid) -> Tube:
        c, mi = self._split(pid)
        return Tube(xi=self.cell_xi[c], x=self._X0[np.ravel_multi_index(mi, (self.M,) * self.d)],
                    direction=self.cell_dir[c], radius=self.tube_radius,
                    core_radius=self.core_radius, length=self.R, height=self.height,
                    slope=self.cell_slope[c], graph_axis=self.axis)

    def tubes(self, ids=None):
        ids = self.ids if ids is None else ids
        return [self.tube(i) for i in ids]

    def segments(self, ids=None):
        """Core segment endpoints (A, B) for packets ``ids``."""
        ids = self.ids if ids is None else np.asarray(ids, int)
        c, r = np.divmod(ids, self.per_cell)
        xT = self._X0[r]
        sl = self.cell_slope[c]
        A = _insert(xT + self.R * sl, np.full(len(ids), self.height - self.R), self.axis)
        B = _insert(xT - self.R * sl, np.full(len(ids), self.height + self.R), self.axis)
        return A, B

    def directions(self, ids=None):
        ids = self.ids if ids is None else np.asarray(ids, int)
        return self.cell_dir[ids // self.per_cell]

    # -- packet fields ------------------------------------------------------
    def _local_to_density(self, jlo_list, F_list):
        """Assemble per-cell local spectra into one SampledDensity."""
        d, H, Nb = self.d, self.H, self.Nb
        if not jlo_list:
            return SampledDensity(self.patch, self.h, np.zeros((0, d), int), np.zeros(0),
                                  self.reference_region, self.support_region)
        jlo = np.array(jlo_list)
        lo = jlo.min(0) - H
        hi = jlo.max(0) + self.q + H
        shape = tuple(hi - lo)
        acc = np.zeros(shape, complex)
        touched = np.zeros(shape, bool)
        l = np.arange(-H, self.q + H)
        pos = l % Nb
        for j0, F in zip(jlo_list, F_list):
            sub = F[np.ix_(*([pos] * d))]
            sl = tuple(slice(j0[a] - H - lo[a], j0[a] + self.q + H - lo[a]) for a in range(d))
            acc[sl] += sub
            touched[sl] = True
        idx = np.argwhere(touched) + lo
        amp = acc[touched]
        if self.height != 0.0:
            amp = amp * np.exp(-1j * self.height * self.patch.phi(self.h * (idx + 0.5)))
        return SampledDensity(self.patch, self.h, idx, amp, self.reference_region,
                              self.support_region)

    def packet(self, pid) -> SampledDensity:
        c, mi = self._split(pid)
        u = self._G[c]
        for a in range(self.d):
            sh = [1] * self.d
            sh[a] = -1
            u = u * self.W[a][mi[a]].reshape(sh)
        F = scipy.fft.fftn(u) / self.Nb ** self.d
        return self._local_to_density([self._jlo[c]], [F])

    def sum_packets(self, ids=None, weights=None) -> SampledDensity:
        """sum_T w_T f_T over packet ids (default: all kept packets)."""
        sel = np.zeros(self._norm2.shape)
        ids = self.ids if ids is None else np.asarray(ids, int)
        if weights is None:
            weights = np.ones(len(ids))
        c_idx, r_idx = np.divmod(ids, self.per_cell)
        np.add.at(sel, (c_idx, r_idx), weights)
        jl, Fl = [], []
        for c in np.unique(c_idx):
            S = sel[c].reshape((self.M,) * self.d)
            Wsum = _contract(S, self.W, False)
            Fl.append(scipy.fft.fftn(self._G[c] * Wsum) / self.Nb ** self.d)
            jl.append(self._jlo[c])
        return self._local_to_density(jl, Fl)

    # -- checks ---------------------------------------------------------------
    def reconstruction_error(self) -> float:
        """||sum_T f_T - f|| / ||f|| over all kept packets."""
        s = self.sum_packets()
        return relative_difference(s, self.f)

    def frequency_support_radius(self):
        """Chebyshev distance from a cell beyond which packet amplitudes vanish."""
        return (self.H + 0.5) * self.h

    def to_rows(self, ids=None):
        ids = self.ids if ids is None else ids
        rows = []
        norms = self.norms
        for i in ids:
            T = self.tube(i)
            rows.append([int(i), *T.xi.tolist(), *T.x.tolist(), *T.direction.tolist(),
                         float(norms[i])])
        return rows

    def inventory_header(self):
        d, n = self.d, self.n
        return (["id"] + [f"xi_{a}" for a in range(d)] + [f"x_{a}" for a in range(d)]
                + [f"v_{a}" for a in range(n)] + ["norm"])

    def write_inventory_csv(self, path, ids=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.inventory_header())
            for row in self.to_rows(ids):
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])

    def summary(self):
        return {"R": self.R, "delta": self.delta, "kappa": self.kappa, "q": self.q,
                "cells": int(len(self.cells)), "spatial_per_axis": self.M,
                "spatial_spacing": self.spacing, "halo": self.H, "packets": len(self),
                "dropped_mass": self.dropped_mass, "truncated_mass": self.truncated_mass,
                "core_radius": self.core_radius, "tube_radius": self.tube_radius}


def _dense_pair(f, g):
    allidx = np.vstack([f.idx, g.idx])
    uniq, inv = np.unique(allidx, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    a = np.zeros(len(uniq), complex)
    b = np.zeros(len(uniq), complex)
    np.add.at(a, inv[:len(f.idx)], f.amplitudes)
    np.add.at(b, inv[len(f.idx):], g.amplitudes)
    return a, b


def relative_difference(f: SampledDensity, g: SampledDensity) -> float:
    a, b = _dense_pair(f, g)
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / nb) if nb else float(np.linalg.norm(a))


def decompose(f: SampledDensity, R: float, delta: float, center=None, **kw) -> PacketDecomposition:
    return PacketDecomposition(f, R, delta, center, **kw)


# ----------------------------------------------------------------------------
# decay, orthogonality


@dataclass(frozen=True)
class DecayCheck:
    distances: np.ndarray       # d(x, T') / core radius per probe
    values: np.ndarray          # normalised |E f_T| per probe
    by_distance: dict           # probe-set label -> max normalised value
    max_exterior: float
    monotone: bool
    bound: float

    @property
    def passed(self):
        return self.monotone and self.max_exterior <= self.bound


def decay_probes(T: Tube, d_values=(2, 4, 8), n_angles=16, n_heights=9):
    """Rings of probes at distance d * core radius from T' at heights |t| <= R."""
    E = T.perpendicular_basis()
    n = len(T.direction)
    if n == 2:
        U = np.vstack([E[0], -E[0]])
    else:
        a = 2 * np.pi * np.arange(n_angles) / n_angles
        U = np.outer(np.cos(a), E[0]) + np.outer(np.sin(a), E[1])
    ts = np.linspace(-T.length, T.length, n_heights)
    base = T.core_point(ts)
    out = {}
    for dv in d_values:
        rho = T.core_radius * (1 + dv)
        out[dv] = (base[:, None, :] + rho * U[None]).reshape(-1, n)
    return out


def packet_decay_check(decomp: PacketDecomposition, pid, probes=None, N0: int = 4,
                       d_values=(2, 4, 8), bound: float = 1e3, n_angles=16,
                       n_heights=9) -> DecayCheck:
    """max |E f_T(x)| (1 + d(x,T')/r)^N0 R^{1/2} / ||f_T|| over probes at d(x,T') >= r.

    ``probes`` may be an (m, n) array or a dict label -> array; by default rings
    at d in ``d_values`` core radii. Monotonicity is over the dict order.
    """
    from .extension import evaluate_at

    T = decomp.tube(pid)
    fT = decomp.packet(pid)
    nrm = fT.l2_norm
    if probes is None:
        probes = decay_probes(T, d_values, n_angles, n_heights)
    if not isinstance(probes, dict):
        probes = {"probes": np.atleast_2d(probes)}
    r = T.core_radius
    dists, vals, by = [], [], {}
    for lab, X in probes.items():
        dd = T.core_distance(X) / r
        v = np.abs(evaluate_at(fT, X)) * (1 + dd) ** N0 * math.sqrt(decomp.R) / nrm
        dists.append(dd)
        vals.append(v)
        ext = dd >= 1 - 1e-9
        by[lab] = float(v[ext].max()) if np.any(ext) else float("nan")
    dists, vals = np.concatenate(dists), np.concatenate(vals)
    ext = dists >= 1 - 1e-9
    mx = float(vals[ext].max()) if np.any(ext) else 0.0
    seq = [v for v in by.values() if not math.isnan(v)]
    mono = all(a > b for a, b in zip(seq, seq[1:]))
    return DecayCheck(dists, vals, by, mx, mono, bound)


@dataclass(frozen=True)
class OrthogonalityResult:
    ratios: np.ndarray
    max_ratio: float
    bound: float

    @property
    def passed(self):
        return self.max_ratio <= self.bound


def subset_ratio(decomp: PacketDecomposition, ids) -> float:
    ids = np.asarray(ids, int)
    if len(ids) == 0:
        return 0.0
    s = decomp.sum_packets(ids)
    den = float((decomp.norms[ids] ** 2).sum())
    return s.l2_norm ** 2 / den


def bernoulli_selector(p=0.5):
    def draw(ids, rng):
        return ids[rng.random(len(ids)) < p]
    return draw


def orthogonality_check(decomp: PacketDecomposition, selector=None, trials: int = 100,
                        rng=None, bound: float = 10.0) -> OrthogonalityResult:
    """max over seeded random subsets of ||sum f_T||^2 / sum ||f_T||^2."""
    if trials < 1:
        raise InvalidInput("trials must be >= 1")
    rng = rng or np.random.default_rng(0)
    selector = selector or bernoulli_selector()
    ids = decomp.ids
    ratios = []
    for _ in range(trials):
        sub = selector(ids, rng)
        if len(sub) == 0:
            sub = ids[:1]
        ratios.append(subset_ratio(decomp, sub))
    ratios = np.asarray(ratios)
    return OrthogonalityResult(ratios, float(ratios.max()), bound)


# ----------------------------------------------------------------------------
# sub-collections


@dataclass(frozen=True, eq=False)
class PacketSelection:
    decomp: PacketDecomposition
    ids: np.ndarray

    def __len__(self):
        return len(self.ids)

    def density(self) -> SampledDensity:
        return self.decomp.sum_packets(self.ids)

    def __or__(self, other):
        return PacketSelection(self.decomp, np.union1d(self.ids, other.ids))

    def set(self):
        return set(int(i) for i in self.ids)


def tube_ball_distances(decomp, centers, ids=None):
    A, B = decomp.segments(ids)
    return segment_distance(np.atleast_2d(np.asarray(centers, float)), A, B)


def select_packets_by_set(decomp: PacketDecomposition, balls=None, points=None) -> PacketSelection:
    """Packets whose tubes meet C, with C a list of balls (center, radius) and/or a point cloud."""
    ids = decomp.ids
    hit = np.zeros(len(ids), bool)
    rad = decomp.tube_radius
    if balls:
        C = np.array([np.asarray(c, float) for c, _ in balls])
        r = np.array([float(rr) for _, rr in balls])
        D = tube_ball_distances(decomp, C, ids)
        hit |= np.any(D <= rad + r[:, None], axis=0)
    if points is not None and len(points):
        D = tube_ball_distances(decomp, points, ids)
        hit |= np.any(D <= rad, axis=0)
    return PacketSelection(decomp, ids[hit])


def tube_subspace_angles(decomp, V, ids=None):
    V = np.atleast_2d(np.asarray(V, float)) if V is not None and len(V) else np.zeros((0, decomp.n))
    v = decomp.directions(ids)
    proj = np.linalg.norm(v @ V.T, axis=1) if len(V) else np.zeros(len(v))
    return np.arccos(np.clip(proj, 0.0, 1.0))


def split_by_angle(decomp: PacketDecomposition, V, gamma0: float):
    """(transversal, non-transversal) selections: transversal iff angle(v(T), V) > 4 gamma0.

    V is an orthonormal basis given as rows.
    """
    V = np.atleast_2d(np.asarray(V, float)) if V is not None and len(V) else np.zeros((0, decomp.n))
    if len(V) and not np.allclose(V @ V.T, np.eye(len(V)), atol=1e-9):
        raise InvalidInput("V must be given by orthonormal rows")
    ids = decomp.ids
    ang = tube_subspace_angles(decomp, V, ids)
    tr = ang > 4 * gamma0
    return PacketSelection(decomp, ids[tr]), PacketSelection(decomp, ids[~tr])


# ----------------------------------------------------------------------------
# tangency against a sampled variety


def tangent_angle(v, normals):
    """arcsin of the normal-space component norm of unit v; normals (m, k, n) orthonormal."""
    c = np.einsum("mkn,n->mk", normals, v)
    return np.arcsin(np.clip(np.linalg.norm(c, axis=1), 0.0, 1.0))


def classify_tube(T: Tube, Z, ball, alpha: float) -> str:
    """'tangential' | 'non-tangential' | 'disjoint' for tube T against samples of Z in 2B.

    Z provides ``points`` (m, n), ``normals`` (m, k, n) orthonormal normal bases and
    ``spacing``. ``ball`` is (center, radius).
    """
    c, rB = ball
    c = np.asarray(c, float)
    need = alpha * rB / 10
    if Z.spacing > need * (1 + 1e-12):
        raise InvalidInput(f"variety sample spacing {Z.spacing:.4g} exceeds the required "
                           f"alpha R / 10 = {need:.4g}")
    pts = np.asarray(Z.points)
    in2B = np.linalg.norm(pts - c, axis=1) <= 2 * rB
    if not np.any(in2B):
        return "disjoint"
    dist = T.distance(pts[in2B]) - T.radius
    q = dist <= 2 * alpha * rB
    if not np.any(q):
        return "disjoint"
    ang = tangent_angle(T.direction, np.asarray(Z.normals)[in2B][q])
    return "tangential" if np.all(ang <= alpha) else "non-tangential"

"""Nonnegative even window with compactly supported Fourier transform.

eta_hat = psi * psi with psi(t) = C exp(-a / (1 - 4 t^2)) on |t| < 1/2 and
||psi||_2 = 1, so eta_hat is C-infinity, supported on (-1, 1), eta_hat(0) = 1,
and eta = 2 pi |psi_check|^2 >= 0 with integral 1.

Convention: eta_hat(w) = int eta(x) exp(-i w x) dx.
"""
from __future__ import annotations

import math
from functools import cached_property

import numpy as np


class Window:
    def __init__(self, taper: float = 0.5, n_quad: int = 200):
        self.taper = float(taper)
        self.n_quad = int(n_quad)
        self._x, self._w = np.polynomial.legendre.leggauss(self.n_quad)

    def psi_raw(self, t):
        t = np.asarray(t, float)
        out = np.zeros(t.shape)
        m = np.abs(t) < 0.5
        out[m] = np.exp(-self.taper / (1 - 4 * t[m] ** 2))
        return out

    @cached_property
    def _c2(self):
        t = 0.5 * self._x
        return 1.0 / float((0.5 * self._w * self.psi_raw(t) ** 2).sum())

    def psi(self, t):
        return math.sqrt(self._c2) * self.psi_raw(t)

    def hat(self, w):
        """eta_hat(w) by Gauss-Legendre on the overlap [|w| - 1/2, 1/2]."""
        w = np.abs(np.asarray(w, float))
        shape = w.shape
        w = w.reshape(-1)
        out = np.zeros(w.shape)
        m = w < 1
        if np.any(m):
            lo = w[m] - 0.5
            L = 0.5 - lo
            t = lo[:, None] + 0.5 * L[:, None] * (self._x + 1)
            f = self.psi_raw(t) * self.psi_raw(w[m][:, None] - t)
            out[m] = 0.5 * L * (f * self._w).sum(1) * self._c2
        return out.reshape(shape)

    def spatial(self, x):
        """eta(x) = (1/pi) int_0^1 eta_hat(w) cos(w x) dw."""
        x = np.asarray(x, float)
        # the integrand is entire in x; composite GL over [0, 1]
        k = 8
        edges = np.linspace(0, 1, k + 1)
        xs = (0.5 * (edges[1:, None] - edges[:-1, None]) * (self._x + 1) + edges[:-1, None]).ravel()
        ws = np.tile(0.5 * self._w, k) / k
        eh = self.hat(xs)
        return (np.cos(np.multiply.outer(x, xs)) * (eh * ws)).sum(-1) / math.pi

    @cached_property
    def overlap_integral(self):
        """int |eta_hat|^2; sets the packet orthogonality constant."""
        xs = 0.5 * (self._x + 1)
        return float(2 * (0.5 * self._w * self.hat(xs) ** 2).sum())

"""Vorticity / stream-function calculus on P1 fields.

The stream function solves ``A psi = w`` with ``psi = 0`` on the (single,
connected) boundary, and the velocity is ``curl* psi = (-d2 psi, d1 psi)``,
constant on each triangle.  The convection load uses the skew-symmetrized
trilinear form

    b(u, w, v) = 1/2 [ (u . grad w, v) - (u . grad v, w) ]

so that ``b(u, w, w) = 0`` holds exactly for every discrete ``w``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fem import FEMSpace


class Vorticity:
    """Stream function, velocity and convection operators on a :class:`FEMSpace`."""

    def __init__(self, space: FEMSpace):
        self.space = space
        self.mesh = m = space.mesh
        T, N = m.n_triangles, m.n_nodes
        rows = np.repeat(np.arange(T), 3)
        cols = m.triangles.ravel()
        g = m.gradients
        # per-triangle derivative and mean-value operators, (T, N)
        self.Dx = sp.csr_matrix((g[:, :, 0].ravel(), (rows, cols)), shape=(T, N))
        self.Dy = sp.csr_matrix((g[:, :, 1].ravel(), (rows, cols)), shape=(T, N))
        self.mean = sp.csr_matrix((np.full(3 * T, 1.0 / 3.0), (rows, cols)), shape=(T, N))
        # scatter of per-triangle constants c_T into (c, phi_i) = c_T area/3
        self.scatter = sp.csr_matrix(self.mean.T.multiply(m.areas[None, :]))
        self.DxT_area = sp.csr_matrix(self.Dx.T.multiply(m.areas[None, :]))
        self.DyT_area = sp.csr_matrix(self.Dy.T.multiply(m.areas[None, :]))
        # stacked forms: one gather (dx, dy, mean) and one scatter per evaluation
        self._gather = sp.vstack([self.Dx, self.Dy, self.mean]).tocsr()
        self._scatter = sp.hstack([self.scatter, -self.DxT_area, -self.DyT_area]).tocsr()
        self._T = T

    def stream_function(self, w: np.ndarray, check: bool = True) -> np.ndarray:
        """``psi`` with ``A psi = w``; `check` re-verifies the solve residual."""
        w = self._check(w)
        return self.space.poisson.solve(self.space.M @ w, check=check)

    def velocity_of_stream(self, psi: np.ndarray) -> np.ndarray:
        """Per-triangle ``curl* psi``, shape ``(T, 2)``."""
        d = (self._gather @ psi).reshape(3, self._T)
        return np.column_stack([-d[1], d[0]])

    def velocity(self, w: np.ndarray, check: bool = True) -> np.ndarray:
        return self.velocity_of_stream(self.stream_function(w, check))

    def kinetic_energy(self, w: np.ndarray) -> float:
        """``sum_T area |u|^2`` for ``u = velocity(w)``."""
        u = self.velocity(w)
        return float(np.sum(self.mesh.areas * np.einsum("td,td->t", u, u)))

    def trilinear(self, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Vector of ``b(u, w, phi_i)`` for per-triangle velocity `u`."""
        u1, u2 = u[:, 0], u[:, 1]
        dx, dy, wbar = (self._gather @ w).reshape(3, self._T)
        # (u . grad w, phi_i) - (u . grad phi_i, w), both exact for P1 data
        per_tri = np.concatenate([u1 * dx + u2 * dy, u1 * wbar, u2 * wbar])
        return 0.5 * (self._scatter @ per_tri)

    def convection(self, w: np.ndarray) -> np.ndarray:
        """Weak load of ``curl*(A^-1 w) . grad w`` tested against every hat function."""
        w = self._check(w)
        # hot path of time marching: the factorization was validated when built
        return self.trilinear(self.velocity(w, check=False), w)

    def linearized_convection(self, w_about: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Derivative of :meth:`convection` at `w_about` in direction `z`."""
        w_about = self._check(w_about)
        z = self._check(z)
        return self.trilinear(self.velocity(z), w_about) + self.trilinear(self.velocity(w_about), z)

    def _check(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.mesh.n_nodes,):
            raise ValueError(f"field of shape {w.shape} does not match mesh with {self.mesh.n_nodes} nodes")
        return w

"""P1 finite element assembly, Dirichlet elimination and SPD solves."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh


class NotSPDError(np.linalg.LinAlgError):
    """Factorization broke down: the matrix is not SPD on the solved subspace."""


# symmetric quadrature rules on the reference triangle: barycentric points, weights summing to 1
_DEG2 = (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
         np.full(3, 1 / 3))


def _dunavant5():
    a1, b1 = 0.059715871789770, 0.470142064105115
    a2, b2 = 0.797426985353087, 0.101286507323456
    pts = [[1 / 3, 1 / 3, 1 / 3],
           [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
           [a2, b2, b2], [b2, a2, b2], [b2, b2, a2]]
    w = [0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3
    return np.array(pts), np.array(w)


_DEG5 = _dunavant5()

QUADRATURE = {2: _DEG2, 5: _DEG5}


def quadrature_points(mesh: Mesh, degree: int = 2):
    """Physical quadrature points ``(T, Q, 2)``, weights ``(T, Q)`` and barycentrics ``(Q, 3)``."""
    lam, w = QUADRATURE[degree]
    p = mesh.nodes[mesh.triangles]
    x = np.einsum("qk,tkd->tqd", lam, p)
    return x, mesh.areas[:, None] * w[None, :], lam


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Exact P1 mass matrix, element blocks ``area/12 * [[2,1,1],[1,2,1],[1,1,2]]``."""
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _assemble(mesh, mesh.areas[:, None, None] * ref[None])


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Exact P1 stiffness matrix ``(grad phi_i, grad phi_j)``."""
    g = mesh.gradients
    local = mesh.areas[:, None, None] * np.einsum("tid,tjd->tij", g, g)
    return _assemble(mesh, local)


def load_vector(mesh: Mesh, f, degree: int = 2) -> np.ndarray:
    """Weak load ``(f, phi_i)`` for a callable ``f(x1, x2)``, by quadrature of the given degree."""
    x, w, lam = quadrature_points(mesh, degree)
    vals = np.asarray(f(x[..., 0], x[..., 1]), dtype=float) * np.ones(w.shape)
    local = np.einsum("tq,qk->tk", vals * w, lam)
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def matrix_dump(A) -> str:
    """Coordinate text format ``i j value`` sorted by ``(i, j)``."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    return "".join(f"{i} {j} {v!r}\n" for i, j, v in zip(C.row[order], C.col[order], C.data[order]))


@dataclass
class SPDSolver:
    """Cached sparse factorization of an SPD matrix.

    Uses a symmetric-mode SuperLU factorization (diagonal pivoting only) and
    checks the pivots for positivity, so a non-SPD matrix is reported rather
    than silently solved.  Falls back to conjugate gradients if the direct
    solution misses the residual tolerance.
    """

    A: sp.csc_matrix
    rtol: float = 1e-10
    _lu: object = field(default=None, repr=False)

    def __post_init__(self):
        self.A = sp.csc_matrix(self.A)
        if self.A.shape[0] == 0:
            return
        try:
            self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise NotSPDError(f"factorization failed: {exc}") from exc
        d = self._lu.U.diagonal()
        if not np.all(d > 0):
            raise NotSPDError(f"non-positive pivot {d.min():.3e}: matrix is not SPD")

    def solve(self, b: np.ndarray, check: bool = True) -> np.ndarray:
        """Solve ``A x = b``; `check` verifies the residual (and falls back to CG)."""
        if self.A.shape[0] == 0:
            return np.zeros_like(b)
        x = self._lu.solve(b)
        if not check:
            return x
        nb = np.linalg.norm(b)
        if nb == 0:
            return x
        res = np.linalg.norm(self.A @ x - b) / nb
        if not np.all(np.isfinite(x)) or res > self.rtol:
            x, info = spla.cg(self.A, b, x0=np.nan_to_num(x), rtol=self.rtol * 0.1, maxiter=10 * len(b))
            if info != 0:
                raise NotSPDError("conjugate gradient fallback did not converge")
        return x


def solve_spd(A, b) -> np.ndarray:
    """Solve ``A x = b`` for SPD `A` to relative residual 1e-10."""
    if not sp.issparse(A):
        A = sp.csc_matrix(np.asarray(A, dtype=float))
    return SPDSolver(A).solve(np.asarray(b, dtype=float))


@dataclass
class DirichletSystem:
    """Elimination of boundary nodes from a linear system.

    The full-space solution is ``u = lift(g) + extend(u_I)`` where ``u_I``
    solves ``A_II u_I = b_I - A_IB g``.
    """

    mesh: Mesh
    A: sp.csr_matrix
    interior: np.ndarray = field(init=False)
    boundary: np.ndarray = field(init=False)
    A_II: sp.csc_matrix = field(init=False)
    A_IB: sp.csr_matrix = field(init=False)
    _solver: SPDSolver | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.interior = self.mesh.interior_nodes
        self.boundary = self.mesh.boundary_nodes
        A = sp.csr_matrix(self.A)
        self.A_II = sp.csc_matrix(A[self.interior][:, self.interior])
        self.A_IB = A[self.interior][:, self.boundary]

    @property
    def solver(self) -> SPDSolver:
        if self._solver is None:
            self._solver = SPDSolver(self.A_II)
        return self._solver

    def reduce(self, rhs, g=None):
        """Interior right-hand side ``b_I - A_IB g`` (``g`` on boundary nodes)."""
        b = np.asarray(rhs, dtype=float)[self.interior]
        if g is not None:
            b = b - self.A_IB @ self._boundary_values(g)
        return b

    def _boundary_values(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if g.shape == (self.mesh.n_nodes,):
            inner = g[self.interior]
            if np.any(inner != 0):
                raise ValueError("Dirichlet data given on non-boundary nodes")
            return g[self.boundary]
        if g.shape != (len(self.boundary),):
            raise ValueError("Dirichlet data must have one value per boundary node")
        return g

    def extend(self, u_int, g=None) -> np.ndarray:
        u = np.zeros(self.mesh.n_nodes)
        u[self.interior] = u_int
        if g is not None:
            u[self.boundary] = self._boundary_values(g)
        return u

    def solve(self, rhs, g=None, check: bool = True) -> np.ndarray:
        return self.extend(self.solver.solve(self.reduce(rhs, g), check), g)


def apply_dirichlet(K, M, rhs, g, mesh: Mesh):
    """Reduce ``K u = rhs`` with boundary data `g` to interior unknowns.

    Returns the reduced matrix, reduced right-hand side and the
    :class:`DirichletSystem` used for bookkeeping (lifting and extension).
    `M` is accepted for symmetry with time-dependent callers and unused here.
    """
    sysd = DirichletSystem(mesh, K)
    return sysd.A_II, sysd.reduce(rhs, g), sysd


def norm_h(w, M) -> float:
    w = np.asarray(w, dtype=float)
    if w.shape[0] != M.shape[0]:
        raise ValueError("field does not live on this mesh")
    return float(np.sqrt(max(w @ (M @ w), 0.0)))


def seminorm_v(w, K) -> float:
    w = np.asarray(w, dtype=float)
    if w.shape[0] != K.shape[0]:
        raise ValueError("field does not live on this mesh")
    return float(np.sqrt(max(w @ (K @ w), 0.0)))


@dataclass
class FEMSpace:
    """Mass/stiffness pair on a mesh with cached Dirichlet factorizations."""

    mesh: Mesh
    M: sp.csr_matrix = field(init=False)
    K: sp.csr_matrix = field(init=False)
    poisson: DirichletSystem = field(init=False)

    def __post_init__(self):
        self.M = assemble_mass(self.mesh)
        self.K = assemble_stiffness(self.mesh)
        self.poisson = DirichletSystem(self.mesh, self.K)

    def norm_h(self, w) -> float:
        return norm_h(w, self.M)

    def seminorm_v(self, w) -> float:
        return seminorm_v(w, self.K)

    def inner_h(self, a, b):
        return a.T @ (self.M @ b)

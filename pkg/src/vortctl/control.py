"""Oblique projections, the explicit feedback operator and the Poincare-like constant.

Notation: ``V`` holds the actuator fields (columns), ``Vt`` the auxiliary
fields, ``M`` and ``K`` the P1 mass and stiffness matrices.  With the
cross-Gram ``G = V^T M Vt`` the feedback is

    Kfb z = -lam * P_act( A_h P_aux z ),

where ``P_aux`` projects onto span ``Vt`` along ``(span V)^perp`` and
``P_act`` onto span ``V`` along ``(span Vt)^perp``; ``A_h q`` is the
H-representative of the stiffness action, ``M A_h q = K q``.  In
coordinates the control is ``u = -lam G^-T (Vt^T K Vt) G^-1 (V^T M z)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .actuators import ActuatorFamily
from .fem import FEMSpace


class ProjectionError(np.linalg.LinAlgError):
    """The cross-Gram matrix is singular: the direct sum decomposition fails."""


class ObliqueProjector:
    """Projection onto span `F` along ``(span G)^perp`` in the mass inner product.

    ``P z = F c`` with ``[(g_i, f_j)_H] c = [(g_i, z)_H]``.
    """

    def __init__(self, F, G, mass, cross_gram=None, cond_max: float = 1e12):
        self.F = np.asarray(F, dtype=float)
        self.G = np.asarray(G, dtype=float)
        if self.F.shape != self.G.shape:
            raise ValueError("range and co-range bases must have the same shape")
        self.MG = np.asarray(mass @ self.G)
        C = self.MG.T @ self.F if cross_gram is None else np.asarray(cross_gram, dtype=float)
        self.cross_gram = C
        if C.size:
            # condition relative to the size of the bases, so a round-off-sized
            # cross-Gram of mutually orthogonal bases is reported as singular
            smin = np.linalg.svd(C, compute_uv=False).min()
            scale = np.linalg.norm(self.MG, 2) * np.linalg.norm(self.F, 2)
            cond = max(np.linalg.cond(C), scale / smin if smin > 0 else np.inf)
            if not np.isfinite(cond) or cond > cond_max:
                raise ProjectionError(f"cross-Gram is singular (condition estimate {cond:.3e})")
            self._lu = sla.lu_factor(C)
        else:
            self._lu = None

    @property
    def rank(self) -> int:
        return self.F.shape[1]

    def coords(self, z):
        """Coefficients ``c`` of ``P z`` in the basis `F`."""
        return self.coords_from_moments(self.MG.T @ z)

    def coords_from_moments(self, s):
        """Coefficients from the moments ``s_i = (g_i, z)_H``."""
        if self._lu is None:
            return np.zeros((0,) + np.shape(s)[1:])
        return sla.lu_solve(self._lu, s)

    def __call__(self, z):
        return self.F @ self.coords(z)

    def complement(self, z):
        """``(I - P) z``: projection onto ``(span G)^perp`` along span `F`."""
        return z - self(z)


@dataclass(eq=False)
class FeedbackOperator:
    """The feedback ``-lam P_act A_h P_aux`` for an actuator family."""

    family: ActuatorFamily
    space: FEMSpace
    lam: float = 1.0
    cross_gram: np.ndarray | None = None
    P_aux: ObliqueProjector = field(init=False)
    P_act: ObliqueProjector = field(init=False)
    gain: np.ndarray = field(init=False)
    MV: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("feedback gain must be nonnegative")
        M, K = self.space.M, self.space.K
        V, Vt = self.family.V, self.family.Vt
        self.P_aux = ObliqueProjector(Vt, V, M)
        gt = None if self.cross_gram is None else np.asarray(self.cross_gram).T
        self.P_act = ObliqueProjector(V, Vt, M, cross_gram=gt)
        self.MV = np.asarray(M @ V)
        S = Vt.T @ (K @ Vt)
        # u = -lam * Gt^-1 S G^-1 s with s = V^T M z
        inner = self.P_aux.coords_from_moments(np.eye(self.family.M_sigma))
        self.gain = -self.lam * self.P_act.coords_from_moments(S @ inner)

    @property
    def M_sigma(self) -> int:
        return self.family.M_sigma

    def measure(self, z) -> np.ndarray:
        """Sensor outputs ``s_j = (z, phi_j)_H``."""
        return self.MV.T @ z

    def control_from_measurements(self, s) -> np.ndarray:
        return self.gain @ s

    def control(self, z) -> np.ndarray:
        """Control coordinates ``u`` in the actuator basis."""
        return self.gain @ self.measure(z)

    def field(self, u) -> np.ndarray:
        return self.family.V @ u

    def load(self, u) -> np.ndarray:
        """Weak load ``(V u, phi_i)_H`` of the control forcing."""
        return self.MV @ u

    def apply(self, z) -> np.ndarray:
        """Control forcing field ``Kfb z``, an element of span ``V``."""
        return self.field(self.control(z))

    def riesz_stiffness(self, q) -> np.ndarray:
        """``A_h q``: the mass-inverse image of ``K q``."""
        return spla.spsolve(sp.csc_matrix(self.space.M), self.space.K @ q)


def make_projector(F, G, mass) -> ObliqueProjector:
    return ObliqueProjector(F, G, mass)


def feedback_apply(op: FeedbackOperator, z) -> np.ndarray:
    return op.apply(z)


def monotonicity_certificate(op: FeedbackOperator, p) -> tuple[float, float]:
    """Both sides of ``(Kfb p, p)_H = -||P_aux p||_V^2`` for the unit-gain feedback.

    The left side goes through the full feedback path; the right side only
    through the auxiliary projector and the stiffness matrix.
    """
    if op.lam != 1.0:
        op = FeedbackOperator(op.family, op.space, 1.0, op.cross_gram)
    p = np.asarray(p, dtype=float)
    lhs = float(op.apply(p) @ (op.space.M @ p))
    q = op.P_aux(p)
    rhs = -float(q @ (op.space.K @ q))
    return lhs, rhs


def xi_estimate(V, stiffness, mass, interior, method: str = "shift-invert") -> float:
    """Smallest ``||t||_V^2 / ||t||_H^2`` over ``t`` vanishing on the boundary and H-orthogonal to `V`.

    Parameters
    ----------
    V : (N, k) actuator fields (k may be 0)
    stiffness, mass : sparse (N, N)
    interior : interior node indices
    method : ``"shift-invert"`` (bordered saddle-point Lanczos) or ``"dense"``
        (null-space basis of the constraints and a dense symmetric eigensolve)
    """
    K = sp.csr_matrix(stiffness)[interior][:, interior]
    M = sp.csr_matrix(mass)[interior][:, interior]
    V = np.asarray(V, dtype=float).reshape(stiffness.shape[0], -1)
    C = np.asarray(sp.csr_matrix(mass) @ V)[interior]
    k = C.shape[1]
    if k and np.linalg.matrix_rank(C) < k:
        raise ProjectionError("actuator constraints are rank deficient")
    if method == "dense":
        Z = sla.null_space(C.T) if k else np.eye(K.shape[0])
        Kz = Z.T @ (K @ Z)
        Mz = Z.T @ (M @ Z)
        return float(sla.eigh(Kz, Mz, eigvals_only=True, subset_by_index=[0, 0])[0])
    if method != "shift-invert":
        raise ValueError(f"unknown method {method!r}")
    if k == 0:
        vals = spla.eigsh(sp.csc_matrix(K), k=1, M=sp.csc_matrix(M), sigma=0.0, which="LM")[0]
        return float(vals[0])
    Cs = sp.csr_matrix(C)
    A = sp.bmat([[K, Cs], [Cs.T, None]], format="csc")
    B = sp.bmat([[M, None], [None, sp.csr_matrix((k, k))]], format="csc")
    # B is only semi-definite; shift-invert Lanczos about 0 is still well defined
    vals = spla.eigsh(A, k=1, M=B, sigma=0.0, which="LM")[0]
    return float(vals[0])

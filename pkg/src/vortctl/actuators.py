"""Actuator and auxiliary vorticity families.

Each actuator is a rescaled, translated copy of a reference bump defined on
the reference square ``O = (-1/2, 1/2)^2``:

    phi_j(x) = 1_{omega_j}(x) phi(Q_j^T (x - c_j) / s_j),   omega_j = c_j + s_j Q_j O

with ``Q_j = +I`` or ``-I`` (copies rotated by 180 degrees occur in the
triangle layout).  Two layouts are provided: ``M x M`` squares in a
rectangle, and one square per sub-triangle of the ``(M-1)``-fold red
subdivision of a triangle.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import DomainSpec, Mesh, MeshError, build_mesh, points_in_polygon, refine_n

REFERENCE_SQUARE = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])


class ActuatorError(ValueError):
    """Invalid actuator parameters, misaligned mesh or broken Gram structure."""


@dataclass(frozen=True)
class ReferenceBump:
    """Evaluator on the reference square; must be positive inside it."""

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "custom"

    def __call__(self, x1, x2):
        return np.asarray(self.func(x1, x2), dtype=float) * np.ones(np.shape(x1))


def default_bumps() -> tuple[ReferenceBump, ReferenceBump]:
    """Indicator actuator and product-of-sines auxiliary bump."""
    phi = ReferenceBump(lambda a, b: np.ones_like(np.asarray(a, dtype=float)), "one")
    phit = ReferenceBump(lambda a, b: np.sin(np.pi * (a + 0.5)) * np.sin(np.pi * (b + 0.5)), "sine")
    return phi, phit


@dataclass(frozen=True)
class ActuatorLayout:
    """Geometry of an actuator family (no fields).

    ``orient[j]`` is +1 or -1; the support of actuator ``j`` is
    ``centers[j] + scales[j] * orient[j] * O``.
    """

    M: int
    centers: np.ndarray
    scales: np.ndarray
    orient: np.ndarray
    kind: str = "rectangle"

    @property
    def M_sigma(self) -> int:
        return len(self.centers)

    @property
    def supports(self) -> list[np.ndarray]:
        out = []
        for c, s, o in zip(self.centers, self.scales, self.orient):
            out.append(c[None, :] + s * o * REFERENCE_SQUARE)
        return out

    def local_coords(self, j: int, x: np.ndarray) -> np.ndarray:
        return self.orient[j] * (x - self.centers[j][None, :]) / self.scales[j]

    def total_volume(self) -> float:
        return float(np.sum(self.scales**2))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("j,cx,cy,scale,support_vertices\n")
        for j, (c, s, poly) in enumerate(zip(self.centers, self.scales, self.supports)):
            verts = ",".join(f"{v!r}" for v in poly.ravel().tolist())
            buf.write(f"{j},{c[0]!r},{c[1]!r},{s!r},{verts}\n")
        return buf.getvalue()


def rectangle_layout(L1: float, L2: float, r: float, M: int) -> ActuatorLayout:
    """``M^2`` squares of side ``r/M`` centred at ``((2i+1)L1/(2M), (2k+1)L2/(2M))``."""
    if M < 1:
        raise ActuatorError("M must be a positive integer")
    lmin = min(L1, L2)
    if not (0 < r < 0.5 * lmin):
        raise ActuatorError(f"r must lie in (0, {0.5 * lmin}), got {r}")
    i1, i2 = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    centers = np.column_stack([(2 * i1.ravel() + 1) * L1 / (2 * M), (2 * i2.ravel() + 1) * L2 / (2 * M)])
    n = M * M
    return ActuatorLayout(M, centers, np.full(n, r / M), np.ones(n, dtype=int), "rectangle")


def incircle(tri) -> tuple[np.ndarray, float]:
    """Incenter and inradius of a triangle."""
    v = np.asarray(tri, dtype=float)
    a = np.linalg.norm(v[1] - v[2])
    b = np.linalg.norm(v[2] - v[0])
    c = np.linalg.norm(v[0] - v[1])
    center = (a * v[0] + b * v[1] + c * v[2]) / (a + b + c)
    area = 0.5 * abs((v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[2, 0] - v[0, 0]) * (v[1, 1] - v[0, 1]))
    return center, 2 * area / (a + b + c)


def subtriangle_maps(tri, levels: int) -> list[tuple[float, np.ndarray]]:
    """Similarity maps ``x -> s x + t`` onto the sub-triangles of ``levels`` red subdivisions.

    Ordering follows the subdivision: corner copies at v0, v1, v2, then the
    centre copy (rotated by 180 degrees, i.e. negative scale).
    """
    v = np.asarray(tri, dtype=float)
    maps = [(1.0, np.zeros(2))]
    for _ in range(levels):
        new = []
        for s, t in maps:
            a, b, c = (s * v + t)
            # x -> s x + t composed after y -> (y + corner) / 2 or -y/2 + (a+b+c)/2
            for corner in (a, b, c):
                new.append((0.5 * s, 0.5 * t + 0.5 * corner))
            new.append((-0.5 * s, -0.5 * t + 0.5 * (a + b + c)))
        maps = new
    return maps


def triangle_layout(tri, M: int, fraction: float = 0.3) -> ActuatorLayout:
    """``4^(M-1)`` squares, the ``M = 1`` square mapped into each sub-triangle.

    The ``M = 1`` square is centred at the incenter with side
    ``fraction * 2 * inradius / sqrt(2)`` (``fraction = 1`` would inscribe it
    in the incircle).
    """
    if M < 1:
        raise ActuatorError("M must be a positive integer")
    if not (0 < fraction < 1):
        raise ActuatorError("fraction must lie in (0, 1)")
    v = DomainSpec.triangle(*tri).vertices
    c0, rho = incircle(v)
    side = fraction * 2 * rho / np.sqrt(2.0)
    maps = subtriangle_maps(v, M - 1)
    centers = np.array([s * c0 + t for s, t in maps])
    scales = np.array([abs(s) * side for s, _ in maps])
    orient = np.array([1 if s > 0 else -1 for s, _ in maps], dtype=int)
    return ActuatorLayout(M, centers, scales, orient, "triangle")


@dataclass(eq=False)
class ActuatorFamily:
    """Actuator fields ``V`` and auxiliary fields ``Vt`` (columns) on a support-aligned mesh."""

    layout: ActuatorLayout
    mesh: Mesh
    bumps: tuple = field(default_factory=default_bumps)
    V: np.ndarray = field(init=False)
    Vt: np.ndarray = field(init=False)

    def __post_init__(self):
        phi, phit = self.bumps
        n, k = self.mesh.n_nodes, self.layout.M_sigma
        self.V = np.zeros((n, k))
        self.Vt = np.zeros((n, k))
        x = self.mesh.nodes
        for j, poly in enumerate(self.layout.supports):
            if not self.mesh.is_aligned_with(poly):
                raise ActuatorError(f"mesh is not aligned with the support of actuator {j}")
            cls = points_in_polygon(x, poly, tol=1e-10 * self.layout.scales[j])
            inside = cls > 0
            edge = cls == 0
            if not np.any(inside):
                raise ActuatorError(f"support of actuator {j} contains no interior mesh node")
            xb = self.layout.local_coords(j, x[inside | edge])
            pv = phi(xb[:, 0], xb[:, 1])
            # indicator takes the midpoint value 1/2 on the support boundary
            pv[edge[inside | edge]] *= 0.5
            self.V[inside | edge, j] = pv
            xi = self.layout.local_coords(j, x[inside])
            self.Vt[inside, j] = phit(xi[:, 0], xi[:, 1])
        self.V.setflags(write=False)
        self.Vt.setflags(write=False)

    @property
    def M(self) -> int:
        return self.layout.M

    @property
    def M_sigma(self) -> int:
        return self.layout.M_sigma

    @property
    def centers(self) -> np.ndarray:
        return self.layout.centers

    @property
    def supports(self) -> list[np.ndarray]:
        return self.layout.supports


def family_mesh(domain: DomainSpec, layout: ActuatorLayout | None, level: int = 0,
                h: float | None = None) -> Mesh:
    """Coarse support-aligned mesh refined `level` times."""
    supports = layout.supports if layout is not None else ()
    try:
        return refine_n(build_mesh(domain, supports, h=h), level)
    except MeshError as exc:
        raise ActuatorError(str(exc)) from exc


def build_rectangle_family(L1, L2, r, M, bumps=None, mesh: Mesh | None = None,
                           level: int = 0, h: float | None = None) -> ActuatorFamily:
    """Rectangle family on `mesh`, or on a freshly generated aligned mesh."""
    layout = rectangle_layout(L1, L2, r, M)
    if mesh is None:
        mesh = family_mesh(DomainSpec.rectangle(L1, L2), layout, level, h)
    return ActuatorFamily(layout, mesh, bumps or default_bumps())


def build_triangle_family(tri, M, bumps=None, mesh: Mesh | None = None, level: int = 0,
                          h: float | None = None, fraction: float = 0.3) -> ActuatorFamily:
    """Triangle family on `mesh`, or on a freshly generated aligned mesh."""
    layout = triangle_layout(tri, M, fraction)
    if mesh is None:
        mesh = family_mesh(DomainSpec.triangle(*tri), layout, level, h)
    return ActuatorFamily(layout, mesh, bumps or default_bumps())


def gram_diag_check(fam: ActuatorFamily, mass) -> np.ndarray:
    """Cross-Gram ``[(phi_i, phit_j)_H]``; raises unless it is diagonal with positive diagonal."""
    G = fam.V.T @ (mass @ fam.Vt)
    off = G - np.diag(np.diag(G))
    if np.any(off != 0.0):
        raise ActuatorError(f"cross-Gram has nonzero off-diagonal entries (max {np.abs(off).max():.3e})")
    if np.any(np.diag(G) <= 0):
        raise ActuatorError("cross-Gram has non-positive diagonal entries")
    return G

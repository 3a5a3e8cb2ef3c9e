"""Conforming P1 triangulations of convex polygons.

Meshes are generated as conforming Delaunay triangulations: a lattice of
points is triangulated with Qhull and constraint segments (the domain
boundary and the boundaries of embedded support polygons) are split at
their midpoints until every piece appears as a mesh edge.  Refinement is
red (midpoint) refinement, which divides each triangle into four similar
triangles.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial import Delaunay


class MeshError(ValueError):
    """Raised for degenerate domains, bad supports or invalid meshes."""


@dataclass(frozen=True)
class DomainSpec:
    """A convex polygonal domain: a rectangle ``(0,L1)x(0,L2)`` or a triangle."""

    kind: str
    L1: float = 1.0
    L2: float = 1.0
    vertices_: tuple = ()

    @classmethod
    def rectangle(cls, L1: float, L2: float) -> "DomainSpec":
        if not (L1 > 0 and L2 > 0):
            raise MeshError(f"rectangle sides must be positive, got {L1}, {L2}")
        return cls("rectangle", float(L1), float(L2))

    @classmethod
    def triangle(cls, v0, v1, v2) -> "DomainSpec":
        v = np.array([v0, v1, v2], dtype=float)
        area2 = _cross(v[1] - v[0], v[2] - v[0])
        scale = max(np.ptp(v[:, 0]), np.ptp(v[:, 1]), 1e-300)
        if abs(area2) <= 1e-12 * scale**2:
            raise MeshError("triangle vertices are collinear")
        if area2 < 0:
            v = v[[0, 2, 1]]
        return cls("triangle", vertices_=tuple(map(tuple, v)))

    @property
    def vertices(self) -> np.ndarray:
        """Polygon vertices, counterclockwise."""
        if self.kind == "rectangle":
            return np.array([[0.0, 0.0], [self.L1, 0.0], [self.L1, self.L2], [0.0, self.L2]])
        if self.kind == "triangle":
            return np.array(self.vertices_, dtype=float)
        raise MeshError(f"unknown domain kind {self.kind!r}")

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    @property
    def min_side(self) -> float:
        """The shortest side length (``min(L1, L2)`` for a rectangle)."""
        v = self.vertices
        return float(np.min(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)))


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


def points_in_polygon(pts, poly, tol: float = 0.0) -> np.ndarray:
    """Signed classification of points against a convex CCW polygon.

    Returns +1 strictly inside (by more than `tol`), 0 within `tol` of the
    boundary, -1 outside.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    poly = np.asarray(poly, dtype=float)
    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    lens = np.linalg.norm(e, axis=1)
    # signed distance to each supporting line, positive inside
    d = (e[None, :, 0] * (pts[:, None, 1] - a[None, :, 1])
         - e[None, :, 1] * (pts[:, None, 0] - a[None, :, 0])) / lens[None, :]
    dmin = d.min(axis=1)
    out = np.where(dmin > tol, 1, np.where(dmin >= -tol, 0, -1))
    return out


def _distance_to_segments(pts, segs) -> np.ndarray:
    """Distance from each point to the nearest of the segments ``(S, 2, 2)``."""
    pts = np.atleast_2d(pts)
    if len(segs) == 0:
        return np.full(len(pts), np.inf)
    a = segs[:, 0]
    e = segs[:, 1] - a
    ee = np.einsum("ij,ij->i", e, e)
    rel = pts[:, None, :] - a[None, :, :]
    s = np.clip(np.einsum("psk,sk->ps", rel, e) / ee[None, :], 0.0, 1.0)
    diff = rel - s[..., None] * e[None, :, :]
    return np.sqrt(np.min(np.einsum("psk,psk->ps", diff, diff), axis=1))


def _polygon_segments(poly) -> np.ndarray:
    poly = np.asarray(poly, dtype=float)
    return np.stack([poly, np.roll(poly, -1, axis=0)], axis=1)


def _lattice(lo, hi, h) -> np.ndarray:
    """Equilateral lattice with spacing `h` anchored at `lo`."""
    dy = h * np.sqrt(3.0) / 2.0
    ny = int(np.floor((hi[1] - lo[1]) / dy)) + 1
    nx = int(np.floor((hi[0] - lo[0]) / h)) + 2
    rows = []
    for j in range(ny):
        x = lo[0] + h * (np.arange(nx) + 0.5 * (j % 2))
        rows.append(np.column_stack([x, np.full(nx, lo[1] + j * dy)]))
    return np.vstack(rows)


def _split_polygon(poly, h) -> list[np.ndarray]:
    """Points along each polygon edge, endpoints included, spacing <= h."""
    poly = np.asarray(poly, dtype=float)
    pieces = []
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / h - 1e-9)))
        s = np.linspace(0.0, 1.0, n + 1)
        pieces.append(a[None, :] + s[:, None] * (b - a)[None, :])
    return pieces


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable conforming triangulation.

    Attributes
    ----------
    nodes : (N, 2) float array
    triangles : (T, 3) int array, counterclockwise
    boundary_nodes : sorted int array of nodes on boundary edges
    refine_level : number of red refinements applied since generation
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_nodes: np.ndarray
    refine_level: int = 0
    domain: DomainSpec | None = field(default=None, compare=False)
    supports: tuple = field(default=(), compare=False)

    def __post_init__(self):
        for arr in (self.nodes, self.triangles, self.boundary_nodes):
            arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, nodes, triangles, refine_level=0, domain=None, supports=()):
        nodes = np.ascontiguousarray(nodes, dtype=float)
        tris = np.ascontiguousarray(triangles, dtype=np.int64)
        edges, counts = _edge_counts(tris)
        bnd = np.unique(edges[counts == 1])
        return cls(nodes, tris, bnd, int(refine_level), domain, tuple(supports))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * _cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the three hat functions on each triangle, ``(T, 3, 2)``."""
        p = self.nodes[self.triangles]
        # gradient of barycentric lambda_i is the rotated opposite edge over 2*area
        e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        g = np.stack([-e[..., 1], e[..., 0]], axis=-1)
        return g / (2.0 * self.areas[:, None, None])

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted node pairs, ``(E, 2)``."""
        return _edge_counts(self.triangles)[0]

    @cached_property
    def edge_set(self) -> frozenset:
        return frozenset(map(tuple, self.edges.tolist()))

    @property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @property
    def h(self) -> float:
        """Longest edge length."""
        e = self.nodes[self.edges]
        return float(np.max(np.linalg.norm(e[:, 1] - e[:, 0], axis=1)))

    def check(self) -> None:
        """Raise :class:`MeshError` if any structural invariant fails."""
        if np.any(self.areas <= 0):
            raise MeshError("non-positive triangle area")
        edges, counts = _edge_counts(self.triangles)
        if np.any((counts < 1) | (counts > 2)):
            raise MeshError("edge shared by more than two triangles")
        if not np.array_equal(np.unique(edges[counts == 1]), self.boundary_nodes):
            raise MeshError("boundary node set inconsistent with boundary edges")
        used = np.unique(self.triangles)
        if len(used) != self.n_nodes:
            raise MeshError("mesh has unreferenced nodes")

    def locate(self, x) -> tuple[int, np.ndarray]:
        """Triangle containing `x` and the barycentric coordinates of `x` in it."""
        x = np.asarray(x, dtype=float)
        p = self.nodes[self.triangles]
        d = x[None, :] - p[:, 0]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = _cross(e1, e2)
        l1 = _cross(d, e2) / det
        l2 = _cross(e1, d) / det
        lam = np.column_stack([1.0 - l1 - l2, l1, l2])
        tol = 1e-12
        worst = lam.min(axis=1)
        k = int(np.argmax(worst))
        if worst[k] < -tol:
            raise MeshError(f"point {tuple(x)} lies outside the mesh")
        b = np.clip(lam[k], 0.0, 1.0)
        return k, b / b.sum()

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of ``func(x1, x2)``."""
        return np.asarray(func(self.nodes[:, 0], self.nodes[:, 1]), dtype=float) * np.ones(self.n_nodes)

    def is_aligned_with(self, poly, tol: float = 1e-10) -> bool:
        """True if every edge of `poly` is a union of mesh edges."""
        poly = np.asarray(poly, dtype=float)
        es = self.edge_set
        scale = max(self.h, 1e-300)
        for a, b in zip(poly, np.roll(poly, -1, axis=0)):
            on = np.flatnonzero(_distance_to_segments(self.nodes, np.array([[a, b]])) <= tol * scale)
            if len(on) < 2:
                return False
            s = (self.nodes[on] - a) @ (b - a) / np.dot(b - a, b - a)
            order = on[np.argsort(s)]
            ss = np.sort(s)
            if abs(ss[0]) > tol or abs(ss[-1] - 1) > tol:
                return False
            for i, j in zip(order[:-1], order[1:]):
                if (min(i, j), max(i, j)) not in es:
                    return False
        return True

    def to_text(self) -> str:
        """Plain-text mesh file contents."""
        is_b = np.zeros(self.n_nodes, dtype=int)
        is_b[self.boundary_nodes] = 1
        lines = [f"nodes {self.n_nodes} triangles {self.n_triangles} level {self.refine_level}"]
        lines += [f"{x!r} {y!r} {b}" for (x, y), b in zip(self.nodes.tolist(), is_b)]
        lines += [f"{a} {b} {c}" for a, b, c in self.triangles.tolist()]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "Mesh":
        rows = text.strip().splitlines()
        head = rows[0].split()
        if head[0::2] != ["nodes", "triangles", "level"]:
            raise MeshError(f"bad mesh header: {rows[0]!r}")
        n, t, lev = int(head[1]), int(head[3]), int(head[5])
        node_rows = np.array([r.split() for r in rows[1:1 + n]], dtype=float).reshape(n, 3)
        tris = np.array([r.split() for r in rows[1 + n:1 + n + t]], dtype=np.int64).reshape(t, 3)
        m = cls.from_arrays(node_rows[:, :2], tris, lev)
        flagged = np.flatnonzero(node_rows[:, 2] > 0.5)
        if not np.array_equal(flagged, m.boundary_nodes):
            raise MeshError("boundary flags disagree with mesh topology")
        return m

    @classmethod
    def load(cls, path) -> "Mesh":
        with open(path) as fh:
            return cls.from_text(fh.read())


def _edge_counts(tris):
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0, return_counts=True)


def _canonical(nodes, tris, level, domain, supports) -> Mesh:
    """Renumber nodes by (x2, x1) and orient/sort triangles deterministically."""
    order = np.lexsort((nodes[:, 0], nodes[:, 1]))
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    nodes = nodes[order]
    tris = inv[tris]
    p = nodes[tris]
    neg = _cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]) < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    # rotate so the smallest index leads, keeping orientation
    shift = np.argmin(tris, axis=1)
    idx = (shift[:, None] + np.arange(3)[None, :]) % 3
    tris = np.take_along_axis(tris, idx, axis=1)
    tris = tris[np.lexsort((tris[:, 2], tris[:, 1], tris[:, 0]))]
    return Mesh.from_arrays(nodes, tris, level, domain, supports)


def build_mesh(spec: DomainSpec, supports: Sequence = (), h: float | None = None,
               support_h: float | None = None) -> Mesh:
    """Generate a conforming mesh of `spec` whose edges contain all `supports`.

    Parameters
    ----------
    spec : DomainSpec
    supports : sequence of convex polygons (vertex arrays) strictly inside the domain
    h : target edge length away from supports (default ``min_side / 8``)
    support_h : edge length on and inside supports (default: at most ``h``
        and a quarter of the shortest support side)
    """
    poly = spec.vertices
    if h is None:
        h = spec.min_side / 8.0
    supports = [np.asarray(s, dtype=float) for s in supports]
    scale = spec.min_side
    for s in supports:
        if polygon_area(s) <= 0:
            raise MeshError("support polygons must be counterclockwise with positive area")
        if np.any(points_in_polygon(s, poly, tol=1e-12 * scale) <= 0):
            raise MeshError("support polygon is not strictly inside the domain")
    for i, s in enumerate(supports):
        for t in supports[i + 1:]:
            if (np.any(points_in_polygon(s, t) >= 0) or np.any(points_in_polygon(t, s) >= 0)
                    or _distance_to_segments(s, _polygon_segments(t)).min() <= 1e-12 * scale):
                raise MeshError("support polygons overlap or touch")

    chains = [_split_polygon(poly, h)]
    pts = [np.vstack([c[:-1] for c in chains[0]])]
    seg_all = [_polygon_segments(poly)]
    for s in supports:
        sides = np.linalg.norm(np.roll(s, -1, axis=0) - s, axis=1)
        hs = support_h if support_h is not None else min(h, sides.min() / 4.0)
        c = _split_polygon(s, hs)
        chains.append(c)
        pts.append(np.vstack([q[:-1] for q in c]))
        inner = _lattice(s.min(axis=0), s.max(axis=0), hs)
        inner = inner[points_in_polygon(inner, s) > 0]
        inner = inner[_distance_to_segments(inner, _polygon_segments(s)) >= 0.45 * hs]
        pts.append(inner)
        seg_all.append(_polygon_segments(s))

    lo = poly.min(axis=0)
    bulk = _lattice(lo, poly.max(axis=0), h)
    bulk = bulk[points_in_polygon(bulk, poly) > 0]
    bulk = bulk[_distance_to_segments(bulk, _polygon_segments(poly)) >= 0.45 * h]
    for s in supports:
        bulk = bulk[points_in_polygon(bulk, s) < 0]
    if supports:
        bulk = bulk[_distance_to_segments(bulk, np.concatenate(seg_all[1:])) >= 0.6 * h]
    pts.append(bulk)
    points = np.vstack(pts)

    # pts layout: domain chain, then (chain, interior lattice) per support, then bulk
    constraints = _remap_constraints(chains, pts)

    points, tris = _conforming_delaunay(points, constraints, scale)
    m = _canonical(points, tris, 0, spec, tuple(map(tuple, map(tuple, supports))))
    m.check()
    if abs(m.areas.sum() - spec.area) > 1e-12 * spec.area:
        raise MeshError("triangulation does not cover the domain")
    return m


def _remap_constraints(chains, pts):
    constraints = []
    offset = 0
    for ci, c in enumerate(chains):
        n_here = sum(len(q) - 1 for q in c)
        for k in range(n_here):
            constraints.append((offset + k, offset + (k + 1) % n_here))
        offset += n_here
        if ci > 0:
            offset += len(pts[2 * ci])
    return constraints


def _conforming_delaunay(points, constraints, scale, max_rounds=60):
    points = np.array(points, dtype=float)
    pending = list(constraints)
    for _ in range(max_rounds):
        tri = Delaunay(points)
        simp = tri.simplices.astype(np.int64)
        p = points[simp]
        area = 0.5 * _cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        simp = simp[np.abs(area) > 1e-14 * scale**2]
        e = np.concatenate([simp[:, [0, 1]], simp[:, [1, 2]], simp[:, [2, 0]]])
        e.sort(axis=1)
        present = set(map(tuple, e.tolist()))
        missing = [(a, b) for a, b in pending if (min(a, b), max(a, b)) not in present]
        if not missing:
            return points, simp
        new_pts = []
        keep = [s for s in pending if s not in set(missing)]
        n = len(points)
        for a, b in missing:
            mid = n + len(new_pts)
            new_pts.append(0.5 * (points[a] + points[b]))
            keep += [(a, mid), (mid, b)]
        points = np.vstack([points, new_pts])
        pending = keep
    raise MeshError("constraint recovery did not converge")


def refine(m: Mesh) -> Mesh:
    """Red refinement: split every triangle into four similar triangles.

    Existing nodes keep their indices; edge midpoints are appended in
    ``(x2, x1)`` lexicographic order.
    """
    tris = m.triangles
    edges = m.edges
    mids = 0.5 * (m.nodes[edges[:, 0]] + m.nodes[edges[:, 1]])
    order = np.lexsort((mids[:, 0], mids[:, 1]))
    mid_index = np.empty(len(edges), dtype=np.int64)
    mid_index[order] = m.n_nodes + np.arange(len(edges))
    nodes = np.vstack([m.nodes, mids[order]])

    key = edges[:, 0] * m.n_nodes + edges[:, 1]
    sorter = np.argsort(key)

    def mid(a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        pos = sorter[np.searchsorted(key, lo * m.n_nodes + hi, sorter=sorter)]
        return mid_index[pos]

    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
    children = np.stack([
        np.column_stack([a, ab, ca]),
        np.column_stack([ab, b, bc]),
        np.column_stack([ca, bc, c]),
        np.column_stack([ab, bc, ca]),
    ], axis=1).reshape(-1, 3)
    out = Mesh.from_arrays(nodes, children, m.refine_level + 1, m.domain, m.supports)
    return out


def refine_n(m: Mesh, n: int) -> Mesh:
    for _ in range(n):
        m = refine(m)
    return m

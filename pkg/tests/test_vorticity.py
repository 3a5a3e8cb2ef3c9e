import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from vortctl.fem import QUADRATURE, FEMSpace
from vortctl.mesh import refine
from vortctl.vorticity import Vorticity


@pytest.fixture(scope="module")
def vort(square_space):
    return Vorticity(square_space)


def quadrature_convection(mesh, u, w):
    """Brute-force ``1/2[(u.grad w, phi_i) - (u.grad phi_i, w)]`` with the 7-point rule."""
    lam, wq = QUADRATURE[5]
    out = np.zeros(mesh.n_nodes)
    for k, tri in enumerate(mesh.triangles):
        g = mesh.gradients[k]                      # (3, 2) hat gradients
        grad_w = g.T @ w[tri]
        w_q = lam @ w[tri]                         # w at quadrature points
        for a in range(3):
            phi_q = lam[:, a]
            first = np.sum(wq * (u[k] @ grad_w) * phi_q)
            second = np.sum(wq * (u[k] @ g[a]) * w_q)
            out[tri[a]] += 0.5 * mesh.areas[k] * (first - second)
    return out


class TestStreamFunction:
    def test_zero(self, vort, square_space):
        assert np.all(vort.stream_function(np.zeros(square_space.mesh.n_nodes)) == 0)

    def test_eigenfunction(self, vort, square_space):
        mesh = square_space.mesh
        I = mesh.interior_nodes
        vals, vecs = spla.eigsh(square_space.K[I][:, I].tocsc(), k=1, M=square_space.M[I][:, I].tocsc(), sigma=0)
        w = np.zeros(mesh.n_nodes)
        w[I] = vecs[:, 0]
        psi = vort.stream_function(w)
        np.testing.assert_allclose(psi, w / vals[0], atol=1e-10 * np.abs(w).max())

    def test_linearity(self, vort, square_space, rng):
        n = square_space.mesh.n_nodes
        w1, w2 = rng.standard_normal(n), rng.standard_normal(n)
        lhs = vort.stream_function(2.0 * w1 - 3.0 * w2)
        rhs = 2.0 * vort.stream_function(w1) - 3.0 * vort.stream_function(w2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.abs(rhs).max())

    def test_boundary_zero(self, vort, square_space, rng):
        psi = vort.stream_function(rng.standard_normal(square_space.mesh.n_nodes))
        assert np.all(psi[square_space.mesh.boundary_nodes] == 0)

    def test_wrong_length(self, vort):
        with pytest.raises(ValueError):
            vort.stream_function(np.ones(3))


class TestVelocity:
    def test_zero(self, vort, square_space):
        assert np.all(vort.velocity(np.zeros(square_space.mesh.n_nodes)) == 0)

    def test_curl_of_interpolant(self, vort, square_space):
        mesh = square_space.mesh
        psi = mesh.interpolate(lambda x, y: x * y)
        u = vort.velocity_of_stream(psi)
        # per-triangle gradient of the P1 interpolant, computed from vertex coordinates directly
        for k, tri in enumerate(mesh.triangles):
            p = mesh.nodes[tri]
            A = np.column_stack([p[1] - p[0], p[2] - p[0]]).T
            grad = np.linalg.solve(A, psi[tri[1:]] - psi[tri[0]])
            np.testing.assert_allclose(u[k], [-grad[1], grad[0]], atol=1e-13)

    def test_divergence_free_flux(self, vort, square_space, rng):
        # constant curl velocity: the flux through each triangle's boundary vanishes
        mesh = square_space.mesh
        u = vort.velocity(rng.standard_normal(mesh.n_nodes))
        p = mesh.nodes[mesh.triangles]
        flux = np.zeros(mesh.n_triangles)
        for a, b in ((0, 1), (1, 2), (2, 0)):
            e = p[:, b] - p[:, a]
            normal = np.column_stack([e[:, 1], -e[:, 0]])
            flux += np.einsum("td,td->t", u, normal)
        assert np.abs(flux).max() < 1e-12 * np.abs(u).max()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_energy_identity(self, seed):
        space = _space()
        w = np.random.default_rng(seed).standard_normal(space.mesh.n_nodes)
        v = Vorticity(space)
        ke = v.kinetic_energy(w)
        pair = w @ (space.M @ v.stream_function(w))
        assert ke == pytest.approx(pair, rel=1e-10)


_SPACE = {}


def _space():
    if "s" not in _SPACE:
        from vortctl.mesh import DomainSpec, build_mesh
        _SPACE["s"] = FEMSpace(build_mesh(DomainSpec.triangle((0, 0), (1, 0), (1 / 3, 2 / 3))))
    return _SPACE["s"]


class TestConvection:
    def test_zero(self, vort, square_space):
        assert np.all(vort.convection(np.zeros(square_space.mesh.n_nodes)) == 0)

    def test_constant_field_against_quadrature(self, vort, square_space):
        mesh = square_space.mesh
        w = 1.7 * np.ones(mesh.n_nodes)
        u = vort.velocity(w)
        oracle = quadrature_convection(mesh, u, w)
        # grad w = 0 leaves -1/2 (u . grad phi_i, c); both sides are round-off sized
        scale = 1.7 * np.abs(u).max() * mesh.areas.max()
        assert np.abs(u).max() > 0.01
        np.testing.assert_allclose(vort.convection(w), oracle, atol=1e-13 * scale)

    def test_general_field_against_quadrature(self, vort, square_space, rng):
        mesh = square_space.mesh
        w = rng.standard_normal(mesh.n_nodes)
        u = vort.velocity(rng.standard_normal(mesh.n_nodes))
        np.testing.assert_allclose(vort.trilinear(u, w), quadrature_convection(mesh, u, w), atol=1e-13)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
    def test_skew_symmetry(self, seed, scale):
        space = _space()
        v = Vorticity(space)
        w = scale * np.random.default_rng(seed).standard_normal(space.mesh.n_nodes)
        assert abs(w @ v.convection(w)) <= 1e-12 * space.seminorm_v(w) ** 2

    def test_skew_in_test_and_transported_fields(self, vort, square_space, rng):
        n = square_space.mesh.n_nodes
        u = vort.velocity(rng.standard_normal(n))
        a, b = rng.standard_normal(n), rng.standard_normal(n)
        assert b @ vort.trilinear(u, a) == pytest.approx(-(a @ vort.trilinear(u, b)), rel=1e-11)


class TestLinearization:
    def test_zero_direction(self, vort, square_space, rng):
        w = rng.standard_normal(square_space.mesh.n_nodes)
        assert np.all(vort.linearized_convection(w, np.zeros_like(w)) == 0)

    def test_zero_base(self, vort, square_space, rng):
        z = rng.standard_normal(square_space.mesh.n_nodes)
        assert np.all(vort.linearized_convection(np.zeros_like(z), z) == 0)

    def test_finite_difference_order(self, vort, square_space, rng):
        n = square_space.mesh.n_nodes
        w, z = rng.standard_normal(n), rng.standard_normal(n)
        lin = vort.linearized_convection(w, z)
        errs = []
        for eps in (1e-2, 1e-3, 1e-4):
            fd = vort.convection(w + eps * z) - vort.convection(w)
            errs.append(np.linalg.norm(fd - eps * lin))
        # the remainder is exactly quadratic: eps^2 C(z)
        rates = np.log10(np.array(errs[:-1]) / np.array(errs[1:]))
        np.testing.assert_allclose(rates, 2.0, atol=0.05)
        np.testing.assert_allclose(errs[0], 1e-4 * np.linalg.norm(vort.convection(z)), rtol=1e-6)

    def test_refined_mesh(self, square_mesh):
        # the operators are built per mesh; a refined mesh gives consistent shapes
        v = Vorticity(FEMSpace(refine(square_mesh)))
        w = np.ones(v.mesh.n_nodes)
        assert v.convection(w).shape == (v.mesh.n_nodes,)

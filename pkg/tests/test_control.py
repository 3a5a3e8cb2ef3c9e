import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from vortctl.actuators import build_rectangle_family
from vortctl.control import (FeedbackOperator, ObliqueProjector, ProjectionError, feedback_apply, make_projector,
                             monotonicity_certificate, xi_estimate)
from vortctl.fem import FEMSpace


@pytest.fixture(scope="module")
def ops(families):
    return {key: FeedbackOperator(fam, FEMSpace(fam.mesh), 1.0) for key, fam in families.items()}


def m_orthogonal_to(space, G, z):
    """Remove from `z` its H-components along span `G` (orthogonal projection)."""
    MG = space.M @ G
    return z - G @ np.linalg.solve(G.T @ MG, MG.T @ z)


class TestObliqueProjector:
    def test_orthonormal_is_orthogonal_projection(self, square_space, rng):
        n = square_space.mesh.n_nodes
        F = rng.standard_normal((n, 3))
        # orthonormalise in the mass inner product
        L = np.linalg.cholesky(F.T @ (square_space.M @ F))
        F = F @ np.linalg.inv(L).T
        P = make_projector(F, F, square_space.M)
        c = rng.standard_normal(3)
        np.testing.assert_allclose(P(F @ c), F @ c, atol=1e-12)
        z = rng.standard_normal(n)
        r = P.complement(z)
        assert np.abs(F.T @ (square_space.M @ r)).max() < 1e-12 * np.linalg.norm(z)

    def test_kernel(self, square_space, rng):
        n = square_space.mesh.n_nodes
        F, G = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
        P = ObliqueProjector(F, G, square_space.M)
        z = m_orthogonal_to(square_space, G, rng.standard_normal(n))
        assert np.linalg.norm(P(z)) < 1e-12 * np.linalg.norm(z)

    def test_two_element_dense_oracle(self, square_space, rng):
        n = square_space.mesh.n_nodes
        F, G = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
        z = rng.standard_normal(n)
        M = square_space.M.toarray()
        # explicit 2x2 inverse
        (a, b), (c, d) = G.T @ M @ F
        inv = np.array([[d, -b], [-c, a]]) / (a * d - b * c)
        expected = F @ (inv @ (G.T @ M @ z))
        np.testing.assert_allclose(ObliqueProjector(F, G, square_space.M)(z), expected, rtol=1e-10, atol=1e-12)

    def test_singular_cross_gram(self, square_space, rng):
        n = square_space.mesh.n_nodes
        F = rng.standard_normal((n, 2))
        G = m_orthogonal_to(square_space, F, rng.standard_normal((n, 2)))
        with pytest.raises(ProjectionError, match="condition"):
            ObliqueProjector(F, G, square_space.M)

    def test_shape_mismatch(self, square_space):
        n = square_space.mesh.n_nodes
        with pytest.raises(ValueError):
            ObliqueProjector(np.ones((n, 2)), np.ones((n, 1)), square_space.M)


class TestProjectorSuite:
    @pytest.mark.parametrize("key", [("rectangle", 1), ("rectangle", 2), ("triangle", 1), ("triangle", 2)])
    def test_properties(self, ops, key, rng):
        op = ops[key]
        M = op.space.M
        V, Vt = op.family.V, op.family.Vt
        for P, F, G in ((op.P_act, V, Vt), (op.P_aux, Vt, V)):
            for _ in range(5):
                z = rng.standard_normal(V.shape[0])
                pz = P(z)
                np.testing.assert_allclose(P(pz), pz, rtol=0, atol=1e-10 * np.linalg.norm(pz))
                c = np.linalg.lstsq(F, pz, rcond=None)[0]
                np.testing.assert_allclose(F @ c, pz, atol=1e-10 * np.linalg.norm(pz))      # range
                q = P.complement(z)
                assert np.abs(G.T @ (M @ q)).max() <= 1e-10 * np.abs(G.T @ (M @ z)).max()    # annihilation
                np.testing.assert_allclose(pz + q, z, atol=1e-10 * np.linalg.norm(z))        # complementarity

    def test_adjoint_pair(self, ops, rng):
        # (P_act a, b)_H = (a, P_aux b)_H
        op = ops[("triangle", 2)]
        M = op.space.M
        a, b = rng.standard_normal((2, op.family.V.shape[0]))
        assert op.P_act(a) @ (M @ b) == pytest.approx(a @ (M @ op.P_aux(b)), rel=1e-10)


class TestFeedback:
    def test_output_in_actuator_span(self, ops, rng):
        op = ops[("rectangle", 2)]
        y = feedback_apply(op, rng.standard_normal(op.family.V.shape[0]))
        c = np.linalg.lstsq(op.family.V, y, rcond=None)[0]
        np.testing.assert_allclose(op.family.V @ c, y, atol=1e-12 * np.linalg.norm(y))

    def test_blind_to_unmeasured_components(self, ops, rng):
        op = ops[("triangle", 2)]
        n = op.family.V.shape[0]
        z = rng.standard_normal(n)
        zperp = m_orthogonal_to(op.space, op.family.V, rng.standard_normal(n))
        np.testing.assert_allclose(op.apply(z + zperp), op.apply(z), atol=1e-10 * np.linalg.norm(op.apply(z)))
        assert np.linalg.norm(op.apply(zperp)) < 1e-10 * np.linalg.norm(op.apply(z))

    def test_zero_gain(self, families, rng):
        fam = families[("rectangle", 1)]
        op = FeedbackOperator(fam, FEMSpace(fam.mesh), 0.0)
        assert np.all(op.apply(rng.standard_normal(fam.V.shape[0])) == 0)

    def test_negative_gain_rejected(self, families):
        fam = families[("rectangle", 1)]
        with pytest.raises(ValueError):
            FeedbackOperator(fam, FEMSpace(fam.mesh), -1.0)

    @pytest.mark.parametrize("key", [("rectangle", 1), ("triangle", 2)])
    def test_dense_composition_oracle(self, ops, key, rng):
        op = ops[key]
        M = op.space.M.toarray()
        K = op.space.K.toarray()
        V, Vt = op.family.V, op.family.Vt
        P_aux = Vt @ np.linalg.solve(V.T @ M @ Vt, V.T @ M)
        P_act = V @ np.linalg.solve(Vt.T @ M @ V, Vt.T @ M)
        Kfb = -3.0 * P_act @ np.linalg.solve(M, K) @ P_aux
        op3 = FeedbackOperator(op.family, op.space, 3.0)
        z = rng.standard_normal(V.shape[0])
        np.testing.assert_allclose(op3.apply(z), Kfb @ z, rtol=1e-9, atol=1e-9 * np.abs(Kfb @ z).max())

    def test_riesz_representative(self, ops, rng):
        op = ops[("rectangle", 1)]
        q = rng.standard_normal(op.family.V.shape[0])
        np.testing.assert_allclose(op.space.M @ op.riesz_stiffness(q), op.space.K @ q, atol=1e-9)

    def test_measurements_suffice(self, ops, rng):
        op = ops[("triangle", 2)]
        z = rng.standard_normal(op.family.V.shape[0])
        np.testing.assert_allclose(op.control_from_measurements(op.measure(z)), op.control(z), rtol=1e-12)


@pytest.fixture(scope="module")
def op_m3():
    fam = build_rectangle_family(1.0, 1.0, 0.3, 3)
    return FeedbackOperator(fam, FEMSpace(fam.mesh), 1.0)


class TestMonotonicity:
    def test_zero(self, ops):
        op = ops[("rectangle", 1)]
        assert monotonicity_certificate(op, np.zeros(op.family.V.shape[0])) == (0.0, 0.0)

    def test_first_actuator(self, ops):
        op = ops[("rectangle", 1)]
        lhs, rhs = monotonicity_certificate(op, op.family.V[:, 0])
        assert lhs == pytest.approx(rhs, rel=1e-9)
        assert rhs < 0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_random_span_elements(self, op_m3, seed):
        fam = op_m3.family
        op = op_m3
        p = fam.V @ np.random.default_rng(seed).standard_normal(fam.M_sigma)
        lhs, rhs = monotonicity_certificate(op, p)
        assert lhs <= 0
        assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_gain_normalised(self, families, rng):
        fam = families[("rectangle", 2)]
        space = FEMSpace(fam.mesh)
        p = fam.V @ rng.standard_normal(4)
        a = monotonicity_certificate(FeedbackOperator(fam, space, 7.0), p)
        b = monotonicity_certificate(FeedbackOperator(fam, space, 1.0), p)
        assert a == b

    def test_corrupted_gram_breaks_identity(self, families, rng):
        fam = families[("rectangle", 2)]
        space = FEMSpace(fam.mesh)
        G = fam.V.T @ (space.M @ fam.Vt)
        bad = FeedbackOperator(fam, space, 1.0, cross_gram=G * np.array([1.0, 1.1, 1.2, 1.3])[:, None])
        p = fam.V @ rng.standard_normal(4)
        lhs, rhs = monotonicity_certificate(bad, p)
        assert abs(lhs - rhs) > 1e-3 * abs(rhs)


@pytest.fixture(scope="module")
def spaces():
    out = {}
    for M in (1, 2):
        fam = build_rectangle_family(1.0, 1.0, 0.3, M)
        out[M] = (fam, FEMSpace(fam.mesh))
    return out


class TestXi:
    def test_no_constraints_is_dirichlet_eigenvalue(self, square_space):
        mesh = square_space.mesh
        xi = xi_estimate(np.zeros((mesh.n_nodes, 0)), square_space.K, square_space.M, mesh.interior_nodes)
        I = mesh.interior_nodes
        dense = sla.eigh(square_space.K[I][:, I].toarray(), square_space.M[I][:, I].toarray(), eigvals_only=True)[0]
        assert xi == pytest.approx(dense, rel=1e-10)
        assert xi == pytest.approx(2 * np.pi**2, rel=0.05)

    @pytest.mark.parametrize("M", [1, 2])
    def test_shift_invert_matches_dense(self, spaces, M):
        fam, space = spaces[M]
        args = (fam.V, space.K, space.M, fam.mesh.interior_nodes)
        assert xi_estimate(*args) == pytest.approx(xi_estimate(*args, method="dense"), rel=1e-8)

    def test_constraints_raise_infimum(self, spaces):
        fam, space = spaces[1]
        I = fam.mesh.interior_nodes
        xi0 = xi_estimate(np.zeros((fam.mesh.n_nodes, 0)), space.K, space.M, I)
        assert xi_estimate(fam.V, space.K, space.M, I) >= xi0

    def test_increasing_in_M(self, spaces):
        xi = [xi_estimate(f.V, s.K, s.M, f.mesh.interior_nodes) for f, s in (spaces[1], spaces[2])]
        assert xi[1] > xi[0]

    def test_minimiser_satisfies_constraints(self, spaces):
        # the dense path's minimiser is orthogonal to every actuator field
        fam, space = spaces[2]
        I = fam.mesh.interior_nodes
        K = space.K[I][:, I].toarray()
        Mi = space.M[I][:, I].toarray()
        C = (space.M @ fam.V)[I]
        Z = sla.null_space(C.T)
        vals, vecs = sla.eigh(Z.T @ K @ Z, Z.T @ Mi @ Z)
        t = Z @ vecs[:, 0]
        assert np.abs(C.T @ t).max() < 1e-12
        assert (t @ K @ t) / (t @ Mi @ t) == pytest.approx(vals[0], rel=1e-10)

    def test_rank_deficient(self, spaces):
        fam, space = spaces[1]
        V = np.column_stack([fam.V[:, 0], fam.V[:, 0]])
        with pytest.raises(ProjectionError):
            xi_estimate(V, space.K, space.M, fam.mesh.interior_nodes)

    def test_unknown_method(self, spaces):
        fam, space = spaces[1]
        with pytest.raises(ValueError):
            xi_estimate(fam.V, space.K, space.M, fam.mesh.interior_nodes, method="power")

    def test_centred_actuator_leaves_odd_mode_free(self):
        # one centred actuator is orthogonal to the x1-odd mode sin(2 pi x1) sin(pi x2), so xi(1) -> 5 pi^2;
        # four small r = 0.3 squares do not pin the constrained minimiser as well, and xi(2) drops below it
        xi = {}
        for M in (1, 2):
            fam = build_rectangle_family(1.0, 1.0, 0.3, M, level=2)
            space = FEMSpace(fam.mesh)
            xi[M] = xi_estimate(fam.V, space.K, space.M, fam.mesh.interior_nodes)
        assert xi[1] == pytest.approx(5 * np.pi**2, rel=0.01)
        assert xi[2] < xi[1]

import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tucker_rtr import (RankDeficiencyError, TangentVector, TuckerTensor,
                        curvature_term, hessian_exact, hessian_fd, hessian_gauss_newton, hosvd,
                        manifold_dimension, project_to_tangent, random_tucker, retract,
                        riemannian_gradient, sample_project, tangent_to_ambient,
                        vector_transport, weingarten_dproj)
from tucker_rtr.solver import cost

from helpers import random_instance, random_samples
from oracles import matrix_dproj, matrix_hessian, project_dense, tangent_projector, tucker_einsum


def random_tangent(X, rng):
    return project_to_tangent(X, rng.standard_normal(X.dims))


def unit_tangent(X, rng):
    xi = random_tangent(X, rng)
    return xi / xi.norm()


def amb(xi):
    return tangent_to_ambient(xi)


def full_samples(A):
    return sample_project(A, np.stack(np.unravel_index(np.arange(A.size), A.shape), axis=1))


def fitted_slope(hs, errs):
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


def stationary_data(X, m, rng, scale=1.0):
    """Samples of a tensor A whose residual on Omega is orthogonal to T_X (so grad f(X) = 0)."""
    data = random_samples(X.dims, m, rng)
    P, _ = tangent_projector(X.core, X.factors)
    lin = np.ravel_multi_index(tuple(data.indices.T), X.dims)
    Q, sv, _ = np.linalg.svd(P[lin], full_matrices=False)
    Q = Q[:, sv > 1e-10 * sv[0]]
    z = rng.standard_normal(len(lin))
    e = z - Q @ (Q.T @ z)
    x = X.full()[tuple(data.indices.T)]
    return data.with_values(x - scale * e / np.linalg.norm(e))


class TestTangentVector:
    def test_ambient_zero_and_point(self, rng):
        X = random_tucker((4, 5, 6), (2, 2, 2), rng)
        assert np.abs(amb(TangentVector.zeros(X))).max() == 0
        xi = TangentVector(X, X.core, [np.zeros_like(U) for U in X.factors])
        assert np.abs(amb(xi) - X.full()).max() <= 1e-13

    def test_ambient_naive(self, rng):
        X = random_tucker((4, 5, 6), (2, 2, 2), rng)
        xi = random_tangent(X, rng)
        ref = tucker_einsum(xi.core_dot, X.factors)
        for i in range(3):
            fs = list(X.factors)
            fs[i] = xi.factor_dots[i]
            ref = ref + tucker_einsum(X.core, fs)
        assert np.abs(amb(xi) - ref).max() <= 1e-13

    def test_gauge_enforced(self, rng):
        X = random_tucker((4, 5, 6), (2, 2, 2), rng)
        with pytest.raises(ValueError):
            TangentVector(X, X.core, [U.copy() for U in X.factors])
        xi = TangentVector.from_parameters(X, X.core, [rng.standard_normal(U.shape) for U in X.factors])
        assert xi.gauge_error() <= 1e-13

    def test_algebra_and_metric(self, rng):
        X = random_tucker((4, 5, 3), (2, 2, 2), rng)
        a, b = random_tangent(X, rng), random_tangent(X, rng)
        assert a.inner(b) == pytest.approx(np.vdot(amb(a), amb(b)), rel=1e-12)
        assert (a + b).norm() == pytest.approx(np.linalg.norm(amb(a) + amb(b)), rel=1e-12)
        assert np.abs(amb(a.axpy(2.0, b)) - amb(a) - 2 * amb(b)).max() <= 1e-13
        assert np.abs(amb(-a / 2 - a * 0.5 + a)).max() <= 1e-13
        Y = random_tucker((4, 5, 3), (2, 2, 2), rng)
        with pytest.raises(ValueError):
            a + random_tangent(Y, rng)

    def test_as_tucker(self, rng):
        X = random_tucker((4, 5, 3), (2, 2, 2), rng)
        xi = random_tangent(X, rng)
        S, W = xi.as_tucker()
        assert S.shape == (4, 4, 4)
        assert np.abs(tucker_einsum(S, W) - amb(xi)).max() <= 1e-12


class TestProjection:
    def test_matches_dense_projector(self, rng):
        X = random_tucker((4, 3, 5), (2, 2, 2), rng)
        P, rank = tangent_projector(X.core, X.factors)
        assert rank == manifold_dimension(X.dims, X.ranks)
        for _ in range(5):
            Z = rng.standard_normal(X.dims)
            assert np.abs(amb(project_to_tangent(X, Z)) - (P @ Z.ravel()).reshape(Z.shape)).max() <= 1e-10

    def test_fixes_tangent_vectors(self, rng):
        X = random_tucker((4, 5, 3), (2, 2, 2), rng)
        xi = random_tangent(X, rng)
        eta = project_to_tangent(X, amb(xi))
        assert np.abs(eta.core_dot - xi.core_dot).max() <= 1e-11
        assert max(np.abs(a - b).max() for a, b in zip(eta.factor_dots, xi.factor_dots)) <= 1e-11

    def test_point_itself(self, rng):
        X = random_tucker((4, 5, 3), (2, 2, 2), rng)
        xi = project_to_tangent(X, X.full())
        assert np.abs(xi.core_dot - X.core).max() <= 1e-12
        assert max(np.abs(U).max() for U in xi.factor_dots) <= 1e-12

    @given(st.integers(0, 2 ** 32 - 1))
    def test_idempotent_selfadjoint_gauged(self, seed):
        rng = np.random.default_rng(seed)
        X = random_tucker((4, 5, 3), (2, 3, 2), rng, distribution="normal")
        Z, W = rng.standard_normal(X.dims), rng.standard_normal(X.dims)
        PZ = project_to_tangent(X, Z)
        assert PZ.gauge_error() <= 1e-11
        assert np.abs(amb(project_to_tangent(X, amb(PZ))) - amb(PZ)).max() <= 1e-11
        lhs = np.vdot(amb(PZ), W)
        rhs = np.vdot(Z, amb(project_to_tangent(X, W)))
        assert abs(lhs - rhs) <= 1e-11 * max(1.0, abs(lhs))

    def test_sparse_equals_dense(self, rng):
        X, data = random_instance((5, 4, 6), (2, 2, 3), 40, rng)
        a = project_to_tangent(X, data)
        b = project_to_tangent(X, data.to_dense())
        assert np.abs(amb(a) - amb(b)).max() <= 1e-13

    def test_tucker_and_tangent_inputs(self, rng):
        X = random_tucker((4, 5, 3), (2, 2, 2), rng)
        Y = random_tucker((4, 5, 3), (2, 3, 2), rng)
        assert np.abs(amb(project_to_tangent(X, Y)) - amb(project_to_tangent(X, Y.full()))).max() <= 1e-13
        xi = random_tangent(Y, rng)
        assert np.abs(amb(project_to_tangent(X, xi)) - amb(project_to_tangent(X, amb(xi)))).max() <= 1e-13

    def test_off_manifold_anchor(self, rng):
        core = np.zeros((2, 2, 2))
        core[0, 0, 0] = 1
        X = TuckerTensor(core, [np.linalg.qr(rng.standard_normal((4, 2)))[0] for _ in range(3)])
        with pytest.raises(RankDeficiencyError):
            project_to_tangent(X, rng.standard_normal((4, 4, 4)))


class TestGradient:
    def test_zero_residual(self, rng):
        X = random_tucker((4, 4, 4), (2, 2, 2), rng)
        data = random_samples(X.dims, 20, rng, values=X.full())
        assert riemannian_gradient(X, data).norm() <= 1e-13
        assert riemannian_gradient(X, full_samples(X.full())).norm() <= 1e-13

    def test_dense_oracle(self, rng):
        X, data = random_instance((4, 4, 4), (2, 2, 2), 20, rng)
        R = data.with_values(X.full()[tuple(data.indices.T)] - data.values).to_dense()
        ref = project_dense(X.core, X.factors, R)
        assert np.abs(amb(riemannian_gradient(X, data)) - ref).max() <= 1e-11

    def test_regularized(self, rng):
        X, data = random_instance((4, 4, 4), (2, 2, 2), 30, rng)
        g0, g1 = riemannian_gradient(X, data), riemannian_gradient(X, data, mu=0.3)
        assert np.abs(amb(g1) - amb(g0) - 0.3 * X.full()).max() <= 1e-12

    def test_directional_derivative(self, rng):
        for _ in range(5):
            X, data = random_instance((5, 4, 6), (2, 2, 2), 60, rng)
            g = riemannian_gradient(X, data)
            xi = unit_tangent(X, rng)
            t = 1e-4
            fd = (cost(retract(X, xi * t), data) - cost(retract(X, xi * -t), data)) / (2 * t)
            assert abs(fd - g.inner(xi)) <= 1e-6 * max(abs(g.inner(xi)), 1e-3)


class TestRetraction:
    def test_zero_step(self, rng):
        X = random_tucker((4, 5, 3), (2, 2, 2), rng)
        assert np.abs(retract(X, TangentVector.zeros(X)).full() - X.full()).max() <= 1e-12

    def test_matches_dense_hosvd(self, rng):
        for _ in range(5):
            X = random_tucker((5, 4, 6), (2, 3, 2), rng, distribution="normal")
            xi = random_tangent(X, rng)
            Y = retract(X, xi)
            Z = hosvd(X.full() + amb(xi), X.ranks)
            assert np.abs(Y.full() - Z.full()).max() <= 1e-11
            assert Y.ranks == X.ranks

    def test_rigidity(self, rng):
        X = random_tucker((5, 4, 6), (2, 2, 2), rng, distribution="normal")
        xi = unit_tangent(X, rng) * X.norm()
        ts = 2.0 ** -np.arange(2, 10)
        errs = [np.linalg.norm(retract(X, xi * t).full() - X.full() - t * amb(xi)) for t in ts]
        assert fitted_slope(ts, errs) >= 1.9

    def test_rank_drop(self, rng):
        X = random_tucker((4, 4, 4), (2, 2, 2), rng)
        xi = TangentVector(X, -X.core, [np.zeros_like(U) for U in X.factors])
        with pytest.raises(RankDeficiencyError):
            retract(X, xi)


class TestTransport:
    def test_consistency(self, rng):
        X = random_tucker((4, 5, 3), (2, 2, 2), rng)
        xi = random_tangent(X, rng)
        assert np.abs(amb(vector_transport(xi, X)) - amb(xi)).max() <= 1e-11

    def test_linear_and_contractive(self, rng):
        X = random_tucker((4, 5, 3), (2, 2, 2), rng)
        Y = retract(X, random_tangent(X, rng) * 0.3)
        a, b = random_tangent(X, rng), random_tangent(X, rng)
        lhs = vector_transport(a * 2.0 + b * -3.0, Y)
        rhs = vector_transport(a, Y) * 2.0 + vector_transport(b, Y) * -3.0
        assert np.abs(amb(lhs) - amb(rhs)).max() <= 1e-11
        assert vector_transport(a, Y).point is Y
        assert vector_transport(a, Y).norm() <= a.norm() * (1 + 1e-12)


class TestWeingarten:
    def test_zero_direction(self, rng):
        X = random_tucker((4, 5, 3), (2, 2, 2), rng)
        out = weingarten_dproj(X, TangentVector.zeros(X), rng.standard_normal(X.dims))
        assert np.abs(out).max() == 0

    def test_finite_difference_order(self, rng):
        X = random_tucker((4, 5, 3), (2, 2, 2), rng, distribution="normal")
        xi = unit_tangent(X, rng)
        E = rng.standard_normal(X.dims)
        D = weingarten_dproj(X, xi, E)
        PE = amb(project_to_tangent(X, E))
        hs = 10.0 ** -np.arange(2, 6)
        errs = [np.linalg.norm((amb(project_to_tangent(retract(X, xi * h), E)) - PE) / h - D)
                for h in hs]
        assert fitted_slope(hs, errs) >= 0.9

    def test_matrix_case(self, rng):
        U = np.linalg.qr(rng.standard_normal((5, 2)))[0]
        V = np.linalg.qr(rng.standard_normal((4, 2)))[0]
        X = TuckerTensor(rng.standard_normal((2, 2)), [U, V])
        xi = random_tangent(X, rng)
        E = rng.standard_normal((5, 4))
        ref = matrix_dproj(X.full(), U, V, amb(xi), E)
        assert np.abs(weingarten_dproj(X, xi, E) - ref).max() <= 1e-9


class TestCurvature:
    def test_tangent_input(self, rng):
        X = random_tucker((4, 4, 4), (2, 2, 2), rng)
        xi = random_tangent(X, rng)
        out = curvature_term(X, xi, amb(random_tangent(X, rng)))
        assert out.norm() <= 1e-11

    def test_zero_input(self, rng):
        X = random_tucker((4, 4, 4), (2, 2, 2), rng)
        assert curvature_term(X, random_tangent(X, rng), np.zeros(X.dims)).norm() == 0

    def test_dense_composition(self, rng):
        X = random_tucker((4, 4, 4), (2, 2, 2), rng, distribution="normal")
        xi = random_tangent(X, rng)
        E = rng.standard_normal(X.dims)
        E_perp = E - amb(project_to_tangent(X, E))
        ref = amb(project_to_tangent(X, weingarten_dproj(X, xi, E_perp)))
        assert np.abs(amb(curvature_term(X, xi, E)) - ref).max() <= 1e-10

    def test_sparse_equals_dense(self, rng):
        X, data = random_instance((5, 4, 6), (2, 2, 2), 50, rng)
        xi = random_tangent(X, rng)
        a = curvature_term(X, xi, data)
        b = curvature_term(X, xi, data.to_dense())
        assert np.abs(amb(a) - amb(b)).max() <= 1e-12


class TestHessian:
    def test_zero_residual_collapse(self, rng):
        X = random_tucker((5, 4, 6), (2, 2, 2), rng)
        data = random_samples(X.dims, 60, rng, values=X.full())
        xi = random_tangent(X, rng)
        diff = hessian_exact(X, data, xi) - hessian_gauss_newton(X, data, xi)
        assert diff.norm() <= 1e-12

    def test_symmetry(self, rng):
        X, data = random_instance((5, 4, 6), (2, 2, 2), 60, rng)
        for _ in range(5):
            a, b = random_tangent(X, rng), random_tangent(X, rng)
            lhs = hessian_exact(X, data, a).inner(b)
            rhs = a.inner(hessian_exact(X, data, b))
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_matrix_formula(self, rng):
        n1, n2, r = 8, 7, 3
        U = np.linalg.qr(rng.standard_normal((n1, r)))[0]
        V = np.linalg.qr(rng.standard_normal((n2, r)))[0]
        S = np.diag([3.0, 2.0, 0.5])
        X = TuckerTensor(S, [U, V])
        A = rng.standard_normal((n1, n2))
        data = random_samples((n1, n2), 30, rng, values=A)
        mask = (data.to_dense(fill=np.nan) == data.to_dense(fill=np.nan)).astype(float)
        xi = random_tangent(X, rng)
        ref = matrix_hessian(U, S, V, mask, A, xi.core_dot,
                             xi.factor_dots[0] @ S, xi.factor_dots[1] @ S.T)
        assert np.abs(amb(hessian_exact(X, data, xi)) - ref).max() <= 1e-10

    def test_gauss_newton_properties(self, rng):
        X = random_tucker((4, 3, 5), (2, 2, 2), rng)
        xi = random_tangent(X, rng)
        full = full_samples(rng.standard_normal(X.dims))
        assert hessian_gauss_newton(X, full, xi).inner(xi) == pytest.approx(xi.inner(xi), rel=1e-12)
        data = random_samples(X.dims, 25, rng)
        for _ in range(5):
            eta = random_tangent(X, rng)
            q = hessian_gauss_newton(X, data, eta).inner(eta)
            assert q >= -1e-12
            mask = data.with_values(np.ones(len(data))).to_dense()
            assert abs(q - np.vdot(mask * amb(eta), amb(eta))) <= 1e-12 * max(1.0, q)

    def test_fd_zero_direction(self, rng):
        X, data = random_instance((4, 4, 4), (2, 2, 2), 30, rng)
        assert hessian_fd(X, data, TangentVector.zeros(X)).norm() == 0

    def test_fd_matches_exact(self, rng):
        X = random_tucker((5, 4, 6), (2, 2, 2), rng)
        data = stationary_data(X, 80, rng, scale=0.1)
        xi = unit_tangent(X, rng)
        H = hessian_exact(X, data, xi)
        hs = 10.0 ** -np.arange(3, 7)
        errs = [(hessian_fd(X, data, xi, h=h) - H).norm() for h in hs]
        assert fitted_slope(hs, errs) >= 0.9

    def test_fd_full_sampling_identity(self, rng):
        X = random_tucker((4, 3, 5), (2, 2, 2), rng)
        data = full_samples(X.full())
        xi = unit_tangent(X, rng)
        for h in (1e-3, 1e-5):
            err = (hessian_fd(X, data, xi, h=h) - xi).norm()
            assert err <= 10 * h

    def test_second_derivative_at_critical_point(self, rng):
        X = random_tucker((5, 4, 6), (2, 2, 2), rng, distribution="normal")
        data = stationary_data(X, 90, rng)
        assert riemannian_gradient(X, data).norm() <= 1e-10
        for _ in range(5):
            xi = unit_tangent(X, rng)
            t = 1e-3
            f0 = cost(X, data)
            second = (cost(retract(X, xi * t), data) - 2 * f0 + cost(retract(X, xi * -t), data)) / t ** 2
            q = hessian_exact(X, data, xi).inner(xi)
            assert abs(second - q) <= 1e-4 * max(abs(q), 1e-2)

    def test_apply_time_linear_in_samples(self):
        rng = np.random.default_rng(0)
        dims, ranks = (60, 60, 60), (4, 4, 4)
        X = random_tucker(dims, ranks, rng)
        timings = []
        for m in (40000, 80000):
            data = random_samples(dims, m, rng)
            xi = random_tangent(X, rng)
            hessian_exact(X, data, xi)
            best = np.inf
            for _ in range(5):
                t = time.perf_counter()
                hessian_exact(X, data, xi)
                best = min(best, time.perf_counter() - t)
            timings.append(best)
        assert 1.5 <= timings[1] / timings[0] <= 3.0

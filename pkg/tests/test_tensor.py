import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tucker_rtr import (SampledTensor, inner, matricize, mode_product, multilinear_rank, norm,
                        sample_project, tensorize)
from tucker_rtr.tensor import multi_mode_product

from oracles import unfold

# 2x2x2 tensor with unit entries at (1,1,1) and (2,2,1) (1-based)
EXAMPLE = np.zeros((2, 2, 2))
EXAMPLE[0, 0, 0] = EXAMPLE[1, 1, 0] = 1.0


def shapes(min_dims=2, max_dims=4, max_side=4):
    return st.lists(st.integers(1, max_side), min_size=min_dims, max_size=max_dims).map(tuple)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


class TestMatricize:
    def test_example_unfoldings(self):
        np.testing.assert_array_equal(matricize(EXAMPLE, 0), [[1, 0, 0, 0], [0, 1, 0, 0]])
        np.testing.assert_array_equal(matricize(EXAMPLE, 1), matricize(EXAMPLE, 0))
        np.testing.assert_array_equal(matricize(EXAMPLE, 2), [[1, 0, 0, 1], [0, 0, 0, 0]])

    def test_example_tensorize(self):
        A3 = np.array([[1.0, 0, 0, 1], [0, 0, 0, 0]])
        np.testing.assert_array_equal(tensorize(A3, 2, (2, 2, 2)), EXAMPLE)

    def test_matrix_case(self, rng):
        A = rng.standard_normal((3, 5))
        np.testing.assert_array_equal(matricize(A, 0), A)
        np.testing.assert_array_equal(matricize(A, 1), A.T)

    def test_scalar_tensor(self):
        np.testing.assert_array_equal(tensorize(np.array([[2.5]]), 0, (1, 1)), [[2.5]])

    def test_matches_oracle(self, rng):
        A = rng.standard_normal((3, 4, 2, 5))
        for i in range(4):
            np.testing.assert_array_equal(matricize(A, i), unfold(A, i))

    @given(st.data())
    def test_round_trip(self, data):
        dims = data.draw(shapes())
        A = data.draw(arrays(np.float64, dims, elements=finite))
        for i in range(len(dims)):
            np.testing.assert_array_equal(tensorize(matricize(A, i), i, dims), A)

    def test_errors(self, rng):
        A = rng.standard_normal((2, 3, 4))
        with pytest.raises(ValueError):
            matricize(A, 3)
        with pytest.raises(ValueError):
            matricize(A, -1)
        with pytest.raises(ValueError):
            tensorize(np.zeros((3, 8)), 1, (2, 3, 5))


class TestModeProduct:
    def test_identity(self, rng):
        A = rng.standard_normal((3, 4, 5))
        np.testing.assert_array_equal(mode_product(A, np.eye(4), 1), A)

    @given(st.data())
    def test_matricization_identity(self, data):
        dims = data.draw(shapes(max_dims=4))
        i = data.draw(st.integers(0, len(dims) - 1))
        m = data.draw(st.integers(1, 4))
        rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 32 - 1)))
        A = rng.uniform(-1, 1, dims)
        M = rng.uniform(-1, 1, (m, dims[i]))
        B = mode_product(A, M, i)
        assert B.shape == dims[:i] + (m,) + dims[i + 1:]
        assert np.abs(matricize(B, i) - M @ matricize(A, i)).max(initial=0) <= 1e-13

    def test_distinct_modes_commute(self, rng):
        A = rng.standard_normal((3, 4, 5))
        M, N = rng.standard_normal((2, 3)), rng.standard_normal((6, 4))
        lhs = mode_product(mode_product(A, M, 0), N, 1)
        rhs = mode_product(mode_product(A, N, 1), M, 0)
        assert np.abs(lhs - rhs).max() <= 1e-12

    def test_same_mode_composes(self, rng):
        A = rng.standard_normal((3, 4, 5))
        M, N = rng.standard_normal((6, 5)), rng.standard_normal((2, 6))
        lhs = mode_product(mode_product(A, M, 2), N, 2)
        assert np.abs(lhs - mode_product(A, N @ M, 2)).max() <= 1e-12

    def test_multi_mode_skip_and_transpose(self, rng):
        A = rng.standard_normal((3, 4, 5))
        Us = [rng.standard_normal((3, 2)), rng.standard_normal((4, 2)), rng.standard_normal((5, 2))]
        out = multi_mode_product(A, Us, skip=(1,), transpose=True)
        expected = np.einsum("ijk,ia,kc->ajc", A, Us[0], Us[2])
        np.testing.assert_allclose(out, expected, atol=1e-13)

    def test_mismatch(self, rng):
        with pytest.raises(ValueError):
            mode_product(rng.standard_normal((3, 4)), np.eye(3), 1)


class TestInner:
    def test_example_norm(self):
        assert inner(EXAMPLE, EXAMPLE) == 2.0
        assert norm(EXAMPLE) == pytest.approx(np.sqrt(2.0), rel=1e-15)

    def test_zero(self, rng):
        assert inner(rng.standard_normal((3, 3, 3)), np.zeros((3, 3, 3))) == 0.0

    def test_trace_forms(self, rng):
        A, B = rng.standard_normal((3, 3, 3)), rng.standard_normal((3, 3, 3))
        for i in range(3):
            assert abs(inner(A, B) - np.trace(matricize(A, i).T @ matricize(B, i))) <= 1e-13

    @given(st.data())
    def test_symmetric_bilinear_positive(self, data):
        dims = data.draw(shapes(max_dims=3))
        rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 32 - 1)))
        A, B, C = (rng.standard_normal(dims) for _ in range(3))
        a, b = rng.standard_normal(2)
        assert inner(A, B) == pytest.approx(inner(B, A), abs=1e-12)
        assert inner(a * A + b * C, B) == pytest.approx(a * inner(A, B) + b * inner(C, B), abs=1e-10)
        assert inner(A, A) > 0

    def test_dims_mismatch(self):
        with pytest.raises(ValueError):
            inner(np.zeros((2, 3)), np.zeros((3, 2)))


class TestMultilinearRank:
    def test_example(self):
        assert multilinear_rank(EXAMPLE) == (2, 2, 1)

    def test_zero(self):
        assert multilinear_rank(np.zeros((3, 4, 2))) == (0, 0, 0)

    def test_constructed(self, rng):
        core = rng.standard_normal((2, 2, 2))
        Us = [np.linalg.qr(rng.standard_normal((n, 2)))[0] for n in (6, 7, 8)]
        A = np.einsum("abc,ia,jb,kc->ijk", core, *Us)
        assert multilinear_rank(A) == (2, 2, 2)

    def test_tolerance_range(self):
        with pytest.raises(ValueError):
            multilinear_rank(EXAMPLE, rel_tol=1.5)


class TestSampling:
    def test_full_grid(self, rng):
        A = rng.standard_normal((2, 3, 2))
        idx = np.stack(np.unravel_index(np.arange(A.size), A.shape), axis=1)
        S = sample_project(A, idx)
        assert S.is_full()
        np.testing.assert_array_equal(S.values, A.ravel())
        np.testing.assert_array_equal(S.to_dense(), A)

    def test_example_entries(self):
        S = sample_project(EXAMPLE, [(1, 1, 0), (0, 0, 0)])
        np.testing.assert_array_equal(S.indices, [[0, 0, 0], [1, 1, 0]])
        np.testing.assert_array_equal(S.values, [1.0, 1.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sample_project(EXAMPLE, np.zeros((0, 3), dtype=int))

    def test_out_of_bounds(self):
        with pytest.raises((ValueError, IndexError)):
            sample_project(EXAMPLE, [(2, 0, 0)])

    def test_invariants(self):
        with pytest.raises(ValueError):
            SampledTensor((2, 2), np.array([[1, 0], [0, 1]]), np.ones(2))  # unsorted
        with pytest.raises(ValueError):
            SampledTensor((2, 2), np.array([[0, 1], [0, 1]]), np.ones(2))  # duplicate
        with pytest.raises(ValueError):
            SampledTensor.from_entries((2, 2), np.array([[0, 1], [0, 1]]), np.ones(2))

    def test_from_entries_sorts(self):
        S = SampledTensor.from_entries((2, 3), np.array([[1, 2], [0, 1]]), np.array([5.0, 7.0]))
        np.testing.assert_array_equal(S.indices, [[0, 1], [1, 2]])
        np.testing.assert_array_equal(S.values, [7.0, 5.0])

    def test_subset_and_equality(self, rng):
        A = rng.standard_normal((3, 3))
        S = sample_project(A, [(0, 0), (1, 2), (2, 1)])
        T = S.subset(np.array([True, False, True]))
        assert len(T) == 2 and T == sample_project(A, [(0, 0), (2, 1)])
        assert S != T

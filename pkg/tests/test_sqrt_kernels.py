import numpy as np
import pytest

from core.chi2 import chi2_quantile, wilson_hilferty
from core.errors import DimensionMismatch, NotPositiveDefinite, RankDeficient, SingularFactor
from core.flops import FlopCounter, householder_qr_flops, predicted_update_flops
from core.sqrt_kernels import (
    eig3_symmetric,
    enforce_upper,
    is_upper_triangular,
    permuted_qr_lower,
    precision_dtype,
    qr_triangularize,
    reverse_cholesky,
    solve_lower,
    solve_upper,
)


@pytest.mark.parametrize("mode, dtype", [("single", np.float32), ("double", np.float64)])
def test__precision_dtype(mode, dtype):
    assert precision_dtype(mode) == np.dtype(dtype)


def test__precision_dtype_unknown():
    with pytest.raises(ValueError):
        precision_dtype("half")


def test__enforce_upper():
    R = np.array([[-2.0, 1.0], [3.0, 4.0]])
    U = enforce_upper(R)
    np.testing.assert_array_equal(U, np.array([[2.0, -1.0], [0.0, 4.0]]))
    assert is_upper_triangular(U)


class Test_qr_triangularize:
    def test_stacked_identities(self):
        R = qr_triangularize(np.vstack([np.eye(2), np.eye(2)]))
        np.testing.assert_array_almost_equal(R, np.sqrt(2.0) * np.eye(2), decimal=14)

    def test_gram_preserved(self, rng):
        A = rng.standard_normal((12, 5))
        R = qr_triangularize(A)
        assert R.shape == (5, 5)
        assert is_upper_triangular(R)
        assert np.all(np.diag(R) >= 0.0)
        np.testing.assert_array_almost_equal(R.T @ R, A.T @ A, decimal=12)

    def test_too_few_rows(self):
        with pytest.raises(DimensionMismatch):
            qr_triangularize(np.ones((2, 3)))

    def test_flop_count(self, rng):
        counter = FlopCounter()
        qr_triangularize(rng.standard_normal((40, 10)), counter)
        assert counter.total == pytest.approx(householder_qr_flops(40, 10))

    def test_single_precision_kept(self, rng):
        R = qr_triangularize(rng.standard_normal((6, 3)).astype(np.float32))
        assert R.dtype == np.float32


class Test_reverse_cholesky:
    def test_scaled_identity(self):
        F = reverse_cholesky(2.0 * np.eye(3))
        np.testing.assert_array_almost_equal(F, np.sqrt(2.0) * np.eye(3), decimal=14)

    def test_random_spd(self, rng):
        A = rng.standard_normal((6, 6))
        C = A @ A.T + 6.0 * np.eye(6)
        F = reverse_cholesky(C)
        assert np.allclose(np.triu(F, 1), 0.0)
        np.testing.assert_array_almost_equal(F.T @ F, C, decimal=11)

    def test_indefinite(self):
        with pytest.raises(NotPositiveDefinite):
            reverse_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_pivot_below_tolerance(self):
        with pytest.raises(NotPositiveDefinite):
            reverse_cholesky(np.diag([1.0, 1e-30]), eps=1e-12)


class Test_permuted_qr_lower:
    def test_factorization(self, rng):
        H = rng.standard_normal((8, 3))
        Q1, Q2, J = permuted_qr_lower(H)
        assert Q1.shape == (8, 5)
        assert Q2.shape == (8, 3)
        np.testing.assert_array_almost_equal(Q1.T @ H, np.zeros((5, 3)), decimal=12)
        np.testing.assert_array_almost_equal(Q2.T @ H, J, decimal=12)
        assert np.allclose(np.triu(J, 1), 0.0)
        assert np.all(np.diag(J) > 0.0)
        Q = np.hstack([Q1, Q2])
        np.testing.assert_array_almost_equal(Q.T @ Q, np.eye(8), decimal=12)

    def test_leading_identity_nullspace(self):
        H = np.vstack([np.eye(3), np.zeros((3, 3))])
        Q1, _, _ = permuted_qr_lower(H)
        np.testing.assert_array_almost_equal(Q1 @ Q1.T, np.diag([0, 0, 0, 1, 1, 1.0]), decimal=14)

    def test_rank_deficient(self, rng):
        a = rng.standard_normal((2, 3))
        with pytest.raises(RankDeficient):
            permuted_qr_lower(np.vstack([a, a, a]))

    def test_too_few_rows(self):
        with pytest.raises(DimensionMismatch):
            permuted_qr_lower(np.ones((2, 3)))


class Test_triangular_solves:
    def test_solve_upper(self):
        x = solve_upper(np.array([[2.0, 1.0], [0.0, 1.0]]), np.array([3.0, 1.0]))
        np.testing.assert_array_almost_equal(x, [1.0, 1.0], decimal=15)

    def test_solve_upper_transposed(self, rng):
        U = np.triu(rng.standard_normal((4, 4))) + 4.0 * np.eye(4)
        b = rng.standard_normal(4)
        np.testing.assert_array_almost_equal(U.T @ solve_upper(U, b, trans=True), b, decimal=12)

    def test_solve_lower(self, rng):
        L = np.tril(rng.standard_normal((4, 4))) + 4.0 * np.eye(4)
        B = rng.standard_normal((4, 2))
        np.testing.assert_array_almost_equal(L @ solve_lower(L, B), B, decimal=12)

    def test_singular(self):
        with pytest.raises(SingularFactor):
            solve_upper(np.array([[1.0, 1.0], [0.0, 0.0]]), np.ones(2))


class Test_eig3_symmetric:
    def test_diagonal(self):
        values, vectors = eig3_symmetric(np.diag([0.0, 1.0, 2.0]))
        np.testing.assert_array_almost_equal(values, [0.0, 1.0, 2.0], decimal=14)
        np.testing.assert_array_almost_equal(vectors, np.eye(3), decimal=14)

    def test_random_symmetric(self, rng):
        A = rng.standard_normal((3, 3))
        M = A + A.T
        values, vectors = eig3_symmetric(M)
        assert np.all(np.diff(values) >= 0.0)
        np.testing.assert_array_almost_equal(M @ vectors, vectors * values, decimal=12)
        for j in range(3):
            col = vectors[:, j]
            assert col[np.argmax(np.abs(col))] > 0.0

    def test_wrong_shape(self):
        with pytest.raises(DimensionMismatch):
            eig3_symmetric(np.eye(4))


class Test_chi2:
    def test_two_dof(self):
        assert chi2_quantile(2, 0.95) == pytest.approx(5.991, abs=1e-3)

    def test_monotone_in_dof(self):
        values = [chi2_quantile(d, 0.95) for d in range(1, 40)]
        assert np.all(np.diff(values) > 0.0)

    def test_large_dof_matches_approximation(self):
        assert chi2_quantile(1000, 0.95) == pytest.approx(wilson_hilferty(1000, 0.95))
        assert chi2_quantile(1000, 0.95) == pytest.approx(1074.68, rel=1e-3)

    @pytest.mark.parametrize("dof, confidence", [(0, 0.95), (3, 0.0), (3, 1.0)])
    def test_invalid(self, dof, confidence):
        with pytest.raises(ValueError):
            chi2_quantile(dof, confidence)


@pytest.mark.parametrize("backend", ["llt", "pqr", "potter", "carlson", "kaminski"])
def test__predicted_flops_positive(backend):
    assert predicted_update_flops(backend, 20, 100) > 0.0


def test__predicted_flops_ratio_tall_measurement():
    n = 102
    ratio = predicted_update_flops("llt", 10 * n, n) / predicted_update_flops("pqr", 10 * n, n)
    assert 0.60 <= ratio <= 0.75


def test__predicted_flops_unknown_backend():
    with pytest.raises(ValueError):
        predicted_update_flops("cholesky", 10, 10)

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg  # noqa: F401
from hypothesis import given
from hypothesis import strategies as st

from aplicur.errors import ProblemTooLargeError, ShapeError
from aplicur.problemgen import (
    ProblemInstance,
    coherence,
    dense_matrix,
    make_problem,
    optimal_solution,
    rhs_consistent_b,
    rhs_consistent_x,
    sparse_matrix,
    spectrum,
)

seeds = st.integers(0, 2**31 - 1)


class TestSpectrum:
    def test_sharp_1e7(self):
        s = spectrum("sharp-1e7", 10)
        assert s[0] == 1e2 and s[1] == 1e-2
        assert s[2] == pytest.approx(10**-4.8, rel=1e-14) and s[9] == pytest.approx(1e-5)
        assert s[0] / s[-1] == pytest.approx(1e7)

    def test_sharp_1e15(self):
        s = spectrum("sharp-1e15", 10)
        assert s[2] == pytest.approx(1e-12) and s[9] == pytest.approx(1e-13)
        assert s[0] / s[-1] == pytest.approx(1e15)

    def test_smooth(self):
        n = 50
        s = spectrum("smooth-1e15", n)
        i = np.arange(1, n + 1)
        np.testing.assert_allclose(s, 10.0 ** (2 - 15 * np.sqrt((i - 1) / (n - 1))))
        assert s[0] == 100 and s[-1] == pytest.approx(1e-13)

    @given(st.sampled_from(["sharp-1e7", "sharp-1e15", "smooth-1e15"]), st.integers(5, 400))
    def test_invariants(self, profile, n):
        s = spectrum(profile, n)
        nominal = {"sharp-1e7": 1e7, "sharp-1e15": 1e15, "smooth-1e15": 1e15}[profile]
        assert s.shape == (n,) and np.all(s > 0) and np.all(np.diff(s) <= 0)
        assert abs(s[0] / s[-1] / nominal - 1) <= 0.01

    def test_invalid(self):
        with pytest.raises(ValueError):
            spectrum("sharp-1e7", 4)
        with pytest.raises(ValueError):
            spectrum("flat", 10)


class TestDense:
    def test_orthonormal_columns(self):
        A = dense_matrix(40, 10, np.ones(10), seed=0)
        np.testing.assert_allclose(A.T @ A, np.eye(10), atol=1e-10)

    def test_recovers_sigma(self):
        sig = spectrum("sharp-1e7", 60)
        A = dense_matrix(80, 60, sig, seed=1)
        s = np.linalg.svd(A, compute_uv=False)
        np.testing.assert_allclose(s, sig, rtol=1e-10, atol=1e-10 * sig[0])
        np.testing.assert_allclose(s[:12], sig[:12], rtol=1e-10)

    def test_coherence_levels(self):
        m, n = 200, 40
        sig = spectrum("sharp-1e7", n)
        coh = coherence(dense_matrix(m, n, sig, "coherent"))
        inc = coherence(dense_matrix(m, n, sig, "incoherent", seed=2))
        assert coh >= 0.9
        assert inc <= 5 * np.sqrt(n / m) * (1 + np.sqrt(np.log(m)))

    def test_deterministic(self):
        a = dense_matrix(20, 10, np.ones(10), seed=5)
        np.testing.assert_array_equal(a, dense_matrix(20, 10, np.ones(10), seed=5))

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            dense_matrix(5, 10, np.ones(10))
        with pytest.raises(ShapeError):
            dense_matrix(20, 10, np.ones(9))


class TestSparse:
    def test_column_norms_and_density(self):
        n = 200
        sig = np.ones(n)
        A = sparse_matrix(500, n, sig, f=0, density=0.02, seed=0)
        assert sp.issparse(A)
        norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=0)).ravel())
        np.testing.assert_allclose(norms, 1.0, rtol=1e-12)
        assert abs(A.nnz / (500 * n) / 0.02 - 1) <= 0.2

    def test_sigma_scaling(self):
        sig = np.linspace(3, 1, 30)
        A = sparse_matrix(100, 30, sig, seed=1, density=0.1)
        norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=0)).ravel())
        np.testing.assert_allclose(norms, sig, rtol=1e-12)

    def test_coherence_factor(self):
        sig = np.ones(40)
        lo = coherence(sparse_matrix(400, 40, sig, f=0, density=0.05, seed=3))
        hi = coherence(sparse_matrix(400, 40, sig, f=20, density=0.05, seed=3))
        assert hi > lo

    def test_invalid_density(self):
        with pytest.raises(ValueError):
            sparse_matrix(10, 5, np.ones(5), density=0.0)


class TestRhs:
    def test_consistent_x(self, rng):
        A = rng.standard_normal((100, 60))
        b, x, e = rhs_consistent_x(A, 0.3, seed=1)
        assert np.linalg.norm(e) == pytest.approx(0.3, rel=1e-14)
        assert np.linalg.norm(A.T @ e) <= 1e-10 * np.linalg.norm(A) * np.linalg.norm(e)
        assert np.linalg.norm(A @ x - b) == pytest.approx(0.3, rel=1e-10)
        xs = optimal_solution(A, b)
        assert np.linalg.norm(xs - x) <= 1e-6 * np.linalg.norm(x)

    def test_zero_noise(self, rng):
        A = rng.standard_normal((20, 10))
        b, x, e = rhs_consistent_x(A, 0.0, seed=0)
        np.testing.assert_array_equal(b, A @ x)
        assert np.linalg.norm(A @ optimal_solution(A, b) - b) <= 1e-12 * np.linalg.norm(b)

    def test_square_noise_rejected(self, rng):
        with pytest.raises(ValueError):
            rhs_consistent_x(rng.standard_normal((5, 5)), 1.0)

    def test_consistent_b(self, rng):
        A = rng.standard_normal((50, 20))
        b = rhs_consistent_b(A, seed=0)
        Q, _ = np.linalg.qr(A)
        assert np.linalg.norm(b - Q @ (Q.T @ b)) <= 1e-10 * np.linalg.norm(b)
        assert np.linalg.norm(A @ optimal_solution(A, b) - b) <= 1e-8 * np.linalg.norm(b)

    def test_consistent_b_identity_and_rank1(self, rng):
        assert rhs_consistent_b(np.eye(4), seed=0).shape == (4,)
        u = rng.standard_normal(6)
        A = np.outer(u, rng.standard_normal(3))
        b = rhs_consistent_b(A, seed=1)
        cos = abs(b @ u) / (np.linalg.norm(b) * np.linalg.norm(u))
        assert cos == pytest.approx(1.0, abs=1e-12)


class TestCoherence:
    def test_identity_block(self):
        assert coherence(np.eye(10, 4)) == pytest.approx(1.0)

    def test_permutation_invariant(self, rng):
        A = rng.standard_normal((30, 5))
        perm = rng.permutation(30)
        assert coherence(A[perm]) == pytest.approx(coherence(A), rel=1e-12)

    def test_range_and_haar(self):
        r = np.random.default_rng(0)
        m, n = 400, 10
        vals = [coherence(r.standard_normal((m, n))) for _ in range(10)]
        assert all(np.sqrt(n / m) - 1e-12 <= v <= 1 for v in vals)
        assert np.mean(vals) <= 3 * np.sqrt(n / m)


class TestInstance:
    def test_metadata_consistent(self):
        p = make_problem(60, 40, mu=1e-3, seed=4, noise=1e-2)
        x = p.meta["x_star"]
        assert np.linalg.norm(p.A @ x - p.b) == pytest.approx(p.meta["noise"], rel=1e-8)
        assert p.meta["opt_relres"] == pytest.approx(p.meta["noise"] / np.linalg.norm(p.b),
                                                     rel=1e-8)
        assert p.meta["opt_relres_reg"] >= p.meta["opt_relres"] - 1e-15

    def test_relative_noise(self):
        p = make_problem(60, 40, seed=4, noise=1e-2, noise_mode="relative")
        ax = np.linalg.norm(p.A @ p.meta["x_star"])
        assert p.meta["noise"] == pytest.approx(1e-2 * ax, rel=1e-12)

    def test_deterministic(self):
        a, b = make_problem(40, 20, seed=2), make_problem(40, 20, seed=2)
        np.testing.assert_array_equal(a.A, b.A)
        np.testing.assert_array_equal(a.b, b.b)

    def test_save_load(self, tmp_path):
        p = make_problem(100, 50, kind="sparse", density=0.1, mu=1e-3, seed=0)
        p.save(tmp_path / "prob")
        q = ProblemInstance.load(tmp_path / "prob")
        assert q.mu == p.mu and sp.issparse(q.A)
        np.testing.assert_array_equal(q.A.toarray(), p.A.toarray())
        np.testing.assert_array_equal(q.b, p.b)
        np.testing.assert_array_equal(q.meta["x_star"], p.meta["x_star"])

    def test_oracle_limit(self):
        with pytest.raises(ProblemTooLargeError):
            optimal_solution(np.zeros((5000, 2)), np.zeros(5000))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ProblemInstance(np.eye(3), np.ones(2))


def test_large_sparse_noise_orthogonal():
    from aplicur.problemgen import rhs_consistent_x, sparse_matrix
    A = sparse_matrix(6000, 300, np.logspace(0, -3, 300),
                      density=0.02, seed=1)
    b, x, e = rhs_consistent_x(A, 0.5, seed=2)
    assert np.linalg.norm(e) == pytest.approx(0.5, rel=1e-12)
    assert np.linalg.norm(A.T @ e) <= 1e-10 * sp.linalg.norm(A) * 0.5

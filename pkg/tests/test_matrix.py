import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from aplicur.errors import (
    InvalidIndexError,
    NotPositiveDefiniteError,
    RankDeficientError,
    ShapeError,
    SingularMatrixError,
)
from aplicur.matrix import (
    AugmentedOperator,
    MatrixTarget,
    as_matrix,
    chol_gram,
    extract,
    lu_partial_pivot,
    read_matrix_market,
    small_svd,
    thin_qr,
    tri_solve,
    write_matrix_market,
)

seeds = st.integers(0, 2**31 - 1)


def naive_pivots(M):
    """Textbook elimination with explicit row swaps; returns original row ids."""
    W = np.array(M, dtype=float)
    m, k = W.shape
    perm = list(range(m))
    for j in range(min(m, k)):
        p = j + int(np.argmax(np.abs(W[j:, j])))
        W[[j, p]] = W[[p, j]]
        perm[j], perm[p] = perm[p], perm[j]
        if W[j, j] != 0:
            W[j + 1:, j:] -= np.outer(W[j + 1:, j] / W[j, j], W[j, j:])
    return perm[: min(m, k)]


class TestExtract:
    def test_identity_rows(self):
        out = extract(np.eye(3), rows=[0, 1])
        np.testing.assert_array_equal(out, np.eye(3)[:2])

    def test_all_unchanged(self, rng):
        A = rng.standard_normal((4, 5))
        np.testing.assert_array_equal(extract(A), A)

    def test_sparse_matches_dense(self, rng):
        A = sp.random(5, 4, density=0.6, random_state=rng, format="csc")
        out = extract(A, rows=[1, 3], cols=[0, 2])
        assert sp.issparse(out)
        np.testing.assert_array_equal(out.toarray(), A.toarray()[np.ix_([1, 3], [0, 2])])

    @pytest.mark.parametrize("rows", [[0, 0], [5], [-1]])
    def test_bad_index(self, rows):
        with pytest.raises(InvalidIndexError):
            extract(np.eye(5), rows=rows)

    @given(seeds)
    def test_commutes_with_transpose(self, seed):
        r = np.random.default_rng(seed)
        A = r.standard_normal((6, 5))
        I = r.choice(6, 3, replace=False)
        J = r.choice(5, 2, replace=False)
        np.testing.assert_array_equal(extract(A.T, J, I), extract(A, I, J).T)
        np.testing.assert_array_equal(extract(extract(A, I), None, J),
                                      extract(extract(A, None, J), I))


def test_sparse_canonical_form():
    A = sp.coo_matrix(([1.0, 0.0, 2.0, 3.0], ([2, 1, 0, 2], [0, 0, 1, 0])), shape=(3, 2))
    C = as_matrix(A)
    assert C.format == "csc"
    assert np.all(C.data != 0)
    for j in range(C.shape[1]):
        idx = C.indices[C.indptr[j]:C.indptr[j + 1]]
        assert np.all(np.diff(idx) > 0)


class TestLUPP:
    def test_forced_swap(self):
        assert list(lu_partial_pivot(np.array([[0.0, 1.0], [1.0, 0.0]]))) == [1, 0]

    def test_identity(self):
        assert list(lu_partial_pivot(np.eye(3))) == [0, 1, 2]

    def test_zero_column_lowest_index(self):
        M = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
        order = lu_partial_pivot(M)
        assert order[0] == 0 and order[1] == 2

    def test_matches_naive(self, rng):
        for _ in range(50):
            M = rng.standard_normal((6, 3))
            assert list(lu_partial_pivot(M)) == naive_pivots(M)

    def test_too_many_pivots(self):
        with pytest.raises(ShapeError):
            lu_partial_pivot(np.eye(3), npiv=4)


class TestQR:
    def test_identity(self):
        Q, T = thin_qr(np.eye(4))
        np.testing.assert_allclose(Q, np.eye(4))
        np.testing.assert_allclose(T, np.eye(4))

    def test_scaled(self):
        _, T = thin_qr(2 * np.eye(3))
        np.testing.assert_allclose(T, 2 * np.eye(3))

    def test_rank_deficient_names_column(self):
        M = np.ones((5, 3))
        with pytest.raises(RankDeficientError) as info:
            thin_qr(M)
        assert info.value.column == 1

    @given(seeds)
    def test_reconstruction(self, seed):
        M = np.random.default_rng(seed).standard_normal((20, 5))
        Q, T = thin_qr(M)
        np.testing.assert_allclose(Q @ T, M, atol=1e-12 * np.linalg.norm(M))
        assert np.linalg.norm(Q.T @ Q - np.eye(5)) <= 1e-12 * 5
        assert np.all(np.diag(T) >= 0)
        assert np.allclose(T, np.triu(T))


class TestCholGram:
    @pytest.mark.parametrize("method", ["cholesky", "householder"])
    def test_identity(self, method):
        np.testing.assert_allclose(chol_gram(np.eye(4), method), np.eye(4))

    @pytest.mark.parametrize("method", ["cholesky", "householder"])
    def test_orthonormal(self, method, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((10, 4)))
        np.testing.assert_allclose(chol_gram(Q, method), np.eye(4), atol=1e-12)

    @pytest.mark.parametrize("method", ["cholesky", "householder"])
    def test_against_qr(self, method, rng):
        C = rng.standard_normal((50, 8))
        T = chol_gram(C, method)
        _, R = thin_qr(C)
        np.testing.assert_allclose(T, R, atol=1e-10 * np.abs(R).max())
        G = C.T @ C
        assert np.linalg.norm(T.T @ T - G) <= 1e-10 * np.linalg.norm(G)

    def test_not_positive_definite(self):
        C = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(NotPositiveDefiniteError):
            chol_gram(C, "cholesky")

    def test_sparse_input(self, rng):
        C = sp.random(30, 4, density=0.5, random_state=rng, format="csc") + sp.eye(30, 4)
        T = chol_gram(C, "cholesky")
        G = (C.T @ C).toarray()
        np.testing.assert_allclose(T.T @ T, G, atol=1e-10 * np.linalg.norm(G))


class TestSmallSvd:
    def test_diag(self):
        U, s, V = small_svd(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(s, [3, 1])
        np.testing.assert_allclose(np.abs(U), np.eye(2))
        np.testing.assert_allclose(np.abs(V), np.eye(2))

    def test_orthogonal(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        np.testing.assert_allclose(small_svd(Q)[1], np.ones(6))

    @given(seeds)
    def test_reconstruction(self, seed):
        M = np.random.default_rng(seed).standard_normal((10, 10))
        U, s, V = small_svd(M)
        assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
        assert np.linalg.norm(U * s @ V.T - M) <= 1e-10 * np.linalg.norm(M, 2) * 10

    def test_cap(self):
        with pytest.raises(ShapeError):
            small_svd(np.eye(3), cap=2)


class TestTriSolve:
    def test_identity(self, rng):
        B = rng.standard_normal((4, 2))
        np.testing.assert_array_equal(tri_solve(np.eye(4), B), B)

    def test_scalar(self):
        np.testing.assert_allclose(tri_solve(np.array([[2.0]]), np.array([4.0])), [2.0])

    @pytest.mark.parametrize("trans", [False, True])
    def test_residual(self, rng, trans):
        T = np.triu(rng.standard_normal((8, 8))) + 8 * np.eye(8)
        B = rng.standard_normal((8, 3))
        X = tri_solve(T, B, trans=trans)
        Tm = T.T if trans else T
        for j in range(3):
            backward = np.linalg.norm(Tm @ X[:, j] - B[:, j])
            assert backward <= 1e-12 * np.linalg.norm(Tm) * np.linalg.norm(X[:, j])

    def test_zero_diagonal(self):
        with pytest.raises(SingularMatrixError):
            tri_solve(np.array([[1.0, 1.0], [0.0, 0.0]]), np.ones(2))


class TestAugmented:
    def test_shape_and_rows(self, rng):
        A = rng.standard_normal((5, 3))
        op = AugmentedOperator(A, 0.5)
        assert op.shape == (8, 3)
        np.testing.assert_array_equal(op.rows([1]), A[[1]])
        np.testing.assert_array_equal(op.rows([6]), [[0, 0.5, 0]])
        v = rng.standard_normal(3)
        np.testing.assert_allclose(op.matvec(v), np.concatenate([A @ v, 0.5 * v]))

    @pytest.mark.parametrize("sparse", [False, True])
    def test_accessors_match_dense(self, rng, sparse):
        A = rng.standard_normal((6, 4))
        if sparse:
            A = sp.csc_matrix(A * (rng.random((6, 4)) < 0.5))
        mu = 0.3
        dense = np.vstack([np.asarray(sp.csc_matrix(A).toarray()), mu * np.eye(4)])
        op = AugmentedOperator(A, mu)
        I, J = [0, 7, 3, 9], [1, 3]
        np.testing.assert_allclose(op.submatrix(I, J), dense[np.ix_(I, J)])
        rows = op.rows(I)
        rows = rows.toarray() if sp.issparse(rows) else rows
        np.testing.assert_allclose(rows, dense[I])
        cols = op.columns(J)
        cols = cols.toarray() if sp.issparse(cols) else cols
        np.testing.assert_allclose(cols, dense[:, J])
        S = rng.standard_normal((3, 10))
        np.testing.assert_allclose(op.sketch(S), S @ dense)

    @given(seeds)
    def test_adjoint(self, seed):
        r = np.random.default_rng(seed)
        op = AugmentedOperator(r.standard_normal((7, 4)), r.random())
        v, u = r.standard_normal(4), r.standard_normal(11)
        lhs, rhs = op.matvec(v) @ u, v @ op.rmatvec(u)
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(op.matvec(v)) * np.linalg.norm(u)

    def test_negative_mu(self):
        with pytest.raises(ValueError):
            AugmentedOperator(np.eye(2), -1.0)


def test_target_rows_sparse_cached(rng):
    A = sp.random(8, 5, density=0.4, random_state=rng, format="csc")
    t = MatrixTarget(A)
    np.testing.assert_array_equal(t.rows([2, 5]).toarray(), A.toarray()[[2, 5]])
    assert t._rowview is not None


@pytest.mark.parametrize("sparse", [False, True])
def test_matrix_market_roundtrip(tmp_path, rng, sparse):
    A = rng.standard_normal((4, 3))
    if sparse:
        A = sp.csc_matrix(A * (rng.random((4, 3)) < 0.5))
    path = tmp_path / "a.mtx"
    write_matrix_market(path, A)
    assert path.read_text().startswith("%%MatrixMarket matrix")
    B = read_matrix_market(path)
    assert sp.issparse(B) == sparse
    np.testing.assert_array_equal(sp.csc_matrix(B).toarray(), sp.csc_matrix(A).toarray())

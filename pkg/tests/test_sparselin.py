"""Pattern-constrained factorization, solves, Gram products, and the
posterior-factor update."""

import numpy as np
import pytest
import scipy.sparse as sp

from hvsmooth import opcount
from hvsmooth.ordering import (
    SparsityPattern,
    SpatialGrid,
    build_dense_pattern,
    build_lowrank_pattern,
    hv_layout,
)
from hvsmooth.sparselin import (
    FactorizationError,
    SparseLowerTriangular,
    filter_update_factor,
    hcf,
    selected_gram,
    tri_inverse,
    triangular_solve,
)


def random_spd(n, rng, scale=1.0):
    B = rng.standard_normal((n, n))
    return B @ B.T + scale * n * np.eye(n)


def hv_pattern(side, r=3, J=2):
    grid = SpatialGrid.regular(side, side)
    pattern, _ = hv_layout(grid, J=J, knots_per_level=r)
    return pattern


def pattern_families(n_side):
    n = n_side * n_side
    return {
        "dense": build_dense_pattern(n),
        "lowrank": build_lowrank_pattern(n, max(1, n // 4)),
        "hv": hv_pattern(n_side),
    }


class TestHcf:
    def test_dense_2x2(self):
        L = hcf(build_dense_pattern(2), np.array([[4.0, 2.0], [2.0, 5.0]]))
        np.testing.assert_allclose(L.dense(), [[2.0, 0.0], [1.0, 2.0]])

    def test_diagonal_only_pattern(self):
        rng = np.random.default_rng(0)
        A = random_spd(6, rng)
        diag_pattern = SparsityPattern.from_rows([[i] for i in range(6)])
        L = hcf(diag_pattern, A)
        np.testing.assert_allclose(L.dense(), np.diag(np.sqrt(np.diag(A))))

    def test_identity_input(self):
        for pattern in pattern_families(3).values():
            L = hcf(pattern, np.eye(pattern.n))
            np.testing.assert_allclose(L.dense(), np.eye(pattern.n), atol=1e-14)

    def test_dense_pattern_equals_textbook(self):
        rng = np.random.default_rng(1)
        A = random_spd(20, rng)
        L = hcf(build_dense_pattern(20), A)
        np.testing.assert_allclose(L.dense(), np.linalg.cholesky(A), rtol=1e-12)

    def test_pattern_reconstruction_identity(self):
        # (L L^T)_ij == A_ij wherever the pattern stores an entry
        rng = np.random.default_rng(2)
        for name, pattern in pattern_families(5).items():
            A = random_spd(pattern.n, rng)
            L = hcf(pattern, A)
            R = L.dense() @ L.dense().T
            ri, ci = pattern.row_index, pattern.indices
            np.testing.assert_allclose(R[ri, ci], A[ri, ci], atol=1e-10, err_msg=name)

    def test_accessor_input_matches_dense_input(self):
        class Accessor:
            def __init__(self, A):
                self.A = A

            def entries(self, rows, cols):
                return self.A[rows, cols]

        rng = np.random.default_rng(3)
        pattern = hv_pattern(4)
        A = random_spd(pattern.n, rng)
        np.testing.assert_array_equal(
            hcf(pattern, A).values, hcf(pattern, Accessor(A)).values
        )

    def test_failure_reports_row(self):
        A = np.array([[1.0, 0.0], [0.0, -1.0]])
        with pytest.raises(FactorizationError) as err:
            hcf(build_dense_pattern(2), A)
        assert err.value.row == 1
        pattern = build_lowrank_pattern(3, 1)
        A = -np.eye(3)
        with pytest.raises(FactorizationError) as err:
            hcf(pattern, A)
        assert err.value.row == 0

    def test_jitter_is_explicit(self):
        # borderline matrix fails clean but factors with opt-in jitter
        pattern = build_dense_pattern(2)
        A = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(FactorizationError):
            hcf(pattern, A)
        L = hcf(pattern, A, jitter=1e-8)
        assert np.all(L.diag() > 0)


class TestTriangularSolve:
    def test_identity(self):
        L = SparseLowerTriangular(build_dense_pattern(3), np.array([1.0, 0, 1, 0, 0, 1]))
        b = np.array([3.0, -1.0, 2.0])
        np.testing.assert_array_equal(triangular_solve(L, b), b)

    def test_two_by_two(self):
        L = hcf(build_dense_pattern(2), np.array([[4.0, 2.0], [2.0, 5.0]]))
        np.testing.assert_allclose(triangular_solve(L, np.array([2.0, 3.0])), [1.0, 1.0])

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        for pattern in pattern_families(4).values():
            L = hcf(pattern, random_spd(pattern.n, rng))
            v = rng.standard_normal(pattern.n)
            np.testing.assert_allclose(
                triangular_solve(L, L.matvec(v)), v, rtol=1e-12, atol=1e-12
            )
            np.testing.assert_allclose(
                triangular_solve(L, L.rmatvec(v), transposed=True),
                v,
                rtol=1e-12,
                atol=1e-12,
            )

    def test_transposed_matches_dense(self):
        rng = np.random.default_rng(5)
        pattern = hv_pattern(4)
        L = hcf(pattern, random_spd(pattern.n, rng))
        b = rng.standard_normal(pattern.n)
        np.testing.assert_allclose(
            triangular_solve(L, b, transposed=True),
            np.linalg.solve(L.dense().T, b),
            rtol=1e-11,
        )

    def test_zero_diagonal_raises(self):
        L = SparseLowerTriangular(build_dense_pattern(2), np.array([1.0, 0.0, 0.0]))
        with pytest.raises(FactorizationError):
            triangular_solve(L, np.ones(2))


class TestTriInverse:
    def test_exact_on_nested_patterns(self):
        rng = np.random.default_rng(6)
        for name, pattern in pattern_families(4).items():
            L = hcf(pattern, random_spd(pattern.n, rng))
            V = tri_inverse(L)
            np.testing.assert_allclose(
                V.dense(), np.linalg.inv(L.dense()), atol=1e-12, err_msg=name
            )

    def test_generic_pattern_restriction(self):
        # a non-nested pattern: the restricted inverse matches the true
        # inverse wherever the pattern stores entries that the recursion
        # can reach exactly (here: a chain pattern, which is closed)
        pattern = SparsityPattern.from_rows([[0], [0, 1], [1, 2], [2, 3]])
        assert not pattern.nested_rows
        vals = np.array([2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0])
        L = SparseLowerTriangular(pattern, vals)
        V = tri_inverse(L)
        Vd = np.linalg.inv(L.dense())
        ri, ci = pattern.row_index, pattern.indices
        np.testing.assert_allclose(V.dense()[ri, ci], Vd[ri, ci], atol=1e-12)


class TestSelectedGram:
    def test_identity_everything(self):
        pattern = hv_pattern(3)
        n = pattern.n
        L = hcf(pattern, np.eye(n))
        out = selected_gram(sp.identity(n, format="csr"), L, np.zeros((n, n)), pattern)
        expect = np.eye(n)[pattern.row_index, pattern.indices]
        np.testing.assert_allclose(out.values, expect, atol=1e-14)

    def test_zero_evolution_returns_q(self):
        rng = np.random.default_rng(7)
        pattern = hv_pattern(3)
        n = pattern.n
        Q = random_spd(n, rng)
        L = hcf(pattern, random_spd(n, rng))
        out = selected_gram(sp.csr_matrix((n, n)), L, Q, pattern)
        np.testing.assert_allclose(
            out.values, Q[pattern.row_index, pattern.indices], atol=1e-14
        )

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(8)
        pattern = build_lowrank_pattern(8, 3)
        L = hcf(pattern, random_spd(8, rng))
        E = sp.random(8, 8, density=0.4, random_state=1, format="csr")
        Q = random_spd(8, rng)
        out = selected_gram(E, L, Q, pattern)
        Ld = L.dense()
        M = E.toarray() @ Ld @ Ld.T @ E.toarray().T + Q
        np.testing.assert_allclose(
            out.values, M[pattern.row_index, pattern.indices], rtol=1e-12, atol=1e-12
        )

    def test_dense_and_sparse_paths_agree(self):
        rng = np.random.default_rng(9)
        n = 12
        dense = build_dense_pattern(n)
        L = hcf(dense, random_spd(n, rng))
        E = sp.random(n, n, density=0.3, random_state=2, format="csr") + sp.identity(n)
        Q = random_spd(n, rng)
        got = selected_gram(E, L, Q, dense).values
        B = E.toarray() @ L.dense()
        expect = (B @ B.T + Q)[dense.row_index, dense.indices]
        np.testing.assert_allclose(got, expect, rtol=1e-10)

    def test_dimension_mismatch(self):
        pattern = build_dense_pattern(4)
        L = hcf(pattern, np.eye(4))
        with pytest.raises(ValueError):
            selected_gram(sp.identity(3, format="csr"), L, np.eye(4), pattern)


class TestFilterUpdateFactor:
    def test_no_observations_is_identity_map(self):
        rng = np.random.default_rng(10)
        for name, pattern in pattern_families(4).items():
            L = hcf(pattern, random_spd(pattern.n, rng))
            Lf = filter_update_factor(L, np.empty(0, dtype=np.int64), 1.0)
            np.testing.assert_allclose(
                Lf.dense() @ Lf.dense().T,
                L.dense() @ L.dense().T,
                rtol=1e-10,
                atol=1e-12,
                err_msg=name,
            )

    def test_scalar_conjugate_update(self):
        L = SparseLowerTriangular(build_dense_pattern(1), np.array([1.0]))
        Lf = filter_update_factor(L, np.array([0]), 1.0)
        np.testing.assert_allclose(Lf.values, [1.0 / np.sqrt(2.0)])

    def test_dense_matches_kalman_covariance(self):
        rng = np.random.default_rng(11)
        n = 50
        pattern = build_dense_pattern(n)
        Sigma = random_spd(n, rng)
        L = hcf(pattern, Sigma)
        obs = np.sort(rng.choice(n, size=20, replace=False))
        r = rng.uniform(0.1, 2.0, size=20)
        Lf = filter_update_factor(L, obs, 1.0 / r)
        post = Lf.dense() @ Lf.dense().T
        H = np.eye(n)[obs]
        K = Sigma @ H.T @ np.linalg.inv(H @ Sigma @ H.T + np.diag(r))
        post_kf = Sigma - K @ H @ Sigma
        err = np.linalg.norm(post - post_kf) / np.linalg.norm(post_kf)
        assert err < 1e-9

    def test_output_support_in_pattern(self):
        rng = np.random.default_rng(12)
        for pattern in pattern_families(4).values():
            L = hcf(pattern, random_spd(pattern.n, rng))
            obs = np.arange(0, pattern.n, 3)
            Lf = filter_update_factor(L, obs, 2.0)
            off = ~pattern.to_dense_bool()
            assert np.all(Lf.dense()[off] == 0.0)

    def test_sparse_path_matches_dense_path_on_equivalent_problem(self):
        # on a nested pattern, compare against an oracle built from the
        # same pattern-restricted precision matrix
        rng = np.random.default_rng(13)
        pattern = hv_pattern(4)
        n = pattern.n
        L = hcf(pattern, random_spd(n, rng))
        obs = np.sort(rng.choice(n, size=n // 3, replace=False))
        Lf = filter_update_factor(L, obs, 1.5)
        G = np.linalg.inv(L.dense())
        M = G.T @ G
        M[obs, obs] += 1.5
        # oracle: reversed Cholesky computed densely, then inverted
        P = np.eye(n)[::-1]
        C = np.linalg.cholesky(P @ M @ P)
        U = P @ C @ P
        expect = np.linalg.inv(U.T)
        mask = pattern.to_dense_bool()
        got = Lf.dense()
        # exact where the dense reversed factor respects the pattern
        if np.all(U.T[~mask] == 0):
            np.testing.assert_allclose(got, expect, rtol=1e-9, atol=1e-11)
        else:  # pattern truncation: still a valid factor on-pattern
            assert np.all(got[~mask] == 0)


class TestCostScaling:
    def test_hcf_ops_linear_in_n_at_fixed_bandwidth(self):
        rng = np.random.default_rng(14)
        ncols = 12
        totals = {}
        for n in (64, 128, 256, 512):
            pattern = build_lowrank_pattern(n, ncols)
            A = random_spd(n, rng)
            with opcount.count_ops() as ops:
                hcf(pattern, A)
            totals[n] = ops.total
        # ops per call bounded by c * n * N^2 with a shared constant
        c = max(totals[n] / (n * (ncols + 1) ** 2) for n in totals)
        for n, total in totals.items():
            assert total <= c * n * (ncols + 1) ** 2 + 1
        # and the growth is essentially linear: doubling n doubles the work
        assert totals[512] / totals[256] < 2.3

    def test_filter_update_ops_bounded(self):
        rng = np.random.default_rng(15)
        pattern = hv_pattern(6)
        n, N = pattern.n, pattern.max_row_nnz
        L = hcf(pattern, random_spd(n, rng))
        with opcount.count_ops() as ops:
            filter_update_factor(L, np.arange(0, n, 2), 1.0)
        assert ops.total <= 6 * n * N**2

"""Pattern-constrained Cholesky factors and the algebra built on them.

The central object is :class:`SparseLowerTriangular`: the values of a
lower-triangular factor restricted to a :class:`SparsityPattern`.  On top of
it this module provides

* :func:`hcf` - Cholesky factorization constrained to a pattern: entries
  outside the pattern are forced to zero, entries inside use the usual
  update formula.
* :func:`triangular_solve`, matrix-vector products, and pattern-restricted
  triangular inversion (:func:`tri_inverse`), which is exact whenever the
  pattern has nested rows.
* :func:`selected_gram` - ``(E L)(E L)^T + Q`` evaluated only at pattern
  positions, without forming any dense product.
* :func:`filter_update_factor` - given a forecast factor L and a diagonal
  observation precision, the posterior factor with the same pattern, via a
  Cholesky factorization of the order-reversed posterior precision.

Patterns whose size demands it are handled by numba kernels; fully dense
patterns take LAPACK fast paths that compute the same quantities.  Every
entry point records inner-loop operation counts (nominal flop counts for the
dense paths) through :mod:`hvsmooth.opcount`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import _kernels, opcount
from .ordering import SparsityPattern


class FactorizationError(RuntimeError):
    """A pivot failed; ``row`` is the offending variable index."""

    def __init__(self, message, row=None, time_index=None):
        super().__init__(message)
        self.row = row
        self.time_index = time_index


@dataclass
class SparseLowerTriangular:
    """A lower-triangular factor stored on a sparsity pattern."""

    pattern: SparsityPattern
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.pattern.nnz,):
            raise ValueError("values must align with the pattern")

    @property
    def n(self) -> int:
        return self.pattern.n

    def diag(self) -> np.ndarray:
        return self.values[self.pattern.diag_slots]

    def dense(self) -> np.ndarray:
        return self.pattern.unpack(self.values)

    def scaled(self, c: float) -> "SparseLowerTriangular":
        return SparseLowerTriangular(self.pattern, self.values * c)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out, ops = _kernels.matvec_lower(
            self.pattern.indptr, self.pattern.indices, self.values, _vec(v, self.n)
        )
        opcount.record("matvec", ops)
        return out

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        """L^T v."""
        out, ops = _kernels.matvec_lower_t(
            self.pattern.indptr, self.pattern.indices, self.values, _vec(v, self.n)
        )
        opcount.record("matvec", ops)
        return out

    def solve(self, b: np.ndarray, transposed: bool = False) -> np.ndarray:
        kernel = _kernels.solve_lower_t if transposed else _kernels.solve_lower
        out, fail, ops = kernel(
            self.pattern.indptr, self.pattern.indices, self.values, _vec(b, self.n)
        )
        opcount.record("solve", ops)
        if fail >= 0:
            raise FactorizationError(
                f"zero diagonal at row {fail} in triangular solve", row=fail
            )
        return out


@dataclass
class SelectedEntries:
    """Entries of a symmetric matrix evaluated at pattern positions."""

    pattern: SparsityPattern
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.pattern.nnz,):
            raise ValueError("values must align with the pattern")


def _vec(v, n):
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise ValueError(f"expected a vector of length {n}, got shape {v.shape}")
    return v


def values_on_pattern(pattern: SparsityPattern, A) -> np.ndarray:
    """Evaluate a symmetric-matrix source at the pattern's positions.

    ``A`` may be a dense array, a :class:`SelectedEntries`, a raw value
    array aligned with the pattern, or any object with an
    ``entries(rows, cols)`` method (a covariance accessor).  Off-pattern
    entries are never touched.
    """
    if isinstance(A, SelectedEntries):
        if A.pattern is not pattern and A.pattern != pattern:
            raise ValueError("SelectedEntries pattern does not match")
        return A.values
    if isinstance(A, np.ndarray):
        if A.ndim == 2:
            if A.shape != (pattern.n, pattern.n):
                raise ValueError("dense matrix has wrong shape")
            return pattern.pack_dense(A)
        return _aligned(pattern, A)
    if hasattr(A, "entries"):
        return np.ascontiguousarray(
            A.entries(pattern.row_index, pattern.indices), dtype=np.float64
        )
    raise TypeError(f"cannot evaluate {type(A).__name__} on a pattern")


def _aligned(pattern, vals):
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    if vals.shape != (pattern.nnz,):
        raise ValueError("value array must align with the pattern")
    return vals


def _dense_source(pattern: SparsityPattern, A) -> np.ndarray:
    if isinstance(A, np.ndarray) and A.ndim == 2:
        return np.asarray(A, dtype=np.float64)
    if hasattr(A, "dense"):
        return np.asarray(A.dense(), dtype=np.float64)
    return pattern.unpack(values_on_pattern(pattern, A))


PIVOT_RELTOL = 1e-12


def hcf(
    pattern: SparsityPattern,
    A,
    jitter: float = 0.0,
    time_index=None,
) -> SparseLowerTriangular:
    """Cholesky factor of ``A`` constrained to ``pattern``.

    For stored entries the usual formulas apply,
    ``L_ij = (A_ij - sum_k L_ik L_jk) / L_jj`` and
    ``L_ii = sqrt(A_ii - sum_k L_ik^2)``; entries off the pattern are zero
    and never read from ``A``.  The factorization fails when a pivot drops
    below ``1e-12 * A_ii``.  ``jitter`` is an explicit opt-in addition to
    the diagonal; nothing is ever added silently.
    """
    if pattern.is_dense:
        a = _dense_source(pattern, A).copy()
        if jitter:
            a[np.diag_indices_from(a)] += jitter
        c, info = sla.lapack.dpotrf(a, lower=1, clean=1)
        opcount.record("hcf", pattern.n**3 // 3)
        if info > 0:
            raise FactorizationError(
                f"matrix not positive definite at row {info - 1}",
                row=info - 1,
                time_index=time_index,
            )
        if info < 0:
            raise FactorizationError("invalid input to dense Cholesky")
        return SparseLowerTriangular(pattern, pattern.pack_dense(c))

    avals = values_on_pattern(pattern, A)
    if jitter:
        avals = avals.copy()
        avals[pattern.diag_slots] += jitter
    if pattern.nested_rows:
        kernel = _kernels.hcf_nested
    elif pattern.contiguous_rows:
        kernel = _kernels.hcf_contiguous
    else:
        kernel = _kernels.hcf_generic
    lvals, fail, ops = kernel(pattern.indptr, pattern.indices, avals, PIVOT_RELTOL)
    opcount.record("hcf", ops)
    if fail >= 0:
        raise FactorizationError(
            f"pattern-constrained Cholesky broke down at row {fail}",
            row=fail,
            time_index=time_index,
        )
    return SparseLowerTriangular(pattern, lvals)


def triangular_solve(
    L: SparseLowerTriangular, b: np.ndarray, transposed: bool = False
) -> np.ndarray:
    """Exact forward (or back, if ``transposed``) substitution ``L^{-1} b``."""
    return L.solve(b, transposed=transposed)


def save_factor(L: SparseLowerTriangular, path) -> None:
    """Write a factor as the pattern text format plus one value per entry."""
    from .ordering import save_pattern

    save_pattern(L.pattern, path)
    with open(path, "a") as fh:
        for v in L.values:
            fh.write(f"{float(v)!r}\n")


def load_factor(path) -> SparseLowerTriangular:
    from .ordering import SparsityPattern

    with open(path) as fh:
        n, _ = (int(tok) for tok in fh.readline().split())
        rows = [[int(tok) for tok in fh.readline().split()] for _ in range(n)]
        pattern = SparsityPattern.from_rows(rows)
        values = np.array([float(fh.readline()) for _ in range(pattern.nnz)])
    return SparseLowerTriangular(pattern, values)


def tri_inverse(L: SparseLowerTriangular) -> SparseLowerTriangular:
    """Inverse of a triangular factor restricted to its own pattern.

    Exact (up to roundoff) when the pattern has nested rows, because the
    true inverse then has no support outside the pattern; otherwise
    off-pattern entries of the inverse are dropped.
    """
    pattern = L.pattern
    if pattern.is_dense:
        inv, info = sla.lapack.dtrtri(L.dense(), lower=1)
        opcount.record("tri_inverse", pattern.n**3 // 3)
        if info != 0:
            raise FactorizationError(
                f"singular triangular factor at row {max(info - 1, 0)}",
                row=max(info - 1, 0),
            )
        return SparseLowerTriangular(pattern, pattern.pack_dense(inv))
    if pattern.nested_rows:
        vvals, fail, ops = _kernels.tri_inverse_nested(
            pattern.indptr, pattern.indices, L.values
        )
    else:
        colptr, rowidx, slots = pattern_csc(pattern)
        vvals, fail, ops = _kernels.tri_inverse_generic(
            pattern.indptr, pattern.indices, L.values, colptr, rowidx, slots, pattern.n
        )
    opcount.record("tri_inverse", ops)
    if fail >= 0:
        raise FactorizationError(
            f"zero diagonal at row {fail} in triangular inversion", row=fail
        )
    return SparseLowerTriangular(pattern, vvals)


_csc_cache: dict[int, tuple] = {}


def pattern_csc(pattern: SparsityPattern):
    """Column-compressed view of a pattern (colptr, rows, CSR slot map)."""
    key = id(pattern)
    hit = _csc_cache.get(key)
    if hit is not None:
        return hit
    order = np.lexsort((pattern.row_index, pattern.indices))
    counts = np.bincount(pattern.indices, minlength=pattern.n)
    colptr = np.zeros(pattern.n + 1, dtype=np.int64)
    np.cumsum(counts, out=colptr[1:])
    out = (colptr, pattern.row_index[order], order.astype(np.int64))
    _csc_cache[key] = out
    return out


def _csr_int64(E) -> tuple:
    E = sp.csr_matrix(E)
    return (
        E.indptr.astype(np.int64),
        E.indices.astype(np.int64),
        np.ascontiguousarray(E.data, dtype=np.float64),
    )


def selected_gram(
    E, L_prev: SparseLowerTriangular, Q, S: SparsityPattern
) -> SelectedEntries:
    """``(E L)(E L)^T + Q`` evaluated at the positions of ``S``.

    ``E`` is a sparse matrix with bounded row support, ``Q`` anything
    :func:`values_on_pattern` accepts.  Computed from sparse row products of
    ``B = E @ L_prev``; no dense n-by-n product is formed on sparse
    patterns.
    """
    n = S.n
    if L_prev.n != n:
        raise ValueError("dimension mismatch between factor and pattern")
    qvals = values_on_pattern(S, Q)
    if S.is_dense:
        E = sp.csr_matrix(E)
        B = E @ L_prev.dense()
        M = B @ B.T
        opcount.record("gram", n**3 + 2 * E.nnz * n)
        return SelectedEntries(S, S.pack_dense(M) + qvals)
    eip, eix, evs = _csr_int64(E)
    if eip.shape[0] - 1 != n:
        raise ValueError("evolution matrix has wrong shape")
    bip, bix, bvs, mul_ops = _kernels.spgemm(
        eip, eix, evs, L_prev.pattern.indptr, L_prev.pattern.indices, L_prev.values, n
    )
    svals, ops = _kernels.gram_on_pattern(
        bip, bix, bvs, S.indptr, S.indices, qvals, n
    )
    opcount.record("gram", ops + mul_ops)
    return SelectedEntries(S, svals)


def filter_update_factor(
    L_fc: SparseLowerTriangular,
    obs: np.ndarray,
    rinv,
    time_index=None,
) -> SparseLowerTriangular:
    """Posterior factor after assimilating observations of selected rows.

    Given the forecast factor L (so the forecast covariance is ``L L^T``),
    observed row indices ``obs`` and their noise precisions ``rinv``
    (scalar or per-row), forms the posterior precision
    ``M = L^{-T} L^{-1} + H^T R^{-1} H`` at pattern positions, factorizes
    the order-reversed ``M`` under the reversed pattern to get the upper
    factor U with ``M = U U^T``, and returns ``U^{-T}``, which shares L's
    pattern.  The posterior covariance is then ``U^{-T} U^{-1}`` - exact
    for the dense pattern, pattern-constrained otherwise at O(n N^2) cost.

    Reversal is carried out by index remapping; no permutation matrix is
    materialized.
    """
    pattern = L_fc.pattern
    n = pattern.n
    obs = np.asarray(obs, dtype=np.int64)
    rinv_arr = np.broadcast_to(np.asarray(rinv, dtype=np.float64), obs.shape)
    hrh = np.zeros(n)
    if obs.size:
        np.add.at(hrh, obs, rinv_arr)

    if pattern.is_dense:
        Ld = L_fc.dense()
        G, info = sla.lapack.dtrtri(Ld, lower=1)
        if info != 0:
            raise FactorizationError(
                "singular forecast factor", row=max(info - 1, 0), time_index=time_index
            )
        M = G.T @ G
        M[np.diag_indices_from(M)] += hrh
        Mrev = M[::-1, ::-1]
        c, info = sla.lapack.dpotrf(Mrev, lower=1, clean=1)
        if info > 0:
            raise FactorizationError(
                f"posterior precision not positive definite at row {n - info}",
                row=n - info,
                time_index=time_index,
            )
        W = c[::-1, ::-1].T  # (P chol(P M P) P)^T, lower triangular
        F, info = sla.lapack.dtrtri(np.ascontiguousarray(W), lower=1)
        if info != 0:
            raise FactorizationError(
                "singular posterior factor", row=max(info - 1, 0), time_index=time_index
            )
        opcount.record("filter_update", 2 * n**3)
        return SparseLowerTriangular(pattern, pattern.pack_dense(F))

    G = tri_inverse(L_fc)
    if pattern.nested_rows:
        mvals, ops = _kernels.gram_update_nested(
            pattern.indptr, pattern.indices, G.values
        )
    else:
        mvals, ops = _kernels.gram_update_generic(
            pattern.indptr, pattern.indices, G.values
        )
    opcount.record("gram", ops)
    mvals[pattern.diag_slots] += hrh

    rev = pattern.reversed_pattern
    slot_map = pattern.reversal_slot_map
    mrev = np.empty_like(mvals)
    mrev[slot_map] = mvals
    if rev.contiguous_rows:
        kernel = _kernels.hcf_contiguous
    elif rev.nested_rows:
        kernel = _kernels.hcf_nested
    else:
        kernel = _kernels.hcf_generic
    cvals, fail, ops = kernel(rev.indptr, rev.indices, mrev, PIVOT_RELTOL)
    opcount.record("hcf", ops)
    if fail >= 0:
        raise FactorizationError(
            f"posterior precision not positive definite at row {n - 1 - fail}",
            row=n - 1 - fail,
            time_index=time_index,
        )
    W = SparseLowerTriangular(pattern, cvals[slot_map])
    return tri_inverse(W)

"""Numba inner loops for pattern-constrained factor algebra.

All kernels work on CSR-style arrays (``indptr``, ``indices``) describing a
lower-triangular pattern whose rows are sorted ascending and end with the
diagonal.  Value arrays are aligned with ``indices``.

Two structural properties are exploited when present:

* *nested rows*: the support of row j equals the leading entries of any row
  that contains column j.  Dot products between row prefixes then align
  element-wise and need no index merging.
* *contiguous rows*: each row is an index range ``lo_i..i``; overlaps are
  computed from offsets alone.

Generic merge-based fallbacks cover arbitrary patterns.  Kernels return an
``ops`` count of inner-loop multiply-accumulates; factorizations also return
the failing row (-1 on success).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def check_structure(indptr, indices):
    n = indptr.shape[0] - 1
    if indptr[0] != 0 or indptr[n] != indices.shape[0]:
        return False
    for i in range(n):
        b, e = indptr[i], indptr[i + 1]
        if e <= b:
            return False
        if indices[e - 1] != i or indices[b] < 0:
            return False
        for p in range(b + 1, e):
            if indices[p] <= indices[p - 1]:
                return False
    return True


@njit(cache=True)
def check_nested(indptr, indices):
    n = indptr.shape[0] - 1
    for i in range(n):
        b = indptr[i]
        m = indptr[i + 1] - b
        for p in range(m - 1):
            j = indices[b + p]
            jb = indptr[j]
            if indptr[j + 1] - jb != p + 1:
                return False
            for q in range(p + 1):
                if indices[jb + q] != indices[b + q]:
                    return False
    return True


@njit(cache=True)
def check_contiguous(indptr, indices):
    n = indptr.shape[0] - 1
    for i in range(n):
        b, e = indptr[i], indptr[i + 1]
        lo = indices[b]
        if lo + (e - b) - 1 != i:
            return False
        for p in range(b, e):
            if indices[p] != lo + (p - b):
                return False
    return True


# ----------------------------------------------------------------------
# Pattern-constrained Cholesky
# ----------------------------------------------------------------------


@njit(cache=True)
def hcf_nested(indptr, indices, avals, reltol):
    n = indptr.shape[0] - 1
    lvals = np.zeros_like(avals)
    ops = 0
    for i in range(n):
        b = indptr[i]
        m = indptr[i + 1] - b
        for p in range(m - 1):
            j = indices[b + p]
            jb = indptr[j]
            jm = indptr[j + 1] - jb
            s = 0.0
            for q in range(jm - 1):
                s += lvals[b + q] * lvals[jb + q]
            ops += jm - 1
            d = lvals[jb + jm - 1]
            if d == 0.0:
                return lvals, j, ops
            lvals[b + p] = (avals[b + p] - s) / d
        s = 0.0
        for p in range(m - 1):
            s += lvals[b + p] * lvals[b + p]
        ops += m - 1
        aii = avals[b + m - 1]
        piv = aii - s
        if piv < reltol * aii or piv < 0.0:
            return lvals, i, ops
        lvals[b + m - 1] = np.sqrt(piv)
    return lvals, -1, ops


@njit(cache=True)
def hcf_contiguous(indptr, indices, avals, reltol):
    n = indptr.shape[0] - 1
    lvals = np.zeros_like(avals)
    ops = 0
    for i in range(n):
        b = indptr[i]
        lo_i = indices[b]
        m = indptr[i + 1] - b
        for p in range(m - 1):
            j = lo_i + p
            jb = indptr[j]
            lo_j = indices[jb]
            k0 = lo_i if lo_i > lo_j else lo_j
            cnt = j - k0
            oi = b + (k0 - lo_i)
            oj = jb + (k0 - lo_j)
            s = 0.0
            for q in range(cnt):
                s += lvals[oi + q] * lvals[oj + q]
            ops += cnt
            d = lvals[jb + (j - lo_j)]
            if d == 0.0:
                return lvals, j, ops
            lvals[b + p] = (avals[b + p] - s) / d
        s = 0.0
        for p in range(m - 1):
            s += lvals[b + p] * lvals[b + p]
        ops += m - 1
        aii = avals[b + m - 1]
        piv = aii - s
        if piv < reltol * aii or piv < 0.0:
            return lvals, i, ops
        lvals[b + m - 1] = np.sqrt(piv)
    return lvals, -1, ops


@njit(cache=True)
def hcf_generic(indptr, indices, avals, reltol):
    n = indptr.shape[0] - 1
    lvals = np.zeros_like(avals)
    ops = 0
    for i in range(n):
        b = indptr[i]
        m = indptr[i + 1] - b
        for p in range(m - 1):
            j = indices[b + p]
            jb = indptr[j]
            je = indptr[j + 1] - 1  # exclude diagonal of row j
            s = 0.0
            x = b
            y = jb
            while x < b + p and y < je:
                cx = indices[x]
                cy = indices[y]
                if cx == cy:
                    s += lvals[x] * lvals[y]
                    ops += 1
                    x += 1
                    y += 1
                elif cx < cy:
                    x += 1
                else:
                    y += 1
            d = lvals[je]
            if d == 0.0:
                return lvals, j, ops
            lvals[b + p] = (avals[b + p] - s) / d
        s = 0.0
        for p in range(m - 1):
            s += lvals[b + p] * lvals[b + p]
        ops += m - 1
        aii = avals[b + m - 1]
        piv = aii - s
        if piv < reltol * aii or piv < 0.0:
            return lvals, i, ops
        lvals[b + m - 1] = np.sqrt(piv)
    return lvals, -1, ops


# ----------------------------------------------------------------------
# Pattern-restricted triangular inversion  (V = L^{-1} on the pattern)
# ----------------------------------------------------------------------


@njit(cache=True)
def tri_inverse_nested(indptr, indices, lvals):
    n = indptr.shape[0] - 1
    vvals = np.zeros_like(lvals)
    ops = 0
    for i in range(n):
        b = indptr[i]
        m = indptr[i + 1] - b
        d = lvals[b + m - 1]
        if d == 0.0:
            return vvals, i, ops
        dinv = 1.0 / d
        vvals[b + m - 1] = dinv
        for q in range(m - 1):
            # column j = indices[b+q]; row k = indices[b+p] holds V_{k,j}
            # at its q-th slot because row k is a prefix of row i.
            s = 0.0
            for p in range(q, m - 1):
                k = indices[b + p]
                s += lvals[b + p] * vvals[indptr[k] + q]
            ops += m - 1 - q
            vvals[b + q] = -dinv * s
    return vvals, -1, ops


@njit(cache=True)
def tri_inverse_generic(indptr, indices, lvals, colptr, rowidx, slots, n):
    vvals = np.zeros_like(lvals)
    w = np.zeros(n)
    ops = 0
    for j in range(n):
        c0, c1 = colptr[j], colptr[j + 1]
        for idx in range(c0, c1):
            i = rowidx[idx]
            b, e = indptr[i], indptr[i + 1]
            d = lvals[e - 1]
            if d == 0.0:
                return vvals, i, ops
            s = 0.0
            for p in range(b, e - 1):
                k = indices[p]
                if k >= j:
                    s += lvals[p] * w[k]
            ops += e - 1 - b
            x = ((1.0 if i == j else 0.0) - s) / d
            w[i] = x
            vvals[slots[idx]] = x
        for idx in range(c0, c1):
            w[rowidx[idx]] = 0.0
    return vvals, -1, ops


# ----------------------------------------------------------------------
# Gram accumulations
# ----------------------------------------------------------------------


@njit(cache=True)
def gram_update_nested(indptr, indices, gvals):
    """M = G^T G evaluated at the pattern positions (nested rows).

    For every row k, each ordered pair (a, b), b <= a, of its entries
    contributes G_{k,i} G_{k,j} to M_{i,j} where i = row_k[a], j = row_k[b];
    by nestedness that value lives at slot ``indptr[i] + b``.
    """
    n = indptr.shape[0] - 1
    mvals = np.zeros_like(gvals)
    ops = 0
    for k in range(n):
        b = indptr[k]
        m = indptr[k + 1] - b
        for a in range(m):
            i = indices[b + a]
            ga = gvals[b + a]
            ib = indptr[i]
            for q in range(a + 1):
                mvals[ib + q] += ga * gvals[b + q]
            ops += a + 1
    return mvals, ops


@njit(cache=True)
def gram_update_generic(indptr, indices, gvals):
    n = indptr.shape[0] - 1
    mvals = np.zeros_like(gvals)
    ops = 0
    for k in range(n):
        b = indptr[k]
        m = indptr[k + 1] - b
        for a in range(m):
            i = indices[b + a]
            ga = gvals[b + a]
            x = b
            y = indptr[i]
            ye = indptr[i + 1]
            while x <= b + a and y < ye:
                cx = indices[x]
                cy = indices[y]
                if cx == cy:
                    mvals[y] += ga * gvals[x]
                    ops += 1
                    x += 1
                    y += 1
                elif cx < cy:
                    x += 1
                else:
                    y += 1
    return mvals, ops


@njit(cache=True)
def spgemm(aip, aix, avs, bip, bix, bvs, ncols):
    """C = A @ B for CSR inputs; rows of C sorted ascending."""
    n = aip.shape[0] - 1
    mark = np.full(ncols, -1, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        c = 0
        for p in range(aip[i], aip[i + 1]):
            k = aix[p]
            for q in range(bip[k], bip[k + 1]):
                col = bix[q]
                if mark[col] != i:
                    mark[col] = i
                    c += 1
        counts[i] = c
    cip = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        cip[i + 1] = cip[i] + counts[i]
    cix = np.empty(cip[n], dtype=np.int64)
    cvs = np.empty(cip[n])
    w = np.zeros(ncols)
    mark[:] = -1
    ops = 0
    for i in range(n):
        start = cip[i]
        c = 0
        for p in range(aip[i], aip[i + 1]):
            k = aix[p]
            av = avs[p]
            for q in range(bip[k], bip[k + 1]):
                col = bix[q]
                if mark[col] != i:
                    mark[col] = i
                    w[col] = av * bvs[q]
                    cix[start + c] = col
                    c += 1
                else:
                    w[col] += av * bvs[q]
            ops += bip[k + 1] - bip[k]
        seg = cix[start : start + c]
        seg.sort()
        for t in range(c):
            cvs[start + t] = w[seg[t]]
    return cip, cix, cvs, ops


@njit(cache=True)
def gram_on_pattern(bip, bix, bvs, sip, six, qvals, n):
    """(B B^T + Q) evaluated at pattern positions; Q given on the pattern."""
    svals = np.empty_like(qvals)
    w = np.zeros(n)
    ops = 0
    nrow = sip.shape[0] - 1
    for i in range(nrow):
        for p in range(bip[i], bip[i + 1]):
            w[bix[p]] = bvs[p]
        for s in range(sip[i], sip[i + 1]):
            j = six[s]
            acc = 0.0
            for q in range(bip[j], bip[j + 1]):
                acc += bvs[q] * w[bix[q]]
            ops += bip[j + 1] - bip[j]
            svals[s] = acc + qvals[s]
        for p in range(bip[i], bip[i + 1]):
            w[bix[p]] = 0.0
    return svals, ops


# ----------------------------------------------------------------------
# Triangular solves and products
# ----------------------------------------------------------------------


@njit(cache=True)
def solve_lower(indptr, indices, lvals, rhs):
    n = indptr.shape[0] - 1
    x = rhs.copy()
    ops = 0
    for i in range(n):
        b, e = indptr[i], indptr[i + 1]
        s = 0.0
        for p in range(b, e - 1):
            s += lvals[p] * x[indices[p]]
        ops += e - 1 - b
        d = lvals[e - 1]
        if d == 0.0:
            return x, i, ops
        x[i] = (x[i] - s) / d
    return x, -1, ops


@njit(cache=True)
def solve_lower_t(indptr, indices, lvals, rhs):
    n = indptr.shape[0] - 1
    x = rhs.copy()
    ops = 0
    for i in range(n - 1, -1, -1):
        b, e = indptr[i], indptr[i + 1]
        d = lvals[e - 1]
        if d == 0.0:
            return x, i, ops
        xi = x[i] / d
        x[i] = xi
        for p in range(b, e - 1):
            x[indices[p]] -= lvals[p] * xi
        ops += e - 1 - b
    return x, -1, ops


@njit(cache=True)
def matvec_lower(indptr, indices, lvals, v):
    n = indptr.shape[0] - 1
    out = np.empty(n)
    ops = 0
    for i in range(n):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += lvals[p] * v[indices[p]]
        ops += indptr[i + 1] - indptr[i]
        out[i] = s
    return out, ops


@njit(cache=True)
def matvec_lower_t(indptr, indices, lvals, v):
    n = indptr.shape[0] - 1
    out = np.zeros(n)
    ops = 0
    for i in range(n):
        vi = v[i]
        for p in range(indptr[i], indptr[i + 1]):
            out[indices[p]] += lvals[p] * vi
        ops += indptr[i + 1] - indptr[i]
    return out, ops


@njit(cache=True)
def csr_matvec(indptr, indices, vals, v):
    n = indptr.shape[0] - 1
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            s += vals[p] * v[indices[p]]
        out[i] = s
    return out


@njit(cache=True)
def csr_matvec_t(indptr, indices, vals, v, ncols):
    n = indptr.shape[0] - 1
    out = np.zeros(ncols)
    for i in range(n):
        vi = v[i]
        for p in range(indptr[i], indptr[i + 1]):
            out[indices[p]] += vals[p] * vi
    return out

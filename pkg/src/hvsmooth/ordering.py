"""Maxmin ordering, knot hierarchies, and lower-triangular sparsity patterns.

The ordering pipeline is: raw 2-D locations -> maxmin permutation
(:func:`maxmin_order`) -> recursive region/knot hierarchy
(:func:`build_hierarchy`) -> lower-triangular sparsity pattern plus the
composed variable order (:func:`build_hv_pattern`).  Low-rank and dense
reference patterns share the same :class:`SparsityPattern` container.

All three builders produce patterns whose rows have the *nested prefix*
property: for every stored entry (i, j), the support of row j equals the
first entries of row i up to and including j.  Downstream factor algebra
relies on this for exact pattern-restricted triangular inversion and for
aligned (merge-free) inner loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import _kernels


class OrderingError(ValueError):
    pass


def maxmin_order(locations) -> np.ndarray:
    """Greedy max-min-distance ordering of 2-D locations.

    The first point is the one closest to the coordinate-wise centroid;
    every subsequent point maximizes the minimum Euclidean distance to all
    previously selected points.  Ties are broken by the lowest original
    index, so the result is deterministic.

    Parameters
    ----------
    locations : (n, 2) array-like
        Distinct coordinates.

    Returns
    -------
    (n,) int array, a permutation of ``0..n-1``.
    """
    pts = np.asarray(locations, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise OrderingError("locations must be a nonempty (n, 2) array")
    n = pts.shape[0]
    uniq = np.unique(pts, axis=0)
    if uniq.shape[0] != n:
        raise OrderingError("duplicate locations: maxmin ordering is ill-defined")

    centroid = pts.mean(axis=0)
    d0 = np.sum((pts - centroid) ** 2, axis=1)
    first = int(np.argmin(d0))  # argmin returns the lowest index on ties

    order = np.empty(n, dtype=np.int64)
    order[0] = first
    dmin = np.sum((pts - pts[first]) ** 2, axis=1)
    dmin[first] = -np.inf
    for k in range(1, n):
        nxt = int(np.argmax(dmin))
        order[k] = nxt
        dk = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(dmin, dk, out=dmin)
        dmin[nxt] = -np.inf
    return order


@dataclass
class SpatialGrid:
    """An ordered collection of distinct 2-D locations.

    ``order`` is the maxmin permutation: ``order[k]`` is the original index
    of the k-th point in maxmin order.
    """

    locations: np.ndarray
    order: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float64)
        self.order = np.asarray(self.order, dtype=np.int64)
        n = self.locations.shape[0]
        if self.order.shape != (n,) or not np.array_equal(
            np.sort(self.order), np.arange(n)
        ):
            raise OrderingError("order must be a permutation of 0..n-1")
        if np.unique(self.locations, axis=0).shape[0] != n:
            raise OrderingError("locations must be distinct")

    @classmethod
    def from_points(cls, locations) -> "SpatialGrid":
        locations = np.asarray(locations, dtype=np.float64)
        return cls(locations, maxmin_order(locations))

    @classmethod
    def regular(cls, rows: int, cols: int) -> "SpatialGrid":
        """Regular ``rows x cols`` grid over the unit square, row-major."""
        if rows < 1 or cols < 1:
            raise OrderingError("grid must have at least one row and column")
        xs = np.linspace(0.0, 1.0, cols) if cols > 1 else np.array([0.0])
        ys = np.linspace(0.0, 1.0, rows) if rows > 1 else np.array([0.0])
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        return cls.from_points(pts)

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def ordered_locations(self) -> np.ndarray:
        return self.locations[self.order]


@dataclass
class KnotNode:
    """One node of the knot hierarchy.

    ``members`` are positions in the maxmin sequence (ranks), ascending.
    Terminal nodes absorb whatever is left of their region without further
    splitting.
    """

    level: int
    path: tuple
    members: np.ndarray
    parent: Optional[int]  # index into KnotHierarchy.nodes
    terminal: bool = False


@dataclass
class KnotHierarchy:
    n: int
    J: int
    knots_per_level: tuple
    depth: int
    nodes: list = field(default_factory=list)

    def validate(self) -> None:
        seen = np.concatenate([nd.members for nd in self.nodes if nd.members.size])
        if seen.size != self.n or not np.array_equal(np.sort(seen), np.arange(self.n)):
            raise OrderingError("hierarchy nodes must partition 0..n-1")
        for k, nd in enumerate(self.nodes):
            if nd.parent is not None and nd.parent >= k:
                raise OrderingError("parents must precede children")


def build_hierarchy(
    grid: SpatialGrid,
    J: int = 2,
    knots_per_level: int | Sequence[int] = 8,
    depth: Optional[int] = None,
) -> KnotHierarchy:
    """Recursively partition the maxmin-ordered grid into knot sets.

    Level 0 keeps the first ``r_0`` points of the maxmin order as root
    knots.  The remaining points are split into ``J`` spatial regions
    (alternating-axis median bisection for J=2, an x/y median quadtree for
    J=4); within each region the ``r_m`` earliest points in maxmin order
    become that region's knots, and the recursion continues.  After level
    ``depth`` each region's leftovers are absorbed into a single terminal
    node.

    ``depth=None`` picks the smallest depth for which every terminal group
    has at most ``r`` members (``r`` being the last entry of
    ``knots_per_level``).
    """
    if J not in (2, 4):
        raise OrderingError("region splitting is defined for J=2 or J=4")
    if np.isscalar(knots_per_level):
        if int(knots_per_level) < 1:
            raise OrderingError("knots_per_level must be positive")
        uniform = int(knots_per_level)
        levels = None
    else:
        levels = tuple(int(r) for r in knots_per_level)
        if not levels or any(r < 1 for r in levels):
            raise OrderingError("knots_per_level must be positive")
        uniform = None

    if depth is None:
        if levels is not None:
            depth = len(levels) - 1
        else:
            limit = max(1, int(np.ceil(np.log(max(grid.n, 2)) / np.log(J))) + 2)
            for d in range(limit + 1):
                h = _build_with_depth(grid, J, (uniform,) * (d + 1), d)
                worst = max(
                    (nd.members.size for nd in h.nodes if nd.terminal), default=0
                )
                if worst <= uniform:
                    return h
            return h  # pragma: no cover - limit generous enough in practice
    if depth < 0:
        raise OrderingError("depth must be >= 0")
    if levels is None:
        levels = (uniform,) * (depth + 1)
    if len(levels) < depth + 1:
        raise OrderingError(
            f"knots_per_level supplies {len(levels)} levels but depth={depth} needs {depth + 1}"
        )
    return _build_with_depth(grid, J, levels, depth)


def _build_with_depth(grid, J, levels, depth) -> KnotHierarchy:
    pts = grid.ordered_locations
    h = KnotHierarchy(n=grid.n, J=J, knots_per_level=tuple(levels), depth=depth)

    def visit(members: np.ndarray, level: int, path: tuple, parent):
        if level > depth:
            h.nodes.append(KnotNode(level, path, members, parent, terminal=True))
            return
        r = levels[level]
        node_idx = len(h.nodes)
        h.nodes.append(KnotNode(level, path, members[:r], parent))
        rest = members[r:]
        if rest.size == 0:
            return
        if level == depth:
            visit(rest, level + 1, path + (1,), node_idx)
            return
        for g, grp in enumerate(_split_region(rest, pts, J, level), start=1):
            visit(grp, level + 1, path + (g,), node_idx)

    visit(np.arange(grid.n, dtype=np.int64), 0, (), None)
    h.validate()
    return h


def _split_region(members, pts, J, level):
    """Split remaining points into J spatial groups; empty groups allowed."""
    coords = pts[members]
    if J == 2:
        axis = level % 2
        cut = np.median(coords[:, axis])
        left = coords[:, axis] < cut
        return [members[left], members[~left]]
    cx = np.median(coords[:, 0])
    cy = np.median(coords[:, 1])
    lx = coords[:, 0] < cx
    ly = coords[:, 1] < cy
    return [
        members[lx & ly],
        members[lx & ~ly],
        members[~lx & ly],
        members[~lx & ~ly],
    ]


class SparsityPattern:
    """Lower-triangular boolean structure stored row-wise (CSR-like).

    Rows list their column indices ascending; the diagonal is always present
    and is therefore the last entry of each row.  ``N`` is the maximum
    number of stored entries in a row.
    """

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray):
        self.n = int(n)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        if self.indptr.shape != (self.n + 1,):
            raise OrderingError("indptr must have length n+1")
        if not _kernels.check_structure(self.indptr, self.indices):
            raise OrderingError(
                "pattern rows must be ascending, bounded by the diagonal, "
                "and contain the diagonal"
            )

    # -- constructors -------------------------------------------------
    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "SparsityPattern":
        n = len(rows)
        indptr = np.zeros(n + 1, dtype=np.int64)
        for i, r in enumerate(rows):
            indptr[i + 1] = indptr[i] + len(r)
        indices = (
            np.concatenate([np.asarray(r, dtype=np.int64) for r in rows])
            if n
            else np.empty(0, dtype=np.int64)
        )
        return cls(n, indptr, indices)

    # -- basic properties ---------------------------------------------
    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    @cached_property
    def max_row_nnz(self) -> int:
        return int(np.max(np.diff(self.indptr)))

    @cached_property
    def is_dense(self) -> bool:
        return self.nnz == self.n * (self.n + 1) // 2

    @cached_property
    def nested_rows(self) -> bool:
        """True when every row's support is prefix-nested (see module doc)."""
        return bool(_kernels.check_nested(self.indptr, self.indices))

    @cached_property
    def contiguous_rows(self) -> bool:
        """True when every row is a contiguous index range ending at i."""
        return bool(_kernels.check_contiguous(self.indptr, self.indices))

    @cached_property
    def row_index(self) -> np.ndarray:
        """Row id of every stored entry (aligned with ``indices``)."""
        return np.repeat(
            np.arange(self.n, dtype=np.int64), np.diff(self.indptr)
        )

    @cached_property
    def diag_slots(self) -> np.ndarray:
        return self.indptr[1:] - 1

    def row(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def __eq__(self, other):
        return (
            isinstance(other, SparsityPattern)
            and self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __repr__(self):
        return f"SparsityPattern(n={self.n}, nnz={self.nnz}, N={self.max_row_nnz})"

    # -- reversal -----------------------------------------------------
    @cached_property
    def _reversal(self):
        """Order-reversed pattern and the slot bijection between the two.

        Entry (i, j) of this pattern corresponds to entry
        (n-1-j, n-1-i) of the reversed pattern; ``slot_map[s]`` is the
        reversed slot holding the value for our slot ``s``.
        """
        rev_rows = self.n - 1 - self.indices
        rev_cols = self.n - 1 - self.row_index
        order = np.lexsort((rev_cols, rev_rows))
        rev_indices = rev_cols[order]
        counts = np.bincount(rev_rows, minlength=self.n)
        rev_indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(counts, out=rev_indptr[1:])
        rev = SparsityPattern(self.n, rev_indptr, rev_indices)
        slot_map = np.empty(self.nnz, dtype=np.int64)
        slot_map[order] = np.arange(self.nnz, dtype=np.int64)
        return rev, slot_map

    @property
    def reversed_pattern(self) -> "SparsityPattern":
        return self._reversal[0]

    @property
    def reversal_slot_map(self) -> np.ndarray:
        return self._reversal[1]

    # -- dense views ----------------------------------------------------
    def to_dense_bool(self) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=bool)
        out[self.row_index, self.indices] = True
        return out

    def pack_dense(self, full: np.ndarray) -> np.ndarray:
        """Values of a dense matrix at the stored positions."""
        return np.ascontiguousarray(full[self.row_index, self.indices])

    def unpack(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.row_index, self.indices] = values
        return out


def build_dense_pattern(n: int) -> SparsityPattern:
    """Full lower triangle; N equals n."""
    if n < 1:
        raise OrderingError("n must be >= 1")
    counts = np.arange(1, n + 1, dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.concatenate([np.arange(i + 1, dtype=np.int64) for i in range(n)])
    return SparsityPattern(n, indptr, indices)


def build_lowrank_pattern(n: int, ncols: int) -> SparsityPattern:
    """Diagonal plus the first ``ncols`` columns dense.

    Row i stores ``{0..min(i, ncols-1)} + {i}``, i.e. ``min(i+1, ncols+1)``
    entries, so the max row count is ``min(n, ncols+1)``.
    """
    if not 1 <= ncols <= n:
        raise OrderingError("ncols must satisfy 1 <= ncols <= n")
    rows = []
    for i in range(n):
        lead = np.arange(min(i, ncols), dtype=np.int64)
        rows.append(np.concatenate([lead, [i]]) if i else np.array([0], dtype=np.int64))
    return SparsityPattern.from_rows(rows)


def build_hv_pattern(h: KnotHierarchy):
    """Sparsity pattern of the knot hierarchy plus the hierarchy order.

    Variables are renumbered node by node (nodes in lexicographic path
    order, which is the construction's depth-first order; members within a
    node keep their maxmin order).  Row i stores the variables of all
    ancestor nodes, the earlier members of its own node, and itself.

    Returns
    -------
    (pattern, rank_order)
        ``rank_order[p]`` is the maxmin rank of the variable at pattern
        position ``p``.
    """
    n = h.n
    rank_order = np.empty(n, dtype=np.int64)
    node_base: list[Optional[np.ndarray]] = [None] * len(h.nodes)

    pos = 0
    rows: list[np.ndarray] = []
    for k, nd in enumerate(h.nodes):
        if nd.parent is None:
            ancestors = np.empty(0, dtype=np.int64)
        else:
            ancestors = node_base[nd.parent]
        m = nd.members.size
        own = np.arange(pos, pos + m, dtype=np.int64)
        node_base[k] = np.concatenate([ancestors, own])
        for q in range(m):
            rank_order[pos + q] = nd.members[q]
            rows.append(np.concatenate([ancestors, own[: q + 1]]))
        pos += m
    pattern = SparsityPattern.from_rows(rows)
    return pattern, rank_order


def hv_layout(
    grid: SpatialGrid,
    J: int = 2,
    knots_per_level: int | Sequence[int] = 8,
    depth: Optional[int] = None,
):
    """Hierarchy pattern plus the composed original-index permutation.

    ``perm[p]`` is the original location index of pattern position ``p``
    (maxmin order composed with the hierarchy renumbering).
    """
    h = build_hierarchy(grid, J=J, knots_per_level=knots_per_level, depth=depth)
    pattern, rank_order = build_hv_pattern(h)
    return pattern, grid.order[rank_order]


def hv_layout_for_target(grid: SpatialGrid, J: int, target_n: int):
    """Pick uniform knot counts so the pattern's N lands near ``target_n``.

    Searches uniform per-level knot counts (depth chosen automatically) and
    returns the layout whose max row count is closest to the target.  Used
    by the experiment drivers so hierarchy and low-rank baselines can be
    compared at matched conditioning-set size.
    """
    if target_n >= grid.n:
        pattern = build_dense_pattern(grid.n)
        return pattern, grid.order.copy()
    best = None
    lo = max(1, target_n // 12)
    hi = max(lo + 1, target_n)
    for r in range(lo, hi + 1):
        pattern, perm = hv_layout(grid, J=J, knots_per_level=r, depth=None)
        gap = abs(pattern.max_row_nnz - target_n)
        if best is None or gap < best[0]:
            best = (gap, pattern, perm)
        if gap == 0:
            break
    return best[1], best[2]


# -- text round-trip ----------------------------------------------------


def save_pattern(pattern: SparsityPattern, path) -> None:
    """Write the text format: header ``n N``, then one line per row."""
    with open(path, "w") as fh:
        fh.write(f"{pattern.n} {pattern.max_row_nnz}\n")
        for i in range(pattern.n):
            fh.write(" ".join(str(c) for c in pattern.row(i)) + "\n")


def load_pattern(path) -> SparsityPattern:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise OrderingError(f"{path}: malformed pattern header")
        n, nmax = int(header[0]), int(header[1])
        rows = []
        for i in range(n):
            line = fh.readline()
            if not line:
                raise OrderingError(f"{path}: truncated after {i} rows")
            rows.append([int(tok) for tok in line.split()])
    pattern = SparsityPattern.from_rows(rows)
    if pattern.max_row_nnz != nmax:
        raise OrderingError(
            f"{path}: header N={nmax} does not match rows (N={pattern.max_row_nnz})"
        )
    return pattern

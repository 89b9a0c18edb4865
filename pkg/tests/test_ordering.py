"""Ordering, hierarchy, and sparsity-pattern construction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvsmooth.ordering import (
    OrderingError,
    SpatialGrid,
    build_dense_pattern,
    build_hierarchy,
    build_hv_pattern,
    build_lowrank_pattern,
    hv_layout,
    load_pattern,
    maxmin_order,
    save_pattern,
)


def brute_force_maxmin(points):
    """Direct transcription of the definition, used as the oracle."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    centroid = pts.mean(axis=0)
    chosen = [int(np.argmin(np.linalg.norm(pts - centroid, axis=1)))]
    remaining = [i for i in range(n) if i != chosen[0]]
    while remaining:
        best, best_d = None, -1.0
        for i in remaining:
            d = min(np.linalg.norm(pts[i] - pts[j]) for j in chosen)
            if d > best_d + 1e-15 or (abs(d - best_d) <= 1e-15 and i < best):
                best, best_d = i, d
        chosen.append(best)
        remaining.remove(best)
    return chosen


class TestMaxminOrder:
    def test_single_point(self):
        assert maxmin_order([(0.5, 0.5)]).tolist() == [0]

    def test_three_on_a_line(self):
        # centroid (0.5, 0) picks index 1; indices 0 and 2 tie, lowest wins
        assert maxmin_order([(0, 0), (0.5, 0), (1, 0)]).tolist() == [1, 0, 2]

    def test_unit_square_corners(self):
        assert maxmin_order([(0, 0), (1, 0), (0, 1), (1, 1)]).tolist() == [0, 3, 1, 2]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pts = rng.uniform(size=(rng.integers(2, 15), 2))
            assert maxmin_order(pts).tolist() == brute_force_maxmin(pts)

    def test_duplicates_rejected(self):
        with pytest.raises(OrderingError):
            maxmin_order([(0, 0), (1, 1), (0, 0)])

    def test_is_permutation_and_deterministic(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(size=(40, 2))
        order = maxmin_order(pts)
        assert np.array_equal(np.sort(order), np.arange(40))
        assert np.array_equal(order, maxmin_order(pts))

    def test_shuffle_gives_distance_equivalent_sequence(self):
        # reordering the input may permute tie-broken picks, but the
        # multiset of achieved min-distances is invariant
        rng = np.random.default_rng(4)
        pts = rng.uniform(size=(30, 2))
        shuffle = rng.permutation(30)

        def min_dists(p, order):
            out = []
            for k in range(1, len(order)):
                prev = p[order[:k]]
                out.append(np.min(np.linalg.norm(prev - p[order[k]], axis=1)))
            return np.sort(out)

        d1 = min_dists(pts, maxmin_order(pts))
        d2 = min_dists(pts[shuffle], maxmin_order(pts[shuffle]))
        np.testing.assert_allclose(d1, d2, rtol=1e-12)


class TestHierarchy:
    def test_degenerate_single_node(self):
        g = SpatialGrid.regular(2, 2)
        h = build_hierarchy(g, J=2, knots_per_level=4, depth=0)
        assert len(h.nodes) == 1
        assert h.nodes[0].members.size == 4

    def test_line_of_six(self):
        # r=(2,1), depth=1: root keeps 2, each half keeps 1 knot and sends
        # the rest to its terminal node
        pts = [(x, 0.0) for x in np.linspace(0, 1, 6)]
        g = SpatialGrid.from_points(pts)
        h = build_hierarchy(g, J=2, knots_per_level=(2, 1), depth=1)
        root = h.nodes[0]
        assert root.level == 0 and root.members.tolist() == [0, 1]
        level1 = [nd for nd in h.nodes if nd.level == 1]
        terminals = [nd for nd in h.nodes if nd.terminal]
        assert [nd.members.size for nd in level1] == [1, 1]
        assert sum(nd.members.size for nd in terminals) == 2
        for nd in terminals:
            assert nd.level == 2

    def test_depth_zero_terminal_absorption(self):
        g = SpatialGrid.regular(3, 3)
        h = build_hierarchy(g, J=2, knots_per_level=4, depth=0)
        assert [nd.level for nd in h.nodes] == [0, 1]
        assert h.nodes[1].terminal
        assert h.nodes[1].members.size == g.n - 4

    def test_partition_invariants(self):
        g = SpatialGrid.regular(7, 5)
        h = build_hierarchy(g, J=4, knots_per_level=3, depth=2)
        members = np.concatenate([nd.members for nd in h.nodes])
        assert np.array_equal(np.sort(members), np.arange(g.n))
        # every node's members fall inside the parent's remaining region,
        # hence carry larger maxmin ranks than the parent's knots
        for nd in h.nodes:
            if nd.parent is not None and nd.members.size:
                parent = h.nodes[nd.parent]
                if parent.members.size:
                    assert nd.members.min() > parent.members.max()

    def test_nodes_in_lexicographic_path_order(self):
        g = SpatialGrid.regular(6, 6)
        h = build_hierarchy(g, J=4, knots_per_level=2, depth=2)
        paths = [nd.path for nd in h.nodes]
        assert paths == sorted(paths)

    def test_exhausted_levels_error(self):
        g = SpatialGrid.regular(4, 4)
        with pytest.raises(OrderingError, match="depth"):
            build_hierarchy(g, J=2, knots_per_level=(2, 2), depth=3)

    def test_auto_depth_bounds_terminal_size(self):
        g = SpatialGrid.regular(8, 8)
        h = build_hierarchy(g, J=2, knots_per_level=5)
        worst = max(nd.members.size for nd in h.nodes if nd.terminal)
        assert worst <= 5


class TestHvPattern:
    def test_single_node_is_dense(self):
        g = SpatialGrid.regular(2, 3)
        h = build_hierarchy(g, J=2, knots_per_level=g.n, depth=0)
        pattern, order = build_hv_pattern(h)
        assert pattern == build_dense_pattern(g.n)
        assert np.array_equal(np.sort(order), np.arange(g.n))

    def test_two_leaves_share_only_root(self):
        pts = [(x, 0.0) for x in np.linspace(0, 1, 6)]
        g = SpatialGrid.from_points(pts)
        h = build_hierarchy(g, J=2, knots_per_level=(2, 1), depth=1)
        pattern, order = build_hv_pattern(h)
        dense = pattern.to_dense_bool()
        # variables 0,1 root; 2..3 one leaf branch; 4..5 the other
        leaf_a = [2, 3]
        leaf_b = [4, 5]
        for i in leaf_b:
            for j in leaf_a:
                assert not dense[i, j]
            for j in (0, 1):
                assert dense[i, j]
        assert dense[3, 2] and dense[5, 4]

    def test_row_count_along_deepest_path(self):
        pts = [(x, 0.0) for x in np.linspace(0, 1, 6)]
        g = SpatialGrid.from_points(pts)
        h = build_hierarchy(g, J=2, knots_per_level=(2, 1), depth=1)
        pattern, _ = build_hv_pattern(h)
        # r0 + r1 + terminal group size = 2 + 1 + 1
        assert pattern.max_row_nnz == 4

    def test_nested_and_reversal_contiguous(self):
        g = SpatialGrid.regular(6, 6)
        pattern, _ = hv_layout(g, J=2, knots_per_level=3)
        assert pattern.nested_rows
        assert pattern.reversed_pattern.contiguous_rows

    def test_ancestor_supports_are_prefixes(self):
        g = SpatialGrid.regular(5, 5)
        pattern, _ = hv_layout(g, J=2, knots_per_level=2)
        for i in range(pattern.n):
            row = pattern.row(i)
            for p, j in enumerate(row[:-1]):
                assert pattern.row(j).tolist() == row[: p + 1].tolist()


class TestReferencePatterns:
    def test_lowrank_rows(self):
        p = build_lowrank_pattern(3, 1)
        assert [p.row(i).tolist() for i in range(3)] == [[0], [0, 1], [0, 2]]

    def test_lowrank_full_equals_dense(self):
        assert build_lowrank_pattern(3, 3) == build_dense_pattern(3)
        assert build_lowrank_pattern(7, 7) == build_dense_pattern(7)

    def test_lowrank_row_counts(self):
        ncols = 4
        p = build_lowrank_pattern(9, ncols)
        for i in range(9):
            assert p.indptr[i + 1] - p.indptr[i] == min(i + 1, ncols + 1)

    def test_lowrank_bounds(self):
        with pytest.raises(OrderingError):
            build_lowrank_pattern(3, 0)
        with pytest.raises(OrderingError):
            build_lowrank_pattern(3, 4)

    def test_dense_small(self):
        assert [build_dense_pattern(1).row(0).tolist()] == [[0]]
        p = build_dense_pattern(2)
        assert [p.row(i).tolist() for i in range(2)] == [[0], [0, 1]]
        assert build_dense_pattern(5).max_row_nnz == 5

    @given(st.integers(min_value=1, max_value=30), st.data())
    @settings(max_examples=25, deadline=None)
    def test_structural_invariants(self, n, data):
        kind = data.draw(st.sampled_from(["dense", "lowrank"]))
        if kind == "dense":
            p = build_dense_pattern(n)
        else:
            p = build_lowrank_pattern(n, data.draw(st.integers(1, n)))
        dense = p.to_dense_bool()
        assert dense.diagonal().all()
        assert not np.triu(dense, 1).any()
        assert p.max_row_nnz == int(np.diff(p.indptr).max())


def test_pattern_text_round_trip(tmp_path):
    g = SpatialGrid.regular(4, 4)
    pattern, _ = hv_layout(g, J=2, knots_per_level=3)
    path = tmp_path / "pattern.txt"
    save_pattern(pattern, path)
    header = path.read_text().splitlines()[0].split()
    assert header == [str(pattern.n), str(pattern.max_row_nnz)]
    assert load_pattern(path) == pattern


def test_hv_layout_composed_permutation():
    g = SpatialGrid.regular(5, 5)
    pattern, perm = hv_layout(g, J=2, knots_per_level=4)
    assert np.array_equal(np.sort(perm), np.arange(g.n))
    # first r0 pattern positions are the first r0 maxmin picks
    assert set(perm[:4]) == set(g.order[:4])

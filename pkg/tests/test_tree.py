import math

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from conftest import brute_force_max_packing
from expfam_minimax.bounds import segment_entropy, volumetric_entropy
from expfam_minimax.errors import InvariantViolation, NodeCapExceeded
from expfam_minimax.geometry import MonotoneLatticeSet, segment_set, singleton_set
from expfam_minimax.tree import (
    build_level2,
    build_tree,
    dump_tree,
    load_tree,
    prune_level,
    separation_at,
)


def unit_segment(resolution=1e-3):
    return segment_set([0.0], [1.0], resolution=resolution)


def path_bound(d, c, j_prime):
    return d * (2 + 4 * c) / (c * 2**j_prime)


class TestLevel2:
    def test_singleton(self):
        pts = build_level2(singleton_set([0.5, 0.5]), c=4)
        assert np.array_equal(pts, [[0.5, 0.5]])

    def test_unit_segment_against_bruteforce(self):
        # greedy from the root at 0 picks {0, 1, 0.5}; the exact optimum is 4
        cs = unit_segment(0.01)
        pts = build_level2(cs, None, 4)
        best = brute_force_max_packing(cs.candidate_cloud(), 0.25)
        assert best == 4
        assert sorted(pts[:, 0].tolist()) == [0.0, 0.5, 1.0]
        assert 2 * len(pts) >= best

    def test_monotone_separation(self):
        cs = MonotoneLatticeSet(1, 4, 1.0, cloud_budget=200)
        pts = build_level2(cs, None, 8)
        dd = cdist(pts, pts)
        assert np.all(dd[np.triu_indices(len(pts), 1)] > cs.diameter / 8)
        assert all(cs.contains(p) for p in pts)


class TestPruneLevel:
    def test_separated_input_unchanged(self):
        t = separation_at(1.0, 4.0, 3)
        prelim = [(1, [0.0]), (2, [2 * t]), (3, [4 * t])]
        survivors, log = prune_level(prelim, 3, 4.0, 1.0, {1: [0], 2: [0], 3: [0]}, {0: [1, 2, 3]})
        assert survivors == [1, 2, 3] and log == []

    def test_coincident_nodes_merge(self):
        parents = {1: [10], 2: [20]}
        offspring = {10: [1], 20: [2]}
        survivors, log = prune_level([(2, [0.3]), (1, [0.3])], 3, 4.0, 1.0, parents, offspring)
        assert survivors == [1]
        assert log == [(1, [2], [20])]
        assert offspring[20] == [1] and sorted(parents[1]) == [10, 20]

    def test_chain(self):
        t = separation_at(1.0, 4.0, 4)
        prelim = [(1, [0.0]), (2, [0.9 * t]), (3, [1.8 * t])]
        parents = {1: [0], 2: [0], 3: [0]}
        survivors, log = prune_level(prelim, 4, 4.0, 1.0, parents, {0: [1, 2, 3]})
        assert survivors == [1, 3]
        assert log == [(1, [2], [0])]


def independent_checks(tree, cloud):
    """Recompute the level and path guarantees without the library's checker."""
    d, c = tree.d, tree.c
    for J in range(3, tree.depth + 1):
        pts = tree.points(tree.levels[J - 1])
        dd = cdist(pts, pts)
        assert np.all(dd[np.triu_indices(len(pts), 1)] > d / (2 ** (J - 1) * c))
        assert cdist(cloud, pts).min(axis=1).max() <= d / (2 ** (J - 2) * c)
    rng = np.random.default_rng(0)
    for _ in range(100):
        node, path = tree.root, [tree.root]
        while tree.offspring.get(node):
            kids = tree.offspring[node]
            node = kids[rng.integers(len(kids))]
            path.append(node)
        pts = tree.points(path)
        for jp in range(len(path)):
            gap = np.linalg.norm(pts[jp:] - pts[jp], axis=1).max()
            assert gap <= path_bound(d, c, jp + 1) + 1e-12


class TestBuildTree:
    def test_jmax_two(self):
        tree = build_tree(unit_segment(0.01), None, 4.0, 2)
        assert tree.depth == 2
        assert tree.offspring[tree.root] == tree.levels[1]

    def test_segment_all_checks(self):
        cs = unit_segment()
        tree = build_tree(cs, None, 4.0, 6, entropy_oracle=segment_entropy(1.0))
        assert tree.report.ok, tree.report.summary()
        independent_checks(tree, cs.candidate_cloud())

    def test_level4_covering_bruteforce(self):
        cs = unit_segment()
        tree = build_tree(cs, None, 4.0, 6)
        lvl = tree.points(tree.levels[3])[:, 0]
        grid = cs.candidate_cloud()[:, 0]
        worst = max(np.abs(lvl - g).min() for g in grid)
        assert worst <= 1.0 / (4 * 4)

    def test_monotone_paths(self):
        cs = MonotoneLatticeSet(1, 8, 1.0, cloud_budget=400)
        tree = build_tree(cs, None, 8.0, 5, entropy_oracle=volumetric_entropy(8), node_cap=10**7)
        assert tree.report.checks["path_contraction"]
        independent_checks(tree, cs.candidate_cloud())

    def test_every_node_has_a_parent(self):
        tree = build_tree(unit_segment(0.01), None, 4.0, 5)
        for k in range(1, tree.depth):
            for u in tree.levels[k]:
                assert tree.parents[u]
                assert all(u in tree.offspring[p] for p in tree.parents[u])
                assert all(p in tree.levels[k - 1] for p in tree.parents[u])

    def test_pruning_never_grows_levels(self):
        tree = build_tree(unit_segment(0.01), None, 4.0, 6)
        prelim = tree.report.preliminary_sizes
        assert all(f <= p for f, p in zip(tree.report.level_sizes, prelim))

    def test_pruning_log_parents(self):
        tree = build_tree(unit_segment(0.01), None, 4.0, 6)
        for rec in tree.pruning_log:
            assert len(rec.parents) == len(rec.absorbed)
            assert all(p in tree.parents[rec.absorber] for p in rec.parents)

    def test_rebuild_is_identical(self, tmp_path):
        cs = MonotoneLatticeSet(1, 8, 1.0, cloud_budget=200, seed=3)
        a = build_tree(cs, None, 8.0, 5, node_cap=10**7)
        b = build_tree(MonotoneLatticeSet(1, 8, 1.0, cloud_budget=200, seed=3), None, 8.0, 5,
                       node_cap=10**7)
        dump_tree(a, tmp_path / "a.txt")
        dump_tree(b, tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_round_trip(self, tmp_path):
        tree = build_tree(unit_segment(0.01), None, 4.0, 5)
        dump_tree(tree, tmp_path / "t.txt")
        back = load_tree(tmp_path / "t.txt")
        assert back.levels == tree.levels
        assert np.array_equal(back.coords, tree.coords)
        assert back.parents == tree.parents
        assert (back.d, back.c) == (tree.d, tree.c)
        dump_tree(back, tmp_path / "u.txt")
        assert (tmp_path / "u.txt").read_bytes() == (tmp_path / "t.txt").read_bytes()

    def test_node_cap(self):
        cs = MonotoneLatticeSet(1, 8, 1.0, cloud_budget=400)
        with pytest.raises(NodeCapExceeded):
            build_tree(cs, None, 8.0, 5, node_cap=100)

    def test_cardinality_violation_is_reported(self):
        # an oracle claiming log N = 0 cannot bound offspring sets of size > 1
        with pytest.raises(InvariantViolation) as info:
            build_tree(unit_segment(0.01), None, 4.0, 4, entropy_oracle=lambda e, c: 0.0)
        assert info.value.clause == "offspring_cardinality"
        assert info.value.witnesses
        tree = build_tree(unit_segment(0.01), None, 4.0, 4, entropy_oracle=lambda e, c: 0.0,
                          strict=False)
        assert not tree.report.checks["offspring_cardinality"]

    def test_singleton_tree(self):
        tree = build_tree(singleton_set([1.0, -1.0]), None, 4.0, 4)
        assert all(len(lvl) == 1 for lvl in tree.levels)
        assert tree.report.ok

    def test_offspring_are_packings(self):
        cs = unit_segment(0.01)
        tree = build_tree(cs, None, 4.0, 5)
        for J in range(3, tree.depth + 1):
            for u in tree.levels[J - 2]:
                kids = tree.points(tree.offspring[u])
                r = tree.d / 2 ** (J - 2)
                assert np.all(np.linalg.norm(kids - tree.point(u), axis=1) <= r + tree.d / (2 ** (J - 1) * tree.c))

    @pytest.mark.parametrize("length,eps,c", [(1.0, 0.5, 3.3), (1.0, 0.2, 4.0), (0.3, 1.0, 8.0)])
    def test_segment_entropy_is_exact(self, length, eps, c):
        # the ball of radius eps about the midpoint meets the segment in length min(2 eps, L)
        span = min(2 * eps, length)
        grid = np.linspace(0.0, span, 241)[:, None]
        best = brute_force_max_packing(grid, eps / c)
        assert segment_entropy(length)(eps, c) == pytest.approx(math.log(best))

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import balanced_binary_tree, path_walk_distance, random_tree, tree_seeds
from popood.errors import ConstraintViolationError, FormatError, InvalidArgumentError, InvalidClassError, InvalidTreeError
from popood.hierarchy import (
    DistanceMatrix,
    LabelTree,
    SimilarityMatrix,
    augment_with_proxies,
    build_distance_matrix,
    builtin_tree,
    distance_to_similarity,
    format_tree,
    lca_distance,
    load_distance_matrix,
    load_similarity_matrix,
    load_tree,
    parse_tree,
    resolve_tree,
    save_distance_matrix,
    save_similarity_matrix,
    similarity_map,
)

TOY3_D = [[0, 1, 3], [1, 0, 3], [3, 3, 0]]
TOY3_DPOP = [[0, 1, 3, 4], [1, 0, 3, 4], [3, 3, 0, 4], [4, 4, 4, 0]]


class TestLabelTree:
    def test_rejects_two_roots(self):
        with pytest.raises(InvalidTreeError, match="one root"):
            LabelTree((("a", None, 0), ("b", None, 0)), ("a", "b"))

    def test_rejects_non_increasing_height(self):
        with pytest.raises(InvalidTreeError, match="higher"):
            LabelTree((("r", None, 1), ("m", "r", 1), ("x", "m", 0), ("y", "r", 0)), ("x", "y"))

    def test_rejects_unknown_parent(self):
        with pytest.raises(InvalidTreeError, match="unknown parent"):
            LabelTree((("r", None, 1), ("x", "q", 0)), ("x",))

    def test_rejects_leaf_with_children(self):
        with pytest.raises(InvalidTreeError):
            LabelTree((("r", None, 2), ("m", "r", 1), ("x", "m", 0)), ("m", "x"))

    def test_rejects_unlisted_childless_node(self):
        with pytest.raises(InvalidTreeError, match="missing"):
            LabelTree((("r", None, 1), ("x", "r", 0), ("y", "r", 0)), ("x",))

    def test_rejects_nonzero_leaf_height(self):
        with pytest.raises(InvalidTreeError):
            LabelTree((("r", None, 2), ("x", "r", 1)), ("x",))

    def test_single_leaf_tree(self):
        tree = LabelTree((("only", None, 0),), ("only",))
        assert tree.num_classes == 1
        assert build_distance_matrix(tree).entries.tolist() == [[0.0]]


class TestLcaDistance:
    def test_cat_horse_share_animal(self, cifar10):
        cat, horse = cifar10.leaves.index("cat"), cifar10.leaves.index("horse")
        assert lca_distance(cifar10, cat, horse) == 2

    def test_identity(self, cifar10):
        for k in range(cifar10.num_classes):
            assert lca_distance(cifar10, k, k) == 0

    def test_out_of_range(self, toy3):
        with pytest.raises(InvalidClassError):
            lca_distance(toy3, 0, 3)
        with pytest.raises(InvalidClassError):
            lca_distance(toy3, -1, 0)

    def test_balanced_binary_tree_matches_path_walk(self):
        tree = balanced_binary_tree(3)
        assert tree.num_classes == 8
        pairs = list(itertools.combinations(range(8), 2))
        assert len(pairs) == 28
        for a, b in pairs:
            assert lca_distance(tree, a, b) == path_walk_distance(tree, a, b)

    @given(seed=tree_seeds, n=st.integers(1, 64))
    @settings(max_examples=60, deadline=None)
    def test_random_trees_match_path_walk(self, seed, n):
        tree = random_tree(np.random.default_rng(seed), n)
        d = build_distance_matrix(tree).entries
        for a in range(n):
            for b in range(n):
                assert d[a, b] == path_walk_distance(tree, a, b)

    @given(seed=tree_seeds, n=st.integers(1, 12))
    @settings(max_examples=80, deadline=None)
    def test_symmetric_and_zero_only_on_diagonal(self, seed, n):
        tree = random_tree(np.random.default_rng(seed), n)
        for a in range(n):
            for b in range(n):
                d = lca_distance(tree, a, b)
                assert d == lca_distance(tree, b, a)
                assert (d == 0) == (a == b)

    @given(seed=tree_seeds, n=st.integers(1, 12))
    @settings(max_examples=80, deadline=None)
    def test_ultrametric_bound(self, seed, n):
        tree = random_tree(np.random.default_rng(seed), n)
        d = build_distance_matrix(tree).entries
        for a, b, c in itertools.product(range(n), repeat=3):
            assert d[a, c] <= max(d[a, b], d[b, c])


class TestDistanceMatrix:
    def test_toy3_exact(self, toy3):
        dist = build_distance_matrix(toy3)
        assert dist.entries.tolist() == TOY3_D
        assert dist.num_proxies == 0
        assert dist.d_max == 3

    def test_cifar10_d_max(self, cifar10):
        assert build_distance_matrix(cifar10).d_max == 3

    def test_read_only(self, toy3):
        dist = build_distance_matrix(toy3)
        with pytest.raises(ValueError):
            dist.entries[0, 1] = 7

    def test_rejects_asymmetric(self):
        with pytest.raises(InvalidArgumentError):
            DistanceMatrix([[0, 1], [2, 0]], num_id=2)


class TestAugment:
    def test_toy3_single_proxy_exact(self, toy3):
        pop = augment_with_proxies(build_distance_matrix(toy3), 1, 4)
        assert pop.entries.tolist() == TOY3_DPOP
        assert (pop.num_id, pop.num_proxies, pop.proxy_distance) == (3, 1, 4.0)

    def test_cifar10_two_proxies(self, cifar10):
        pop = augment_with_proxies(build_distance_matrix(cifar10), 2, 4)
        assert pop.entries.shape == (12, 12)
        assert pop.entries[10:, 10:].tolist() == [[0, 4], [4, 0]]
        assert np.all(pop.entries[:10, 10:] == 4)

    def test_two_proxies_symmetric_zero_diagonal(self, toy3):
        pop = augment_with_proxies(build_distance_matrix(toy3), 2, 5.5)
        assert np.array_equal(pop.entries, pop.entries.T)
        assert np.all(np.diag(pop.entries) == 0)

    @pytest.mark.parametrize("d", [3, 2, 0.5, 3.0])
    def test_distance_must_exceed_d_max(self, toy3, d):
        with pytest.raises(ConstraintViolationError, match="d_max = 3"):
            augment_with_proxies(build_distance_matrix(toy3), 1, d)

    def test_fractional_distance_accepted(self, toy3):
        pop = augment_with_proxies(build_distance_matrix(toy3), 1, 3.25)
        assert pop.entries[0, 3] == 3.25

    @pytest.mark.parametrize("c", [0, -1, 1.5])
    def test_bad_proxy_count(self, toy3, c):
        with pytest.raises(InvalidArgumentError):
            augment_with_proxies(build_distance_matrix(toy3), c, 4)

    def test_cannot_augment_twice(self, toy3):
        pop = augment_with_proxies(build_distance_matrix(toy3), 1, 4)
        with pytest.raises(InvalidArgumentError):
            augment_with_proxies(pop, 1, 5)

    @given(seed=tree_seeds, n=st.integers(1, 20), c=st.integers(1, 5), extra=st.floats(0.01, 10))
    @settings(max_examples=50, deadline=None)
    def test_id_block_unchanged(self, seed, n, c, extra):
        dist = build_distance_matrix(random_tree(np.random.default_rng(seed), n))
        pop = augment_with_proxies(dist, c, dist.d_max + extra)
        assert np.array_equal(pop.entries[:n, :n], dist.entries)
        off = pop.entries[n:, :] [~np.eye(n + c, dtype=bool)[n:, :]]
        assert np.all(off == dist.d_max + extra)


class TestSimilarity:
    def test_phi_values(self):
        assert similarity_map([0, 1, 3, 4]).tolist() == [1.0, 0.5, 0.25, 0.2]

    def test_toy3_similarity(self, toy3):
        sim = distance_to_similarity(build_distance_matrix(toy3))
        assert sim.entries.tolist() == [[1, 0.5, 0.25], [0.5, 1, 0.25], [0.25, 0.25, 1]]

    @given(seed=tree_seeds, n=st.integers(2, 12))
    @settings(max_examples=50, deadline=None)
    def test_range_symmetry_monotonicity(self, seed, n):
        dist = build_distance_matrix(random_tree(np.random.default_rng(seed), n))
        sim = distance_to_similarity(dist)
        s, d = sim.entries, dist.entries
        assert np.all((s > 0) & (s <= 1))
        assert np.array_equal(s, s.T)
        assert np.all(np.diag(s) == 1)
        for i, j, k in itertools.product(range(n), repeat=3):
            if d[i, j] < d[i, k]:
                assert s[i, j] > s[i, k]

    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            SimilarityMatrix([[1, 1.5], [1.5, 1]], num_id=2)


class TestFormats:
    def test_tree_round_trip(self, tmp_path, cifar10):
        path = tmp_path / "tree.txt"
        path.write_text(format_tree(cifar10))
        again = load_tree(path)
        assert again.leaves == cifar10.leaves
        assert np.array_equal(build_distance_matrix(again).entries, build_distance_matrix(cifar10).entries)

    def test_resolve_tree_by_path_and_name(self, tmp_path, toy3):
        path = tmp_path / "t.txt"
        path.write_text(format_tree(toy3))
        assert resolve_tree(str(path)).leaves == resolve_tree("toy3").leaves

    def test_unknown_builtin(self):
        with pytest.raises(InvalidArgumentError):
            builtin_tree("nope")

    def test_parse_error_has_line(self):
        with pytest.raises(FormatError) as info:
            parse_tree("root - 1\nx root\nleaves: x\n", "t.txt")
        assert info.value.line == 2
        assert "t.txt:2" in str(info.value)

    def test_parse_error_missing_leaves(self):
        with pytest.raises(FormatError, match="leaves"):
            parse_tree("root - 0\n")

    def test_invalid_tree_surfaces_as_format_error(self):
        with pytest.raises(FormatError, match="higher"):
            parse_tree("r - 1\nm r 1\nx m 0\ny r 0\nleaves: x y\n")

    def test_matrix_round_trip(self, tmp_path, cifar10):
        pop = augment_with_proxies(build_distance_matrix(cifar10), 2, 4.5)
        save_distance_matrix(tmp_path / "d.csv", pop)
        again = load_distance_matrix(tmp_path / "d.csv")
        assert np.array_equal(again.entries, pop.entries)
        assert (again.num_id, again.num_proxies, again.proxy_distance) == (10, 2, 4.5)
        sim = distance_to_similarity(pop)
        save_similarity_matrix(tmp_path / "s.csv", sim)
        assert np.array_equal(load_similarity_matrix(tmp_path / "s.csv").entries, sim.entries)

    def test_matrix_bad_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# 2 2 2 0\n0,1\n1,zero\n")
        with pytest.raises(FormatError) as info:
            load_distance_matrix(path)
        assert info.value.line == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            load_tree(tmp_path / "absent.txt")

"""Tests for maximum spanning arborescence decoding.

The oracle enumerates every head assignment, keeps the valid trees, and
maximizes the summed arc score by exhaustion. The decoder must match its
optimum exactly on random matrices, in both root regimes.
"""

import itertools

import numpy as np
import pytest

from dialparse.decoder import (
    DecoderError,
    ParseTree,
    assign_labels,
    greedy_heads,
    mst_decode,
    tree_score,
)


def is_valid_tree(heads):
    """heads[i] is the head of token i+1; True iff all tokens reach 0."""
    n = len(heads)
    for start in range(1, n + 1):
        v = start
        seen = set()
        while v != 0:
            if v in seen or heads[v - 1] == v:
                return False
            seen.add(v)
            v = heads[v - 1]
    return True


def brute_force_best(scores, single_root=False):
    """(best_score, best_heads) by exhaustive enumeration."""
    n = scores.shape[0] - 1
    best_score = -np.inf
    best_heads = None
    for combo in itertools.product(range(n + 1), repeat=n):
        heads = list(combo)
        if any(h == i + 1 for i, h in enumerate(heads)):
            continue
        if not is_valid_tree(heads):
            continue
        if single_root and sum(1 for h in heads if h == 0) != 1:
            continue
        total = tree_score(scores, heads)
        if total > best_score:
            best_score = total
            best_heads = heads
    return best_score, best_heads


class TestKnownCases:
    def test_single_token(self):
        s = np.array([[0.0, 0.0], [3.0, 0.0]])
        tree = mst_decode(s)
        assert tree.heads == [0]
        assert tree.root_children() == [1]

    def test_two_tokens_chain(self):
        # Token 1 strongly prefers the root, token 2 prefers token 1.
        s = np.zeros((3, 3))
        s[1, 0], s[1, 2] = 9.0, 1.0
        s[2, 0], s[2, 1] = 2.0, 7.0
        assert mst_decode(s).heads == [0, 1]

    def test_cycle_gets_broken(self):
        # Greedy picks 1<->2, which must be broken; the unique optimum
        # attaches token 1 to the root and keeps 2 -> 1 and 3 -> 1.
        s = np.full((4, 4), 0.0)
        s[1, 0], s[1, 2], s[1, 3] = 5.0, 10.0, 0.0
        s[2, 0], s[2, 1], s[2, 3] = 3.0, 9.0, 0.0
        s[3, 0], s[3, 1], s[3, 2] = 1.0, 8.0, 2.0
        assert greedy_heads(s)[:2] == [2, 1]
        tree = mst_decode(s)
        assert tree.heads == [0, 1, 1]
        assert tree_score(s, tree.heads) == 22.0

    def test_all_equal_scores_prefer_small_heads(self):
        s = np.ones((4, 4))
        tree = mst_decode(s, single_root=False)
        assert tree.heads == [0, 0, 0]
        tree = mst_decode(s, single_root=True)
        assert tree.heads == [0, 1, 1]

    def test_single_root_fallback_prefers_first_candidate_on_tie(self):
        s = np.zeros((3, 3))
        s[1, 0], s[1, 2] = 10.0, 0.0
        s[2, 0], s[2, 1] = 10.0, 0.0
        assert mst_decode(s, single_root=False).heads == [0, 0]
        assert mst_decode(s, single_root=True).heads == [0, 1]

    def test_masked_column_respected(self):
        # Only token 2 may attach to the root.
        s = np.random.default_rng(0).uniform(0, 1, size=(4, 4))
        s[1:, 0] = -np.inf
        s[2, 0] = 50.0
        tree = mst_decode(s)
        assert tree.heads[1] == 0
        assert tree.root_children() == [2]


class TestAgainstBruteForce:
    def test_unconstrained_matches_exhaustive_optimum(self):
        rng = np.random.default_rng(2024)
        for trial in range(250):
            n = int(rng.integers(2, 7))
            s = rng.uniform(-5, 5, size=(n + 1, n + 1))
            tree = mst_decode(s, single_root=False)
            assert is_valid_tree(tree.heads)
            best_score, _ = brute_force_best(s)
            got = tree_score(s, tree.heads)
            assert got == pytest.approx(best_score, abs=1e-9), (
                f"trial {trial}: decoder {got} vs exhaustive {best_score}"
            )

    def test_single_root_matches_exhaustive_optimum(self):
        rng = np.random.default_rng(2025)
        for trial in range(250):
            n = int(rng.integers(2, 7))
            s = rng.uniform(-5, 5, size=(n + 1, n + 1))
            tree = mst_decode(s, single_root=True)
            assert is_valid_tree(tree.heads)
            assert len(tree.root_children()) == 1
            best_score, _ = brute_force_best(s, single_root=True)
            got = tree_score(s, tree.heads)
            assert got == pytest.approx(best_score, abs=1e-9), (
                f"trial {trial}: decoder {got} vs exhaustive {best_score}"
            )

    def test_integer_scores_force_tie_handling(self):
        rng = np.random.default_rng(77)
        for trial in range(100):
            n = int(rng.integers(2, 6))
            s = rng.integers(0, 3, size=(n + 1, n + 1)).astype(float)
            tree = mst_decode(s, single_root=False)
            assert is_valid_tree(tree.heads)
            best_score, _ = brute_force_best(s)
            assert tree_score(s, tree.heads) == pytest.approx(best_score, abs=0)


class TestDeterminism:
    def test_identical_input_identical_output(self):
        rng = np.random.default_rng(5)
        s = rng.uniform(-1, 1, size=(7, 7))
        first = mst_decode(s.copy(), single_root=True)
        second = mst_decode(s.copy(), single_root=True)
        assert first.heads == second.heads

    def test_input_matrix_not_mutated(self):
        s = np.random.default_rng(6).uniform(-1, 1, size=(5, 5))
        copy = s.copy()
        mst_decode(s)
        np.testing.assert_array_equal(s, copy)


class TestValidation:
    def test_nan_rejected(self):
        s = np.zeros((3, 3))
        s[1, 2] = np.nan
        with pytest.raises(DecoderError):
            mst_decode(s)

    def test_positive_inf_rejected(self):
        s = np.zeros((3, 3))
        s[2, 1] = np.inf
        with pytest.raises(DecoderError):
            mst_decode(s)

    def test_non_square_rejected(self):
        with pytest.raises(DecoderError):
            mst_decode(np.zeros((3, 4)))

    def test_too_small_rejected(self):
        with pytest.raises(DecoderError):
            mst_decode(np.zeros((1, 1)))

    def test_fully_masked_row_rejected(self):
        s = np.zeros((3, 3))
        s[1, :] = -np.inf
        with pytest.raises(DecoderError):
            mst_decode(s)

    def test_masked_root_column_rejected_under_single_root(self):
        s = np.random.default_rng(8).uniform(0, 1, size=(4, 4))
        s[1:, 0] = -np.inf
        with pytest.raises(DecoderError):
            mst_decode(s, single_root=True)


class TestLabels:
    def test_argmax_per_row(self):
        tree = ParseTree(heads=[0, 1])
        rows = np.array([[0.1, 0.9, 0.0], [2.0, -1.0, 1.5]])
        assign_labels(tree, rows)
        assert tree.label_ids == [1, 0]

    def test_row_count_mismatch_rejected(self):
        tree = ParseTree(heads=[0, 1, 1])
        with pytest.raises(DecoderError):
            assign_labels(tree, np.zeros((2, 4)))

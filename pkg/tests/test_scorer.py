"""Tests for biaffine arc and relation scoring."""

import numpy as np
import pytest

from dialparse.autodiff import (
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    finite_difference_check,
)
from dialparse.scorer import (
    BiaffineParams,
    ScorerConfig,
    arc_scores,
    head_distribution,
    init_scorer,
    rel_scores,
    rel_scores_for_pairs,
)


def make_params(d_rep, d_a, d_r, n_labels, seed=0, randomize=False):
    rng = np.random.default_rng(seed)
    params = init_scorer(
        ScorerConfig(d_a=d_a, d_r=d_r, n_labels=n_labels, dropout=0.33), d_rep, rng
    )
    if randomize:
        for p in params.parameters():
            p.data = rng.uniform(-0.5, 0.5, size=p.data.shape)
    return params


def naive_mlp(r, w, b):
    return np.maximum(r @ w + b, 0.0)


def naive_arc_scores(params, r):
    d_a = params.config.d_a
    dep = naive_mlp(r, params.arc_dep_w.data, params.arc_dep_b.data)
    head = naive_mlp(r, params.arc_head_w.data, params.arc_head_b.data)
    u_d = params.v_arc.data[:d_a, 0]
    u_h = params.v_arc.data[d_a:, 0]
    n1 = r.shape[0]
    out = np.zeros((n1, n1))
    for i in range(n1):
        for j in range(n1):
            out[i, j] = (
                dep[i] @ params.u_arc.data @ head[j]
                + u_d @ dep[i]
                + u_h @ head[j]
                + params.b_arc.data[0, 0]
            )
    return out


def naive_rel_scores(params, r, dependents, heads):
    dep = naive_mlp(r, params.rel_dep_w.data, params.rel_dep_b.data)
    head = naive_mlp(r, params.rel_head_w.data, params.rel_head_b.data)
    nl = params.config.n_labels
    out = np.zeros((len(dependents), nl))
    for k, (i, j) in enumerate(zip(dependents, heads)):
        pair = np.concatenate([dep[i], head[j]])
        for l in range(nl):
            out[k, l] = (
                dep[i] @ params.u_rel.data[l] @ head[j]
                + params.w_rel.data[l] @ pair
                + params.b_rel.data[l]
            )
    return out


class TestInit:
    def test_biaffine_weights_start_at_zero(self):
        params = make_params(12, 8, 6, 4)
        for p in (params.u_arc, params.v_arc, params.b_arc, params.u_rel,
                  params.w_rel, params.b_rel):
            assert np.all(p.data == 0.0)

    def test_shapes(self):
        params = make_params(12, 8, 6, 4)
        assert params.arc_dep_w.data.shape == (12, 8)
        assert params.rel_head_w.data.shape == (12, 6)
        assert params.u_arc.data.shape == (8, 8)
        assert params.v_arc.data.shape == (16, 1)
        assert params.u_rel.data.shape == (4, 6, 6)
        assert params.w_rel.data.shape == (4, 12)
        assert params.b_rel.data.shape == (4,)

    def test_parameter_count(self):
        params = make_params(12, 8, 6, 4)
        assert len(params.parameters()) == 14

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ScorerConfig(d_a=0, d_r=4, n_labels=2).validate()
        with pytest.raises(ValueError):
            ScorerConfig(d_a=4, d_r=4, n_labels=0).validate()
        with pytest.raises(ValueError):
            ScorerConfig(d_a=4, d_r=4, n_labels=2, dropout=1.0).validate()


class TestArcScores:
    def test_zero_params_give_constant_scores(self):
        params = make_params(10, 8, 6, 3)
        tape = Tape()
        r = Tensor(np.random.default_rng(1).uniform(-1, 1, size=(5, 10)))
        s = arc_scores(tape, params, r)
        assert s.shape == (5, 5)
        assert np.all(s.data == 0.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            n1 = int(rng.integers(2, 7))
            d_rep = int(rng.integers(3, 9))
            params = make_params(d_rep, int(rng.integers(2, 6)),
                                 3, 2, seed=trial, randomize=True)
            r = rng.normal(size=(n1, d_rep))
            tape = Tape()
            s = arc_scores(tape, params, Tensor(r))
            expected = naive_arc_scores(params, r)
            np.testing.assert_allclose(s.data, expected, rtol=0, atol=1e-10)

    def test_identity_reduction_inner_products(self):
        # With identity MLPs, identity bilinear form, and nonnegative
        # inputs (so the ReLU is transparent), scores reduce to r @ r.T.
        d = 6
        params = make_params(d, d, 4, 2)
        params.arc_dep_w.data = np.eye(d)
        params.arc_head_w.data = np.eye(d)
        params.u_arc.data = np.eye(d)
        r = np.random.default_rng(3).uniform(0.0, 1.0, size=(4, d))
        tape = Tape()
        s = arc_scores(tape, params, Tensor(r))
        np.testing.assert_allclose(s.data, r @ r.T, rtol=0, atol=1e-12)

    def test_dep_and_head_vector_terms_are_separate(self):
        # The dependent vector term must be constant along rows of a
        # fixed dependent, the head term along columns of a fixed head.
        d = 5
        params = make_params(d, d, 4, 2)
        params.arc_dep_w.data = np.eye(d)
        params.arc_head_w.data = np.eye(d)
        params.v_arc.data[:d, 0] = np.arange(1.0, d + 1.0)  # u_d only
        r = np.random.default_rng(4).uniform(0.0, 1.0, size=(3, d))
        tape = Tape()
        s = arc_scores(tape, params, Tensor(r))
        for i in range(3):
            expected = np.arange(1.0, d + 1.0) @ r[i]
            np.testing.assert_allclose(s.data[i], expected, atol=1e-12)

    def test_gradients_by_finite_differences(self):
        params = make_params(6, 5, 4, 3, seed=11, randomize=True)
        r0 = np.random.default_rng(12).normal(size=(4, 6))

        def f():
            tape = Tape()
            s = arc_scores(tape, params, Tensor(r0))
            return tape, tape.sum(tape.mul(s, s))

        result = finite_difference_check(f, params.parameters())
        assert result.max_rel_error < 1e-7


class TestHeadDistribution:
    def test_uniform_under_zero_scores(self):
        tape = Tape()
        row = Tensor(np.zeros((1, 4)))
        p = head_distribution(tape, row, [True, True, True, True])
        np.testing.assert_allclose(p.data, np.full((1, 4), 0.25), atol=1e-15)

    def test_masked_heads_get_exactly_zero(self):
        tape = Tape()
        row = Tensor(np.array([[5.0, 1.0, 3.0]]))
        p = head_distribution(tape, row, [False, True, True])
        assert p.data[0, 0] == 0.0
        assert abs(p.data.sum() - 1.0) < 1e-12
        e = np.exp([1.0, 3.0])
        np.testing.assert_allclose(p.data[0, 1:], e / e.sum(), atol=1e-12)

    def test_shift_invariance(self):
        tape = Tape()
        row = np.array([[0.3, -1.2, 2.5, 0.0]])
        mask = [True, False, True, True]
        p1 = head_distribution(tape, Tensor(row), mask)
        p2 = head_distribution(tape, Tensor(row + 1000.0), mask)
        np.testing.assert_allclose(p1.data, p2.data, atol=1e-12)

    def test_all_masked_raises(self):
        tape = Tape()
        with pytest.raises(ShapeError):
            head_distribution(tape, Tensor(np.zeros((1, 3))), [False] * 3)

    def test_mask_shape_mismatch_raises(self):
        tape = Tape()
        with pytest.raises(ShapeError):
            head_distribution(tape, Tensor(np.zeros((1, 3))), [True, True])


class TestRelScores:
    def test_zero_params_give_zero_scores(self):
        params = make_params(10, 8, 6, 5)
        tape = Tape()
        r = Tensor(np.random.default_rng(2).normal(size=(4, 10)))
        s = rel_scores_for_pairs(tape, params, r, [1, 2, 3], [0, 1, 1])
        assert s.shape == (3, 5)
        assert np.all(s.data == 0.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(9)
        for trial in range(20):
            n1 = int(rng.integers(2, 7))
            d_rep = int(rng.integers(3, 8))
            nl = int(rng.integers(1, 5))
            params = make_params(d_rep, 4, int(rng.integers(2, 6)), nl,
                                 seed=100 + trial, randomize=True)
            r = rng.normal(size=(n1, d_rep))
            deps = [int(rng.integers(0, n1)) for _ in range(n1)]
            heads = [int(rng.integers(0, n1)) for _ in range(n1)]
            tape = Tape()
            s = rel_scores_for_pairs(tape, params, Tensor(r), deps, heads)
            expected = naive_rel_scores(params, r, deps, heads)
            np.testing.assert_allclose(s.data, expected, rtol=0, atol=1e-10)

    def test_single_pair_matches_batched(self):
        params = make_params(7, 5, 4, 3, seed=21, randomize=True)
        r = np.random.default_rng(22).normal(size=(5, 7))
        deps = [1, 2, 3, 4]
        heads = [0, 1, 1, 2]
        tape = Tape()
        batched = rel_scores_for_pairs(tape, params, Tensor(r), deps, heads)
        for k, (i, j) in enumerate(zip(deps, heads)):
            single = rel_scores(Tape(), params, Tensor(r), i, j)
            np.testing.assert_allclose(single.data[0], batched.data[k], atol=1e-12)

    def test_length_mismatch_raises(self):
        params = make_params(7, 5, 4, 3)
        with pytest.raises(ShapeError):
            rel_scores_for_pairs(Tape(), params, Tensor(np.zeros((3, 7))), [1], [0, 1])

    def test_single_label_softmax_is_one(self):
        params = make_params(7, 5, 4, 1, seed=31, randomize=True)
        tape = Tape()
        r = Tensor(np.random.default_rng(32).normal(size=(3, 7)))
        s = rel_scores(tape, params, r, 1, 0)
        p = tape.row_softmax(s)
        np.testing.assert_allclose(p.data, [[1.0]], atol=1e-15)

    def test_gradients_by_finite_differences(self):
        params = make_params(6, 4, 5, 3, seed=41, randomize=True)
        r0 = np.random.default_rng(42).normal(size=(4, 6))

        def f():
            tape = Tape()
            s = rel_scores_for_pairs(tape, params, Tensor(r0), [1, 2, 3], [0, 3, 1])
            return tape, tape.sum(tape.mul(s, s))

        result = finite_difference_check(f, params.parameters())
        assert result.max_rel_error < 1e-7


class TestDropout:
    def test_train_mode_perturbs_scores(self):
        params = make_params(8, 6, 5, 3, seed=51, randomize=True)
        r = Tensor(np.random.default_rng(52).normal(size=(4, 8)))
        plain = arc_scores(Tape(), params, r)
        rng = np.random.default_rng(53)
        dropped = arc_scores(Tape(), params, r, train_mode=True, rng=rng)
        assert not np.allclose(plain.data, dropped.data)

    def test_eval_mode_is_deterministic(self):
        params = make_params(8, 6, 5, 3, seed=61, randomize=True)
        r = Tensor(np.random.default_rng(62).normal(size=(4, 8)))
        a = arc_scores(Tape(), params, r)
        b = arc_scores(Tape(), params, r)
        np.testing.assert_array_equal(a.data, b.data)

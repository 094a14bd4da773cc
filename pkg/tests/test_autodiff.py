"""Tests for the reverse-mode tape: forward oracles and gradient checks.

Oracles here are written independently of the implementation: matmul as
an explicit triple loop, softmax via math.exp on scalars, bilinear and
pairwise bilinear as index loops. Gradients are validated by the
central-difference harness, which is itself validated on a closed-form
quadratic first.
"""

import math

import numpy as np
import pytest

from dialparse.autodiff import (
    FDResult,
    NondeterministicLossError,
    Parameter,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    finite_difference_check,
    zero_grads,
)

RNG_SEED = 42


def naive_matmul(a, b):
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def scalar_softmax(values):
    exps = [math.exp(v - max(values)) for v in values]
    z = sum(exps)
    return [e / z for e in exps]


def naive_bilinear(d, u, h):
    n, p = d.shape
    m = h.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = d[i] @ u @ h[j]
    return out


def naive_pairwise_bilinear(d, u3, h):
    n = d.shape[0]
    nl = u3.shape[0]
    out = np.zeros((n, nl))
    for i in range(n):
        for l in range(nl):
            out[i, l] = d[i] @ u3[l] @ h[i]
    return out


class TestForwardOracles:
    def test_matmul_matches_triple_loop(self):
        rng = np.random.default_rng(RNG_SEED)
        for _ in range(20):
            n, k, m = rng.integers(1, 7, size=3)
            a = rng.normal(size=(n, k))
            b = rng.normal(size=(k, m))
            got = Tape().matmul(Tensor(a), Tensor(b)).data
            np.testing.assert_allclose(got, naive_matmul(a, b), atol=1e-12)

    def test_softmax_of_zeros_is_uniform(self):
        out = Tape().row_softmax(Tensor(np.zeros((1, 4))))
        np.testing.assert_allclose(out.data, np.full((1, 4), 0.25), atol=0)

    def test_softmax_frozen_values(self):
        # scalar_softmax([1,2,3]) computed independently
        expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748218]
        out = Tape().row_softmax(Tensor(np.array([[1.0, 2.0, 3.0]])))
        np.testing.assert_allclose(out.data[0], expected, atol=1e-15)
        np.testing.assert_allclose(out.data[0], scalar_softmax([1.0, 2.0, 3.0]), atol=1e-15)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(RNG_SEED)
        x = rng.normal(size=(3, 5))
        a = Tape().row_softmax(Tensor(x)).data
        b = Tape().row_softmax(Tensor(x + 1234.5)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_softmax_huge_scores_stable(self):
        out = Tape().row_softmax(Tensor(np.array([[1e9, 1e9 + 1.0]])))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data.sum(), 1.0, atol=1e-12)

    def test_log_softmax_consistent_with_softmax(self):
        rng = np.random.default_rng(RNG_SEED)
        x = rng.normal(size=(4, 6)) * 5
        ls = Tape().log_softmax(Tensor(x)).data
        sm = Tape().row_softmax(Tensor(x)).data
        np.testing.assert_allclose(np.exp(ls), sm, atol=1e-12)

    def test_masked_entries_get_zero_probability(self):
        x = np.array([[1.0, -np.inf, 2.0]])
        out = Tape().row_softmax(Tensor(x))
        assert out.data[0, 1] == 0.0
        np.testing.assert_allclose(out.data.sum(), 1.0, atol=1e-12)

    def test_fully_masked_row_rejected(self):
        x = np.full((1, 3), -np.inf)
        with pytest.raises(ShapeError, match="masked"):
            Tape().row_softmax(Tensor(x))
        with pytest.raises(ShapeError, match="masked"):
            Tape().log_softmax(Tensor(x))

    def test_bilinear_identity_reduces_to_dot(self):
        rng = np.random.default_rng(RNG_SEED)
        d = rng.normal(size=(3, 4))
        h = rng.normal(size=(5, 4))
        out = Tape().bilinear(Tensor(d), Tensor(np.eye(4)), Tensor(h)).data
        np.testing.assert_allclose(out, d @ h.T, atol=1e-12)

    def test_bilinear_matches_loop(self):
        rng = np.random.default_rng(RNG_SEED)
        d = rng.normal(size=(3, 4))
        u = rng.normal(size=(4, 5))
        h = rng.normal(size=(6, 5))
        out = Tape().bilinear(Tensor(d), Tensor(u), Tensor(h)).data
        np.testing.assert_allclose(out, naive_bilinear(d, u, h), atol=1e-12)

    def test_pairwise_bilinear_matches_loop(self):
        rng = np.random.default_rng(RNG_SEED)
        d = rng.normal(size=(5, 3))
        u3 = rng.normal(size=(4, 3, 6))
        h = rng.normal(size=(5, 6))
        out = Tape().pairwise_bilinear(Tensor(d), Tensor(u3), Tensor(h)).data
        np.testing.assert_allclose(out, naive_pairwise_bilinear(d, u3, h), atol=1e-12)

    def test_nll_matches_manual(self):
        logp = np.log(np.array([[0.2, 0.8], [0.5, 0.5]]))
        out = Tape().nll_from_log_probs(Tensor(logp), [1, 0])
        expected = -(math.log(0.8) + math.log(0.5))
        np.testing.assert_allclose(out.item(), expected, atol=1e-12)

    def test_matmul_nt_matches_transpose(self):
        rng = np.random.default_rng(RNG_SEED)
        a = rng.normal(size=(3, 5))
        b = rng.normal(size=(4, 5))
        out = Tape().matmul_nt(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(out, a @ b.T, atol=1e-14)

    def test_shape_errors_name_operands(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\)"):
            Tape().matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        with pytest.raises(ShapeError):
            Tape().add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


class TestBackward:
    def test_sum_scale_gradient(self):
        # loss = sum(3 * p) so dL/dp = 3 everywhere
        p = Parameter(np.array([[1.0, -2.0], [0.5, 4.0]]), "p")
        tape = Tape()
        loss = tape.sum(tape.scale(p, 3.0))
        tape.backward(loss)
        np.testing.assert_allclose(p.grad, np.full((2, 2), 3.0), atol=0)

    def test_double_use_accumulates(self):
        p = Parameter(np.array([[2.0]]), "p")
        tape = Tape()
        loss = tape.sum(tape.add(p, p))
        tape.backward(loss)
        np.testing.assert_allclose(p.grad, [[2.0]], atol=0)

    def test_grads_accumulate_across_backward_calls(self):
        p = Parameter(np.array([[1.0]]), "p")
        for _ in range(2):
            tape = Tape()
            loss = tape.sum(tape.scale(p, 1.0))
            tape.backward(loss)
        np.testing.assert_allclose(p.grad, [[2.0]], atol=0)
        p.zero_grad()
        np.testing.assert_allclose(p.grad, [[0.0]], atol=0)

    def test_embedding_duplicate_ids_scatter_add(self):
        table = Parameter(np.zeros((3, 2)), "emb")
        tape = Tape()
        rows = tape.embedding_lookup(table, [1, 1, 2])
        loss = tape.sum(rows)
        tape.backward(loss)
        np.testing.assert_allclose(table.grad, [[0, 0], [2, 2], [1, 1]], atol=0)

    def test_backward_requires_scalar(self):
        p = Parameter(np.ones((2, 2)), "p")
        tape = Tape()
        out = tape.scale(p, 2.0)
        with pytest.raises(ShapeError, match="scalar"):
            tape.backward(out)

    def test_backward_twice_rejected(self):
        p = Parameter(np.ones((1, 1)), "p")
        tape = Tape()
        loss = tape.sum(p)
        tape.backward(loss)
        with pytest.raises(TapeError):
            tape.backward(loss)

    def test_no_record_tape_cannot_backward(self):
        p = Parameter(np.ones((1, 1)), "p")
        tape = Tape(record=False)
        loss = tape.sum(p)
        with pytest.raises(TapeError):
            tape.backward(loss)

    def test_unused_parameter_keeps_zero_grad(self):
        p = Parameter(np.ones((2, 2)), "p")
        q = Parameter(np.ones((2, 2)), "q")
        tape = Tape()
        loss = tape.sum(p)
        tape.backward(loss)
        np.testing.assert_allclose(q.grad, np.zeros((2, 2)), atol=0)


class TestFiniteDifferences:
    def test_quadratic_closed_form(self):
        # f(p) = sum(p*p): analytic gradient 2p, central difference exact
        rng = np.random.default_rng(RNG_SEED)
        p = Parameter(rng.uniform(-0.5, 0.5, size=(3, 4)), "p")

        def f():
            tape = Tape()
            loss = tape.sum(tape.mul(p, p))
            return tape, loss

        result = finite_difference_check(f, [p], eps=1e-5)
        assert result.max_rel_error < 1e-9

    def test_composite_network_gradients(self):
        # exercise matmul, add broadcast, tanh, relu, sigmoid, concat,
        # slices, bilinear forms, softmax losses in one closure
        rng = np.random.default_rng(RNG_SEED)
        w1 = Parameter(rng.uniform(-0.5, 0.5, size=(4, 6)), "w1")
        b1 = Parameter(rng.uniform(-0.5, 0.5, size=(6,)), "b1")
        u = Parameter(rng.uniform(-0.5, 0.5, size=(3, 3)), "u")
        u3 = Parameter(rng.uniform(-0.5, 0.5, size=(2, 3, 3)), "u3")
        x = rng.normal(size=(5, 4))

        def f():
            tape = Tape()
            hidden = tape.tanh(tape.add(tape.matmul(Tensor(x), w1), b1))
            a = tape.relu(tape.slice_cols(hidden, 0, 3))
            b = tape.sigmoid(tape.slice_cols(hidden, 3, 6))
            scores = tape.bilinear(a, u, b)
            pair = tape.pairwise_bilinear(a, u3, b)
            both = tape.concat([scores, pair], axis=1)
            logp = tape.log_softmax(both)
            nll = tape.nll_from_log_probs(logp, [0, 3, 6, 1, 4])
            rev = tape.sum(tape.reverse_rows(tape.transpose(hidden)))
            return tape, tape.add(nll, tape.scale(rev, 0.01))

        result = finite_difference_check(f, [w1, b1, u, u3], eps=1e-5)
        assert result.max_rel_error < 1e-7, result

    def test_dropout_enabled_violates_precondition(self):
        rng = np.random.default_rng(RNG_SEED)
        p = Parameter(rng.normal(size=(4, 4)), "p")
        drop_rng = np.random.default_rng(0)

        def f():
            tape = Tape()
            loss = tape.sum(tape.dropout(p, 0.5, drop_rng))
            return tape, loss

        with pytest.raises(NondeterministicLossError):
            finite_difference_check(f, [p], eps=1e-5)

    def test_result_identifies_offending_entry(self):
        p = Parameter(np.array([[1.0, 2.0]]), "p")

        def f():
            tape = Tape()
            return tape, tape.sum(tape.mul(p, p))

        result = finite_difference_check(f, [p], eps=1e-5)
        assert isinstance(result, FDResult)
        assert result.worst_param == "p"
        assert result.n_entries == 2


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        out = Tape().dropout(x, 0.0, np.random.default_rng(0))
        assert out is x

    def test_inverted_scaling_preserves_expectation(self):
        rng = np.random.default_rng(RNG_SEED)
        x = Tensor(np.ones((200, 200)))
        out = Tape().dropout(x, 0.33, rng)
        surviving = out.data[out.data != 0.0]
        np.testing.assert_allclose(surviving[0], 1.0 / 0.67, atol=1e-12)
        assert abs(out.data.mean() - 1.0) < 0.02

    def test_gradient_uses_same_mask(self):
        p = Parameter(np.ones((4, 4)), "p")
        tape = Tape()
        out = tape.dropout(p, 0.5, np.random.default_rng(7))
        loss = tape.sum(out)
        tape.backward(loss)
        # gradient is 1/keep where kept, 0 where dropped, matching forward
        np.testing.assert_allclose(p.grad, (out.data != 0) / 0.5, atol=0)

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            Tape().dropout(Tensor(np.ones(3)), 1.0, np.random.default_rng(0))


class TestBroadcastAdjoints:
    def test_row_vector_bias(self):
        a = Parameter(np.zeros((3, 2)), "a")
        b = Parameter(np.array([1.0, 2.0]), "b")
        tape = Tape()
        loss = tape.sum(tape.add(a, b))
        tape.backward(loss)
        np.testing.assert_allclose(b.grad, [3.0, 3.0], atol=0)

    def test_column_vector(self):
        a = Parameter(np.zeros((3, 2)), "a")
        b = Parameter(np.ones((3, 1)), "b")
        tape = Tape()
        loss = tape.sum(tape.add(a, b))
        tape.backward(loss)
        np.testing.assert_allclose(b.grad, [[2.0], [2.0], [2.0]], atol=0)

    def test_scalar_like(self):
        a = Parameter(np.zeros((2, 2)), "a")
        b = Parameter(np.array([[5.0]]), "b")
        tape = Tape()
        loss = tape.sum(tape.add(a, b))
        tape.backward(loss)
        np.testing.assert_allclose(b.grad, [[4.0]], atol=0)

    def test_zero_grads_helper(self):
        ps = [Parameter(np.ones((2, 2)), f"p{i}") for i in range(3)]
        for p in ps:
            p.grad += 1.0
        zero_grads(ps)
        for p in ps:
            np.testing.assert_allclose(p.grad, np.zeros((2, 2)), atol=0)

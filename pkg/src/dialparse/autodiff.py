"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records every primitive in forward order together with a pull
closure that propagates the output adjoint to the operands. Because
forward order is a topological order of the computation graph,
replaying the pulls in reverse yields exact gradients. Gradients
accumulate additively, so a Parameter used in several places (or in
several sentences of one batch) collects all contributions.

All primitive forwards and adjoints operate on numpy float64 arrays;
numpy supplies storage and BLAS only, never derivatives. The
finite-difference harness at the bottom is the independent check that
every adjoint rule matches central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested primitive."""


class TapeError(RuntimeError):
    """Tape misuse: backward on a non-recording or already-used tape."""


class NondeterministicLossError(RuntimeError):
    """finite_difference_check precondition violated: f() is not stable."""


class Tensor:
    """A dense float64 array with an additively accumulated gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def accumulate_at(self, index, g: np.ndarray) -> None:
        """Accumulate into a basic-sliced view without materializing zeros."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad[index] += g

    def accumulate_rows(self, ids, g: np.ndarray) -> None:
        """Scatter-add rows; duplicate ids must sum, hence np.add.at."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        np.add.at(self.grad, ids, g)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """A named trainable Tensor whose gradient buffer persists."""

    __slots__ = ("name",)

    def __init__(self, data, name: str) -> None:
        super().__init__(data)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over the axes that numpy broadcasting expanded to reach it."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _require_2d(name: str, *tensors: Tensor) -> None:
    for t in tensors:
        if t.data.ndim != 2:
            raise ShapeError(f"{name}: expected 2-D operand, got shape {t.shape}")


class Tape:
    """Forward-order op recorder. One forward/backward pass per tape.

    With record=False the tape computes forwards only (evaluation mode);
    backward on such a tape is an error.
    """

    def __init__(self, record: bool = True) -> None:
        self.record = record
        self._ops: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._used = False

    def _push(self, out: Tensor, pull: Callable[[np.ndarray], None]) -> None:
        if self.record:
            self._ops.append((out, pull))

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and replay adjoints in reverse order."""
        if not self.record:
            raise TapeError("backward on a tape created with record=False")
        if self._used:
            raise TapeError("backward already ran on this tape")
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._used = True
        loss.accumulate(np.ones_like(loss.data))
        for out, pull in reversed(self._ops):
            if out.grad is not None:
                pull(out.grad)

    # ---- primitives ------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        _require_2d("matmul", a, b)
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        out = Tensor(a.data @ b.data)

        def pull(g: np.ndarray) -> None:
            a.accumulate(g @ b.data.T)
            b.accumulate(a.data.T @ g)

        self._push(out, pull)
        return out

    def matmul_nt(self, a: Tensor, b: Tensor) -> Tensor:
        """a @ b.T for 2-D operands sharing their second dimension."""
        _require_2d("matmul_nt", a, b)
        if a.shape[1] != b.shape[1]:
            raise ShapeError(f"matmul_nt: {a.shape} x {b.shape}^T")
        out = Tensor(a.data @ b.data.T)

        def pull(g: np.ndarray) -> None:
            a.accumulate(g @ b.data)
            b.accumulate(g.T @ a.data)

        self._push(out, pull)
        return out

    def transpose(self, x: Tensor) -> Tensor:
        _require_2d("transpose", x)
        out = Tensor(x.data.T.copy())

        def pull(g: np.ndarray) -> None:
            x.accumulate(g.T)

        self._push(out, pull)
        return out

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            data = a.data + b.data
        except ValueError as exc:
            raise ShapeError(f"add: {a.shape} + {b.shape}") from exc
        out = Tensor(data)

        def pull(g: np.ndarray) -> None:
            a.accumulate(_unbroadcast(g, a.shape))
            b.accumulate(_unbroadcast(g, b.shape))

        self._push(out, pull)
        return out

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            data = a.data * b.data
        except ValueError as exc:
            raise ShapeError(f"mul: {a.shape} * {b.shape}") from exc
        out = Tensor(data)

        def pull(g: np.ndarray) -> None:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
            b.accumulate(_unbroadcast(g * a.data, b.shape))

        self._push(out, pull)
        return out

    def add_const(self, x: Tensor, const: np.ndarray) -> Tensor:
        """Add a non-differentiated constant (mask fills use -inf here)."""
        out = Tensor(x.data + const)

        def pull(g: np.ndarray) -> None:
            x.accumulate(_unbroadcast(g, x.shape))

        self._push(out, pull)
        return out

    def scale(self, x: Tensor, c: float) -> Tensor:
        c = float(c)
        out = Tensor(x.data * c)

        def pull(g: np.ndarray) -> None:
            x.accumulate(g * c)

        self._push(out, pull)
        return out

    def tanh(self, x: Tensor) -> Tensor:
        out = Tensor(np.tanh(x.data))

        def pull(g: np.ndarray) -> None:
            x.accumulate(g * (1.0 - out.data * out.data))

        self._push(out, pull)
        return out

    def relu(self, x: Tensor) -> Tensor:
        out = Tensor(np.maximum(x.data, 0.0))

        def pull(g: np.ndarray) -> None:
            x.accumulate(g * (x.data > 0.0))

        self._push(out, pull)
        return out

    def sigmoid(self, x: Tensor) -> Tensor:
        # stable in both tails
        d = x.data
        out_data = np.empty_like(d)
        pos = d >= 0
        out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        ez = np.exp(d[~pos])
        out_data[~pos] = ez / (1.0 + ez)
        out = Tensor(out_data)

        def pull(g: np.ndarray) -> None:
            x.accumulate(g * out.data * (1.0 - out.data))

        self._push(out, pull)
        return out

    def concat(self, xs: list[Tensor], axis: int = 0) -> Tensor:
        if not xs:
            raise ShapeError("concat: empty operand list")
        out = Tensor(np.concatenate([x.data for x in xs], axis=axis))
        sizes = [x.shape[axis] for x in xs]
        offsets = np.cumsum([0] + sizes)

        def pull(g: np.ndarray) -> None:
            for x, start, stop in zip(xs, offsets[:-1], offsets[1:]):
                if axis == 0:
                    x.accumulate(g[start:stop])
                else:
                    x.accumulate(g[:, start:stop])

        self._push(out, pull)
        return out

    def slice_rows(self, x: Tensor, start: int, stop: int) -> Tensor:
        _require_2d("slice_rows", x)
        out = Tensor(x.data[start:stop].copy())

        def pull(g: np.ndarray) -> None:
            x.accumulate_at(np.s_[start:stop], g)

        self._push(out, pull)
        return out

    def slice_cols(self, x: Tensor, start: int, stop: int) -> Tensor:
        _require_2d("slice_cols", x)
        out = Tensor(x.data[:, start:stop].copy())

        def pull(g: np.ndarray) -> None:
            x.accumulate_at(np.s_[:, start:stop], g)

        self._push(out, pull)
        return out

    def reverse_rows(self, x: Tensor) -> Tensor:
        out = Tensor(x.data[::-1].copy())

        def pull(g: np.ndarray) -> None:
            x.accumulate(g[::-1])

        self._push(out, pull)
        return out

    def row_softmax(self, x: Tensor) -> Tensor:
        """Softmax along the last axis with max subtraction.

        -inf entries act as masks and get probability exactly 0; a fully
        masked row is an argument error.
        """
        mx = np.max(x.data, axis=-1, keepdims=True)
        if np.any(np.isneginf(mx)):
            raise ShapeError("row_softmax: a row is fully masked (-inf)")
        e = np.exp(x.data - mx)
        out = Tensor(e / e.sum(axis=-1, keepdims=True))

        def pull(g: np.ndarray) -> None:
            s = out.data
            x.accumulate(s * (g - np.sum(g * s, axis=-1, keepdims=True)))

        self._push(out, pull)
        return out

    def log_softmax(self, x: Tensor) -> Tensor:
        mx = np.max(x.data, axis=-1, keepdims=True)
        if np.any(np.isneginf(mx)):
            raise ShapeError("log_softmax: a row is fully masked (-inf)")
        shifted = x.data - mx
        out = Tensor(shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True)))

        def pull(g: np.ndarray) -> None:
            softmax = np.exp(out.data)
            x.accumulate(g - softmax * g.sum(axis=-1, keepdims=True))

        self._push(out, pull)
        return out

    def nll_from_log_probs(self, logp: Tensor, targets) -> Tensor:
        """Sum of -logp[i, targets[i]] over rows, as a scalar."""
        _require_2d("nll_from_log_probs", logp)
        idx = np.asarray(targets, dtype=np.int64)
        m, k = logp.shape
        if idx.ndim != 1 or idx.shape[0] != m:
            raise ShapeError(
                f"nll_from_log_probs: {m} rows vs targets shape {idx.shape}"
            )
        if np.any(idx < 0) or np.any(idx >= k):
            raise ShapeError("nll_from_log_probs: target index out of range")
        rows = np.arange(m)
        out = Tensor(-logp.data[rows, idx].sum())

        def pull(g: np.ndarray) -> None:
            gl = np.zeros_like(logp.data)
            gl[rows, idx] = -float(g)
            logp.accumulate(gl)

        self._push(out, pull)
        return out

    def embedding_lookup(self, table: Tensor, ids) -> Tensor:
        _require_2d("embedding_lookup", table)
        idx = np.asarray(ids, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= table.shape[0]):
            raise ShapeError(
                f"embedding_lookup: id out of range for table {table.shape}"
            )
        out = Tensor(table.data[idx])

        def pull(g: np.ndarray) -> None:
            table.accumulate_rows(idx, g)

        self._push(out, pull)
        return out

    def gather_rows(self, x: Tensor, ids) -> Tensor:
        """Row gather with scatter-add adjoint (same rule as embeddings)."""
        return self.embedding_lookup(x, ids)

    def bilinear(self, d: Tensor, u: Tensor, h: Tensor) -> Tensor:
        """d @ u @ h.T: all pairwise scores d_i^T U h_j."""
        _require_2d("bilinear", d, u, h)
        if d.shape[1] != u.shape[0] or u.shape[1] != h.shape[1]:
            raise ShapeError(f"bilinear: {d.shape} x {u.shape} x {h.shape}^T")
        du = d.data @ u.data
        out = Tensor(du @ h.data.T)

        def pull(g: np.ndarray) -> None:
            d.accumulate(g @ (h.data @ u.data.T))
            u.accumulate(d.data.T @ (g @ h.data))
            h.accumulate(g.T @ du)

        self._push(out, pull)
        return out

    def pairwise_bilinear(self, d: Tensor, u3: Tensor, h: Tensor) -> Tensor:
        """Per-row, per-label bilinear scores: out[i, l] = d_i^T U_l h_i.

        d is (n, p), u3 is (L, p, q), h is (n, q); the result is (n, L).
        Used for relation scoring where each dependent row is paired with
        one head row (gold at train time, predicted at parse time).
        """
        if d.data.ndim != 2 or h.data.ndim != 2 or u3.data.ndim != 3:
            raise ShapeError(
                f"pairwise_bilinear: {d.shape}, {u3.shape}, {h.shape}"
            )
        n, p = d.shape
        if h.shape[0] != n or u3.shape[1] != p or u3.shape[2] != h.shape[1]:
            raise ShapeError(
                f"pairwise_bilinear: {d.shape}, {u3.shape}, {h.shape}"
            )
        out = Tensor(np.einsum("ip,lpq,iq->il", d.data, u3.data, h.data))

        def pull(g: np.ndarray) -> None:
            d.accumulate(np.einsum("il,lpq,iq->ip", g, u3.data, h.data))
            u3.accumulate(np.einsum("il,ip,iq->lpq", g, d.data, h.data))
            h.accumulate(np.einsum("il,ip,lpq->iq", g, d.data, u3.data))

        self._push(out, pull)
        return out

    def dropout(self, x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
        """Inverted dropout: surviving activations divided by keep prob."""
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate {rate} outside [0, 1)")
        if rate == 0.0:
            return x
        keep = 1.0 - rate
        mask = (rng.random(x.shape) >= rate) / keep
        out = Tensor(x.data * mask)

        def pull(g: np.ndarray) -> None:
            x.accumulate(g * mask)

        self._push(out, pull)
        return out

    def sum(self, x: Tensor) -> Tensor:
        out = Tensor(x.data.sum())

        def pull(g: np.ndarray) -> None:
            x.accumulate(np.full(x.shape, float(g)))

        self._push(out, pull)
        return out


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class FDResult:
    """Worst-case finite-difference comparison over all parameter entries."""

    max_rel_error: float
    worst_param: str | None
    worst_index: tuple | None
    n_entries: int


def finite_difference_check(f, params, eps: float = 1e-5) -> FDResult:
    """Compare analytic gradients against central differences.

    f is a closure returning (tape, loss Tensor) built from the live
    Parameter objects in params. It must be deterministic: the harness
    calls it twice up front and raises NondeterministicLossError if the
    two loss values differ bitwise (this is how an accidentally enabled
    dropout surfaces). Relative error per entry is
    |a - n| / max(|a|, |n|, 1): the unit floor keeps near-zero entries
    from amplifying rounding noise while still flagging any adjoint bug
    that matters at loss scale.
    """
    tape1, loss1 = f()
    _, loss2 = f()
    if not np.array_equal(loss1.data, loss2.data):
        raise NondeterministicLossError(
            "f() returned different losses on two calls; disable dropout "
            "or any other source of randomness before gradient checking"
        )
    zero_grads(params)
    tape1.backward(loss1)
    analytic = {p.name: p.grad.copy() for p in params}
    worst = FDResult(0.0, None, None, 0)
    total = 0
    for p in params:
        grads = analytic[p.name]
        flat = p.data.reshape(-1)
        gflat = grads.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            _, lp = f()
            flat[i] = orig - eps
            _, lm = f()
            flat[i] = orig
            numeric = (float(lp.data) - float(lm.data)) / (2.0 * eps)
            a = gflat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            total += 1
            if err > worst.max_rel_error:
                worst = FDResult(
                    err, p.name, np.unravel_index(i, p.shape), total
                )
    worst.n_entries = total
    return worst

"""Maximum spanning arborescence decoding over arc score matrices.

Input is an (n+1, n+1) matrix where entry [d, h] scores head h for
dependent d, with index 0 the artificial root. The decoder returns, for
each token 1..n, a head such that the arcs form a tree rooted at 0 with
maximum total score (Chu-Liu/Edmonds with recursive cycle contraction).
Ties resolve toward the smaller head index.

With single_root=True (the default for parsing), exactly one token may
attach to the root. When the unconstrained optimum violates that, each
token in turn is tried as the sole root child and the best constrained
tree wins; ties resolve toward the smaller root-child index.

Score matrices may contain -inf to forbid arcs. NaN or +inf anywhere is
rejected. Forbidden arcs are handled through a large finite negative
sentinel so contraction arithmetic never produces NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BIG_NEG = -1e12
_FORBIDDEN = BIG_NEG / 2.0


class DecoderError(ValueError):
    pass


@dataclass
class ParseTree:
    """Predicted attachment for tokens 1..n: heads[i] is token i+1's head."""

    heads: list[int]
    label_ids: list[int] | None = None

    @property
    def n_tokens(self) -> int:
        return len(self.heads)

    def root_children(self) -> list[int]:
        return [i + 1 for i, h in enumerate(self.heads) if h == 0]


def _sanitize(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DecoderError(f"score matrix must be square, got shape {s.shape}")
    if s.shape[0] < 2:
        raise DecoderError("score matrix needs the root plus at least one token")
    if np.isnan(s).any():
        raise DecoderError("score matrix contains NaN")
    if np.isposinf(s).any():
        raise DecoderError("score matrix contains +inf")
    s = np.where(np.isneginf(s), BIG_NEG, s).copy()
    np.fill_diagonal(s, BIG_NEG)
    s[0, :] = BIG_NEG
    return s


def _find_cycle(heads: np.ndarray) -> list[int] | None:
    """First cycle reachable by parent-following, in path order, else None."""
    n1 = len(heads)
    color = np.zeros(n1, dtype=np.int8)
    color[0] = 2
    for start in range(1, n1):
        if color[start]:
            continue
        path = []
        v = start
        while True:
            if color[v] == 2:
                break
            if color[v] == 1:
                return path[path.index(v):]
            color[v] = 1
            path.append(v)
            v = int(heads[v])
        for u in path:
            color[u] = 2
    return None


def _cle(s: np.ndarray) -> np.ndarray:
    """Best entering head per node, cycles contracted recursively.

    Expects a sanitized matrix (diagonal and root row already BIG_NEG).
    Returns an array of length n+1 whose entry 0 is 0.
    """
    n1 = s.shape[0]
    heads = np.argmax(s, axis=1)
    heads[0] = 0
    cycle = _find_cycle(heads)
    if cycle is None:
        return heads

    cyc = np.array(cycle)
    in_cycle = np.zeros(n1, dtype=bool)
    in_cycle[cyc] = True
    noncyc = np.flatnonzero(~in_cycle)  # ascending; index 0 is the root
    m = len(noncyc)

    cyc_edge = s[cyc, heads[cyc]]
    cyc_total = cyc_edge.sum()

    sc = np.full((m + 1, m + 1), BIG_NEG)
    sc[:m, :m] = s[np.ix_(noncyc, noncyc)]

    # Arcs entering the cycle score as the gain of rerouting one cycle
    # node's head, plus the cycle's own weight.
    raw_in = s[np.ix_(cyc, noncyc)]
    enter = np.where(raw_in <= _FORBIDDEN, BIG_NEG, raw_in - cyc_edge[:, None])
    enter_v = np.argmax(enter, axis=0)
    enter_best = enter[enter_v, np.arange(m)]
    sc[m, :m] = np.where(enter_best <= _FORBIDDEN, BIG_NEG, enter_best + cyc_total)

    # Arcs leaving the cycle take the best internal source.
    leave = s[np.ix_(noncyc, cyc)]
    leave_v = np.argmax(leave, axis=1)
    sc[:m, m] = leave[np.arange(m), leave_v]
    sc[0, :] = BIG_NEG
    np.fill_diagonal(sc, BIG_NEG)

    sub = _cle(sc)

    out = heads.copy()
    h_super = int(sub[m])
    broken = int(cyc[enter_v[h_super]])
    out[broken] = int(noncyc[h_super])
    for i_new, d in enumerate(noncyc):
        if d == 0:
            continue
        h = int(sub[i_new])
        out[d] = int(cyc[leave_v[i_new]]) if h == m else int(noncyc[h])
    return out


def tree_score(scores: np.ndarray, heads: list[int] | np.ndarray) -> float:
    """Total score of the arcs choosing heads[i] for token i+1."""
    s = np.asarray(scores, dtype=np.float64)
    total = 0.0
    for dep, head in enumerate(heads, start=1):
        total += s[dep, head]
    return float(total)


def greedy_heads(scores: np.ndarray) -> list[int]:
    """Per-token argmax heads with no tree constraint (diagnostic only)."""
    s = _sanitize(scores)
    return [int(h) for h in np.argmax(s, axis=1)[1:]]


def mst_decode(scores: np.ndarray, single_root: bool = True) -> ParseTree:
    forbidden = np.isneginf(np.asarray(scores, dtype=np.float64))
    s = _sanitize(scores)
    n1 = s.shape[0]
    for d in range(1, n1):
        if np.all(s[d] <= _FORBIDDEN):
            raise DecoderError(f"token {d} has no permitted head")

    heads = _cle(s)
    if single_root:
        n_root = int(np.sum(heads[1:] == 0))
        if n_root != 1:
            best_heads = None
            best_total = -np.inf
            for c in range(1, n1):
                if s[c, 0] <= _FORBIDDEN:
                    continue
                constrained = s.copy()
                constrained[1:, 0] = BIG_NEG
                constrained[c, 0] = s[c, 0]
                cand = _cle(constrained)
                total = float(s[np.arange(1, n1), cand[1:]].sum())
                if total > best_total:
                    best_total = total
                    best_heads = cand
            if best_heads is None:
                raise DecoderError("no token may attach to the root")
            heads = best_heads
    for d in range(1, n1):
        if forbidden[d, heads[d]]:
            raise DecoderError(
                f"every tree uses a forbidden arc (token {d} -> head {heads[d]})"
            )
    return ParseTree(heads=[int(h) for h in heads[1:]])


def assign_labels(tree: ParseTree, label_score_rows: np.ndarray) -> ParseTree:
    """Attach argmax label ids; row k scores the labels of token k+1's arc."""
    rows = np.asarray(label_score_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] != tree.n_tokens:
        raise DecoderError(
            f"expected {tree.n_tokens} label score rows, got shape {rows.shape}"
        )
    tree.label_ids = [int(k) for k in np.argmax(rows, axis=1)]
    return tree

"""Biaffine scoring of head attachments and relation labels.

From contextual representations r_i, four single-hidden-layer ReLU MLPs
produce specialized views: arc-dependent d_i^a, arc-head h_j^a (width
d_a) and rel-dependent d_i^r, rel-head h_j^r (width d_r). Scores:

    arc:  s^a[i, j] = d_i^a U^a h_j^a + u_d . d_i^a + u_h . h_j^a + b^a
    rel:  s^r[i, j] = U^r d_i^r h_j^r + W^r [d_i^r; h_j^r] + b^r
          (one score per relation label; U^r is a (|R|, d_r, d_r) tensor)

Row i of the arc matrix scores every candidate head j for dependent i;
column 0 is the ROOT head. The head probability for dependent i is a
softmax over its row with invalid heads masked out. Biaffine weights
initialize to zero (so an untrained scorer gives all-equal scores); MLP
weights use the shared scaled-uniform rule. MLP outputs get dropout at
train time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, ShapeError, Tape, Tensor
from .encoder import init_weight


@dataclass
class ScorerConfig:
    d_a: int = 256
    d_r: int = 128
    n_labels: int = 0
    dropout: float = 0.33

    def validate(self) -> None:
        if self.d_a < 1 or self.d_r < 1:
            raise ValueError("d_a and d_r must be >= 1")
        if self.n_labels < 1:
            raise ValueError("scorer needs at least one relation label")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")


@dataclass
class BiaffineParams:
    config: ScorerConfig
    arc_dep_w: Parameter
    arc_dep_b: Parameter
    arc_head_w: Parameter
    arc_head_b: Parameter
    rel_dep_w: Parameter
    rel_dep_b: Parameter
    rel_head_w: Parameter
    rel_head_b: Parameter
    u_arc: Parameter  # (d_a, d_a)
    v_arc: Parameter  # (2*d_a, 1): [u_d; u_h]
    b_arc: Parameter  # (1, 1)
    u_rel: Parameter  # (n_labels, d_r, d_r)
    w_rel: Parameter  # (n_labels, 2*d_r)
    b_rel: Parameter  # (n_labels,)

    def parameters(self) -> list[Parameter]:
        return [
            self.arc_dep_w,
            self.arc_dep_b,
            self.arc_head_w,
            self.arc_head_b,
            self.rel_dep_w,
            self.rel_dep_b,
            self.rel_head_w,
            self.rel_head_b,
            self.u_arc,
            self.v_arc,
            self.b_arc,
            self.u_rel,
            self.w_rel,
            self.b_rel,
        ]


def init_scorer(
    config: ScorerConfig, d_rep: int, rng: np.random.Generator
) -> BiaffineParams:
    config.validate()
    d_a, d_r, nl = config.d_a, config.d_r, config.n_labels
    return BiaffineParams(
        config=config,
        arc_dep_w=init_weight(rng, d_rep, d_a, "sc.arc_dep.w"),
        arc_dep_b=Parameter(np.zeros(d_a), "sc.arc_dep.b"),
        arc_head_w=init_weight(rng, d_rep, d_a, "sc.arc_head.w"),
        arc_head_b=Parameter(np.zeros(d_a), "sc.arc_head.b"),
        rel_dep_w=init_weight(rng, d_rep, d_r, "sc.rel_dep.w"),
        rel_dep_b=Parameter(np.zeros(d_r), "sc.rel_dep.b"),
        rel_head_w=init_weight(rng, d_rep, d_r, "sc.rel_head.w"),
        rel_head_b=Parameter(np.zeros(d_r), "sc.rel_head.b"),
        u_arc=Parameter(np.zeros((d_a, d_a)), "sc.u_arc"),
        v_arc=Parameter(np.zeros((2 * d_a, 1)), "sc.v_arc"),
        b_arc=Parameter(np.zeros((1, 1)), "sc.b_arc"),
        u_rel=Parameter(np.zeros((nl, d_r, d_r)), "sc.u_rel"),
        w_rel=Parameter(np.zeros((nl, 2 * d_r)), "sc.w_rel"),
        b_rel=Parameter(np.zeros(nl), "sc.b_rel"),
    )


def _mlp(
    tape: Tape,
    r: Tensor,
    w: Parameter,
    b: Parameter,
    train_mode: bool,
    rng: np.random.Generator | None,
    rate: float,
) -> Tensor:
    out = tape.relu(tape.add(tape.matmul(r, w), b))
    if train_mode and rate > 0.0:
        out = tape.dropout(out, rate, rng)
    return out


def arc_scores(
    tape: Tape,
    params: BiaffineParams,
    r: Tensor,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Full (n+1, n+1) arc score matrix; [i, j] scores head j for dep i."""
    rate = params.config.dropout
    d_a = params.config.d_a
    dep = _mlp(tape, r, params.arc_dep_w, params.arc_dep_b, train_mode, rng, rate)
    head = _mlp(tape, r, params.arc_head_w, params.arc_head_b, train_mode, rng, rate)
    scores = tape.bilinear(dep, params.u_arc, head)
    u_d = tape.slice_rows(params.v_arc, 0, d_a)
    u_h = tape.slice_rows(params.v_arc, d_a, 2 * d_a)
    dep_term = tape.matmul(dep, u_d)  # (n+1, 1), broadcasts over columns
    head_term = tape.transpose(tape.matmul(head, u_h))  # (1, n+1), over rows
    return tape.add(tape.add(tape.add(scores, dep_term), head_term), params.b_arc)


def head_distribution(tape: Tape, score_row: Tensor, valid_mask) -> Tensor:
    """Softmax over one dependent's head candidates under a validity mask."""
    mask = np.asarray(valid_mask, dtype=bool)
    if mask.shape != (score_row.shape[-1],):
        raise ShapeError(
            f"head_distribution: mask {mask.shape} vs row {score_row.shape}"
        )
    if not mask.any():
        raise ShapeError("head_distribution: no valid heads in mask")
    fill = np.where(mask, 0.0, -np.inf)
    return tape.row_softmax(tape.add_const(score_row, fill))


def rel_scores_for_pairs(
    tape: Tape,
    params: BiaffineParams,
    r: Tensor,
    dependents: list[int],
    heads: list[int],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Label scores for given (dependent, head) pairs: (len(pairs), |R|).

    Training conditions on gold heads; parsing passes predicted heads.
    """
    if len(dependents) != len(heads):
        raise ShapeError("rel_scores_for_pairs: dependents/heads length mismatch")
    rate = params.config.dropout
    dep_all = _mlp(tape, r, params.rel_dep_w, params.rel_dep_b, train_mode, rng, rate)
    head_all = _mlp(tape, r, params.rel_head_w, params.rel_head_b, train_mode, rng, rate)
    dep = tape.gather_rows(dep_all, dependents)
    head = tape.gather_rows(head_all, heads)
    bilinear_part = tape.pairwise_bilinear(dep, params.u_rel, head)
    linear_part = tape.matmul_nt(tape.concat([dep, head], axis=1), params.w_rel)
    return tape.add(tape.add(bilinear_part, linear_part), params.b_rel)


def rel_scores(
    tape: Tape,
    params: BiaffineParams,
    r: Tensor,
    dependent: int,
    head: int,
) -> Tensor:
    """Label score row (1, |R|) for a single (dependent, head) pair."""
    return rel_scores_for_pairs(tape, params, r, [dependent], [head])

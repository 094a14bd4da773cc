"""Token representations: embeddings, char BiLSTM, stacked BiLSTM context.

Each token position i (with position 0 the artificial ROOT) is embedded
as x_i = [word; char; feat], where the char channel is the concatenation
of the final hidden states of a forward and a backward LSTM over the
token's character embeddings, and feat embeds the UPOS tag. A stacked
bidirectional LSTM over x_1..x_n yields the contextual representations
consumed by the scorer.

LSTM cell (gate order i, f, g, o in the fused matrices):

    i_t = sigmoid(W_x^i x_t + W_h^i h_{t-1} + b^i)
    f_t = sigmoid(W_x^f x_t + W_h^f h_{t-1} + b^f)
    g_t = tanh   (W_x^g x_t + W_h^g h_{t-1} + b^g)
    o_t = sigmoid(W_x^o x_t + W_h^o h_{t-1} + b^o)
    c_t = f_t * c_{t-1} + i_t * g_t
    h_t = o_t * tanh(c_t)

Initialization: embeddings U(-0.1, 0.1); weight matrices scaled uniform
U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero except the forget gate
at +1. Dropout (inverted scaling) applies to each embedding channel and
between BiLSTM layers at train time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, Tape, Tensor
from .vocab import EncodedSentence, Vocabulary


@dataclass
class EncoderConfig:
    d_w: int = 100
    d_c: int = 32
    d_ch: int = 64
    d_f: int = 32
    d_h: int = 200
    layers: int = 2
    dropout: float = 0.33

    def validate(self) -> None:
        for field_name in ("d_w", "d_c", "d_ch", "d_f", "d_h", "layers"):
            if getattr(self, field_name) < 1:
                raise ValueError(f"{field_name} must be >= 1")
        if self.d_ch % 2 != 0:
            raise ValueError("d_ch must be even (two char LSTM directions)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")

    @property
    def d_x(self) -> int:
        return self.d_w + self.d_ch + self.d_f


@dataclass
class LSTMCell:
    w_x: Parameter  # (d_in, 4*d_hidden)
    w_h: Parameter  # (d_hidden, 4*d_hidden)
    b: Parameter  # (4*d_hidden,)

    @property
    def d_hidden(self) -> int:
        return self.w_h.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.w_x, self.w_h, self.b]


def init_embedding(rng: np.random.Generator, rows: int, dim: int, name: str) -> Parameter:
    return Parameter(rng.uniform(-0.1, 0.1, size=(rows, dim)), name)


def init_weight(rng: np.random.Generator, d_in: int, d_out: int, name: str) -> Parameter:
    bound = 1.0 / np.sqrt(d_in)
    return Parameter(rng.uniform(-bound, bound, size=(d_in, d_out)), name)


def init_cell(rng: np.random.Generator, d_in: int, d_hidden: int, name: str) -> LSTMCell:
    b = np.zeros(4 * d_hidden)
    b[d_hidden : 2 * d_hidden] = 1.0  # forget gate open at start of training
    return LSTMCell(
        w_x=init_weight(rng, d_in, 4 * d_hidden, f"{name}.w_x"),
        w_h=init_weight(rng, d_hidden, 4 * d_hidden, f"{name}.w_h"),
        b=Parameter(b, f"{name}.b"),
    )


@dataclass
class EncoderParams:
    config: EncoderConfig
    e_word: Parameter
    e_char: Parameter
    e_feat: Parameter
    char_fwd: LSTMCell
    char_bwd: LSTMCell
    layers: list[tuple[LSTMCell, LSTMCell]]

    def parameters(self) -> list[Parameter]:
        params = [self.e_word, self.e_char, self.e_feat]
        params += self.char_fwd.parameters() + self.char_bwd.parameters()
        for fwd, bwd in self.layers:
            params += fwd.parameters() + bwd.parameters()
        return params


def init_encoder(
    config: EncoderConfig, vocab: Vocabulary, rng: np.random.Generator
) -> EncoderParams:
    config.validate()
    half = config.d_ch // 2
    layers = []
    d_in = config.d_x
    for k in range(config.layers):
        layers.append(
            (
                init_cell(rng, d_in, config.d_h, f"enc.layer{k}.fwd"),
                init_cell(rng, d_in, config.d_h, f"enc.layer{k}.bwd"),
            )
        )
        d_in = 2 * config.d_h
    return EncoderParams(
        config=config,
        e_word=init_embedding(rng, vocab.n_words, config.d_w, "enc.e_word"),
        e_char=init_embedding(rng, vocab.n_chars, config.d_c, "enc.e_char"),
        e_feat=init_embedding(rng, vocab.n_upos, config.d_f, "enc.e_feat"),
        char_fwd=init_cell(rng, config.d_c, half, "enc.char.fwd"),
        char_bwd=init_cell(rng, config.d_c, half, "enc.char.bwd"),
        layers=layers,
    )


def run_lstm(tape: Tape, cell: LSTMCell, x: Tensor) -> Tensor:
    """Run an LSTM over the rows of x, returning all hidden states (T, H).

    The input projection for every timestep is one matmul; the recurrence
    then costs a single (1, H) @ (H, 4H) product per step.
    """
    hid = cell.d_hidden
    t_steps = x.shape[0]
    x_proj = tape.add(tape.matmul(x, cell.w_x), cell.b)
    h = Tensor(np.zeros((1, hid)))
    c = Tensor(np.zeros((1, hid)))
    outputs = []
    for t in range(t_steps):
        gates = tape.add(
            tape.slice_rows(x_proj, t, t + 1), tape.matmul(h, cell.w_h)
        )
        i_gate = tape.sigmoid(tape.slice_cols(gates, 0, hid))
        f_gate = tape.sigmoid(tape.slice_cols(gates, hid, 2 * hid))
        g_gate = tape.tanh(tape.slice_cols(gates, 2 * hid, 3 * hid))
        o_gate = tape.sigmoid(tape.slice_cols(gates, 3 * hid, 4 * hid))
        c = tape.add(tape.mul(f_gate, c), tape.mul(i_gate, g_gate))
        h = tape.mul(o_gate, tape.tanh(c))
        outputs.append(h)
    return tape.concat(outputs, axis=0)


def char_encode(tape: Tape, params: EncoderParams, char_ids: list[int]) -> Tensor:
    """Compose one token's form into a (1, d_ch) vector from its chars."""
    emb = tape.embedding_lookup(params.e_char, char_ids)
    m = len(char_ids)
    fwd = run_lstm(tape, params.char_fwd, emb)
    bwd = run_lstm(tape, params.char_bwd, tape.reverse_rows(emb))
    return tape.concat(
        [tape.slice_rows(fwd, m - 1, m), tape.slice_rows(bwd, m - 1, m)], axis=1
    )


def embed_tokens(
    tape: Tape,
    params: EncoderParams,
    sentence: EncodedSentence,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    char_cache: dict | None = None,
) -> Tensor:
    """Assemble x_i = [word; char; feat] for positions 0..n.

    char_cache maps char-id tuples to already-built nodes so repeated
    forms within one tape share a single char subgraph (gradients still
    accumulate through every use).
    """
    word_m = tape.embedding_lookup(params.e_word, sentence.word_ids)
    char_rows = []
    for seq in sentence.char_id_seqs:
        key = tuple(seq)
        if char_cache is not None and key in char_cache:
            char_rows.append(char_cache[key])
            continue
        row = char_encode(tape, params, seq)
        if char_cache is not None:
            char_cache[key] = row
        char_rows.append(row)
    char_m = tape.concat(char_rows, axis=0)
    feat_m = tape.embedding_lookup(params.e_feat, sentence.feat_ids)
    rate = params.config.dropout
    if train_mode and rate > 0.0:
        word_m = tape.dropout(word_m, rate, rng)
        char_m = tape.dropout(char_m, rate, rng)
        feat_m = tape.dropout(feat_m, rate, rng)
    return tape.concat([word_m, char_m, feat_m], axis=1)


def contextualize(
    tape: Tape,
    params: EncoderParams,
    x: Tensor,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Stacked BiLSTM over token rows; output is (n+1, 2*d_h)."""
    rate = params.config.dropout
    inp = x
    for index, (fwd_cell, bwd_cell) in enumerate(params.layers):
        if index > 0 and train_mode and rate > 0.0:
            inp = tape.dropout(inp, rate, rng)
        fwd = run_lstm(tape, fwd_cell, inp)
        bwd = tape.reverse_rows(run_lstm(tape, bwd_cell, tape.reverse_rows(inp)))
        inp = tape.concat([fwd, bwd], axis=1)
    return inp


def sentence_representations(
    tape: Tape,
    params: EncoderParams,
    sentence: EncodedSentence,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    char_cache: dict | None = None,
) -> Tensor:
    x = embed_tokens(tape, params, sentence, train_mode, rng, char_cache)
    return contextualize(tape, params, x, train_mode, rng)

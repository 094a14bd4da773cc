"""Training, fine-tuning, checkpointing, and model evaluation.

The loss for a batch is the sum of per-token head NLL and per-token
relation NLL, both divided by the same total token count, plus an L2
penalty on the trainable parameters:

    loss = (sum_arc_nll + sum_rel_nll) / n_tokens + l2 * sum(theta^2)

Head NLL treats each token's head choice as a softmax over positions
0..n with the self-arc masked out. Relation NLL conditions on the gold
head. Tokens whose gold relation is outside the label inventory (which
can happen during fine-tuning on a new variety) are excluded from the
relation sum only; the divisor stays the full token count.

Optimization is Adam with a lowered second-moment decay, preceded by
global gradient-norm clipping. Model selection tracks dev LAS; training
stops after `patience` epochs without strict improvement and the best
epoch's parameters are restored.

Checkpoints are single files: a line-oriented UTF-8 header (counted
sections: config, vocabulary, history, parameter manifest) followed by
every parameter's float64 bytes, little-endian, in manifest order. A
dotted version in the first line guards format drift. Loading rebuilds
the model bit-exactly.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import random
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter, Tape, Tensor, zero_grads
from .conllu import Treebank
from .encoder import EncoderConfig, sentence_representations
from .evaluation import Metrics, attachment_scores
from .model import ParserModel, init_model, parse_treebank
from .scorer import ScorerConfig, arc_scores, rel_scores_for_pairs
from .vocab import (
    PAD_SYMBOL,
    ROOT_SYMBOL,
    UNK_SYMBOL,
    N_RESERVED,
    EncodedSentence,
    Vocabulary,
    build_vocab,
    encode_sentence,
    extend_vocab,
)

logger = logging.getLogger("dialparse")

CHECKPOINT_MAGIC = "dialparse-checkpoint v1"


class TrainingDataError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    # representation sizes
    d_w: int = 100
    d_c: int = 32
    d_ch: int = 64
    d_f: int = 32
    d_h: int = 200
    layers: int = 2
    d_a: int = 256
    d_r: int = 128
    dropout: float = 0.33
    # optimization
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    l2: float = 1e-6
    grad_clip: float = 5.0
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    # data handling
    min_word_freq: int = 2
    freeze_encoder: bool = False
    seed: int = 1234

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        self.encoder_config().validate()
        self.scorer_config(n_labels=1).validate()

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            d_w=self.d_w,
            d_c=self.d_c,
            d_ch=self.d_ch,
            d_f=self.d_f,
            d_h=self.d_h,
            layers=self.layers,
            dropout=self.dropout,
        )

    def scorer_config(self, n_labels: int = 0) -> ScorerConfig:
        return ScorerConfig(
            d_a=self.d_a, d_r=self.d_r, n_labels=n_labels, dropout=self.dropout
        )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_uas: float
    dev_las: float


@dataclass
class TrainResult:
    model: ParserModel
    history: list[EpochRecord]
    best_epoch: int
    best_dev_las: float


def compute_loss(
    model: ParserModel,
    batch: list[EncodedSentence],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    l2: float = 0.0,
    l2_params: list[Parameter] | None = None,
    include_arc: bool = True,
    include_rel: bool = True,
) -> tuple[Tape, Tensor, dict]:
    """Batch loss on a single fresh tape.

    Returns (tape, loss, stats); stats holds n_tokens, n_rel_scored, and
    the raw arc/rel NLL sums. Character encodings are shared across the
    batch through one cache, so repeated forms build one subgraph.
    """
    if not include_arc and not include_rel:
        raise ValueError("at least one loss component must be enabled")
    tape = Tape()
    char_cache: dict = {}
    arc_sum: Tensor | None = None
    rel_sum: Tensor | None = None
    n_tokens = 0
    n_rel = 0
    for enc in batch:
        if enc.gold_heads is None:
            raise TrainingDataError("a training sentence has no head annotation")
        n = enc.n
        for i, h in enumerate(enc.gold_heads, start=1):
            if h == i:
                raise TrainingDataError(f"token {i} is annotated as its own head")
        r = sentence_representations(
            tape, model.encoder, enc, train_mode, rng, char_cache
        )
        n_tokens += n
        if include_arc:
            s = arc_scores(tape, model.scorer, r, train_mode, rng)
            rows = tape.slice_rows(s, 1, n + 1)
            self_mask = np.zeros((n, n + 1))
            self_mask[np.arange(n), np.arange(1, n + 1)] = -np.inf
            logp = tape.log_softmax(tape.add_const(rows, self_mask))
            nll = tape.nll_from_log_probs(logp, enc.gold_heads)
            arc_sum = nll if arc_sum is None else tape.add(arc_sum, nll)
        if include_rel:
            keep = [i for i, lab in enumerate(enc.gold_labels) if lab >= 0]
            if keep:
                deps = [i + 1 for i in keep]
                heads = [enc.gold_heads[i] for i in keep]
                labels = [enc.gold_labels[i] for i in keep]
                scores = rel_scores_for_pairs(
                    tape, model.scorer, r, deps, heads, train_mode, rng
                )
                logp = tape.log_softmax(scores)
                nll = tape.nll_from_log_probs(logp, labels)
                rel_sum = nll if rel_sum is None else tape.add(rel_sum, nll)
                n_rel += len(keep)
    if n_tokens == 0:
        raise TrainingDataError("batch contains no tokens")

    pieces = [p for p in (arc_sum, rel_sum) if p is not None]
    total = pieces[0]
    for piece in pieces[1:]:
        total = tape.add(total, piece)
    loss = tape.scale(total, 1.0 / n_tokens)
    if l2 > 0.0:
        reg: Tensor | None = None
        for p in l2_params if l2_params is not None else model.parameters():
            sq = tape.sum(tape.mul(p, p))
            reg = sq if reg is None else tape.add(reg, sq)
        loss = tape.add(loss, tape.scale(reg, l2))
    stats = {
        "n_tokens": n_tokens,
        "n_rel_scored": n_rel,
        "arc_nll": float(arc_sum.data) if arc_sum is not None else 0.0,
        "rel_nll": float(rel_sum.data) if rel_sum is not None else 0.0,
    }
    return tape, loss, stats


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: list[Parameter],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.9,
    eps: float = 1e-8,
    grad_clip: float = 5.0,
) -> float:
    """One Adam update in place; returns the pre-clip global grad norm."""
    grad_sq = 0.0
    for p in params:
        grad_sq += float((p.grad * p.grad).sum())
    gnorm = math.sqrt(grad_sq)
    coef = 1.0
    if grad_clip > 0.0 and gnorm > grad_clip:
        coef = grad_clip / gnorm
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p in params:
        g = p.grad * coef
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        m = state.m[p.name]
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return gnorm


def evaluate_model(
    model: ParserModel,
    gold: Treebank,
    exclude_punct: bool = True,
    single_root: bool = True,
) -> Metrics:
    predicted = parse_treebank(model, gold, single_root=single_root)
    return attachment_scores(gold, predicted, exclude_punct=exclude_punct)


def _trainable_params(model: ParserModel, config: TrainConfig) -> list[Parameter]:
    if config.freeze_encoder:
        return model.scorer.parameters()
    return model.parameters()


def _check_unique_names(params: list[Parameter]) -> None:
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate parameter names: {dupes}")


def _run_training(
    model: ParserModel,
    train_enc: list[EncodedSentence],
    dev: Treebank,
    config: TrainConfig,
) -> TrainResult:
    if not train_enc:
        raise TrainingDataError("no training sentences")
    if len(dev) == 0:
        raise TrainingDataError("model selection needs a non-empty dev treebank")
    trainable = _trainable_params(model, config)
    _check_unique_names(model.parameters())

    if config.max_epochs == 0:
        m = evaluate_model(model, dev)
        return TrainResult(model, [], 0, m.las)

    state = AdamState()
    history: list[EpochRecord] = []
    best_las = -1.0
    best_epoch = 0
    best_snapshot: list[np.ndarray] | None = None
    epochs_without_gain = 0

    for epoch in range(1, config.max_epochs + 1):
        order = list(range(len(train_enc)))
        random.Random(config.seed * 1_000_003 + epoch).shuffle(order)
        drop_rng = np.random.default_rng([config.seed, epoch])
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_enc[i] for i in order[start:start + config.batch_size]]
            zero_grads(model.parameters())
            tape, loss, _ = compute_loss(
                model,
                batch,
                train_mode=True,
                rng=drop_rng,
                l2=config.l2,
                l2_params=trainable,
            )
            tape.backward(loss)
            adam_step(
                trainable,
                state,
                lr=config.lr,
                beta1=config.beta1,
                beta2=config.beta2,
                eps=config.eps,
                grad_clip=config.grad_clip,
            )
            epoch_loss += loss.item()
            n_batches += 1
        train_loss = epoch_loss / n_batches
        metrics = evaluate_model(model, dev)
        history.append(EpochRecord(epoch, train_loss, metrics.uas, metrics.las))
        logger.info(
            "epoch %d  train_loss %.4f  dev UAS %.4f  dev LAS %.4f",
            epoch, train_loss, metrics.uas, metrics.las,
        )
        if metrics.las > best_las:
            best_las = metrics.las
            best_epoch = epoch
            best_snapshot = [p.data.copy() for p in model.parameters()]
            epochs_without_gain = 0
        else:
            epochs_without_gain += 1
            if epochs_without_gain >= config.patience:
                logger.info(
                    "stopping after %d epochs without dev LAS gain", config.patience
                )
                break

    if best_snapshot is not None:
        for p, data in zip(model.parameters(), best_snapshot):
            p.data = data
    return TrainResult(model, history, best_epoch, best_las)


def train(train_tb: Treebank, dev_tb: Treebank, config: TrainConfig) -> TrainResult:
    """Train a fresh parser on a treebank, selecting the best epoch on dev."""
    config.validate()
    vocab = build_vocab(train_tb, min_word_freq=config.min_word_freq)
    model = init_model(
        vocab, config.encoder_config(), config.scorer_config(), config.seed
    )
    train_enc = [encode_sentence(vocab, s) for s in train_tb]
    return _run_training(model, train_enc, dev_tb, config)


def clone_model(model: ParserModel) -> ParserModel:
    clone = init_model(
        model.vocab,
        dataclasses.replace(model.encoder_config),
        dataclasses.replace(model.scorer_config),
        seed=0,
    )
    for src, dst in zip(model.parameters(), clone.parameters()):
        if src.name != dst.name or src.data.shape != dst.data.shape:
            raise RuntimeError(f"clone mismatch at {src.name}/{dst.name}")
        dst.data = src.data.copy()
    return clone


def _grow_embedding(param: Parameter, new_rows: int, rng: np.random.Generator) -> None:
    old_rows, dim = param.data.shape
    if new_rows < old_rows:
        raise RuntimeError(f"{param.name}: vocabulary shrank ({old_rows}->{new_rows})")
    if new_rows > old_rows:
        fresh = rng.uniform(-0.1, 0.1, size=(new_rows - old_rows, dim))
        param.data = np.vstack([param.data, fresh])
        param.grad = np.zeros_like(param.data)


def finetune(
    base: ParserModel, train_tb: Treebank, dev_tb: Treebank, config: TrainConfig
) -> TrainResult:
    """Continue training a copy of an existing parser on new data.

    The vocabulary is extended in place: existing rows keep their indices
    and values bit for bit, and rows for new words, characters, and UPOS
    tags are drawn fresh. The relation inventory stays closed; arcs whose
    gold label falls outside it are excluded from the relation loss and
    counted in a warning.
    """
    config.validate()
    model = clone_model(base)
    model.vocab = extend_vocab(base.vocab, train_tb)
    grow_rng = np.random.default_rng([config.seed, 915])
    _grow_embedding(model.encoder.e_word, model.vocab.n_words, grow_rng)
    _grow_embedding(model.encoder.e_char, model.vocab.n_chars, grow_rng)
    _grow_embedding(model.encoder.e_feat, model.vocab.n_upos, grow_rng)

    train_enc = [encode_sentence(model.vocab, s, strict_labels=False) for s in train_tb]
    excluded = sum(
        sum(1 for lab in enc.gold_labels if lab < 0)
        for enc in train_enc
        if enc.gold_labels is not None
    )
    if excluded:
        logger.warning(
            "%d arcs carry relation labels outside the inventory; "
            "they are excluded from the relation loss",
            excluded,
        )
    return _run_training(model, train_enc, dev_tb, config)


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------


def _config_lines(config: TrainConfig) -> list[str]:
    return [f"{f.name}={getattr(config, f.name)!r}" for f in dataclasses.fields(config)]


def _parse_config(lines: list[str]) -> TrainConfig:
    values: dict = {}
    by_name = {f.name: f for f in dataclasses.fields(TrainConfig)}
    for line in lines:
        if "=" not in line:
            raise CheckpointError(f"bad config line: {line!r}")
        key, raw = line.split("=", 1)
        if key not in by_name:
            raise CheckpointError(f"unknown config key: {key!r}")
        kind = by_name[key].type
        if kind == "bool":
            values[key] = raw == "True"
        elif kind == "int":
            values[key] = int(raw)
        elif kind == "float":
            values[key] = float(raw)
        else:
            raise CheckpointError(f"unhandled config field type {kind!r} for {key}")
    missing = set(by_name) - set(values)
    if missing:
        raise CheckpointError(f"config keys missing: {sorted(missing)}")
    return TrainConfig(**values)


def save_checkpoint(
    path: str,
    model: ParserModel,
    config: TrainConfig,
    history: list[EpochRecord] | None = None,
    best_epoch: int = 0,
    best_dev_las: float = 0.0,
) -> None:
    history = history or []
    params = model.parameters()
    _check_unique_names(params)
    vocab = model.vocab
    lines: list[str] = [CHECKPOINT_MAGIC]

    config_lines = _config_lines(config)
    lines.append(f"config {len(config_lines)}")
    lines.extend(config_lines)

    words = vocab.word_itos[N_RESERVED:]
    lines.append(f"words {len(words)}")
    lines.extend(words)
    chars = vocab.char_itos[N_RESERVED:]
    lines.append(f"chars {len(chars)}")
    lines.extend(str(ord(c)) for c in chars)
    upos = vocab.upos_itos[N_RESERVED:]
    lines.append(f"upos {len(upos)}")
    lines.extend(upos)
    lines.append(f"deprels {len(vocab.deprel_itos)}")
    lines.extend(vocab.deprel_itos)

    lines.append(f"history {len(history)}")
    for rec in history:
        lines.append(
            f"{rec.epoch}\t{rec.train_loss!r}\t{rec.dev_uas!r}\t{rec.dev_las!r}"
        )
    lines.append("best 1")
    lines.append(f"{best_epoch}\t{best_dev_las!r}")

    lines.append(f"params {len(params)}")
    for p in params:
        shape = ",".join(str(d) for d in p.data.shape)
        lines.append(f"{p.name}\t{shape}")

    blob = b"".join(
        np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in params
    )
    lines.append(f"blob {len(blob)}")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(blob)


class _LineCursor:
    def __init__(self, raw: bytes) -> None:
        self.raw = raw
        self.pos = 0

    def take(self) -> str:
        nl = self.raw.find(b"\n", self.pos)
        if nl < 0:
            raise CheckpointError("truncated checkpoint (unterminated line)")
        line = self.raw[self.pos:nl]
        self.pos = nl + 1
        try:
            return line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"undecodable header line at byte {self.pos}") from exc

    def take_section(self, name: str) -> list[str]:
        header = self.take()
        parts = header.split(" ")
        if len(parts) != 2 or parts[0] != name:
            raise CheckpointError(f"expected section {name!r}, found {header!r}")
        try:
            count = int(parts[1])
        except ValueError as exc:
            raise CheckpointError(f"bad count in section header {header!r}") from exc
        if count < 0:
            raise CheckpointError(f"negative count in section header {header!r}")
        return [self.take() for _ in range(count)]


def load_checkpoint(path: str) -> tuple[ParserModel, TrainConfig, list[EpochRecord], int, float]:
    """Rebuild (model, config, history, best_epoch, best_dev_las) from disk."""
    with open(path, "rb") as fh:
        raw = fh.read()
    cur = _LineCursor(raw)
    if cur.take() != CHECKPOINT_MAGIC:
        raise CheckpointError("not a recognized checkpoint file")

    config = _parse_config(cur.take_section("config"))
    words = cur.take_section("words")
    char_lines = cur.take_section("chars")
    upos = cur.take_section("upos")
    deprels = cur.take_section("deprels")
    try:
        chars = [chr(int(c)) for c in char_lines]
    except ValueError as exc:
        raise CheckpointError("bad character codepoint in checkpoint") from exc

    history = []
    for line in cur.take_section("history"):
        cols = line.split("\t")
        if len(cols) != 4:
            raise CheckpointError(f"bad history row: {line!r}")
        history.append(
            EpochRecord(int(cols[0]), float(cols[1]), float(cols[2]), float(cols[3]))
        )
    best_line = cur.take_section("best")
    cols = best_line[0].split("\t")
    if len(cols) != 2:
        raise CheckpointError(f"bad best row: {best_line[0]!r}")
    best_epoch, best_dev_las = int(cols[0]), float(cols[1])

    manifest = []
    for line in cur.take_section("params"):
        cols = line.split("\t")
        if len(cols) != 2:
            raise CheckpointError(f"bad parameter manifest row: {line!r}")
        shape = tuple(int(d) for d in cols[1].split(",")) if cols[1] else ()
        manifest.append((cols[0], shape))

    blob_header = cur.take()
    parts = blob_header.split(" ")
    if len(parts) != 2 or parts[0] != "blob":
        raise CheckpointError(f"expected blob section, found {blob_header!r}")
    blob_size = int(parts[1])
    blob = raw[cur.pos:]
    if len(blob) != blob_size:
        raise CheckpointError(
            f"blob size mismatch: header says {blob_size} bytes, file has {len(blob)}"
        )
    expected = 8 * sum(int(np.prod(shape)) for _, shape in manifest)
    if blob_size != expected:
        raise CheckpointError(
            f"manifest wants {expected} blob bytes, header says {blob_size}"
        )

    vocab = Vocabulary(
        word_itos=[PAD_SYMBOL, UNK_SYMBOL, ROOT_SYMBOL] + words,
        char_itos=[PAD_SYMBOL, UNK_SYMBOL, ROOT_SYMBOL] + chars,
        upos_itos=[PAD_SYMBOL, UNK_SYMBOL, ROOT_SYMBOL] + upos,
        deprel_itos=deprels,
        min_word_freq=config.min_word_freq,
    )
    model = init_model(
        vocab, config.encoder_config(), config.scorer_config(), config.seed
    )
    params = model.parameters()
    if len(params) != len(manifest):
        raise CheckpointError(
            f"model has {len(params)} parameters, manifest lists {len(manifest)}"
        )
    offset = 0
    for p, (name, shape) in zip(params, manifest):
        if p.name != name:
            raise CheckpointError(f"parameter order mismatch: {p.name} vs {name}")
        if p.data.shape != shape:
            raise CheckpointError(
                f"{name}: shape {shape} in checkpoint, {p.data.shape} in model"
            )
        count = int(np.prod(shape))
        p.data = (
            np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += count * 8
    return model, config, history, best_epoch, best_dev_las

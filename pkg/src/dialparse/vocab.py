"""Vocabulary construction and integer encoding of treebank sentences.

Index maps for words, characters, and UPOS tags reserve 0/1/2 for
PAD/UNK/ROOT. Relation labels form a closed class with no reserved
indices. Index assignment is deterministic: frequency descending,
then lexicographic. Word forms are lowercased before counting and
lookup; character sequences keep original case.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .conllu import Sentence, Treebank

PAD = 0
UNK = 1
ROOT = 2
N_RESERVED = 3

PAD_SYMBOL = "<pad>"
UNK_SYMBOL = "<unk>"
ROOT_SYMBOL = "<root>"


class UnknownLabelError(ValueError):
    """A deprel outside the closed relation inventory was requested."""


def _ranked(counter: Counter) -> list:
    return [item for item, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))]


@dataclass
class Vocabulary:
    """Bidirectional index maps for words, chars, UPOS, and deprels."""

    word_itos: list[str]
    char_itos: list[str]
    upos_itos: list[str]
    deprel_itos: list[str]
    min_word_freq: int
    word_stoi: dict[str, int] = field(repr=False, default_factory=dict)
    char_stoi: dict[str, int] = field(repr=False, default_factory=dict)
    upos_stoi: dict[str, int] = field(repr=False, default_factory=dict)
    deprel_stoi: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        self.word_stoi = {w: i for i, w in enumerate(self.word_itos)}
        self.char_stoi = {c: i for i, c in enumerate(self.char_itos)}
        self.upos_stoi = {u: i for i, u in enumerate(self.upos_itos)}
        self.deprel_stoi = {d: i for i, d in enumerate(self.deprel_itos)}

    @property
    def n_words(self) -> int:
        return len(self.word_itos)

    @property
    def n_chars(self) -> int:
        return len(self.char_itos)

    @property
    def n_upos(self) -> int:
        return len(self.upos_itos)

    @property
    def n_deprels(self) -> int:
        return len(self.deprel_itos)

    def word_id(self, form: str) -> int:
        return self.word_stoi.get(form.lower(), UNK)

    def char_ids(self, form: str) -> list[int]:
        return [self.char_stoi.get(c, UNK) for c in form]

    def upos_id(self, tag: str) -> int:
        return self.upos_stoi.get(tag, UNK)

    def deprel_id(self, label: str) -> int:
        if label not in self.deprel_stoi:
            raise UnknownLabelError(f"deprel {label!r} not in the label inventory")
        return self.deprel_stoi[label]


def build_vocab(treebank: Treebank, min_word_freq: int = 2) -> Vocabulary:
    """Build a Vocabulary from a treebank.

    Words below min_word_freq are not stored and encode to UNK. Chars,
    UPOS tags, and deprels are stored regardless of frequency.
    """
    if min_word_freq < 1:
        raise ValueError(f"min_word_freq must be >= 1, got {min_word_freq}")
    word_counts: Counter = Counter()
    char_counts: Counter = Counter()
    upos_counts: Counter = Counter()
    deprel_counts: Counter = Counter()
    for sentence in treebank:
        for token in sentence.tokens:
            word_counts[token.form.lower()] += 1
            char_counts.update(token.form)
            upos_counts[token.upos] += 1
            if token.head is not None and token.deprel not in ("", "_"):
                deprel_counts[token.deprel] += 1
    kept_words = Counter(
        {w: c for w, c in word_counts.items() if c >= min_word_freq}
    )
    specials = [PAD_SYMBOL, UNK_SYMBOL, ROOT_SYMBOL]
    return Vocabulary(
        word_itos=specials + _ranked(kept_words),
        char_itos=specials + _ranked(char_counts),
        upos_itos=specials + _ranked(upos_counts),
        deprel_itos=_ranked(deprel_counts),
        min_word_freq=min_word_freq,
    )


def extend_vocab(base: Vocabulary, treebank: Treebank) -> Vocabulary:
    """Extend a vocabulary with new types from a treebank.

    Existing indices are preserved exactly; new words (gated by the base
    min_word_freq), chars, and UPOS tags are appended in (frequency desc,
    lexicographic) order. The deprel inventory is not extended: labels
    are a closed class fixed by the base model's scorer shape.
    """
    word_counts: Counter = Counter()
    char_counts: Counter = Counter()
    upos_counts: Counter = Counter()
    for sentence in treebank:
        for token in sentence.tokens:
            word_counts[token.form.lower()] += 1
            char_counts.update(token.form)
            upos_counts[token.upos] += 1
    new_words = Counter(
        {
            w: c
            for w, c in word_counts.items()
            if c >= base.min_word_freq and w not in base.word_stoi
        }
    )
    new_chars = Counter(
        {c: k for c, k in char_counts.items() if c not in base.char_stoi}
    )
    new_upos = Counter(
        {u: k for u, k in upos_counts.items() if u not in base.upos_stoi}
    )
    return Vocabulary(
        word_itos=base.word_itos + _ranked(new_words),
        char_itos=base.char_itos + _ranked(new_chars),
        upos_itos=base.upos_itos + _ranked(new_upos),
        deprel_itos=list(base.deprel_itos),
        min_word_freq=base.min_word_freq,
    )


@dataclass
class EncodedSentence:
    """Integer view of one sentence with position 0 reserved for ROOT.

    gold_heads/gold_labels cover tokens 1..n (list index i-1 for token i)
    and are None when the sentence carries no head annotation. Unknown
    labels encode as -1 when strict_labels is off; such arcs are excluded
    from the relation loss downstream.
    """

    word_ids: list[int]
    char_id_seqs: list[list[int]]
    feat_ids: list[int]
    gold_heads: list[int] | None
    gold_labels: list[int] | None

    @property
    def n(self) -> int:
        return len(self.word_ids) - 1


def encode_sentence(
    vocab: Vocabulary, sentence: Sentence, strict_labels: bool = True
) -> EncodedSentence:
    """Encode one sentence against a vocabulary.

    With strict_labels, a deprel outside the inventory raises
    UnknownLabelError naming the label; otherwise it encodes as -1.
    """
    word_ids = [ROOT]
    char_id_seqs: list[list[int]] = [[ROOT]]
    feat_ids = [ROOT]
    for token in sentence.tokens:
        word_ids.append(vocab.word_id(token.form))
        char_id_seqs.append(vocab.char_ids(token.form))
        feat_ids.append(vocab.upos_id(token.upos))
    heads = [t.head for t in sentence.tokens]
    if any(h is None for h in heads):
        gold_heads = None
        gold_labels = None
    else:
        gold_heads = list(heads)
        gold_labels = []
        for token in sentence.tokens:
            if token.deprel in vocab.deprel_stoi:
                gold_labels.append(vocab.deprel_stoi[token.deprel])
            elif strict_labels:
                raise UnknownLabelError(
                    f"deprel {token.deprel!r} (token {token.id} "
                    f"{token.form!r}) not in the label inventory"
                )
            else:
                gold_labels.append(-1)
    return EncodedSentence(
        word_ids=word_ids,
        char_id_seqs=char_id_seqs,
        feat_ids=feat_ids,
        gold_heads=gold_heads,
        gold_labels=gold_labels,
    )

"""Reading, writing, validating, and splitting CoNLL-U treebank files.

Files are UTF-8 with LF line endings. Each sentence is a block of
tab-separated 10-column token lines, optionally preceded by comment
lines, terminated by one blank line. Multiword-token ranges (ids like
"3-4") and empty nodes (ids like "3.1") are preserved verbatim as
passthrough lines anchored to their position among the syntactic
tokens; they are not parsing tokens.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

FIELD_COUNT = 10


class ConlluParseError(ValueError):
    """Malformed CoNLL-U content (bad field count, bad integer fields)."""


class TreeStructureError(ValueError):
    """Token ids or head indices violate sentence structure rules."""


@dataclass
class Token:
    """One syntactic word: the 10 CoNLL-U columns with ID/HEAD as ints.

    head is None when the HEAD column is underscore (unparsed input);
    all other columns are kept as raw strings so that writing is exact.
    """

    id: int
    form: str
    lemma: str = "_"
    upos: str = "_"
    xpos: str = "_"
    feats: str = "_"
    head: int | None = None
    deprel: str = "_"
    deps: str = "_"
    misc: str = "_"


@dataclass
class Sentence:
    """Tokens plus preserved comments and passthrough (MWT/empty-node) lines.

    passthrough holds (slot, raw_line) pairs: the line appears immediately
    before the token at list index ``slot`` (slot == len(tokens) means after
    the last token).
    """

    tokens: list[Token] = field(default_factory=list)
    comments: list[str] = field(default_factory=list)
    passthrough: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def sent_id(self) -> str | None:
        for line in self.comments:
            body = line.lstrip("#").strip()
            if body.startswith("sent_id"):
                parts = body.split("=", 1)
                if len(parts) == 2:
                    return parts[1].strip()
        return None


@dataclass
class Treebank:
    """An ordered list of sentences with an informational source tag."""

    sentences: list[Sentence] = field(default_factory=list)
    source_tag: str = "other"

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)


@dataclass
class ValidationReport:
    """Arborescence check result for one sentence."""

    is_tree: bool
    cycle_members: list[int]
    unreachable: list[int]
    root_children: int
    missing_heads: list[int]


def _sentence_label(index: int, sentence: Sentence) -> str:
    sid = sentence.sent_id
    if sid is not None:
        return f"sentence {index} (sent_id {sid})"
    return f"sentence {index}"


def parse_conllu(text: str, source_tag: str = "other") -> Treebank:
    """Parse CoNLL-U text into a Treebank. Line numbers are 1-based."""
    sentences: list[Sentence] = []
    current = Sentence()
    has_content = False
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if line == "":
            if has_content:
                _finish_sentence(current, len(sentences), lineno)
                sentences.append(current)
                current = Sentence()
                has_content = False
            continue
        has_content = True
        if line.startswith("#") and not current.tokens:
            current.comments.append(line)
            continue
        if line.startswith("#"):
            # comment after token lines: keep as anchored passthrough
            current.passthrough.append((len(current.tokens), line))
            continue
        fields = line.split("\t")
        if len(fields) != FIELD_COUNT:
            raise ConlluParseError(
                f"line {lineno}: expected {FIELD_COUNT} tab-separated fields, "
                f"got {len(fields)}"
            )
        tid = fields[0]
        if "-" in tid or "." in tid:
            current.passthrough.append((len(current.tokens), line))
            continue
        try:
            token_id = int(tid)
        except ValueError as exc:
            raise ConlluParseError(f"line {lineno}: bad token id {tid!r}") from exc
        head_field = fields[6]
        if head_field == "_":
            head: int | None = None
        else:
            try:
                head = int(head_field)
            except ValueError as exc:
                raise ConlluParseError(
                    f"line {lineno}: bad head index {head_field!r}"
                ) from exc
        current.tokens.append(
            Token(
                id=token_id,
                form=fields[1],
                lemma=fields[2],
                upos=fields[3],
                xpos=fields[4],
                feats=fields[5],
                head=head,
                deprel=fields[7],
                deps=fields[8],
                misc=fields[9],
            )
        )
    if has_content:
        _finish_sentence(current, len(sentences), lineno)
        sentences.append(current)
    return Treebank(sentences=sentences, source_tag=source_tag)


def _finish_sentence(sentence: Sentence, index: int, lineno: int) -> None:
    n = len(sentence.tokens)
    label = _sentence_label(index, sentence)
    if n == 0:
        raise ConlluParseError(
            f"{label} (near line {lineno}): block has no token lines"
        )
    for pos, token in enumerate(sentence.tokens, start=1):
        if token.id != pos:
            raise TreeStructureError(
                f"{label}: token ids not consecutive from 1 "
                f"(found id {token.id} at position {pos})"
            )
    for token in sentence.tokens:
        if token.head is not None and not 0 <= token.head <= n:
            raise TreeStructureError(
                f"{label}: token {token.id} has head {token.head} "
                f"outside [0, {n}]"
            )
        if token.head is not None and token.deprel in ("", "_"):
            raise TreeStructureError(
                f"{label}: token {token.id} has a head but no deprel"
            )


def read_conllu(path: str, source_tag: str = "other") -> Treebank:
    """Read a CoNLL-U file from disk."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_conllu(fh.read(), source_tag=source_tag)


def sentence_lines(sentence: Sentence) -> list[str]:
    """Render one sentence as its lines, without the trailing blank line."""
    lines = list(sentence.comments)
    passthrough = sorted(sentence.passthrough, key=lambda item: item[0])
    cursor = 0
    for slot, token in enumerate(sentence.tokens):
        while cursor < len(passthrough) and passthrough[cursor][0] <= slot:
            lines.append(passthrough[cursor][1])
            cursor += 1
        head = "_" if token.head is None else str(token.head)
        lines.append(
            "\t".join(
                (
                    str(token.id),
                    token.form,
                    token.lemma,
                    token.upos,
                    token.xpos,
                    token.feats,
                    head,
                    token.deprel,
                    token.deps,
                    token.misc,
                )
            )
        )
    while cursor < len(passthrough):
        lines.append(passthrough[cursor][1])
        cursor += 1
    return lines


def to_conllu(treebank: Treebank) -> str:
    """Serialize a treebank to canonical CoNLL-U text.

    Refuses to serialize sentences that violate structural invariants
    (non-consecutive ids, out-of-range heads, partially missing heads,
    or heads that do not form a 0-rooted arborescence).
    """
    chunks: list[str] = []
    for index, sentence in enumerate(treebank.sentences):
        _check_writable(sentence, index)
        chunks.append("\n".join(sentence_lines(sentence)))
        chunks.append("\n\n")
    return "".join(chunks)


def _check_writable(sentence: Sentence, index: int) -> None:
    label = _sentence_label(index, sentence)
    n = len(sentence.tokens)
    if n == 0:
        raise TreeStructureError(f"{label}: refusing to write empty sentence")
    for pos, token in enumerate(sentence.tokens, start=1):
        if token.id != pos:
            raise TreeStructureError(
                f"{label}: token ids not consecutive from 1"
            )
        if token.head is not None and not 0 <= token.head <= n:
            raise TreeStructureError(
                f"{label}: token {token.id} head {token.head} outside [0, {n}]"
            )
        if token.head is not None and token.deprel in ("", "_"):
            raise TreeStructureError(
                f"{label}: token {token.id} has a head but no deprel"
            )
    set_heads = [t for t in sentence.tokens if t.head is not None]
    if set_heads and len(set_heads) != n:
        raise TreeStructureError(
            f"{label}: heads are only partially annotated"
        )
    if len(set_heads) == n:
        report = validate_tree(sentence)
        if not report.is_tree:
            raise TreeStructureError(
                f"{label}: heads do not form a 0-rooted arborescence "
                f"(cycle members {report.cycle_members}, "
                f"unreachable {report.unreachable})"
            )


def write_conllu(treebank: Treebank, path: str) -> None:
    """Write a treebank to disk as canonical CoNLL-U."""
    text = to_conllu(treebank)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def validate_tree(sentence: Sentence) -> ValidationReport:
    """Report whether the head function forms a 0-rooted arborescence."""
    n = len(sentence.tokens)
    heads = [t.head for t in sentence.tokens]
    missing = [i + 1 for i, h in enumerate(heads) if h is None]
    root_children = sum(1 for h in heads if h == 0)
    if missing:
        return ValidationReport(
            is_tree=False,
            cycle_members=[],
            unreachable=[],
            root_children=root_children,
            missing_heads=missing,
        )
    children: dict[int, list[int]] = {i: [] for i in range(n + 1)}
    for i, h in enumerate(heads, start=1):
        children[h].append(i)
    reached = {0}
    stack = [0]
    while stack:
        node = stack.pop()
        for child in children[node]:
            if child not in reached:
                reached.add(child)
                stack.append(child)
    unreachable = [i for i in range(1, n + 1) if i not in reached]
    cycle_members: list[int] = []
    seen_in_cycles: set[int] = set()
    for start in unreachable:
        if start in seen_in_cycles:
            continue
        # follow head pointers until a repeat: the repeat closes a cycle
        trail: list[int] = []
        pos_in_trail: dict[int, int] = {}
        node = start
        while node not in pos_in_trail and node in set(unreachable):
            pos_in_trail[node] = len(trail)
            trail.append(node)
            node = heads[node - 1]
        if node in pos_in_trail:
            cycle = trail[pos_in_trail[node]:]
            for member in cycle:
                if member not in seen_in_cycles:
                    seen_in_cycles.add(member)
                    cycle_members.append(member)
    return ValidationReport(
        is_tree=not unreachable,
        cycle_members=sorted(cycle_members),
        unreachable=unreachable,
        root_children=root_children,
        missing_heads=[],
    )


def split_treebank(
    treebank: Treebank, train_fraction: float, seed: int
) -> tuple[Treebank, Treebank]:
    """Deterministic seeded split; both parts keep original sentence order.

    |train| = floor(N * train_fraction + 0.5).
    """
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError(f"train_fraction {train_fraction} outside [0, 1]")
    n = len(treebank.sentences)
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    k = int(n * train_fraction + 0.5)
    train_idx = sorted(indices[:k])
    dev_idx = sorted(indices[k:])
    train = Treebank(
        sentences=[treebank.sentences[i] for i in train_idx],
        source_tag=treebank.source_tag,
    )
    dev = Treebank(
        sentences=[treebank.sentences[i] for i in dev_idx],
        source_tag=treebank.source_tag,
    )
    return train, dev

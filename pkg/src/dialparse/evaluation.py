"""Attachment scoring and transfer-regime reporting.

UAS is the fraction of scored tokens whose predicted head matches the
gold head; LAS additionally requires the relation label to match. Tokens
whose gold UPOS is PUNCT are excluded from both by default. Gold and
predicted treebanks must align exactly (same sentences, same forms);
any divergence is an error rather than a silently wrong score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .conllu import Treebank


class EvaluationError(ValueError):
    pass


@dataclass
class Metrics:
    head_correct: int
    label_correct: int
    total: int
    sentences: int

    @property
    def uas(self) -> float:
        return self.head_correct / self.total

    @property
    def las(self) -> float:
        return self.label_correct / self.total


def as_percent(fraction: float, decimals: int = 1) -> float:
    """fraction -> percent, rounded half-up at the given decimal place."""
    scale = 10 ** decimals
    return math.floor(fraction * 100.0 * scale + 0.5) / scale


def _sentence_name(index: int, sentence) -> str:
    sid = sentence.sent_id
    return f"sentence {index + 1}" + (f" (sent_id {sid})" if sid else "")


def attachment_scores(
    gold: Treebank, predicted: Treebank, exclude_punct: bool = True
) -> Metrics:
    if len(gold) != len(predicted):
        raise EvaluationError(
            f"treebank size mismatch: gold has {len(gold)} sentences, "
            f"predicted has {len(predicted)}"
        )
    head_correct = 0
    label_correct = 0
    total = 0
    for idx, (g, p) in enumerate(zip(gold, predicted)):
        name = _sentence_name(idx, g)
        if len(g) != len(p):
            raise EvaluationError(
                f"{name}: length mismatch (gold {len(g)}, predicted {len(p)})"
            )
        for pos, (gt, pt) in enumerate(zip(g.tokens, p.tokens), start=1):
            if gt.form != pt.form:
                raise EvaluationError(
                    f"{name}, token {pos}: form mismatch "
                    f"(gold {gt.form!r}, predicted {pt.form!r})"
                )
            if gt.head is None:
                raise EvaluationError(f"{name}, token {pos}: gold head missing")
            if pt.head is None:
                raise EvaluationError(f"{name}, token {pos}: predicted head missing")
            if exclude_punct and gt.upos == "PUNCT":
                continue
            total += 1
            if pt.head == gt.head:
                head_correct += 1
                if pt.deprel == gt.deprel:
                    label_correct += 1
    if total == 0:
        raise EvaluationError("no scorable tokens (is everything punctuation?)")
    return Metrics(
        head_correct=head_correct,
        label_correct=label_correct,
        total=total,
        sentences=len(gold),
    )


def regime_report(results: dict[str, Metrics]) -> str:
    """Plain-text table of evaluation results keyed by regime name.

    Scores are printed as whole percents (half-up), e.g. "59% 51%", with
    the scored token count after them; the TSV report keeps full
    precision for machine use.
    """
    lines = ["regime                   UAS LAS  (scored tokens)"]
    for name, m in results.items():
        uas_pct = int(as_percent(m.uas, decimals=0))
        las_pct = int(as_percent(m.las, decimals=0))
        lines.append(f"{name:<24} {uas_pct}% {las_pct}%  ({m.total})")
    return "\n".join(lines) + "\n"


def regime_report_tsv(results: dict[str, Metrics]) -> str:
    lines = ["regime\tuas\tlas\tuas_pct\tlas_pct\tscored_tokens"]
    for name, m in results.items():
        lines.append(
            f"{name}\t{m.uas!r}\t{m.las!r}\t{as_percent(m.uas)}\t{as_percent(m.las)}\t{m.total}"
        )
    return "\n".join(lines) + "\n"

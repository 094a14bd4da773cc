"""Full parser: vocabulary, encoder, and scorer, with parsing entry points.

Parsing runs the encoder without recording gradients, decodes the arc
score matrix to a single-rooted tree, then labels each chosen arc with
its argmax relation conditioned on the predicted head.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, Tape
from .conllu import Sentence, Treebank
from .decoder import ParseTree, assign_labels, mst_decode
from .encoder import EncoderConfig, EncoderParams, init_encoder, sentence_representations
from .scorer import BiaffineParams, ScorerConfig, arc_scores, init_scorer, rel_scores_for_pairs
from .vocab import EncodedSentence, Vocabulary, encode_sentence


@dataclass
class ParserModel:
    vocab: Vocabulary
    encoder_config: EncoderConfig
    scorer_config: ScorerConfig
    encoder: EncoderParams
    scorer: BiaffineParams

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.scorer.parameters()


def init_model(
    vocab: Vocabulary,
    encoder_config: EncoderConfig,
    scorer_config: ScorerConfig,
    seed: int,
) -> ParserModel:
    """Build a freshly initialized parser with its own parameter RNG."""
    scorer_config = dataclasses.replace(scorer_config, n_labels=vocab.n_deprels)
    encoder_config.validate()
    scorer_config.validate()
    rng = np.random.default_rng(seed)
    encoder = init_encoder(encoder_config, vocab, rng)
    scorer = init_scorer(scorer_config, 2 * encoder_config.d_h, rng)
    return ParserModel(
        vocab=vocab,
        encoder_config=encoder_config,
        scorer_config=scorer_config,
        encoder=encoder,
        scorer=scorer,
    )


def parse_encoded(
    model: ParserModel, enc: EncodedSentence, single_root: bool = True
) -> ParseTree:
    tape = Tape(record=False)
    r = sentence_representations(tape, model.encoder, enc)
    scores = arc_scores(tape, model.scorer, r)
    tree = mst_decode(scores.data, single_root=single_root)
    deps = list(range(1, enc.n + 1))
    rels = rel_scores_for_pairs(tape, model.scorer, r, deps, tree.heads)
    return assign_labels(tree, rels.data)


def parse_sentence(
    model: ParserModel, sentence: Sentence, single_root: bool = True
) -> Sentence:
    """Copy of the sentence with predicted HEAD and DEPREL columns."""
    enc = encode_sentence(model.vocab, sentence, strict_labels=False)
    tree = parse_encoded(model, enc, single_root=single_root)
    tokens = [
        dataclasses.replace(
            token,
            head=tree.heads[i],
            deprel=model.vocab.deprel_itos[tree.label_ids[i]],
        )
        for i, token in enumerate(sentence.tokens)
    ]
    return Sentence(
        tokens=tokens,
        comments=list(sentence.comments),
        passthrough=list(sentence.passthrough),
    )


def parse_treebank(
    model: ParserModel, treebank: Treebank, single_root: bool = True
) -> Treebank:
    parsed = [parse_sentence(model, s, single_root=single_root) for s in treebank]
    return Treebank(sentences=parsed, source_tag=treebank.source_tag)

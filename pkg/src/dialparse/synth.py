"""Synthetic dialect-pair treebank generation and the transfer experiment.

Two related artificial language varieties share a small grammar whose
sentences are built from weighted clause templates, each rendered in
one of several weighted word orders, over a closed per-POS lexicon with
Zipf-distributed sampling. The varieties differ along exactly three
controlled axes:

  * recipient encoding in ditransitives: an inflectional dative suffix
    on the recipient versus a pre-nominal marker token ("na") labeled
    `case` and attached to the recipient;
  * a bijective lexical swap replacing a fixed fraction of lexicon
    entries with variety-specific forms;
  * optional verb-final reordering of ditransitives.

Several grammatical decisions are resolved by word identity rather than
by position, so parsing accuracy depends on lexical knowledge:

  * nouns split into an animate, an inanimate, and a relational class
    (same UPOS). Animate nouns fill subject and recipient slots,
    inanimate nouns fill object and marked-possessor slots. Because
    every clause appears in reversible word orders, the role of a bare
    noun follows from its class, which must be memorized per word;
  * relational nouns occur only as bare juxtaposed possessors: placed
    directly after a host noun, they attach to it as nmod:poss with no
    marker. A bare noun following another noun is therefore three-ways
    ambiguous (subject, object, or juxtaposed possessor) until its
    class is known;
  * marked possessives ("host na possessor") are shared by both
    varieties, so in the marker variety the surface "... O na X" is
    ambiguous: X is a recipient of the verb (iobj) when animate and a
    possessor of the object (nmod:poss) when inanimate;
  * adjectives split into a prenominal and a postnominal class (same
    UPOS). Between two nouns, an adjective's attachment side follows
    from its class, again memorized per word;
  * verbs subcategorize: each verb type licenses exactly one clause
    template family (intransitive, transitive, ditransitive,
    possessed-object, or complement-taking), so the verb's identity
    predicts whether a trailing "na X" phrase is a recipient or a
    possessor, whether a bare noun can be an object at all, and which
    of two verbs governs the other. All classes share the VERB UPOS,
    so the frame must be memorized per word;
  * complement-taking verbs embed a full intransitive or transitive
    clause as a clausal object (the embedded verb attaches with label
    obj). The complement clause precedes or follows its matrix clause,
    so in a two-verb sentence the root is the verb whose type is
    complement-taking, not the one in a fixed position.

Determiners and the possessive/dative marker "na" are shared function
vocabulary: the lexical swap between varieties replaces content words
only. Relation labels come from a fixed 8-label inventory; generated
sentences always form single-rooted trees, carry gold UPOS, and
contain no punctuation.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
import math
import os
import random
import time
from dataclasses import dataclass, field

from .conllu import Sentence, Token, Treebank, split_treebank, write_conllu
from .evaluation import attachment_scores, regime_report, regime_report_tsv

logger = logging.getLogger("dialparse")

LABELS = ("root", "nsubj", "obj", "iobj", "case", "det", "amod", "nmod:poss")

NOUN_ANIM = "NOUN_ANIM"
NOUN_INAN = "NOUN_INAN"
NOUN_KIN = "NOUN_KIN"
PROPN = "PROPN"
VERB_INTR = "VERB_INTR"
VERB_TRANS = "VERB_TRANS"
VERB_DITR = "VERB_DITR"
VERB_POSS = "VERB_POSS"
VERB_COMP = "VERB_COMP"
ADJ_PRE = "ADJ_PRE"
ADJ_POST = "ADJ_POST"
DET = "DET"
ADP = "ADP"

POS_CLASSES = (
    NOUN_ANIM, NOUN_INAN, NOUN_KIN, PROPN,
    VERB_INTR, VERB_TRANS, VERB_DITR, VERB_POSS, VERB_COMP,
    ADJ_PRE, ADJ_POST, DET, ADP,
)
# Determiners (like the adposition "na") are function words shared by
# both varieties, so the lexical swap only touches content classes.
SWAPPABLE_CLASSES = (
    NOUN_ANIM, NOUN_INAN, NOUN_KIN, PROPN,
    VERB_INTR, VERB_TRANS, VERB_DITR, VERB_POSS, VERB_COMP,
    ADJ_PRE, ADJ_POST,
)

UPOS_OF_CLASS = {
    NOUN_ANIM: "NOUN",
    NOUN_INAN: "NOUN",
    NOUN_KIN: "NOUN",
    PROPN: "PROPN",
    VERB_INTR: "VERB",
    VERB_TRANS: "VERB",
    VERB_DITR: "VERB",
    VERB_POSS: "VERB",
    VERB_COMP: "VERB",
    ADJ_PRE: "ADJ",
    ADJ_POST: "ADJ",
    DET: "DET",
    ADP: "ADP",
}

TEMPLATES = ("sv", "svo", "vo", "ditr", "possobj", "chain")

# Each clause template draws its verb from the matching valency class.
VERB_OF_TEMPLATE = {
    "sv": VERB_INTR,
    "svo": VERB_TRANS,
    "vo": VERB_TRANS,
    "ditr": VERB_DITR,
    "possobj": VERB_POSS,
    "chain": VERB_COMP,
}

# Complement clauses embedded by "chain" are full instances of these
# single-clause templates; their relative weights follow the grammar's
# own weights for the same templates.
CHAIN_EMBEDDABLE = ("sv", "svo", "vo")

# Word orders per template, weighted. Slot letters: s(ubject), v(erb),
# o(bject, with any possessive phrase glued on), r(ecipient phrase),
# k (embedded complement clause). Each template family includes order
# pairs that map the same surface POS pattern onto opposite role
# assignments (svo/ovs, sov/osv, vso/vos), so bare-noun roles stay
# lexically gated rather than positionally recoverable. Recipient
# phrases sit next to the object in most ditransitive orders, exactly
# where possessive phrases sit in possessed-object clauses, so telling
# a recipient from a possessor rests on the verb, not the position.
# Complement clauses precede their matrix clause about half the time,
# so the root of a two-verb sentence is not positionally recoverable
# either.
WORD_ORDERS = {
    "sv": (("sv", 0.62), ("vs", 0.38)),
    "svo": (
        ("svo", 0.20), ("sov", 0.22), ("vso", 0.17),
        ("ovs", 0.15), ("osv", 0.14), ("vos", 0.12),
    ),
    "vo": (("vo", 0.58), ("ov", 0.42)),
    "ditr": (
        ("svor", 0.44), ("vsor", 0.38), ("vosr", 0.08),
        ("svro", 0.04), ("sovr", 0.03), ("osvr", 0.03),
    ),
    "possobj": (
        ("svo", 0.20), ("sov", 0.22), ("vso", 0.17),
        ("ovs", 0.15), ("osv", 0.14), ("vos", 0.12),
    ),
    "chain": (
        ("svk", 0.35), ("vsk", 0.15), ("kvs", 0.25), ("ksv", 0.25),
    ),
}

VERB_FINAL_DITR_ORDERS = (("sorv", 0.62), ("osrv", 0.38))

SUFFIX = "suffix"
MARKER = "marker"

_VOWEL_ROTATION = {"a": "o", "o": "u", "u": "i", "i": "e", "e": "a"}


class GenerationError(ValueError):
    pass


@dataclass
class GrammarSpec:
    lexicon: dict[str, list[str]]
    template_weights: dict[str, float]
    marker_strategy: str = SUFFIX
    ditr_verb_final: bool = False
    free_order: bool = True
    dative_suffix: str = "ju"
    zipf_alpha: float = 0.35
    propn_p: float = 0.08
    kin_p: float = 0.32
    geom_p: float = 0.27
    max_modifier_tokens: int = 8
    shared_core_ranks: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.marker_strategy not in (SUFFIX, MARKER):
            raise GenerationError(
                f"marker_strategy must be {SUFFIX!r} or {MARKER!r}, "
                f"got {self.marker_strategy!r}"
            )
        if set(self.template_weights) - set(TEMPLATES):
            raise GenerationError(
                f"unknown templates: {sorted(set(self.template_weights) - set(TEMPLATES))}"
            )
        total = sum(self.template_weights.values())
        if abs(total - 1.0) > 1e-9:
            raise GenerationError(f"template weights sum to {total}, expected 1")
        if any(w < 0 for w in self.template_weights.values()):
            raise GenerationError("template weights must be nonnegative")
        if not 0.0 < self.geom_p < 1.0:
            raise GenerationError("geom_p must lie in (0, 1)")
        if not 0.0 <= self.kin_p <= 1.0:
            raise GenerationError("kin_p must lie in [0, 1]")
        for cls in POS_CLASSES:
            if cls not in self.lexicon:
                raise GenerationError(f"lexicon missing class {cls}")
        needed = {
            "sv": (VERB_INTR, NOUN_ANIM),
            "svo": (VERB_TRANS, NOUN_ANIM, NOUN_INAN),
            "vo": (VERB_TRANS, NOUN_INAN),
            "ditr": (VERB_DITR, NOUN_ANIM, NOUN_INAN),
            "possobj": (VERB_POSS, NOUN_ANIM, NOUN_INAN),
            "chain": (VERB_COMP, NOUN_ANIM),
        }
        for template, weight in self.template_weights.items():
            if weight <= 0:
                continue
            for cls in needed[template]:
                if not self.lexicon[cls]:
                    raise GenerationError(
                        f"template {template!r} needs a nonempty {cls} class"
                    )
            if self.propn_p > 0 and not self.lexicon[PROPN]:
                raise GenerationError(
                    "propn_p > 0 needs a nonempty PROPN class"
                )
            if self.kin_p > 0 and not self.lexicon[NOUN_KIN]:
                raise GenerationError(
                    "kin_p > 0 needs a nonempty NOUN_KIN class"
                )
        if self.template_weights.get("chain", 0.0) > 0:
            embeddable = sum(
                self.template_weights.get(t, 0.0) for t in CHAIN_EMBEDDABLE
            )
            if embeddable <= 0:
                raise GenerationError(
                    "chain template needs positive weight on at least one "
                    f"of {'/'.join(CHAIN_EMBEDDABLE)}"
                )
        if not self.lexicon[ADP]:
            raise GenerationError("lexicon needs a marker/adposition form")


@dataclass
class ShiftSpec:
    marker_strategy: str = MARKER
    lexical_swap_rate: float = 0.0
    word_order_swap: bool = False

    def validate(self) -> None:
        if self.marker_strategy not in (SUFFIX, MARKER):
            raise GenerationError(f"bad marker_strategy {self.marker_strategy!r}")
        if not 0.0 <= self.lexical_swap_rate <= 1.0:
            raise GenerationError("lexical_swap_rate must lie in [0, 1]")


def _syllable_forms(rng: random.Random, count: int, used: set, n_syllables=(2, 3)):
    consonants = "ptkbdgmnszrlv"
    vowels = "aeiou"
    out = []
    while len(out) < count:
        k = rng.randint(*n_syllables)
        form = "".join(
            rng.choice(consonants) + rng.choice(vowels) for _ in range(k)
        )
        if form in used:
            continue
        used.add(form)
        out.append(form)
    return out


# Open classes are sized so that a few hundred in-variety sentences
# leave most of the frequency tail below the two-occurrence line while
# a few thousand sentences clear it: lexical knowledge then scales with
# training volume instead of saturating. Verb classes are sized in
# proportion to their template weights, so every valency class sits at
# roughly the same occurrences-per-type rate.
DEFAULT_CLASS_SIZES = {
    NOUN_ANIM: 800,
    NOUN_INAN: 950,
    NOUN_KIN: 560,
    PROPN: 60,
    VERB_INTR: 100,
    VERB_TRANS: 350,
    VERB_DITR: 85,
    VERB_POSS: 170,
    VERB_COMP: 145,
    ADJ_PRE: 780,
    ADJ_POST: 780,
    DET: 6,
}

DEFAULT_TEMPLATE_WEIGHTS = {
    "sv": 0.10,
    "svo": 0.22,
    "vo": 0.12,
    "ditr": 0.12,
    "possobj": 0.24,
    "chain": 0.20,
}


def default_grammar(
    seed: int = 0,
    class_sizes: dict[str, int] | None = None,
    template_weights: dict[str, float] | None = None,
    marker_strategy: str = SUFFIX,
) -> GrammarSpec:
    """Build a grammar with a fresh syllable lexicon of the given sizes."""
    sizes = dict(DEFAULT_CLASS_SIZES)
    if class_sizes:
        sizes.update(class_sizes)
    rng = random.Random(seed)
    used: set = {"na"}
    lexicon = {
        cls: _syllable_forms(rng, sizes[cls], used)
        for cls in POS_CLASSES
        if cls != ADP
    }
    lexicon[ADP] = ["na"]
    grammar = GrammarSpec(
        lexicon=lexicon,
        template_weights=dict(template_weights or DEFAULT_TEMPLATE_WEIGHTS),
        marker_strategy=marker_strategy,
        seed=seed,
    )
    grammar.validate()
    return grammar


def lexicon_forms(grammar: GrammarSpec) -> set:
    return {form for forms in grammar.lexicon.values() for form in forms}


# ---------------------------------------------------------------------------
# Sentence generation
# ---------------------------------------------------------------------------


class _Node:
    __slots__ = ("form", "lemma", "upos", "label", "parent")

    def __init__(self, form, upos, label, parent, lemma=None):
        self.form = form
        self.lemma = lemma if lemma is not None else form
        self.upos = upos
        self.label = label
        self.parent = parent


class _Draw:
    """Seeded lexical sampler with per-class Zipf rank weights."""

    def __init__(self, grammar: GrammarSpec, rng: random.Random) -> None:
        self.grammar = grammar
        self.rng = rng
        self._cum_weights = {
            cls: list(
                itertools.accumulate(
                    1.0 / (r + 1) ** grammar.zipf_alpha for r in range(len(forms))
                )
            )
            for cls, forms in grammar.lexicon.items()
        }

    def pick(self, cls: str) -> str:
        forms = self.grammar.lexicon[cls]
        if not forms:
            raise GenerationError(f"lexicon class {cls} is empty")
        return self.rng.choices(forms, cum_weights=self._cum_weights[cls])[0]

    def pick_animate(self) -> tuple[str, str]:
        if self.rng.random() < self.grammar.propn_p:
            return self.pick(PROPN), "PROPN"
        return self.pick(NOUN_ANIM), "NOUN"

    def pick_inanimate(self) -> str:
        return self.pick(NOUN_INAN)


def _truncated_geometric(rng: random.Random, p: float, max_value: int) -> int:
    u = rng.random()
    k = int(math.log(1.0 - u) / math.log(1.0 - p))
    return min(k, max_value)


def _attach_poss(draw: _Draw, host: _Node) -> list[_Node]:
    possessor = _Node(draw.pick_inanimate(), "NOUN", "nmod:poss", host)
    marker = _Node(draw.grammar.lexicon[ADP][0], "ADP", "case", possessor)
    return [marker, possessor]


def _apply_modifiers(draw: _Draw, order: list[_Node], hosts: list[_Node]) -> list[_Node]:
    """Pad the sentence with determiners and adjectives on eligible nouns.

    The number of added tokens follows a truncated geometric
    distribution, capped by the available slots: per common-noun
    argument one determiner, up to two prenominal and up to two
    postnominal adjectives, each adjective drawn from the class
    matching its side.
    """
    grammar = draw.grammar
    budget = _truncated_geometric(draw.rng, grammar.geom_p, grammar.max_modifier_tokens)
    slots = []
    for host in hosts:
        if host.upos != "NOUN":
            continue
        slots.extend(
            [(host, "det"), (host, "pre"), (host, "pre"), (host, "post"), (host, "post")]
        )
    draw.rng.shuffle(slots)
    pre_count: dict[int, int] = {}
    for host, kind in slots:
        if budget <= 0:
            break
        budget -= 1
        pos = order.index(host)
        if kind == "det":
            node = _Node(draw.pick(DET), "DET", "det", host)
            order.insert(pos - pre_count.get(id(host), 0), node)
        elif kind == "pre":
            node = _Node(draw.pick(ADJ_PRE), "ADJ", "amod", host)
            order.insert(pos, node)
            pre_count[id(host)] = pre_count.get(id(host), 0) + 1
        else:
            node = _Node(draw.pick(ADJ_POST), "ADJ", "amod", host)
            order.insert(pos + 1, node)
    return order


def _pick_order(draw: _Draw, template: str) -> str:
    grammar = draw.grammar
    if template == "ditr" and grammar.ditr_verb_final:
        options = VERB_FINAL_DITR_ORDERS
    else:
        options = WORD_ORDERS[template]
    if not grammar.free_order:
        return options[0][0]
    names = [name for name, _ in options]
    weights = [w for _, w in options]
    return draw.rng.choices(names, weights=weights)[0]


def _build_clause(draw: _Draw, template: str) -> tuple[list[_Node], list[_Node], _Node]:
    """Build one clause: its ordered nodes, modifier hosts, and verb.

    The clause verb comes back with parent None; a caller embedding the
    clause reattaches it. Modifiers are applied once per sentence, over
    the hosts of every clause, by the caller.
    """
    grammar = draw.grammar
    verb = _Node(draw.pick(VERB_OF_TEMPLATE[template]), "VERB", "root", None)
    phrase: dict[str, list[_Node]] = {"v": [verb]}
    hosts: list[_Node] = []
    kin_slots: list[str] = []
    if template in ("sv", "svo", "ditr", "possobj", "chain"):
        sform, supos = draw.pick_animate()
        subj = _Node(sform, supos, "nsubj", verb)
        phrase["s"] = [subj]
        hosts.append(subj)
        kin_slots.append("s")
    if template in ("svo", "vo", "ditr", "possobj"):
        obj = _Node(draw.pick_inanimate(), "NOUN", "obj", verb)
        phrase["o"] = [obj]
        hosts.append(obj)
        if template != "possobj":
            kin_slots.append("o")
    if template == "possobj":
        marker, possessor = _attach_poss(draw, phrase["o"][0])
        phrase["o"] += [marker, possessor]
        hosts.append(possessor)
    if template == "ditr":
        rform, rupos = draw.pick_animate()
        if grammar.marker_strategy == SUFFIX:
            recipient = _Node(
                rform + grammar.dative_suffix, rupos, "iobj", verb, lemma=rform
            )
            phrase["r"] = [recipient]
        else:
            recipient = _Node(rform, rupos, "iobj", verb)
            marker = _Node(grammar.lexicon[ADP][0], "ADP", "case", recipient)
            phrase["r"] = [marker, recipient]
        hosts.append(recipient)
        kin_slots.append("r")
    if template == "chain":
        k_names = [
            t for t in CHAIN_EMBEDDABLE
            if grammar.template_weights.get(t, 0.0) > 0
        ]
        k_weights = [grammar.template_weights[t] for t in k_names]
        k_template = draw.rng.choices(k_names, weights=k_weights)[0]
        k_order, k_hosts, k_verb = _build_clause(draw, k_template)
        k_verb.parent = verb
        k_verb.label = "obj"
        phrase["k"] = k_order
        hosts.extend(k_hosts)
    # Juxtaposed possessors: a bare relational noun directly after a
    # common-noun argument attaches to it. A host carrying a marked
    # possessive phrase is skipped so that "na X" never follows a
    # relational noun with two candidate hosts.
    for slot in kin_slots:
        host = phrase[slot][-1]
        if host.upos != "NOUN":
            continue
        if draw.rng.random() < grammar.kin_p:
            kin = _Node(draw.pick(NOUN_KIN), "NOUN", "nmod:poss", host)
            phrase[slot].append(kin)
    order_name = _pick_order(draw, template)
    order: list[_Node] = []
    for slot in order_name:
        order.extend(phrase[slot])
    return order, hosts, verb


def _instantiate(draw: _Draw, template: str) -> list[_Node]:
    if template not in TEMPLATES:
        raise GenerationError(f"unknown template {template!r}")
    order, hosts, _ = _build_clause(draw, template)
    return _apply_modifiers(draw, order, hosts)


def _draw_sentence(draw: _Draw) -> Sentence:
    grammar = draw.grammar
    names = list(grammar.template_weights)
    weights = [grammar.template_weights[t] for t in names]
    template = draw.rng.choices(names, weights=weights)[0]
    order = _instantiate(draw, template)
    index = {id(node): i + 1 for i, node in enumerate(order)}
    tokens = [
        Token(
            id=i + 1,
            form=node.form,
            lemma=node.lemma,
            upos=node.upos,
            head=index[id(node.parent)] if node.parent is not None else 0,
            deprel=node.label,
        )
        for i, node in enumerate(order)
    ]
    return Sentence(tokens=tokens)


def generate_sentence(grammar: GrammarSpec, rng: random.Random) -> Sentence:
    return _draw_sentence(_Draw(grammar, rng))


def generate_treebank(
    grammar: GrammarSpec, n_sentences: int, seed: int, source_tag: str = "synth"
) -> Treebank:
    """Deterministically sample a treebank of single-rooted gold trees."""
    grammar.validate()
    if n_sentences < 1:
        raise GenerationError("n_sentences must be >= 1")
    rng = random.Random(seed)
    draw = _Draw(grammar, rng)
    sentences = []
    for i in range(n_sentences):
        sent = _draw_sentence(draw)
        sent.comments = [
            f"# sent_id = {source_tag}-{i + 1:05d}",
            "# text = " + " ".join(t.form for t in sent.tokens),
        ]
        sentences.append(sent)
    return Treebank(sentences=sentences, source_tag=source_tag)


# ---------------------------------------------------------------------------
# Variety derivation
# ---------------------------------------------------------------------------


def _mutate_form(form: str, taken: set) -> str:
    candidate = "".join(_VOWEL_ROTATION.get(ch, ch) for ch in form)
    while candidate in taken:
        candidate += "z"
    return candidate


def _largest_remainder(quotas: list[float], total: int) -> list[int]:
    base = [int(math.floor(q)) for q in quotas]
    remainder = total - sum(base)
    order = sorted(
        range(len(quotas)), key=lambda i: (-(quotas[i] - base[i]), i)
    )
    for i in order[:remainder]:
        base[i] += 1
    return base


def _unswappable_token_share(grammar: GrammarSpec, marker_strategy: str) -> float:
    """Rough expected share of running tokens that never swap.

    Marker and determiner tokens are shared function vocabulary, so the
    swapped mass inside the swappable classes has to run slightly above
    the type rate for the whole-stream swapped fraction to land on it.
    A coarse estimate is enough here.
    """
    w = grammar.template_weights
    markers = w.get("possobj", 0.0)
    if marker_strategy == MARKER:
        markers += w.get("ditr", 0.0)
    core = {
        "sv": 2.0, "svo": 3.0, "vo": 2.0,
        "ditr": 5.0 if marker_strategy == MARKER else 4.0, "possobj": 5.0,
    }
    common = 1.0 - grammar.propn_p
    kin_hosts = {
        "sv": common, "svo": common + 1.0, "vo": 1.0,
        "ditr": 2.0 * common + 1.0, "possobj": common,
    }
    embed_total = sum(w.get(t, 0.0) for t in CHAIN_EMBEDDABLE)
    if embed_total > 0:
        core["chain"] = 2.0 + sum(
            w.get(t, 0.0) / embed_total * core[t] for t in CHAIN_EMBEDDABLE
        )
        kin_hosts["chain"] = common + sum(
            w.get(t, 0.0) / embed_total * kin_hosts[t] for t in CHAIN_EMBEDDABLE
        )
    else:
        core["chain"] = 2.0
        kin_hosts["chain"] = common
    mean_core = sum(weight * core[t] for t, weight in w.items())
    kin = grammar.kin_p * sum(weight * kin_hosts[t] for t, weight in w.items())
    padding = min((1.0 - grammar.geom_p) / grammar.geom_p, 3.0)
    dets = padding / 5.0
    return (markers + dets) / (mean_core + kin + padding)


def _select_swap_ranks(
    m: int, t: int, alpha: float, mass_rate: float, offset: float
) -> list[int]:
    """Choose exactly t of m frequency ranks to swap.

    Starts from evenly spaced ranks, then greedily trades picked for
    unpicked ranks until the picked share of the class's Zipf token mass
    sits close to mass_rate, so swapping t types also swaps a controlled
    fraction of the running tokens.
    """
    if t >= m:
        return list(range(m))
    picked = {min(int((j + offset) * m / t), m - 1) for j in range(t)}
    fill = 0
    while len(picked) < t:
        if fill not in picked:
            picked.add(fill)
        fill += 1
    weights = [1.0 / (r + 1) ** alpha for r in range(m)]
    target = mass_rate * sum(weights)
    err = sum(weights[r] for r in picked) - target
    while abs(err) > 1e-6:
        unpicked = [r for r in range(m) if r not in picked]
        best = None
        for p in picked:
            for q in unpicked:
                cand = err - weights[p] + weights[q]
                if best is None or abs(cand) < abs(best[0]):
                    best = (cand, p, q)
        if best is None or abs(best[0]) >= abs(err):
            break
        err, p, q = best
        picked.remove(p)
        picked.add(q)
    return sorted(picked)


def derive_shifted_variety(
    grammar: GrammarSpec, shift: ShiftSpec, seed: int
) -> GrammarSpec:
    """Variety with the shift applied: marker strategy, lexicon, order.

    The lexical swap replaces an exact count of entries,
    round(rate * swappable lexicon size), allocated across POS classes
    by largest remainder and spread over each class's frequency ranks so
    that the swapped fraction of running tokens tracks the swapped
    fraction of types. The marker/adposition and determiner classes
    never swap: function words are the anchors shared by both
    varieties. Every replacement is a fresh unique form, so the swap is
    a bijection.
    """
    grammar.validate()
    shift.validate()
    rng = random.Random(seed)
    lexicon = {cls: list(forms) for cls, forms in grammar.lexicon.items()}
    sizes = [len(lexicon[cls]) for cls in SWAPPABLE_CLASSES]
    m_total = sum(sizes)
    n_swap = int(shift.lexical_swap_rate * m_total + 0.5)
    if n_swap > 0:
        quotas = [shift.lexical_swap_rate * m for m in sizes]
        counts = _largest_remainder(quotas, n_swap)
        taken = set(lexicon_forms(grammar))
        fixed_share = _unswappable_token_share(grammar, shift.marker_strategy)
        mass_rate = min(1.0, shift.lexical_swap_rate / (1.0 - fixed_share))
        for cls, m, t in zip(SWAPPABLE_CLASSES, sizes, counts):
            if t == 0:
                continue
            ranks = _select_swap_ranks(
                m, t, grammar.zipf_alpha, mass_rate, rng.random()
            )
            for r in ranks:
                new_form = _mutate_form(lexicon[cls][r], taken)
                taken.add(new_form)
                lexicon[cls][r] = new_form
    return dataclasses.replace(
        grammar,
        lexicon=lexicon,
        marker_strategy=shift.marker_strategy,
        ditr_verb_final=shift.word_order_swap,
        template_weights=dict(grammar.template_weights),
    )


def derive_speaker_profile(grammar: GrammarSpec, seed: int) -> GrammarSpec:
    """Same grammar, different speakers: permute each class's rank order
    beyond the shared core, reshaping word frequencies without changing
    the word inventory, the templates, or the shift axes."""
    rng = random.Random(seed)
    lexicon = {}
    core = grammar.shared_core_ranks
    for cls in POS_CLASSES:
        forms = list(grammar.lexicon[cls])
        tail = forms[core:]
        rng.shuffle(tail)
        lexicon[cls] = forms[:core] + tail
    return dataclasses.replace(
        grammar, lexicon=lexicon, template_weights=dict(grammar.template_weights)
    )


# ---------------------------------------------------------------------------
# Transfer experiment
# ---------------------------------------------------------------------------


def _experiment_train_config():
    from .trainer import TrainConfig

    return TrainConfig(
        d_w=64, d_c=24, d_ch=32, d_f=16, d_h=96, layers=1, d_a=96, d_r=48,
        max_epochs=40, patience=10,
    )


@dataclass
class ExperimentConfig:
    """Settings for the three-regime cross-variety transfer experiment.

    Variety A is the high-resource source; variety B is derived from A
    by the configured shift; the small test set C is variety B text
    sampled under a separate speaker frequency profile. One seed drives
    the whole run: grammar construction, dataset sampling, the split,
    and training (it overrides ``train.seed``).
    """

    n_a: int = 2000
    n_b: int = 650
    b_train_fraction: float = 0.8
    n_c: int = 90
    seed: int = 1234
    swap_rate: float = 0.3
    marker_strategy_a: str = SUFFIX
    marker_strategy_b: str = MARKER
    word_order_swap: bool = False
    identity_shift: bool = False
    finetune_lr_scale: float = 0.35
    train: "TrainConfig" = field(default_factory=_experiment_train_config)

    def validate(self) -> None:
        if self.n_a < 1:
            raise GenerationError("n_a must be >= 1")
        if self.n_b < 1:
            raise GenerationError("n_b must be >= 1 (development data comes from B)")
        if self.n_c < 1:
            raise GenerationError("n_c must be >= 1")
        if not 0.0 <= self.b_train_fraction < 1.0:
            raise GenerationError("b_train_fraction must lie in [0, 1)")
        if not 0.0 <= self.swap_rate <= 1.0:
            raise GenerationError("swap_rate must lie in [0, 1]")
        if self.finetune_lr_scale <= 0:
            raise GenerationError("finetune_lr_scale must be positive")
        for strategy in (self.marker_strategy_a, self.marker_strategy_b):
            if strategy not in (SUFFIX, MARKER):
                raise GenerationError(f"bad marker strategy {strategy!r}")
        self.train.validate()


REGIME_NAMES = {
    "a_only": "A-only",
    "b_only": "B-only",
    "finetuned": "A-then-B",
}


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text)


def _history_tsv(history) -> str:
    lines = ["epoch\ttrain_loss\tdev_uas\tdev_las"]
    for rec in history:
        lines.append(f"{rec.epoch}\t{rec.train_loss!r}\t{rec.dev_uas!r}\t{rec.dev_las!r}")
    return "\n".join(lines) + "\n"


def _config_dump(config: ExperimentConfig) -> str:
    lines = ["# transfer experiment settings (key=value, values are Python literals)"]
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.name == "train":
            for tf in dataclasses.fields(value):
                lines.append(f"train.{tf.name}={getattr(value, tf.name)!r}")
        else:
            lines.append(f"{f.name}={value!r}")
    return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig, out_dir: str) -> dict:
    """Run the three-regime transfer comparison and persist everything.

    Regimes, all evaluated on the held-out C set:
      a_only     trained on variety A only (B-dev used for model selection);
      b_only     trained on B-train only;
      finetuned  the a_only model fine-tuned on B-train at a reduced
                 learning rate.

    Datasets, checkpoints, per-regime C predictions, training histories,
    plain and TSV reports, and figures are written under ``out_dir``.
    Returns a dict with per-regime metrics, histories, best dev LAS,
    skipped regime names, and output paths.

    When B-train is empty (b_train_fraction = 0) only the a_only regime
    runs; with identity_shift the B variety equals A, giving a control
    run where a_only and finetuned should land close together.
    """
    from .model import parse_treebank
    from .trainer import finetune, save_checkpoint, train
    from . import plots

    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    grammar_a = default_grammar(
        seed=config.seed, marker_strategy=config.marker_strategy_a
    )
    if config.identity_shift:
        shift = ShiftSpec(config.marker_strategy_a, 0.0, False)
        logger.info("identity shift control: variety B equals variety A")
    else:
        shift = ShiftSpec(
            config.marker_strategy_b, config.swap_rate, config.word_order_swap
        )
    grammar_b = derive_shifted_variety(grammar_a, shift, seed=config.seed + 7)
    grammar_c = derive_speaker_profile(grammar_b, seed=config.seed + 77)

    tb_a = generate_treebank(grammar_a, config.n_a, config.seed + 11, "A")
    tb_b = generate_treebank(grammar_b, config.n_b, config.seed + 22, "B")
    b_train, b_dev = split_treebank(tb_b, config.b_train_fraction, config.seed + 5)
    tb_c = generate_treebank(grammar_c, config.n_c, config.seed + 33, "C")
    if not b_dev.sentences:
        raise GenerationError("the B split left no development sentences")

    paths: dict[str, str] = {}
    for name, tb in (
        ("A", tb_a), ("B_train", b_train), ("B_dev", b_dev), ("C", tb_c),
    ):
        paths[name] = os.path.join(out_dir, f"{name}.conllu")
        write_conllu(tb, paths[name])
    paths["config"] = os.path.join(out_dir, "config.txt")
    _write_text(paths["config"], _config_dump(config))
    logger.info(
        "datasets: |A|=%d |B-train|=%d |B-dev|=%d |C|=%d",
        len(tb_a.sentences), len(b_train.sentences),
        len(b_dev.sentences), len(tb_c.sentences),
    )

    base_cfg = dataclasses.replace(config.train, seed=config.seed)
    ft_cfg = dataclasses.replace(
        base_cfg, lr=base_cfg.lr * config.finetune_lr_scale
    )

    metrics: dict[str, object] = {}
    history: dict[str, list] = {}
    best_dev: dict[str, float] = {}
    skipped: list[str] = []

    def _finish_regime(key: str, result) -> None:
        history[key] = result.history
        best_dev[key] = result.best_dev_las
        ckpt = os.path.join(out_dir, f"{key}.ckpt")
        save_checkpoint(
            ckpt, result.model, base_cfg if key != "finetuned" else ft_cfg,
            history=result.history, best_epoch=result.best_epoch,
            best_dev_las=result.best_dev_las,
        )
        paths[f"{key}.ckpt"] = ckpt
        predicted = parse_treebank(result.model, tb_c)
        pred_path = os.path.join(out_dir, f"C_pred_{key}.conllu")
        write_conllu(predicted, pred_path)
        paths[f"C_pred_{key}"] = pred_path
        metrics[key] = attachment_scores(tb_c, predicted)
        hist_path = os.path.join(out_dir, f"history_{key}.tsv")
        _write_text(hist_path, _history_tsv(result.history))
        paths[f"history_{key}"] = hist_path
        logger.info(
            "regime %s: C UAS %.4f LAS %.4f over %d tokens",
            REGIME_NAMES[key], metrics[key].uas, metrics[key].las,
            metrics[key].total,
        )

    start = time.perf_counter()
    base_result = train(tb_a, b_dev, base_cfg)
    _finish_regime("a_only", base_result)
    logger.info("a_only regime took %.1fs", time.perf_counter() - start)

    if not b_train.sentences:
        skipped = ["b_only", "finetuned"]
        logger.warning(
            "B-train is empty; skipping the B-only and fine-tuned regimes"
        )
    else:
        start = time.perf_counter()
        _finish_regime("b_only", train(b_train, b_dev, base_cfg))
        logger.info("b_only regime took %.1fs", time.perf_counter() - start)
        start = time.perf_counter()
        _finish_regime(
            "finetuned", finetune(base_result.model, b_train, b_dev, ft_cfg)
        )
        logger.info("finetuned regime took %.1fs", time.perf_counter() - start)

    named = {REGIME_NAMES[k]: m for k, m in metrics.items()}
    report = regime_report(named)
    if skipped:
        report += (
            "note: B-train is empty, so the "
            + " and ".join(REGIME_NAMES[k] for k in skipped)
            + " regimes were skipped\n"
        )
    paths["report"] = os.path.join(out_dir, "report.txt")
    _write_text(paths["report"], report)
    paths["report_tsv"] = os.path.join(out_dir, "report.tsv")
    _write_text(paths["report_tsv"], regime_report_tsv(named))
    paths["regime_scores"] = os.path.join(out_dir, "regime_scores.png")
    plots.save_regime_bars(
        named, paths["regime_scores"], title="Attachment scores on C"
    )
    paths["training_curves"] = os.path.join(out_dir, "training_curves.png")
    plots.save_training_curves(
        {REGIME_NAMES[k]: h for k, h in history.items()},
        paths["training_curves"],
    )
    return {
        "metrics": metrics,
        "history": history,
        "best_dev_las": best_dev,
        "skipped": skipped,
        "paths": paths,
    }

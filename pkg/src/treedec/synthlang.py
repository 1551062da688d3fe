"""Synthetic German-like -> English-like parallel corpora with gold target trees.

Phenomena:
    svo / ovs        argument order; OVS only when at least one NP is case-marked
    particle         source fused verb -> target verb ... particle, 2..k interveners
    particle-local   same with 0..1 interveners
    reflexive        subject ... reflexive pronoun agreeing with it, across a PP
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .depgraph import CONTINUATION, WordTree, format_conllu

# noun: (source, target, gender, pronoun)
NOUNS = (
    ("ball", "ball", "m", "itself"),
    ("stein", "stone", "m", "itself"),
    ("tisch", "table", "m", "itself"),
    ("hamster", "hamster", "m", "itself"),
    ("vater", "father", "m", "himself"),
    ("hund", "dog", "m", "itself"),
    ("student", "student", "m", "himself"),
    ("pferd", "horse", "n", "itself"),
    ("kind", "child", "n", "itself"),
    ("mädchen", "girl", "n", "herself"),
    ("mutter", "mother", "f", "herself"),
    ("lehrerin", "teacher", "f", "herself"),
    ("katze", "cat", "f", "itself"),
    ("kohle", "coal", "f", "itself"),
    ("lampe", "lamp", "f", "itself"),
    ("buch", "book", "n", "itself"),
)
ADJECTIVES = (("groß", "big"), ("rot", "red"), ("alt", "old"), ("klein", "small"), ("neu", "new"), ("schwer", "heavy"))
VERBS = (("bringt", "brings"), ("wirft", "throws"), ("drückt", "pushes"), ("drängt", "urges"),
         ("zieht", "pulls"), ("sieht", "sees"), ("hört", "hears"))
PARTICLE_VERBS = (("löscht", "puts", "out"), ("legt", "puts", "down"), ("hebt", "picks", "up"),
                  ("wählt", "picks", "out"), ("schaltet", "turns", "off"), ("dreht", "turns", "around"),
                  ("gibt", "gives", "back"), ("räumt", "puts", "away"))
REFLEXIVE_VERBS = (("wäscht", "washes"), ("verletzt", "hurts"), ("lobt", "praises"))

DETERMINERS = {  # gender -> (nominative, accusative, dative)
    "m": ("der", "den", "dem"),
    "n": ("das", "das", "dem"),
    "f": ("die", "die", "der"),
}

TEMPLATES = ("svo", "ovs", "particle", "reflexive")

# The three mixup lists: object-marked, subject-marked, both marked.
MIXUP_LISTS = {
    "object": (("ball", "stein", "tisch", "hamster"), ("bringt", "wirft", "drückt"), ("kind", "mutter", "mädchen")),
    "subject": (("pferd", "kind", "mädchen"), ("drängt", "drückt", "zieht"), ("vater", "hund", "student")),
    "both": (("ball", "stein", "tisch", "hamster"), ("bringt", "wirft", "drückt"), ("vater", "hund", "student")),
}


@dataclass(frozen=True)
class Lexicon:
    nouns: tuple = NOUNS
    adjectives: tuple = ADJECTIVES
    verbs: tuple = VERBS
    particle_verbs: tuple = PARTICLE_VERBS
    reflexive_verbs: tuple = REFLEXIVE_VERBS

    def noun(self, src: str) -> tuple:
        for n in self.nouns:
            if n[0] == src:
                return n
        raise KeyError(f"noun {src!r} not in lexicon")

    def target_nouns(self) -> set[str]:
        return {n[1] for n in self.nouns}

    def words(self) -> set[str]:
        out = set()
        for n in self.nouns:
            out.update(n[:2])
        for a in self.adjectives:
            out.update(a)
        for v in self.verbs + self.reflexive_verbs:
            out.update(v)
        for v in self.particle_verbs:
            out.update(v)
        for dets in DETERMINERS.values():
            out.update(dets)
        out.update({"the", "with", "mit", "sich", "himself", "herself", "itself"})
        return out


@dataclass(frozen=True)
class GrammarSpec:
    lexicon: Lexicon = field(default_factory=Lexicon)
    templates: dict = field(default_factory=lambda: {"svo": 0.3, "ovs": 0.2, "particle": 0.35, "reflexive": 0.15})
    max_intervener: int = 4
    size: int = 1000
    seed: int = 0
    split_fraction: float = 0.25
    exclude: frozenset = frozenset()


@dataclass(frozen=True)
class NP:
    noun: tuple
    adjectives: tuple = ()
    bare: bool = False

    def source(self, case: int) -> list[str]:
        det = [] if self.bare else [DETERMINERS[self.noun[2]][case]]
        return det + [a[0] for a in self.adjectives] + [self.noun[0]]

    def target(self) -> list[str]:
        det = [] if self.bare else ["the"]
        return det + [a[1] for a in self.adjectives] + [self.noun[1]]

    def tree(self, offset: int) -> tuple[int, list[tuple[int, int, str]]]:
        """Position of the noun and the NP-internal edges (head, dep, label), 0-based."""
        words = self.target()
        head = offset + len(words) - 1
        edges = [(head, offset + i, "det" if (i == 0 and not self.bare) else "amod") for i in range(len(words) - 1)]
        return head, edges

    @property
    def marked(self) -> bool:
        """Nominative and accusative differ for this NP's gender."""
        return not self.bare and DETERMINERS[self.noun[2]][0] != DETERMINERS[self.noun[2]][1]


@dataclass(frozen=True)
class SynthPair:
    template: str
    subj: NP
    verb: tuple
    obj: NP
    order: str = "svo"  # source order, svo or ovs
    intervener: int = 0

    @property
    def tag(self) -> str:
        if self.template == "particle":
            return "particle" if self.intervener >= 2 else "particle-local"
        if self.template in ("svo", "ovs"):
            return self.order
        return self.template

    @property
    def case(self) -> str:
        s, o = self.subj.marked, self.obj.marked
        return {(True, True): "both", (True, False): "subject", (False, True): "object"}.get((s, o), "neither")

    def source_words(self) -> list[str]:
        if self.template == "reflexive":
            return self.subj.source(0) + ["mit"] + self.obj.source(2) + [self.verb[0], "sich"]
        if self.order == "ovs":
            return self.obj.source(1) + [self.verb[0]] + self.subj.source(0)
        return self.subj.source(0) + [self.verb[0]] + self.obj.source(1)

    def target_tree(self) -> WordTree:
        words: list[str] = []
        edges: list[tuple[int, int, str]] = []
        subj_head, e = self.subj.tree(0)
        words += self.subj.target()
        edges += e
        if self.template == "reflexive":
            words.append("with")
            obj_head, e = self.obj.tree(len(words))
            edges += e + [(obj_head, len(words) - 1, "case"), (subj_head, obj_head, "nmod")]
            words += self.obj.target()
            verb = len(words)
            words += [self.verb[1], self.subj.noun[3]]
            edges += [(verb, subj_head, "nsubj"), (verb, verb + 1, "obj")]
        else:
            verb = len(words)
            words.append(self.verb[1])
            edges.append((verb, subj_head, "nsubj"))
            if self.template == "particle" and self.intervener == 0:
                edges.append((verb, len(words), "compound:prt"))
                words.append(self.verb[2])
            obj_head, e = self.obj.tree(len(words))
            edges += e + [(verb, obj_head, "obj")]
            words += self.obj.target()
            if self.template == "particle" and self.intervener > 0:
                edges.append((verb, len(words), "compound:prt"))
                words.append(self.verb[2])
        heads = [0] * len(words)
        labels = ["root"] * len(words)
        for h, d, lab in edges:
            heads[d] = h + 1
            labels[d] = lab
        return WordTree(tuple(words), tuple(heads), tuple(labels))

    def slots(self) -> dict:
        out = {"subj": self.subj.noun[1], "obj": self.obj.noun[1], "verb": self.verb[1]}
        if self.template == "particle":
            out["particle"] = self.verb[2]
            out["split"] = self.intervener > 0
        if self.template == "reflexive":
            out["pronoun"] = self.subj.noun[3]
        return out

    def swapped(self) -> "SynthPair":
        if self.template not in ("svo", "ovs"):
            raise ValueError("only svo/ovs pairs can be swapped")
        order = "ovs" if self.order == "svo" else "svo"
        return replace(self, order=order, template=order)


class Segmenter:
    """Deterministic subword splitter: a fixed fraction of word types is cut in half."""

    def __init__(self, types: Iterable[str], fraction: float = 0.25):
        candidates = sorted(t for t in set(types) if len(t) >= 4)
        self.split: dict[str, list[str]] = {}
        if fraction > 0:
            stride = max(1, round(1 / fraction))
            for i, t in enumerate(candidates):
                if i % stride == 0:
                    mid = len(t) // 2
                    self.split[t] = [t[:mid] + CONTINUATION, t[mid:]]

    def __call__(self, words: Sequence[str]) -> list[str]:
        out = []
        for w in words:
            out.extend(self.split.get(w, [w]))
        return out


@dataclass
class Corpus:
    pairs: list[SynthPair]
    segmenter: Segmenter

    def __len__(self):
        return len(self.pairs)

    def sources(self) -> list[str]:
        return [" ".join(self.segmenter(p.source_words())) for p in self.pairs]

    def targets(self) -> list[str]:
        return [" ".join(self.segmenter(p.target_tree().forms)) for p in self.pairs]

    def references(self) -> list[str]:
        return [" ".join(p.target_tree().forms) for p in self.pairs]

    def trees(self) -> list[WordTree]:
        return [p.target_tree() for p in self.pairs]

    def tags(self) -> list[dict]:
        return [{"tag": p.tag, "case": p.case, "intervener": p.intervener, "slots": p.slots()} for p in self.pairs]

    def write(self, directory: str | Path, prefix: str = "") -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{prefix}src.txt").write_text("\n".join(self.sources()) + "\n", encoding="utf-8")
        (d / f"{prefix}tgt.txt").write_text("\n".join(self.targets()) + "\n", encoding="utf-8")
        (d / f"{prefix}tgt.conllu").write_text(format_conllu(self.trees()), encoding="utf-8")
        with open(d / f"{prefix}tags.jsonl", "w", encoding="utf-8") as f:
            for t in self.tags():
                f.write(json.dumps(t, ensure_ascii=False) + "\n")


def make_segmenter(spec: GrammarSpec) -> Segmenter:
    return Segmenter(spec.lexicon.words(), spec.split_fraction)


def _np(rng: random.Random, lex: Lexicon, n_adj: int, noun=None, bare: bool = False) -> NP:
    noun = noun or rng.choice(lex.nouns)
    adjs = tuple(rng.sample(lex.adjectives, n_adj)) if n_adj else ()
    return NP(noun, adjs, bare)


def _sample(rng: random.Random, spec: GrammarSpec, template: str) -> SynthPair:
    lex = spec.lexicon
    k = spec.max_intervener
    if template in ("svo", "ovs"):
        while True:
            subj = _np(rng, lex, rng.choice((0, 0, 1)))
            obj = _np(rng, lex, rng.choice((0, 0, 1)))
            if subj.noun == obj.noun:
                continue
            pair = SynthPair(template, subj, rng.choice(lex.verbs), obj, order=template)
            if template == "ovs" and pair.case == "neither":
                continue
            return pair
    if template == "particle":
        # object of 1-4 target words; the particle follows it when it fits in k,
        # otherwise stays next to the verb, so placement is a function of the source
        length = rng.randint(1, 4)
        subj = _np(rng, lex, 0)
        obj_noun = rng.choice([n for n in lex.nouns if n != subj.noun])
        if length == 1:
            obj = NP(obj_noun, (), bare=True)
        else:
            obj = _np(rng, lex, length - 2, noun=obj_noun)
        m = length if length <= k else 0
        return SynthPair("particle", subj, rng.choice(lex.particle_verbs), obj, intervener=m)
    if template == "reflexive":
        subj = _np(rng, lex, rng.choice((0, 1)))
        obj_noun = rng.choice([n for n in lex.nouns if n != subj.noun])
        obj = _np(rng, lex, rng.randint(0, max(0, min(2, k - 2))), noun=obj_noun)
        pair = SynthPair("reflexive", subj, rng.choice(lex.reflexive_verbs), obj,
                         intervener=len(obj.target()) + 2)
        return pair
    raise ValueError(f"unknown template {template!r}")


def generate(spec: GrammarSpec) -> Corpus:
    """Sample ``spec.size`` distinct pairs; a pure function of ``spec``."""
    for t in spec.templates:
        if t not in TEMPLATES:
            raise ValueError(f"template {t!r} is not defined")
    lex = spec.lexicon
    for slot in ("nouns", "adjectives", "verbs", "particle_verbs", "reflexive_verbs"):
        if spec.templates and not getattr(lex, slot) and _slot_needed(slot, spec.templates):
            raise ValueError(f"lexicon slot {slot!r} is empty but a template needs it")
    rng = random.Random(spec.seed)
    names = sorted(t for t, w in spec.templates.items() if w > 0)
    weights = [spec.templates[t] for t in names]
    seen = set(spec.exclude)
    pairs: list[SynthPair] = []
    attempts = 0
    while len(pairs) < spec.size:
        attempts += 1
        if attempts > 200 * spec.size + 1000:
            raise ValueError("grammar too small for the requested number of distinct pairs")
        pair = _sample(rng, spec, rng.choices(names, weights)[0])
        key = " ".join(pair.source_words())
        if key in seen:
            continue
        seen.add(key)
        pairs.append(pair)
    return Corpus(pairs, make_segmenter(spec))


def _slot_needed(slot: str, templates: dict) -> bool:
    need = {"nouns": TEMPLATES, "adjectives": (), "verbs": ("svo", "ovs"),
            "particle_verbs": ("particle",), "reflexive_verbs": ("reflexive",)}
    return any(templates.get(t, 0) > 0 for t in need[slot])


def mixup_pairs(lexicon: Lexicon | None = None, lists: Sequence[str] = ("object", "subject", "both")) -> list[SynthPair]:
    """The OVS sentences of the three case-marking lists (36 + 27 + 36)."""
    lex = lexicon or Lexicon()
    verbs = {v[0]: v for v in lex.verbs}
    out = []
    for name in lists:
        objs, vs, subjs = MIXUP_LISTS[name]
        for o in objs:
            for v in vs:
                for s in subjs:
                    out.append(SynthPair("ovs", NP(lex.noun(s)), verbs[v], NP(lex.noun(o)), order="ovs"))
    return out


def swap_test(pairs: Sequence[SynthPair]) -> list[tuple[SynthPair, SynthPair]]:
    """Original and argument-swapped source for every case-marked svo/ovs pair.

    Both members share one reference translation.
    """
    out = []
    for p in pairs:
        if p.template in ("svo", "ovs") and p.case != "neither":
            out.append((p, p.swapped()))
    return out


def slot_correct(hypothesis: str, slots: dict, lexicon: Lexicon | None = None) -> bool:
    """Did the subject and object land in their slots (and particle/pronoun if any)?"""
    lex = lexicon or Lexicon()
    words = hypothesis.split()
    nouns = lex.target_nouns()
    found = [w for w in words if w in nouns]
    if found != [slots["subj"], slots["obj"]]:
        return False
    if "particle" in slots:
        if slots["verb"] not in words or slots["particle"] not in words:
            return False
        if words.index(slots["particle"]) < words.index(slots["verb"]):
            return False
        # a split particle has to come after the object, an adjacent one before it
        after_obj = words.index(slots["particle"]) > words.index(slots["obj"])
        if "split" in slots and after_obj != slots["split"]:
            return False
    if "pronoun" in slots and slots["pronoun"] not in words:
        return False
    return True


def slot_accuracy(hypotheses: Sequence[str], slot_list: Sequence[dict], lexicon: Lexicon | None = None) -> float:
    if len(hypotheses) != len(slot_list):
        raise ValueError("hypotheses and slots differ in length")
    if not hypotheses:
        return 0.0
    return sum(slot_correct(h, s, lexicon) for h, s in zip(hypotheses, slot_list)) / len(hypotheses)

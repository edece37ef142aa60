"""Synthetic compositional translation task.

The source side is verb-final with adjectives before nouns; the target side is
verb-second with adjectives after nouns.  Content words translate one-to-one.
Target determiners and prepositions agree with the class of their noun, so a
source preposition has several valid target translations.  With
``determiners=0`` the source has no determiner and the target article is
generated from the noun class alone.  Word frequencies within each class
follow a Zipf law.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ToyConfig:
    n_pairs: int = 80000
    n_test: int = 300
    nouns: int = 2400
    adjectives: int = 1200
    verbs: int = 1000
    determiners: int = 0
    prepositions: int = 12
    noun_classes: int = 30
    zipf: float = 0.6
    adj_prob: float = 0.5
    pp_prob: float = 0.6
    seed: int = 7


@dataclass
class ToyCorpus:
    train: list[tuple[str, str]]
    test: list[tuple[str, str]]
    config: ToyConfig


def _zipf_weights(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def make_corpus(config: ToyConfig = ToyConfig()) -> ToyCorpus:
    rng = np.random.default_rng(config.seed)
    cls = config.noun_classes
    noun_class = rng.integers(0, cls, size=config.nouns)
    weights = {k: _zipf_weights(n, config.zipf) for k, n in
               (("n", config.nouns), ("a", config.adjectives), ("v", config.verbs))}
    # Random permutation so frequency rank is unrelated to the id in the word form.
    perms = {k: rng.permutation(len(w)) for k, w in weights.items()}

    def draw(kind: str) -> int:
        return int(perms[kind][rng.choice(len(weights[kind]), p=weights[kind])])

    def noun_phrase():
        noun = draw("n")
        det = int(rng.integers(config.determiners)) if config.determiners else 0
        c = int(noun_class[noun])
        src = [f"D{det}"] if config.determiners else []
        tgt = [f"det{det}_{c}" if config.determiners else f"det_{c}", f"noun{noun}"]
        if rng.random() < config.adj_prob:
            adj = draw("a")
            src.append(f"A{adj}")
            tgt.append(f"adj{adj}")
        src.append(f"N{noun}")
        return src, tgt, c

    def sentence():
        subj_src, subj_tgt, _ = noun_phrase()
        obj_src, obj_tgt, _ = noun_phrase()
        verb = draw("v")
        src = subj_src + obj_src
        tgt = subj_tgt + [f"verb{verb}"] + obj_tgt
        if rng.random() < config.pp_prob:
            prep = int(rng.integers(config.prepositions))
            np_src, np_tgt, c = noun_phrase()
            src += [f"P{prep}"] + np_src
            tgt += [f"prep{prep}_{c}"] + np_tgt
        src.append(f"V{verb}")
        return " ".join(src), " ".join(tgt)

    pairs = [sentence() for _ in range(config.n_pairs + config.n_test)]
    return ToyCorpus(pairs[:config.n_pairs], pairs[config.n_pairs:], config)

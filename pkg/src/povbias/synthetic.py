"""Synthetic separable corpus: biased statements carry marker tokens.

Biased statements hold 2 distinct markers (out of 10) at random positions
among 20 filler tokens. Neutral statements hold 22 fillers, so length is not
a cue. The accompanying lexicon assigns every token a random category, so the
category channel carries no privileged signal for markers.
"""

from __future__ import annotations

import random

from .corpus import Label, LabeledStatement
from .text_repr import CategoryLexicon

N_MARKERS = 10
MARKERS_PER_STATEMENT = 2
N_FILLER_TOKENS = 20
FILLER_VOCAB = 200
N_CATEGORIES = 8

MARKERS = tuple(f"mark{i}" for i in range(N_MARKERS))
FILLERS = tuple(f"fill{i:03d}" for i in range(FILLER_VOCAB))


def generate(n: int = 2000, seed: int = 0, biased_fraction: float = 0.5) -> list[LabeledStatement]:
    rng = random.Random(seed)
    n_biased = round(n * biased_fraction)
    out = []
    for i in range(n):
        biased = i < n_biased
        tokens = [rng.choice(FILLERS) for _ in range(N_FILLER_TOKENS)]
        if biased:
            for m in rng.sample(MARKERS, MARKERS_PER_STATEMENT):
                tokens.insert(rng.randrange(len(tokens) + 1), m)
        else:
            tokens += [rng.choice(FILLERS) for _ in range(MARKERS_PER_STATEMENT)]
        label = Label.BIASED if biased else Label.NEUTRAL
        out.append(LabeledStatement(f"syn{i:05d}", " ".join(tokens) + " .", label))
    rng.shuffle(out)
    return out


def lexicon(seed: int = 0) -> CategoryLexicon:
    rng = random.Random(seed)
    cats = [f"cat{k}" for k in range(N_CATEGORIES)]
    return CategoryLexicon.from_rows((tok, [rng.choice(cats)]) for tok in FILLERS + MARKERS)

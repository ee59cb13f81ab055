"""Synthetic slot-filling corpora with controllable tag-set size and length profile.

Each intent owns a few carrier templates; slot values are drawn from per-type
lexicons and may span several tokens, so the B/I structure is non-trivial.
Useful for tests, smoke training and latency runs at a chosen tag-set size.
"""

from __future__ import annotations

import random

from .corpus import Utterance


def make_corpus(
    n: int,
    *,
    num_slot_types: int = 6,
    num_intents: int = 4,
    min_len: int = 3,
    max_len: int = 14,
    lexicon_size: int = 6,
    seed: int = 0,
) -> list[Utterance]:
    rng = random.Random(seed)
    types = [f"slot{t}" for t in range(num_slot_types)]
    lexicon = {
        t: [tuple(f"{t}v{i}w{j}" for j in range(1 + i % 3)) for i in range(lexicon_size)] for t in types
    }
    intents = [f"intent{i}" for i in range(num_intents)]
    # each intent prefers its own slot types and carrier words
    carriers = {it: [f"{it}c{j}" for j in range(5)] + ["the", "to", "from", "please"] for it in intents}
    preferred = {it: rng.sample(types, k=min(3, len(types))) for it in intents}

    data = []
    while len(data) < n:
        intent = rng.choice(intents)
        target = rng.randint(min_len, max_len)
        tokens: list[str] = []
        tags: list[str] = []
        last_type = None
        while len(tokens) < target:
            if rng.random() < 0.45:
                pool = preferred[intent] if rng.random() < 0.8 else types
                kind = rng.choice(pool)
                if kind == last_type:
                    tokens.append(rng.choice(carriers[intent]))
                    tags.append("O")
                value = rng.choice(lexicon[kind])
                tokens.extend(value)
                tags.extend(["B-" + kind] + ["I-" + kind] * (len(value) - 1))
                last_type = kind
            else:
                tokens.append(rng.choice(carriers[intent]))
                tags.append("O")
                last_type = None
        tokens, tags = tokens[:max_len], tags[:max_len]
        data.append(Utterance(tuple(tokens), tuple(tags), intent, id=len(data)))
    return data


def atis_shaped(n: int = 300, seed: int = 0) -> list[Utterance]:
    """Roughly ATIS-sized label sets: about 120 slot tags, 21 intents, lengths 3-25."""
    return make_corpus(
        n,
        num_slot_types=60,
        num_intents=21,
        min_len=3,
        max_len=25,
        lexicon_size=4,
        seed=seed,
    )

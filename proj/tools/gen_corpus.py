#!/usr/bin/env python3
"""Deterministic generator for the checked-in sample training corpus.

Produces pseudo-English prose from a small grammar with a fixed seed, so the
corpus is original text (no external assets) yet has enough structure for a
byte-level model to learn: stable word stems, punctuation, digits and the
occasional list. Run from the repo root:

    python3 tools/gen_corpus.py data/corpus/sample.txt 2300000
"""

import random
import sys

SUBJECTS = [
    "the merchant", "a young scribe", "the old gardener", "our captain",
    "the ferryman", "a quiet student", "the clockmaker", "her brother",
    "the tired miller", "a wandering singer", "the map maker", "the baker",
    "a patient teacher", "the night watchman", "the glass blower",
    "an honest trader", "the bridge keeper", "a small crowd", "the archivist",
    "the lamplighter",
]

VERBS = [
    "carried", "watched", "repaired", "counted", "followed", "sketched",
    "measured", "gathered", "traded", "remembered", "described", "opened",
    "balanced", "sharpened", "washed", "stacked", "recorded", "walked past",
    "tested", "sorted",
]

OBJECTS = [
    "a lantern", "the copper kettle", "three baskets of grain", "the ledger",
    "a worn map", "the garden gate", "a box of nails", "the river barge",
    "two clay jars", "the broken clock", "a bundle of letters", "the oak table",
    "five silver coins", "the fishing net", "a sack of apples", "the stone wall",
    "the printing press", "a coil of rope", "the weather vane", "four candles",
]

PLACES = [
    "near the harbor", "behind the mill", "in the lower market",
    "beside the canal", "under the old bridge", "at the edge of town",
    "inside the workshop", "along the north road", "by the lighthouse",
    "in the walled garden", "near the granary", "on the ferry landing",
    "outside the library", "at the crossroads", "inside the warehouse",
]

TIMES = [
    "before dawn", "after the rain", "at midday", "late in the evening",
    "during the festival", "on market day", "in early spring",
    "through the long winter", "while the bells rang", "just after sunset",
]

CONNECT = [
    "and then", "but soon", "because", "although", "while", "so that",
    "until", "and later", "even though", "whenever",
]


def sentence(rng):
    parts = [rng.choice(SUBJECTS), rng.choice(VERBS), rng.choice(OBJECTS)]
    if rng.random() < 0.7:
        parts.append(rng.choice(PLACES))
    if rng.random() < 0.45:
        parts.append(rng.choice(TIMES))
    text = " ".join(parts)
    if rng.random() < 0.3:
        tail = [rng.choice(CONNECT), rng.choice(SUBJECTS), rng.choice(VERBS),
                rng.choice(OBJECTS)]
        text += ", " + " ".join(tail)
    return text[0].upper() + text[1:] + "."


def numeric_line(rng):
    a, b = rng.randint(2, 90), rng.randint(2, 90)
    kind = rng.randrange(3)
    if kind == 0:
        return f"The tally for day {rng.randint(1, 365)} was {a} crates and {b} barrels."
    if kind == 1:
        return f"Note {rng.randint(1, 99)}: {a} plus {b} makes {a + b}."
    return f"The bell rang {rng.randint(1, 12)} times before {a} carts arrived."


def list_block(rng):
    n = rng.randint(3, 5)
    lines = [f"Supplies for {rng.choice(PLACES)[0].upper() + rng.choice(PLACES)[1:]}:"]
    for i in range(n):
        lines.append(f"  {i + 1}. {rng.choice(OBJECTS)}")
    return "\n".join(lines)


def main():
    out_path = sys.argv[1] if len(sys.argv) > 1 else "data/corpus/sample.txt"
    target = int(sys.argv[2]) if len(sys.argv) > 2 else 2_300_000
    rng = random.Random(20240601)

    pieces = []
    size = 0
    while size < target:
        roll = rng.random()
        if roll < 0.82:
            paragraph = " ".join(sentence(rng) for _ in range(rng.randint(2, 6)))
        elif roll < 0.93:
            paragraph = numeric_line(rng)
        else:
            paragraph = list_block(rng)
        pieces.append(paragraph)
        size += len(paragraph) + 2

    text = "\n\n".join(pieces)[:target]
    with open(out_path, "w", encoding="ascii") as fh:
        fh.write(text)
    print(f"wrote {out_path}: {len(text)} bytes")


if __name__ == "__main__":
    main()

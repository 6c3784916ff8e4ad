"""Regenerate the bundled synthetic encyclopedia corpus.

Needs the ``english-words`` package (build-time only):

    pip install english-words
    python scripts/build_corpus.py
"""
import json
import zlib
from pathlib import Path

import numpy as np
from english_words import get_english_words_set

OUT = Path(__file__).resolve().parents[1] / "src" / "pagebench" / "data" / "encyclopedia.jsonl"
SIZE = 6000
VOWELS = set("aeiou")

TEMPLATES = (
    "{W} is an English headword of {n} letters that begins with '{a}'.",
    "{W} is a dictionary entry spelled with {v} vowels and {k} consonants.",
    "{W} is a word of {n} letters listed in the unabridged dictionary under '{a}'.",
    "{W} is an English term whose spelling ends in '{z}' after {n} letters.",
)


def fact(word: str) -> str:
    v = sum(ch in VOWELS for ch in word)
    template = TEMPLATES[zlib.crc32(word.encode()) % len(TEMPLATES)]
    return template.format(
        W=word.capitalize(), n=len(word), a=word[0], z=word[-1], v=v, k=len(word) - v
    )


def main() -> None:
    words = sorted(
        w for w in get_english_words_set(["web2"], lower=True) if w.isalpha() and w.isascii() and 4 <= len(w) <= 12
    )
    rng = np.random.default_rng(20240501)
    chosen = sorted(rng.choice(len(words), SIZE, replace=False))
    with OUT.open("w", encoding="utf-8") as fh:
        for i in chosen:
            fh.write(json.dumps({"key": words[i], "value": fact(words[i])}) + "\n")
    print(f"wrote {SIZE} entries to {OUT}")


if __name__ == "__main__":
    main()

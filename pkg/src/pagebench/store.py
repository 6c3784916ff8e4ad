"""Item generation, pagination and page rendering for one trial."""
from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import repeat
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from operator import itemgetter
from typing import Mapping, NamedTuple, Sequence, Union

import numpy as np

from .theory import StoreShape

Key = Union[int, str]

CONTENT_KINDS = ("hash", "numeric", "encyclopedia")
ORDERINGS = ("random", "sorted")
HASH_KEY_LO, HASH_KEY_HI = 1000, 9999
_LETTERS = np.frombuffer(string.ascii_uppercase.encode(), dtype=np.uint8)


class Item(NamedTuple):
    key: Key
    value: str


def _items(keys, values) -> list[Item]:
    # tuple.__new__ through map keeps construction in C; same objects as Item(k, v)
    return list(map(tuple.__new__, repeat(Item), zip(keys, values)))


@dataclass(frozen=True)
class ContentSpec:
    kind: str
    corpus_path: str | None = None

    def __post_init__(self):
        if self.kind not in CONTENT_KINDS:
            raise ValueError(f"unknown content kind {self.kind!r}")
        if self.corpus_path is not None and self.kind != "encyclopedia":
            raise ValueError("corpus_path only applies to encyclopedia content")


# -- key handling ---------------------------------------------------------


def sort_key(kind: str, key: Key):
    if kind == "encyclopedia":
        return str(key).lower().encode("utf-8")
    return int(key)


def format_label(kind: str, key: Key) -> str:
    """Left-hand side of an item line on a rendered page."""
    return f"Item {key}" if kind == "numeric" else str(key)


def parse_label(kind: str, label: str) -> Key:
    if kind == "numeric":
        if not label.startswith("Item "):
            raise ValueError(f"not a numeric item label: {label!r}")
        return int(label[5:])
    if kind == "hash":
        return int(label)
    return label


def parse_key(kind: str, text: str) -> Key:
    """Parse a bare key as written in index ranges."""
    return text if kind == "encyclopedia" else int(text)


def item_line(kind: str, item: Item) -> str:
    return f"{format_label(kind, item.key)}: {item.value}"


def parse_item_line(kind: str, line: str) -> tuple[Key, str]:
    label, sep, value = line.partition(": ")
    if not sep:
        raise ValueError(f"not an item line: {line!r}")
    return parse_label(kind, label), value


# -- corpora --------------------------------------------------------------


def load_corpus(path: str | Path) -> list[Item]:
    """Read a JSONL corpus of {"key": ..., "value": ...} objects."""
    items, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key, value = str(obj["key"]), str(obj["value"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad corpus record ({exc})") from None
            if not key or ": " in key or "\n" in key or ".." in key:
                raise ValueError(f"{path}:{lineno}: unusable key {key!r}")
            if not value.strip() or "\n" in value:
                raise ValueError(f"{path}:{lineno}: value must be a single non-empty line")
            folded = key.lower()
            if folded in seen:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            seen.add(folded)
            items.append(Item(key, value))
    items.sort(key=lambda it: sort_key("encyclopedia", it.key))
    return items


@lru_cache(maxsize=None)
def _cached_corpus(path: str | None) -> tuple[Item, ...]:
    if path is None:
        with resources.as_file(resources.files("pagebench") / "data" / "encyclopedia.jsonl") as p:
            return tuple(load_corpus(p))
    return tuple(load_corpus(path))


def corpus_for(spec: ContentSpec) -> tuple[Item, ...]:
    if spec.kind != "encyclopedia":
        raise ValueError("only encyclopedia content has a corpus")
    return _cached_corpus(spec.corpus_path)


# -- generation -----------------------------------------------------------


def generate_items(spec: ContentSpec, M: int, seed: int) -> list[Item]:
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = np.random.default_rng(seed)
    if spec.kind == "hash":
        space = HASH_KEY_HI - HASH_KEY_LO + 1
        if M > space:
            raise ValueError(f"hash content holds at most {space} distinct keys")
        keys = rng.choice(space, size=M, replace=False) + HASH_KEY_LO
        values = _LETTERS[rng.integers(0, 26, size=(M, 4))].view("S4").ravel().astype("U4")
        return _items(keys.tolist(), values.tolist())
    if spec.kind == "numeric":
        keys = range(1, M + 1)
        return _items(keys, map(str, keys))
    corpus = corpus_for(spec)
    if M > len(corpus):
        raise ValueError(f"corpus has only {len(corpus)} entries, asked for {M}")
    picks = np.sort(rng.choice(len(corpus), size=M, replace=False))
    return [corpus[i] for i in picks.tolist()]


# -- pages ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PageStore:
    """Paginated items for one trial.

    ``page_items[i]`` holds the key-sorted items shown on page i+1. Rendered
    text is produced on first access and cached.
    """

    kind: str
    page_items: tuple[tuple[Item, ...], ...]
    ordering: str
    shape: StoreShape
    _rendered: dict = field(default_factory=dict, repr=False)

    @property
    def N(self) -> int:
        return len(self.page_items)

    @property
    def page_ranges(self) -> tuple[tuple[Key, Key], ...]:
        return tuple((p[0].key, p[-1].key) for p in self.page_items)

    @property
    def truth(self) -> Mapping[Key, str]:
        cached = self._rendered.get("truth")
        if cached is None:
            cached = MappingProxyType({it.key: it.value for p in self.page_items for it in p})
            self._rendered["truth"] = cached
        return cached

    @property
    def pages(self) -> tuple[str, ...]:
        return tuple(render_page(self, n) for n in range(1, self.N + 1))

    def items(self) -> list[Item]:
        """All items in key order, independent of page order."""
        pages = self.page_items
        if self.ordering != "sorted":
            pages = sorted(pages, key=lambda p: sort_key(self.kind, p[0].key))
        return [it for p in pages for it in p]


def paginate(
    items: Sequence[Item],
    P: int,
    ordering: str = "sorted",
    seed: int = 0,
    *,
    kind: str,
    S: int = 10,
) -> PageStore:
    if P < 1:
        raise ValueError("P must be >= 1")
    if ordering not in ORDERINGS:
        raise ValueError(f"unknown ordering {ordering!r}")
    if kind == "encyclopedia":
        ordered = sorted(items, key=lambda it: sort_key(kind, it.key))
    else:
        ordered = sorted(items, key=itemgetter(0))
    pages = [tuple(ordered[i : i + P]) for i in range(0, len(ordered), P)]
    if ordering == "random":
        perm = np.random.default_rng(seed).permutation(len(pages))
        pages = [pages[i] for i in perm.tolist()]
    return PageStore(kind, tuple(pages), ordering, StoreShape(len(ordered), P, S))


def render_page(store: PageStore, n: int) -> str:
    if not 1 <= n <= store.N:
        raise IndexError(f"page {n} out of range (1..{store.N})")
    text = store._rendered.get(n)
    if text is None:
        fmt = "Item {}: {}\n" if store.kind == "numeric" else "{}: {}\n"
        text = f"PAGE {n} OF {store.N}\n" + "".join([fmt.format(k, v) for k, v in store.page_items[n - 1]])
        store._rendered[n] = text
    return text


def pick_target(store: PageStore, seed: int) -> tuple[Key, str]:
    """Uniformly random stored item, indexed in key order so page order doesn't matter."""
    i = int(np.random.default_rng(seed).integers(store.shape.M))
    pages = store.page_items
    if store.ordering != "sorted":
        pages = sorted(pages, key=lambda p: sort_key(store.kind, p[0].key))
    P = store.shape.P
    it = pages[i // P][i % P]
    return it.key, it.value

"""Lookup structures over a sorted page store: flat TOC, corrupted TOC, two-level index.

Ranges are closed on both ends. Rendered formats::

    TABLE OF CONTENTS (3 pages)        MASTER INDEX (2 sections)
    page 1: 1003..1870                 section 1: 1003..5120
    page 2: 1904..3377                 section 2: 5188..9950
    page 3: 3412..5120

A section TOC uses the header ``SECTION <s> INDEX (<n> pages)`` followed by
``page`` lines with global page numbers.
"""
from __future__ import annotations

import bisect
from itertools import repeat
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .store import Key, PageStore, parse_key, sort_key


class KeyOutOfRange(LookupError):
    pass


class IndexEntry(NamedTuple):
    page_no: int
    key_lo: Key
    key_hi: Key


class SectionEntry(NamedTuple):
    section_no: int
    key_lo: Key
    key_hi: Key


def _entries(cls, rows) -> tuple:
    return tuple(map(tuple.__new__, repeat(cls), rows))


def _locate(entries: Sequence[tuple], lo_keys: list, kind: str, order: list[int], k: Key) -> int:
    i = bisect.bisect_right(lo_keys, sort_key(kind, k)) - 1
    if i < 0:
        raise KeyOutOfRange(f"key out of range: {k!r}")
    return entries[order[i]][0]


@dataclass(frozen=True)
class FlatToc:
    """One entry per page. ``section_no`` is set for a section-level TOC."""

    entries: tuple[IndexEntry, ...]
    kind: str
    section_no: int | None = None
    _order: list = field(init=False, repr=False, compare=False)
    _lo_keys: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        los = [sort_key(self.kind, e.key_lo) for e in self.entries]
        order = sorted(range(len(los)), key=los.__getitem__)
        object.__setattr__(self, "_order", order)
        object.__setattr__(self, "_lo_keys", [los[i] for i in order])


@dataclass(frozen=True)
class DeepIndex:
    master: tuple[SectionEntry, ...]
    sections: tuple[FlatToc, ...]
    kind: str
    section_size: int
    _lo_keys: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_lo_keys", [sort_key(self.kind, e.key_lo) for e in self.master])


def _require_sorted(store: PageStore) -> None:
    if store.ordering != "sorted":
        raise ValueError("index structures need a key-sorted store")


def build_flat_toc(store: PageStore) -> FlatToc:
    _require_sorted(store)
    return FlatToc(
        _entries(IndexEntry, [(i, lo, hi) for i, (lo, hi) in enumerate(store.page_ranges, 1)]),
        store.kind,
    )


def random_cycle(n: int, seed: int) -> list[int]:
    """Uniform random single-cycle permutation of range(n); no fixed points for n >= 2.

    Same distribution as Sattolo's algorithm: visit the elements in a uniformly
    random order and send each to the next one along, wrapping at the end.
    """
    walk = np.random.default_rng(seed).permutation(n)
    perm = np.empty(n, dtype=np.int64)
    perm[walk] = np.roll(walk, -1)
    return perm.tolist()


def corrupt_toc(toc: FlatToc, seed: int) -> FlatToc:
    """Give every page the key range of a different page."""
    n = len(toc.entries)
    if n < 2:
        raise ValueError("cannot derange a TOC with fewer than 2 entries")
    perm = random_cycle(n, seed)
    return FlatToc(
        _entries(IndexEntry, [(e[0], *toc.entries[j][1:]) for e, j in zip(toc.entries, perm)]),
        toc.kind,
        toc.section_no,
    )


def build_deep_index(store: PageStore, S: int) -> DeepIndex:
    _require_sorted(store)
    if S < 1:
        raise ValueError("S must be >= 1")
    flat = build_flat_toc(store).entries
    sections, master = [], []
    for s, start in enumerate(range(0, len(flat), S), 1):
        chunk = flat[start : start + S]
        sections.append(FlatToc(chunk, store.kind, section_no=s))
        master.append(SectionEntry(s, chunk[0].key_lo, chunk[-1].key_hi))
    return DeepIndex(tuple(master), tuple(sections), store.kind, S)


def locate_page(toc: FlatToc, k: Key) -> int:
    """Entry containing k; in a gap, the entry with the greatest key_lo <= k."""
    return _locate(toc.entries, toc._lo_keys, toc.kind, toc._order, k)


def locate_section(d: DeepIndex, k: Key) -> int:
    return _locate(d.master, d._lo_keys, d.kind, list(range(len(d.master))), k)


def section_toc(d: DeepIndex, s: int) -> FlatToc:
    if not 1 <= s <= len(d.sections):
        raise IndexError(f"section {s} out of range (1..{len(d.sections)})")
    return d.sections[s - 1]


def render_toc(toc: FlatToc) -> str:
    if toc.section_no is None:
        header = f"TABLE OF CONTENTS ({len(toc.entries)} pages)"
    else:
        header = f"SECTION {toc.section_no} INDEX ({len(toc.entries)} pages)"
    lines = [header] + [f"page {e.page_no}: {e.key_lo}..{e.key_hi}" for e in toc.entries]
    return "\n".join(lines) + "\n"


def render_master(d: DeepIndex) -> str:
    lines = [f"MASTER INDEX ({len(d.master)} sections)"]
    lines += [f"section {e.section_no}: {e.key_lo}..{e.key_hi}" for e in d.master]
    return "\n".join(lines) + "\n"


def parse_toc(text: str, kind: str) -> FlatToc | DeepIndex:
    """Parse rendered index text back into a structure.

    Master text yields a DeepIndex with empty ``sections``.
    """
    lines = text.rstrip("\n").split("\n")
    header, body = lines[0], lines[1:]
    rows = []
    for line in body:
        label, sep, rng = line.partition(": ")
        lo, dots, hi = rng.partition("..")
        word, _, num = label.partition(" ")
        if not sep or not dots or word not in ("page", "section"):
            raise ValueError(f"malformed index line: {line!r}")
        rows.append((int(num), parse_key(kind, lo), parse_key(kind, hi)))
    if header.startswith("MASTER INDEX"):
        return DeepIndex(_entries(SectionEntry, rows), (), kind, 0)
    section_no = None
    if header.startswith("SECTION "):
        section_no = int(header.split()[1])
    elif not header.startswith("TABLE OF CONTENTS"):
        raise ValueError(f"unrecognised index header: {header!r}")
    return FlatToc(_entries(IndexEntry, rows), kind, section_no)

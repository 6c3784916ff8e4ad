"""Agent policies.

A policy sees only :class:`~pagebench.environment.Observation` objects and
returns one :class:`~pagebench.environment.ToolCall` per step. It never holds
a reference to the store, so anything it knows about page contents came back
through a tool result.
"""
from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .environment import (
    Condition,
    Observation,
    ToolCall,
    free_text,
    get_index,
    get_section_index,
    read_page,
    submit_answer,
)
from .index import DeepIndex, FlatToc, KeyOutOfRange, locate_page, locate_section, parse_toc
from .store import Key, format_label, parse_item_line, sort_key


def find_value(kind: str, page_text: str, key: Key) -> str | None:
    """Value on the line whose label is exactly the key's label, else None."""
    prefix = "\n" + format_label(kind, key) + ": "
    start = page_text.find(prefix)
    if start < 0:
        return None
    start += len(prefix)
    end = page_text.find("\n", start)
    return page_text[start:] if end < 0 else page_text[start:end]


def page_key_span(kind: str, page_text: str) -> tuple[Key, Key] | None:
    lines = [ln for ln in page_text.split("\n")[1:] if ln]
    if not page_text.startswith("PAGE ") or not lines:
        return None
    try:
        return parse_item_line(kind, lines[0])[0], parse_item_line(kind, lines[-1])[0]
    except ValueError:
        return None


class Policy:
    """Base class: subclasses implement :meth:`step`."""

    name = "policy"

    def step(self, obs: Observation) -> ToolCall:
        raise NotImplementedError


class LinearScan(Policy):
    """Read pages 1, 2, ... until the target appears."""

    name = "linear_scan"

    def __init__(self, seed: int = 0):
        self._next = 1
        self._reading = False

    def step(self, obs):
        if self._reading:
            value = find_value(obs.kind, obs.last_result, obs.target_key)
            if value is not None:
                return submit_answer(value)
        if self._next > obs.N:
            return submit_answer("")
        self._reading = True
        self._next += 1
        return read_page(self._next - 1)


class UniformProbe(Policy):
    """Read distinct pages in a seeded random order."""

    name = "uniform_probe"

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)
        self._order: list[int] | None = None
        self._pos = 0

    def step(self, obs):
        if self._order is None:
            self._order = (self._rng.permutation(obs.N) + 1).tolist()
        elif self._pos:
            value = find_value(obs.kind, obs.last_result, obs.target_key)
            if value is not None:
                return submit_answer(value)
        if self._pos >= len(self._order):
            return submit_answer("")
        self._pos += 1
        return read_page(self._order[self._pos - 1])


class BinarySearch(Policy):
    """Bisect sorted pages by comparing the target with each page's key span.

    With probability ``p_err`` per step one search bound is lost and reset to
    its extreme (lo -> 1 or hi -> N), which widens the interval but never
    excludes the target.
    """

    name = "binary_search"

    def __init__(self, seed: int = 0, p_err: float = 0.0):
        if not 0.0 <= p_err <= 1.0:
            raise ValueError("p_err must lie in [0, 1]")
        self.p_err = p_err
        self._rng = np.random.default_rng(seed)
        self.lo: int | None = None
        self.hi: int | None = None
        self._mid: int | None = None

    def step(self, obs):
        kind, target = obs.kind, obs.target_key
        if self.lo is None:
            self.lo, self.hi = 1, obs.N
        else:
            value = find_value(kind, obs.last_result, target)
            if value is not None:
                return submit_answer(value)
            span = page_key_span(kind, obs.last_result)
            if span is None:
                return submit_answer("")
            if sort_key(kind, target) < sort_key(kind, span[0]):
                self.hi = self._mid - 1
            else:
                self.lo = self._mid + 1
            if self.p_err and self._rng.random() < self.p_err:
                if self._rng.random() < 0.5:
                    self.lo = 1
                else:
                    self.hi = obs.N
        if self.lo > self.hi:
            return submit_answer("")
        self._mid = (self.lo + self.hi) // 2
        return read_page(self._mid)


class FlatTocTraversal(Policy):
    """get_index -> locate -> read -> submit.

    With ``fallback`` set, a miss on the located page switches to a linear
    scan from page 1. ``skip_read`` makes that scan skip pages already read;
    by default it does not, so the located page costs one extra read when the
    scan passes it again.
    """

    name = "flat_toc"

    def __init__(self, seed: int = 0, fallback: bool = False, skip_read: bool = False):
        self.fallback = fallback
        self.skip_read = skip_read
        self._stage = "index"
        self._read: set[int] = set()
        self._next = 1

    def _scan(self, obs):
        while self.skip_read and self._next in self._read:
            self._next += 1
        if self._next > obs.N:
            return submit_answer("")
        self._next += 1
        self._read.add(self._next - 1)
        return read_page(self._next - 1)

    def step(self, obs):
        kind, target = obs.kind, obs.target_key
        if self._stage == "index":
            self._stage = "toc"
            return get_index()
        if self._stage == "toc":
            try:
                toc = parse_toc(obs.last_result, kind)
                if not isinstance(toc, FlatToc):
                    raise ValueError("expected a flat TOC")
                page = locate_page(toc, target)
            except (ValueError, KeyOutOfRange):
                if not self.fallback:
                    return submit_answer("")
                self._stage = "scan"
                return self._scan(obs)
            self._stage = "page"
            self._read.add(page)
            return read_page(page)
        value = find_value(kind, obs.last_result, target)
        if value is not None:
            return submit_answer(value)
        if not self.fallback:
            return submit_answer("")
        self._stage = "scan"
        return self._scan(obs)


class CorruptedFallback(FlatTocTraversal):
    name = "corrupted_fallback"

    def __init__(self, seed: int = 0, skip_read: bool = False):
        super().__init__(seed, fallback=True, skip_read=skip_read)


class DeepTraversal(Policy):
    """Master index -> section index -> page -> submit."""

    name = "deep"

    def __init__(self, seed: int = 0):
        self._stage = 0

    def step(self, obs):
        kind, target = obs.kind, obs.target_key
        self._stage += 1
        try:
            if self._stage == 1:
                return get_index()
            if self._stage == 2:
                master = parse_toc(obs.last_result, kind)
                if not isinstance(master, DeepIndex):
                    raise ValueError("expected a master index")
                return get_section_index(locate_section(master, target))
            if self._stage == 3:
                toc = parse_toc(obs.last_result, kind)
                if not isinstance(toc, FlatToc):
                    raise ValueError("expected a section TOC")
                return read_page(locate_page(toc, target))
        except (ValueError, KeyOutOfRange):
            return submit_answer("")
        return submit_answer(find_value(kind, obs.last_result, target) or "")


# -- parametric shortcut ---------------------------------------------------

SHORTCUT_MODES = ("guess", "free_text", "mixed")
DEFAULT_GUESS_ACCURACY = {"hash": 0.0, "numeric": 1.0, "encyclopedia": 0.3}


@dataclass(frozen=True)
class ShortcutParams:
    familiarity: float = 0.0
    hallucination_accuracy: float = 0.0
    mode: str = "mixed"
    guess_share: float = 0.5
    text_tokens: int = 500

    def __post_init__(self):
        for name in ("familiarity", "hallucination_accuracy", "guess_share"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.mode not in SHORTCUT_MODES:
            raise ValueError(f"mode must be one of {SHORTCUT_MODES}")
        if self.text_tokens < 0:
            raise ValueError("text_tokens must be >= 0")


# What the model "already knows": key -> answer from training, or None.
Memory = Callable[[Key], "str | None"]


def _filler(key: Key, n_bytes: int) -> str:
    unit = f"I recall that the entry for {key} is well known, so the answer is probably this one. "
    return (unit * (n_bytes // len(unit) + 1))[:n_bytes]


class ParametricShortcut(Policy):
    """Mixes a base policy with answering from memory instead of reading.

    Each step, with probability ``familiarity``, the policy skips the protocol:
    it either submits a guess (right with probability
    ``hallucination_accuracy``, as far as ``memory`` knows the answer) or emits
    a free-text turn of ``text_tokens`` tokens. Otherwise the base policy acts.
    The base sees only results of its own calls.
    """

    name = "shortcut"

    def __init__(self, base: Policy, params: ShortcutParams, seed: int = 0, memory: Memory | None = None):
        self.base = base
        self.params = params
        self.memory = memory or (lambda key: None)
        self._rng = np.random.default_rng(seed)
        self._last_was_base = False
        self._base_result = ""
        self._base_calls = 0

    def _guess(self, key: Key, correct: bool) -> str:
        known = self.memory(key)
        if known is not None and correct:
            return known
        if known is not None:
            return known + " (approximately)" if not known.isdigit() else str(int(known) + 1)
        letters = self._rng.integers(0, 26, size=4)
        return "".join(string.ascii_uppercase[i] for i in letters)

    def step(self, obs):
        if self._last_was_base:
            self._base_result = obs.last_result
        p = self.params
        if self._rng.random() < p.familiarity:
            self._last_was_base = False
            if p.mode == "guess" or (p.mode == "mixed" and self._rng.random() < p.guess_share):
                correct = self._rng.random() < p.hallucination_accuracy
                return submit_answer(self._guess(obs.target_key, correct))
            return free_text(_filler(obs.target_key, 4 * p.text_tokens))
        self._last_was_base = True
        base_obs = obs._replace(last_result=self._base_result, calls_made=self._base_calls)
        self._base_calls += 1
        return self.base.step(base_obs)


DETERMINISTIC_POLICIES = {
    cls.name: cls
    for cls in (LinearScan, UniformProbe, BinarySearch, FlatTocTraversal, CorruptedFallback, DeepTraversal)
}

# Which conditions each policy is written for.
POLICY_CONDITIONS = {
    "linear_scan": {Condition.FLAT, Condition.FLAT_SORTED},
    "uniform_probe": {Condition.FLAT, Condition.FLAT_SORTED},
    "binary_search": {Condition.FLAT_SORTED},
    "flat_toc": {Condition.INDEXED, Condition.INDEXED_CORRUPTED},
    "corrupted_fallback": {Condition.INDEXED, Condition.INDEXED_CORRUPTED},
    "deep": {Condition.DEEP_INDEXED},
}

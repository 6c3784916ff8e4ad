"""Tool-call environment with full-history token accounting."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

from .index import DeepIndex, FlatToc, render_master, render_toc, section_toc
from .store import Key, PageStore, render_page

DEFAULT_BUDGET = 100_000
DEFAULT_MAX_CALLS = 200

READ_PAGE = "read_page"
GET_INDEX = "get_index"
GET_SECTION_INDEX = "get_section_index"
SUBMIT_ANSWER = "submit_answer"
FREE_TEXT = "free_text"
TOOLS = (READ_PAGE, GET_INDEX, GET_SECTION_INDEX, SUBMIT_ANSWER)


class Condition(str, Enum):
    FLAT = "flat"
    FLAT_SORTED = "flat_sorted"
    INDEXED = "indexed"
    INDEXED_CORRUPTED = "indexed_corrupted"
    DEEP_INDEXED = "deep_indexed"

    @classmethod
    def parse(cls, text: str) -> "Condition":
        norm = text.strip().lower().replace("-", "_")
        aliases = {"sorted": "flat_sorted", "corrupted": "indexed_corrupted", "deep": "deep_indexed", "idx": "indexed"}
        return cls(aliases.get(norm, norm))


ALLOWED_TOOLS = {
    Condition.FLAT: {READ_PAGE, SUBMIT_ANSWER},
    Condition.FLAT_SORTED: {READ_PAGE, SUBMIT_ANSWER},
    Condition.INDEXED: {READ_PAGE, GET_INDEX, SUBMIT_ANSWER},
    Condition.INDEXED_CORRUPTED: {READ_PAGE, GET_INDEX, SUBMIT_ANSWER},
    Condition.DEEP_INDEXED: {READ_PAGE, GET_INDEX, GET_SECTION_INDEX, SUBMIT_ANSWER},
}


@dataclass(frozen=True)
class ToolCall:
    """One agent turn. ``name == FREE_TEXT`` marks a turn with no tool call.

    ``usage`` carries provider-reported tokens for the call (external counting).
    """

    name: str
    argument: int | str | None = None
    usage: int | None = field(default=None, compare=False)

    @property
    def is_tool(self) -> bool:
        return self.name != FREE_TEXT

    def render(self) -> str:
        if self.name == FREE_TEXT:
            return str(self.argument or "")
        if self.argument is None:
            return f"{self.name}()"
        if self.name == SUBMIT_ANSWER:
            return f"{self.name}({json.dumps(str(self.argument))})"
        return f"{self.name}({self.argument})"


def read_page(n: int) -> ToolCall:
    return ToolCall(READ_PAGE, n)


def get_index() -> ToolCall:
    return ToolCall(GET_INDEX)


def get_section_index(s: int) -> ToolCall:
    return ToolCall(GET_SECTION_INDEX, s)


def submit_answer(value: str) -> ToolCall:
    return ToolCall(SUBMIT_ANSWER, value)


def free_text(text: str) -> ToolCall:
    return ToolCall(FREE_TEXT, text)


COUNTER_MODES = ("bytes4", "whitespace", "external")


@dataclass(frozen=True)
class TokenCounter:
    mode: str = "bytes4"

    def __post_init__(self):
        if self.mode not in COUNTER_MODES:
            raise ValueError(f"unknown counter mode {self.mode!r}")

    def count(self, text: str) -> int:
        if self.mode == "bytes4":
            return (len(text.encode("utf-8")) + 3) // 4
        if self.mode == "whitespace":
            return len(text.split())
        raise ValueError("external token counting needs provider-reported usage")


def count_tokens(counter: TokenCounter, text: str) -> int:
    return counter.count(text)


@dataclass
class Transcript:
    """Append-only turn log.

    Every agent call is charged the size of the whole history it would be
    sent: the fixed preamble, all earlier turns and the new turn.
    """

    counter: TokenCounter = field(default_factory=TokenCounter)
    preamble_tokens: int = 0
    turns: list[tuple[str, str]] = field(default_factory=list)
    cumulative_tokens: int = 0
    calls_made: int = 0
    tool_calls: int = 0
    data_page_reads: int = 0
    _history_tokens: int = 0

    def append(self, role: str, text: str) -> None:
        self.turns.append((role, text))
        mode = self.counter.mode
        if mode == "bytes4":
            self._history_tokens += (len(text.encode("utf-8")) + 3) // 4
        elif mode != "external":
            self._history_tokens += self.counter.count(text)

    def charge(self, text: str, reported: int | None = None) -> int:
        """Record an agent turn and charge it; returns the new cumulative total."""
        self.append("agent", text)
        self.calls_made += 1
        if self.counter.mode == "external":
            if reported is None:
                raise ValueError("external token counting needs provider-reported usage")
            cost = reported
        else:
            cost = self.preamble_tokens + self._history_tokens
        self.cumulative_tokens += cost
        return self.cumulative_tokens

    def digest(self) -> str:
        blob = "".join(f"{role}\x00{text}\x01" for role, text in self.turns)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def charge(transcript: Transcript, new_turn_text: str) -> int:
    return transcript.charge(new_turn_text)


class Observation(NamedTuple):
    """What a policy sees before each call."""

    last_result: str
    calls_made: int
    condition: Condition
    N: int
    target_key: Key
    kind: str


class Environment:
    """Executes tool calls for one trial against a store and its index."""

    def __init__(
        self,
        store: PageStore,
        condition: Condition,
        target_key: Key,
        *,
        toc: FlatToc | None = None,
        deep: DeepIndex | None = None,
        counter: TokenCounter | None = None,
        budget: int | None = DEFAULT_BUDGET,
        max_calls: int | None = DEFAULT_MAX_CALLS,
        preamble: str = "",
        target_value: str | None = None,
    ):
        self.store = store
        self.condition = Condition(condition)
        self.target_key = target_key
        # saves building the whole truth map when the caller already knows the answer
        self._answer = target_value
        self.toc = toc
        self.deep = deep
        self.budget = budget
        self.max_calls = max_calls
        counter = counter or TokenCounter()
        pre = 0 if counter.mode == "external" else counter.count(preamble)
        self.transcript = Transcript(counter=counter, preamble_tokens=pre)
        self.done = False
        self.correct = False
        self.budget_exhausted = False
        self.capped = False
        self.last_result = ""
        self._N = store.N
        if self.condition in (Condition.INDEXED, Condition.INDEXED_CORRUPTED) and toc is None:
            raise ValueError(f"{self.condition.value} needs a TOC")
        if self.condition is Condition.DEEP_INDEXED and deep is None:
            raise ValueError("deep_indexed needs a deep index")

    def observation(self) -> Observation:
        return Observation(
            self.last_result,
            self.transcript.calls_made,
            self.condition,
            self._N,
            self.target_key,
            self.store.kind,
        )

    def step(self, call: ToolCall) -> str:
        if self.done:
            raise RuntimeError("trial already finished")
        tr = self.transcript
        spent = tr.charge(call.render(), call.usage)
        if self.budget is not None and spent > self.budget:
            self.budget_exhausted = True
            self.correct = False
            self.done = True
            self.last_result = ""
            return ""
        if call.is_tool:
            tr.tool_calls += 1
            result = self.execute(call)
            tr.append("environment", result)
        else:
            result = ""
        self.last_result = result
        if not self.done and self.max_calls is not None and tr.calls_made >= self.max_calls:
            self.capped = True
            self.done = True
        return result

    def execute(self, call: ToolCall) -> str:
        if call.name not in TOOLS:
            return f"error: unknown tool {call.name}"
        if call.name not in ALLOWED_TOOLS[self.condition]:
            return f"error: tool not available: {call.name}"
        if call.name == SUBMIT_ANSWER:
            truth = self._answer if self._answer is not None else self.store.truth[self.target_key]
            self.correct = str(call.argument if call.argument is not None else "").strip() == truth.strip()
            self.done = True
            return "answer recorded"
        if call.name == GET_INDEX:
            if self.condition is Condition.DEEP_INDEXED:
                return render_master(self.deep)
            return render_toc(self.toc)
        n = _as_int(call.argument)
        if call.name == READ_PAGE:
            if n is None or not 1 <= n <= self._N:
                return f"error: page {call.argument} out of range (1..{self._N})"
            self.transcript.data_page_reads += 1
            return render_page(self.store, n)
        # get_section_index
        if n is None or not 1 <= n <= len(self.deep.sections):
            return f"error: section {call.argument} out of range (1..{len(self.deep.sections)})"
        return render_toc(section_toc(self.deep, n))


def execute(call: ToolCall, env: Environment) -> str:
    return env.execute(call)


def _as_int(arg) -> int | None:
    if isinstance(arg, bool):
        return None
    if isinstance(arg, int):
        return arg
    try:
        return int(str(arg).strip())
    except (TypeError, ValueError):
        return None

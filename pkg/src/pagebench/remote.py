"""Policy backed by a chat-completions endpoint with function calling.

Configuration comes from REPRO_LLM_BASE_URL, REPRO_LLM_MODEL and
REPRO_LLM_API_KEY. The endpoint is POSTed at ``<base_url>/chat/completions``
with OpenAI-style ``messages`` and ``tools``.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import httpx

from .agents import Policy
from .environment import (
    ALLOWED_TOOLS,
    GET_INDEX,
    GET_SECTION_INDEX,
    READ_PAGE,
    SUBMIT_ANSWER,
    TOOLS,
    Condition,
    Observation,
    ToolCall,
    free_text,
)
from .store import format_label

wire_log = logging.getLogger("pagebench.wire")


class InfrastructureError(RuntimeError):
    """Network, auth or server failure; the trial is excluded from accuracy."""


class ProtocolFailure(RuntimeError):
    """The model kept returning responses that could not be parsed."""


TOOL_SCHEMAS = {
    READ_PAGE: {
        "description": "Read one data page by its page number.",
        "parameters": {
            "type": "object",
            "properties": {"n": {"type": "integer", "description": "Page number, starting at 1."}},
            "required": ["n"],
        },
    },
    GET_INDEX: {
        "description": "Return the top-level index (table of contents or master index).",
        "parameters": {"type": "object", "properties": {}},
    },
    GET_SECTION_INDEX: {
        "description": "Return the page-level table of contents for one section.",
        "parameters": {
            "type": "object",
            "properties": {"s": {"type": "integer", "description": "Section number, starting at 1."}},
            "required": ["s"],
        },
    },
    SUBMIT_ANSWER: {
        "description": "Submit the value for the target key. Ends the task.",
        "parameters": {
            "type": "object",
            "properties": {"value": {"type": "string"}},
            "required": ["value"],
        },
    },
}
_ARG_NAMES = {READ_PAGE: "n", GET_SECTION_INDEX: "s", SUBMIT_ANSWER: "value"}

_RULES = {
    Condition.FLAT: "Pages are in no particular order. No index is available.",
    Condition.FLAT_SORTED: (
        "Pages are sorted by key in ascending order: page 1 holds the smallest keys "
        "and the last page the largest. No index is available."
    ),
    Condition.INDEXED: "Pages are sorted by key. get_index returns a table of contents mapping each page to its key range.",
    Condition.INDEXED_CORRUPTED: "Pages are sorted by key. get_index returns a table of contents mapping each page to its key range.",
    Condition.DEEP_INDEXED: (
        "Pages are sorted by key and grouped into sections. get_index returns a master index of "
        "section key ranges; get_section_index(s) returns the page key ranges within section s."
    ),
}


def system_prompt(condition: Condition, N: int) -> str:
    return (
        f"You are looking up one value in a store of {N} pages. "
        "You cannot see any page without calling read_page. "
        f"{_RULES[Condition(condition)]} "
        "When you find the line for the target key, call submit_answer with the text after the colon."
    )


def task_prompt(kind: str, key) -> str:
    return f"Find the value for key {format_label(kind, key)}."


def tool_declarations(condition: Condition) -> list[dict]:
    allowed = ALLOWED_TOOLS[Condition(condition)]
    return [{"type": "function", "function": {"name": t, **TOOL_SCHEMAS[t]}} for t in TOOLS if t in allowed]


@dataclass(frozen=True)
class RemoteConfig:
    base_url: str
    model: str
    api_key: str = ""
    max_retries: int = 2
    timeout: float = 60.0
    log_wire: bool = False

    @classmethod
    def from_env(cls, **overrides) -> "RemoteConfig":
        base = os.environ.get("REPRO_LLM_BASE_URL")
        model = os.environ.get("REPRO_LLM_MODEL")
        if not base or not model:
            raise InfrastructureError("REPRO_LLM_BASE_URL and REPRO_LLM_MODEL must be set")
        return cls(base_url=base, model=model, api_key=os.environ.get("REPRO_LLM_API_KEY", ""), **overrides)


def parse_tool_call(message: dict) -> ToolCall | None:
    """ToolCall for the first tool invocation in a response message.

    Returns a free-text ToolCall for plain content and None when the message
    is malformed.
    """
    calls = message.get("tool_calls") or []
    if not calls:
        content = message.get("content")
        return free_text(content) if isinstance(content, str) and content else None
    fn = calls[0].get("function") or {}
    name = fn.get("name")
    if name not in TOOLS:
        return None
    raw = fn.get("arguments") or "{}"
    try:
        args = json.loads(raw) if isinstance(raw, str) else dict(raw)
    except (json.JSONDecodeError, TypeError, ValueError):
        return None
    if not isinstance(args, dict):
        return None
    if name == GET_INDEX:
        return ToolCall(name)
    arg = args.get(_ARG_NAMES[name])
    if arg is None:
        return None
    if name == SUBMIT_ANSWER:
        return ToolCall(name, str(arg))
    try:
        return ToolCall(name, int(arg))
    except (TypeError, ValueError):
        return None


class RemoteModelPolicy(Policy):
    name = "remote"

    def __init__(self, config: RemoteConfig, client: httpx.Client | None = None, seed: int = 0):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self.messages: list[dict] = []
        self._pending_id: str | None = None
        self.usage_total = 0

    def _post(self, body: dict) -> dict:
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        if self.config.log_wire:
            wire_log.info("request %s", json.dumps(body))
        try:
            resp = self._client.post(url, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise InfrastructureError(f"request failed: {exc}") from exc
        if self.config.log_wire:
            wire_log.info("response %s %s", resp.status_code, resp.text)
        if resp.status_code >= 400:
            raise InfrastructureError(f"endpoint returned HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise InfrastructureError("endpoint returned non-JSON body") from exc

    def step(self, obs: Observation) -> ToolCall:
        if not self.messages:
            self.messages = [
                {"role": "system", "content": system_prompt(obs.condition, obs.N)},
                {"role": "user", "content": task_prompt(obs.kind, obs.target_key)},
            ]
        elif self._pending_id is not None:
            self.messages.append({"role": "tool", "tool_call_id": self._pending_id, "content": obs.last_result})
        else:
            self.messages.append({"role": "user", "content": "Continue by calling one of the tools."})
        body = {
            "model": self.config.model,
            "messages": self.messages,
            "tools": tool_declarations(obs.condition),
            "tool_choice": "auto",
        }
        for _ in range(self.config.max_retries + 1):
            data = self._post(body)
            try:
                message = data["choices"][0]["message"]
            except (KeyError, IndexError, TypeError):
                continue
            call = parse_tool_call(message)
            if call is None:
                continue
            usage = data.get("usage") or {}
            used = usage.get("total_tokens")
            if used is None and ("prompt_tokens" in usage or "completion_tokens" in usage):
                used = int(usage.get("prompt_tokens", 0)) + int(usage.get("completion_tokens", 0))
            if used is not None:
                self.usage_total += int(used)
                call = ToolCall(call.name, call.argument, usage=int(used))
            self._record(message, call)
            return call
        raise ProtocolFailure(f"no usable response after {self.config.max_retries + 1} attempts")

    def _record(self, message: dict, call: ToolCall) -> None:
        if call.is_tool:
            tc = message["tool_calls"][0]
            self._pending_id = tc.get("id") or f"call_{len(self.messages)}"
            self.messages.append(
                {
                    "role": "assistant",
                    "content": message.get("content"),
                    "tool_calls": [
                        {
                            "id": self._pending_id,
                            "type": "function",
                            "function": {"name": tc["function"]["name"], "arguments": tc["function"].get("arguments") or "{}"},
                        }
                    ],
                }
            )
        else:
            self._pending_id = None
            self.messages.append({"role": "assistant", "content": call.argument})

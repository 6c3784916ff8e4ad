"""Trial execution, sweeps, aggregation and the growing-store experiment."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import statistics
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import theory
from .agents import (
    DEFAULT_GUESS_ACCURACY,
    DETERMINISTIC_POLICIES,
    POLICY_CONDITIONS,
    FlatTocTraversal,
    LinearScan,
    ParametricShortcut,
    Policy,
    ShortcutParams,
)
from .environment import DEFAULT_BUDGET, DEFAULT_MAX_CALLS, Condition, Environment, TokenCounter
from .index import build_deep_index, build_flat_toc, corrupt_toc
from .remote import InfrastructureError, ProtocolFailure, RemoteConfig, RemoteModelPolicy, system_prompt, task_prompt
from .store import ContentSpec, Item, PageStore, corpus_for, generate_items, paginate, pick_target
from .theory import StoreShape

DEFAULT_B = theory.branching_factor(theory.CostParams())
PREAMBLES = ("task", "system", "none")
SHORTCUT_KEYS = {"familiarity", "f", "hallucination_accuracy", "accuracy", "mode", "guess_share", "text_tokens", "base"}

# Policy used when a cell names only a condition.
DEFAULT_POLICY = {
    Condition.FLAT: "uniform_probe",
    Condition.FLAT_SORTED: "binary_search",
    Condition.INDEXED: "flat_toc",
    Condition.INDEXED_CORRUPTED: "corrupted_fallback",
    Condition.DEEP_INDEXED: "deep",
}


def derive_seed(*parts: Any) -> int:
    digest = hashlib.sha256(json.dumps([str(p) for p in parts]).encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class PolicySpec:
    name: str
    params: tuple[tuple[str, Any], ...] = ()

    @classmethod
    def of(cls, name: str, **params) -> "PolicySpec":
        return cls(name, tuple(sorted(params.items())))

    @property
    def kwargs(self) -> dict[str, Any]:
        return dict(self.params)

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        return self.name + "[" + ",".join(f"{k}={v}" for k, v in self.params) + "]"

    def base_spec(self) -> "PolicySpec":
        kw = self.kwargs
        rest = {k: v for k, v in kw.items() if k not in SHORTCUT_KEYS}
        return PolicySpec.of(kw.get("base", "deep"), **rest)


@dataclass(frozen=True)
class TrialConfig:
    condition: Condition
    content: ContentSpec
    M: int
    policy: PolicySpec
    P: int = 10
    S: int = 10
    seed: int = 0
    budget: int | None = DEFAULT_BUDGET
    counter: str = "bytes4"
    max_calls: int | None = None
    preamble: str = "task"
    b: int = DEFAULT_B

    def __post_init__(self):
        object.__setattr__(self, "condition", Condition(self.condition))

    @property
    def shape(self) -> StoreShape:
        return StoreShape(self.M, self.P, self.S)

    @property
    def cell(self) -> "TrialConfig":
        return dataclasses.replace(self, seed=0)

    def validate(self) -> None:
        shape = self.shape  # raises on bad M/P/S
        TokenCounter(self.counter)
        if self.preamble not in PREAMBLES:
            raise ValueError(f"preamble must be one of {PREAMBLES}")
        if self.budget is not None and self.budget < 1:
            raise ValueError("budget must be positive or None")
        if self.b < 2:
            raise ValueError("b must be >= 2")
        if self.condition is Condition.INDEXED_CORRUPTED and shape.N < 2:
            raise ValueError("indexed_corrupted needs at least 2 pages")
        if self.content.kind == "hash" and self.M > 9000:
            raise ValueError("hash content holds at most 9000 keys")
        name = self.policy.name
        if name == "shortcut":
            base = self.policy.base_spec()
            if base.name == "shortcut":
                raise ValueError("shortcut cannot wrap itself")
            dataclasses.replace(self, policy=base).validate()
            _shortcut_params(self.policy, self.content.kind)
        elif name == "remote":
            pass
        elif name not in DETERMINISTIC_POLICIES:
            raise ValueError(f"unknown policy {name!r}")
        elif self.condition not in POLICY_CONDITIONS[name]:
            raise ValueError(f"policy {name} does not run under {self.condition.value}")
        if self.counter == "external" and name != "remote":
            raise ValueError("external token counting needs the remote policy")

    def echo(self) -> dict[str, Any]:
        return {
            "condition": self.condition.value,
            "content": self.content.kind,
            "corpus_path": self.content.corpus_path,
            "M": self.M,
            "P": self.P,
            "S": self.S,
            "N": self.shape.N,
            "policy": self.policy.name,
            "policy_params": {k: v for k, v in self.policy.params},
            "seed": self.seed,
            "budget": self.budget,
            "counter": self.counter,
            "preamble": self.preamble,
            "b": self.b,
        }


@dataclass(frozen=True)
class TrialResult:
    data_page_reads: int
    tool_calls: int
    turns: int
    tokens: int
    correct: bool
    budget_exhausted: bool = False
    infrastructure_error: bool = False
    protocol_failure: bool = False
    capped: bool = False
    transcript_digest: str = ""
    preamble_tokens: int = 0
    transcript: tuple[tuple[str, str], ...] | None = field(default=None, compare=False, repr=False)

    def record(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("transcript")
        return d


# -- trial construction ---------------------------------------------------


def _shortcut_params(spec: PolicySpec, kind: str) -> ShortcutParams:
    kw = spec.kwargs
    return ShortcutParams(
        familiarity=float(kw.get("familiarity", kw.get("f", 0.0))),
        hallucination_accuracy=float(kw.get("hallucination_accuracy", kw.get("accuracy", DEFAULT_GUESS_ACCURACY[kind]))),
        mode=str(kw.get("mode", "mixed")),
        guess_share=float(kw.get("guess_share", 0.5)),
        text_tokens=int(kw.get("text_tokens", 500)),
    )


def parametric_memory(content: ContentSpec):
    """What a model could answer without reading: the rule or corpus it was trained on."""
    if content.kind == "numeric":
        return lambda key: str(key)
    if content.kind == "encyclopedia":
        known = {it.key.lower(): it.value for it in corpus_for(content)}
        return lambda key: known.get(str(key).lower())
    return lambda key: None


def make_policy(cfg: TrialConfig, spec: PolicySpec | None = None, client=None, log_wire: bool = False) -> Policy:
    spec = spec or cfg.policy
    seed = derive_seed("policy", cfg.condition.value, cfg.content.kind, cfg.M, cfg.P, spec.label, cfg.seed)
    if spec.name == "shortcut":
        base = make_policy(cfg, spec.base_spec(), client, log_wire)
        return ParametricShortcut(base, _shortcut_params(spec, cfg.content.kind), seed, parametric_memory(cfg.content))
    if spec.name == "remote":
        kw = spec.kwargs
        rc = RemoteConfig.from_env(max_retries=int(kw.get("max_retries", 2)), log_wire=log_wire)
        return RemoteModelPolicy(rc, client=client, seed=seed)
    return DETERMINISTIC_POLICIES[spec.name](seed=seed, **spec.kwargs)


def build_store(cfg: TrialConfig) -> PageStore:
    items = generate_items(cfg.content, cfg.M, derive_seed("items", cfg.content.kind, cfg.M, cfg.P, cfg.seed))
    ordering = "random" if cfg.condition is Condition.FLAT else "sorted"
    layout = derive_seed("layout", cfg.condition.value, cfg.content.kind, cfg.M, cfg.P, cfg.seed)
    return paginate(items, cfg.P, ordering, layout, kind=cfg.content.kind, S=cfg.S)


def preamble_text(cfg: TrialConfig, target_key) -> str:
    if cfg.preamble == "none":
        return ""
    task = task_prompt(cfg.content.kind, target_key)
    if cfg.preamble == "task":
        return task
    return system_prompt(cfg.condition, cfg.shape.N) + "\n" + task


def build_environment(cfg: TrialConfig, store: PageStore | None = None) -> Environment:
    store = store or build_store(cfg)
    target_key, target_value = pick_target(store, derive_seed("target", cfg.content.kind, cfg.M, cfg.P, cfg.seed))
    toc = deep = None
    if cfg.condition in (Condition.INDEXED, Condition.INDEXED_CORRUPTED):
        toc = build_flat_toc(store)
        if cfg.condition is Condition.INDEXED_CORRUPTED:
            toc = corrupt_toc(toc, derive_seed("corrupt", cfg.content.kind, cfg.M, cfg.P, cfg.seed))
    elif cfg.condition is Condition.DEEP_INDEXED:
        deep = build_deep_index(store, cfg.S)
    max_calls = cfg.max_calls or max(DEFAULT_MAX_CALLS, 2 * store.N + 10)
    return Environment(
        store,
        cfg.condition,
        target_key,
        toc=toc,
        deep=deep,
        counter=TokenCounter(cfg.counter),
        budget=cfg.budget,
        max_calls=max_calls,
        preamble=preamble_text(cfg, target_key),
        target_value=target_value,
    )


def run_episode(env: Environment, policy: Policy) -> None:
    while not env.done:
        env.step(policy.step(env.observation()))


def run_trial(cfg: TrialConfig, *, client=None, keep_transcript: bool = False, log_wire: bool = False) -> TrialResult:
    cfg.validate()
    env = build_environment(cfg)
    infra = protocol = False
    try:
        policy = make_policy(cfg, client=client, log_wire=log_wire)
        run_episode(env, policy)
    except InfrastructureError:
        infra = True
    except ProtocolFailure:
        protocol = True
    tr = env.transcript
    return TrialResult(
        data_page_reads=tr.data_page_reads,
        tool_calls=tr.tool_calls,
        turns=tr.calls_made,
        tokens=tr.cumulative_tokens,
        correct=env.correct and not (env.budget_exhausted or infra or protocol),
        budget_exhausted=env.budget_exhausted,
        infrastructure_error=infra,
        protocol_failure=protocol,
        capped=env.capped,
        transcript_digest=tr.digest(),
        preamble_tokens=tr.preamble_tokens,
        transcript=tuple(tr.turns) if keep_transcript else None,
    )


# -- aggregation ----------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    n_trials: int
    median_R: float | None = None
    iqr_lo_R: float | None = None
    iqr_hi_R: float | None = None
    median_Tok: float | None = None
    iqr_lo_Tok: float | None = None
    iqr_hi_Tok: float | None = None
    accuracy_pct: float | None = None
    exhausted_pct: float | None = None
    mean_R: float | None = None
    max_R: int | None = None
    n_infrastructure_errors: int = 0

    @property
    def no_data(self) -> bool:
        return self.n_trials == 0


def _median_iqr(values: Sequence[float]) -> tuple[float, float, float]:
    arr = np.asarray(values, dtype=float)
    lo = float(np.percentile(arr, 25, method="lower"))
    hi = float(np.percentile(arr, 75, method="higher"))
    return float(statistics.median(values)), lo, hi


def aggregate(results: Iterable[TrialResult]) -> Summary:
    results = list(results)
    valid = [r for r in results if not r.infrastructure_error]
    infra = len(results) - len(valid)
    if not valid:
        return Summary(0, n_infrastructure_errors=infra)
    reads = [r.data_page_reads for r in valid]
    toks = [r.tokens for r in valid]
    mR, loR, hiR = _median_iqr(reads)
    mT, loT, hiT = _median_iqr(toks)
    n = len(valid)
    return Summary(
        n_trials=n,
        median_R=mR,
        iqr_lo_R=loR,
        iqr_hi_R=hiR,
        median_Tok=mT,
        iqr_lo_Tok=loT,
        iqr_hi_Tok=hiT,
        accuracy_pct=100.0 * sum(r.correct for r in valid) / n,
        exhausted_pct=100.0 * sum(r.budget_exhausted for r in valid) / n,
        mean_R=float(np.mean(reads)),
        max_R=max(reads),
        n_infrastructure_errors=infra,
    )


def predictions(cfg: TrialConfig) -> tuple[Fraction, int]:
    """(predicted data-page reads, worst-case page-read bound) for a cell."""
    N = cfg.shape.N
    c = cfg.condition
    if c is Condition.FLAT:
        return theory.expected_sequential_cost(N), theory.worst_sequential_cost(N)
    if c is Condition.FLAT_SORTED:
        return theory.expected_sequential_cost(N), theory.indexed_cost_bound(N, 2)
    if c is Condition.INDEXED_CORRUPTED:
        return theory.expected_sequential_cost(N) + 1, theory.worst_sequential_cost(N) + 1
    return Fraction(1), theory.indexed_cost_bound(N, cfg.b)


@dataclass(frozen=True)
class CellSummary:
    cell: TrialConfig
    summary: Summary
    predicted_R: Fraction
    predicted_bound: int

    def row(self) -> dict[str, Any]:
        s, c = self.summary, self.cell
        return {
            "condition": c.condition.value,
            "content": c.content.kind,
            "M": c.M,
            "P": c.P,
            "policy": c.policy.label,
            "n_trials": s.n_trials,
            "median_R": s.median_R,
            "iqr_lo_R": s.iqr_lo_R,
            "iqr_hi_R": s.iqr_hi_R,
            "median_Tok": s.median_Tok,
            "iqr_lo_Tok": s.iqr_lo_Tok,
            "iqr_hi_Tok": s.iqr_hi_Tok,
            "accuracy_pct": s.accuracy_pct,
            "exhausted_pct": s.exhausted_pct,
            "predicted_R": float(self.predicted_R),
            "predicted_bound": self.predicted_bound,
        }


SUMMARY_COLUMNS = (
    "condition", "content", "M", "P", "policy", "n_trials",
    "median_R", "iqr_lo_R", "iqr_hi_R", "median_Tok", "iqr_lo_Tok", "iqr_hi_Tok",
    "accuracy_pct", "exhausted_pct", "predicted_R", "predicted_bound",
)  # fmt: skip


def default_trials(cfg: TrialConfig) -> int:
    if cfg.condition is Condition.FLAT_SORTED or cfg.policy.name == "remote":
        return 30
    if cfg.M >= 1000:
        return 20
    return 50


@dataclass
class SweepResult:
    results: list[tuple[TrialConfig, TrialResult]]
    summaries: list[CellSummary]


def _run_local(cfg: TrialConfig) -> TrialResult:
    return run_trial(cfg)


def run_sweep(
    grid: Sequence[TrialConfig],
    trials: int | None = None,
    *,
    seed_offset: int = 0,
    workers: int = 1,
    remote_concurrency: int = 4,
    client=None,
    log_wire: bool = False,
) -> SweepResult:
    """Run every cell of ``grid`` for ``trials`` seeds (default per cell).

    Results are ordered by (cell, trial index) whatever the execution order.
    """
    if not grid:
        raise ValueError("empty grid")
    cells = [g.cell for g in grid]
    for c in cells:
        c.validate()
    jobs = []
    for ci, c in enumerate(cells):
        k = trials if trials is not None else default_trials(c)
        jobs.extend((ci, dataclasses.replace(c, seed=seed_offset + t)) for t in range(k))

    local = [i for i, (_, cfg) in enumerate(jobs) if not _is_remote(cfg)]
    remote = [i for i, (_, cfg) in enumerate(jobs) if _is_remote(cfg)]
    out: dict[int, TrialResult] = {}
    if local:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                out.update(_map(ex, local, jobs, _run_local))
        else:
            out.update({i: run_trial(jobs[i][1]) for i in local})
    if remote:
        with ThreadPoolExecutor(max_workers=max(1, remote_concurrency)) as ex:
            fn = lambda cfg: run_trial(cfg, client=client, log_wire=log_wire)  # noqa: E731
            out.update(_map(ex, remote, jobs, fn))

    ordered = [(jobs[i][1], out[i]) for i in range(len(jobs))]
    by_cell: dict[int, list[TrialResult]] = {ci: [] for ci in range(len(cells))}
    for i, (ci, _) in enumerate(jobs):
        by_cell[ci].append(out[i])
    summaries = []
    for ci, c in enumerate(cells):
        rs = by_cell[ci]
        pr, pb = predictions(c)
        summaries.append(CellSummary(c, aggregate(rs), pr, pb))
    return SweepResult(ordered, summaries)


def _is_remote(cfg: TrialConfig) -> bool:
    p = cfg.policy
    return p.name == "remote" or (p.name == "shortcut" and p.base_spec().name == "remote")


def _map(ex: Executor, subset: list[int], jobs, fn) -> dict[int, TrialResult]:
    futures = {i: ex.submit(fn, jobs[i][1]) for i in subset}
    return {i: f.result() for i, f in futures.items()}


def write_results_jsonl(path: str | Path, results: Sequence[tuple[TrialConfig, TrialResult]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cfg, res in results:
            fh.write(json.dumps({"config": cfg.echo(), "result": res.record()}, sort_keys=True) + "\n")


# -- growing store --------------------------------------------------------

GROW_ACCESS = ("sequential", "indexed-rebuild")


@dataclass(frozen=True)
class GrowModeConfig:
    N0: int
    T: int
    access: str = "sequential"
    P: int = 10

    def __post_init__(self):
        theory.AccumulationShape(self.N0, self.T)
        if self.access not in GROW_ACCESS:
            raise ValueError(f"access must be one of {GROW_ACCESS}")
        if self.P < 1:
            raise ValueError("P must be >= 1")


@dataclass(frozen=True)
class GrowSeries:
    data_reads: tuple[int, ...]
    index_reads: tuple[int, ...]
    maintenance: tuple[int, ...]

    @property
    def cumulative(self) -> tuple[int, ...]:
        """Cumulative data-page reads."""
        return tuple(np.cumsum(self.data_reads).tolist())

    @property
    def total_reads(self) -> int:
        return int(sum(self.data_reads) + sum(self.index_reads))


def _grow_pages(cfg: GrowModeConfig) -> list[tuple[Item, ...]]:
    P = cfg.P
    return [tuple(Item(k, str(k)) for k in range(i * P + 1, (i + 1) * P + 1)) for i in range(cfg.N0 + cfg.T)]


def grow_mode(cfg: GrowModeConfig, seed: int = 0) -> GrowSeries:
    """Store gains one page of fresh items per step; one retrieval per step.

    Sequential access uses a uniform probe: pages are visited in a fresh
    random order until the one holding the key. Indexed access rebuilds the
    flat TOC and runs the TOC traversal policy in a real environment.
    """
    rng = np.random.default_rng(seed)
    pages = _grow_pages(cfg)
    data, idx, upkeep = [], [], []
    for t in range(1, cfg.T + 1):
        n_pages = cfg.N0 + t
        key = int(rng.integers(n_pages * cfg.P)) + 1
        if cfg.access == "sequential":
            home = (key - 1) // cfg.P
            order = rng.permutation(n_pages)
            # first position in the probe order whose page holds the key
            data.append(int(np.flatnonzero(order == home)[0]) + 1)
            idx.append(0)
            upkeep.append(0)
            continue
        store = PageStore("numeric", tuple(pages[:n_pages]), "sorted", StoreShape(n_pages * cfg.P, cfg.P))
        toc = build_flat_toc(store)
        env = Environment(store, Condition.INDEXED, key, toc=toc, budget=None, max_calls=None)
        run_episode(env, FlatTocTraversal())
        if not env.correct:
            raise RuntimeError(f"indexed retrieval failed at step {t}")
        data.append(env.transcript.data_page_reads)
        idx.append(env.transcript.tool_calls - env.transcript.data_page_reads - 1)
        upkeep.append(len(toc.entries))
    return GrowSeries(tuple(data), tuple(idx), tuple(upkeep))


def grow_sequential_reference(cfg: GrowModeConfig, seed: int = 0) -> tuple[int, ...]:
    """Sequential :func:`grow_mode` driven through the environment; slow, for cross-checks.

    Pages are laid out in the probe order, so a linear scan visits them
    exactly as the uniform probe would.
    """
    rng = np.random.default_rng(seed)
    pages = _grow_pages(cfg)
    reads = []
    for t in range(1, cfg.T + 1):
        n_pages = cfg.N0 + t
        key = int(rng.integers(n_pages * cfg.P)) + 1
        order = rng.permutation(n_pages)
        # lay pages out in probe order so the policy's fixed order 1..N follows it
        store = PageStore("numeric", tuple(pages[i] for i in order), "random", StoreShape(n_pages * cfg.P, cfg.P))
        env = Environment(store, Condition.FLAT, key, budget=None, max_calls=None)
        run_episode(env, LinearScan())
        reads.append(env.transcript.data_page_reads)
    return tuple(reads)


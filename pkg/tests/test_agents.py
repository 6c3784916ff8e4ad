import json
import math
import statistics

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from pagebench.agents import (
    BinarySearch,
    CorruptedFallback,
    DeepTraversal,
    FlatTocTraversal,
    LinearScan,
    ParametricShortcut,
    ShortcutParams,
    UniformProbe,
    find_value,
)
from pagebench.environment import Condition, Environment, Observation, ToolCall, get_index, read_page
from pagebench.harness import PolicySpec, TrialConfig, run_episode, run_trial
from pagebench.index import build_deep_index, build_flat_toc, corrupt_toc
from pagebench.remote import parse_tool_call
from pagebench.store import ContentSpec, generate_items, paginate

HASH = ContentSpec("hash")


def store(kind="hash", M=500, P=10, ordering="sorted", seed=0):
    return paginate(generate_items(ContentSpec(kind), M, seed), P, ordering, seed, kind=kind)


def obs(N=5, result="", calls=0, condition=Condition.FLAT, key=1, kind="numeric"):
    return Observation(result, calls, condition, N, key, kind)


def run(policy, s, condition, target, **kw):
    extra = {}
    if condition in (Condition.INDEXED, Condition.INDEXED_CORRUPTED):
        extra["toc"] = build_flat_toc(s)
        if condition is Condition.INDEXED_CORRUPTED:
            extra["toc"] = corrupt_toc(extra["toc"], kw.pop("corrupt_seed", 0))
    if condition is Condition.DEEP_INDEXED:
        extra["deep"] = build_deep_index(s, kw.pop("S", 10))
    env = Environment(s, condition, target, budget=None, max_calls=None, **extra, **kw)
    run_episode(env, policy)
    return env


def page_of(s, key):
    return next(i for i, p in enumerate(s.page_items, 1) if any(it.key == key for it in p))


def test_first_calls():
    assert LinearScan().step(obs()) == read_page(1)
    assert FlatTocTraversal().step(obs(condition=Condition.INDEXED)) == get_index()


def test_find_value_exact_prefix():
    page = "PAGE 1 OF 1\nItem 24: 24\nItem 247: 247\n"
    assert find_value("numeric", page, 247) == "247"
    assert find_value("numeric", page, 2) is None
    assert find_value("hash", "PAGE 1 OF 1\n1234: ABCD", 1234) == "ABCD"


@pytest.mark.parametrize("j", [1, 7, 50])
def test_linear_scan_reads_j_pages(j):
    s = store()
    target = s.page_items[j - 1][3].key
    env = run(LinearScan(), s, Condition.FLAT_SORTED, target)
    assert env.transcript.data_page_reads == j and env.correct


def test_uniform_probe_visits_distinct_pages():
    s = store(ordering="random")
    target = s.page_items[-1][0].key
    p = UniformProbe(seed=3)
    env = run(p, s, Condition.FLAT, target)
    assert env.correct
    assert len(set(p._order[: env.transcript.data_page_reads])) == env.transcript.data_page_reads


def test_uniform_probe_mean():
    reads = [run_trial(TrialConfig("flat", HASH, 500, PolicySpec.of("uniform_probe"), seed=s)).data_page_reads for s in range(10_000)]
    assert abs(statistics.fmean(reads) - 25.5) <= 0.5


@pytest.mark.parametrize("N", [1, 2, 3, 7, 50, 64])
def test_binary_search_ceiling(N):
    s = store("numeric", N * 10)
    limit = math.ceil(math.log2(N)) + 1
    for it in s.items():
        env = run(BinarySearch(), s, Condition.FLAT_SORTED, it.key)
        assert env.correct and env.transcript.data_page_reads <= limit


def test_binary_search_single_page():
    s = store("hash", 8)
    env = run(BinarySearch(), s, Condition.FLAT_SORTED, s.items()[3].key)
    assert env.transcript.data_page_reads == 1


def test_binary_search_lost_bounds_cost_more():
    def median_reads(p_err):
        cfg = lambda seed: TrialConfig("flat_sorted", HASH, 500, PolicySpec.of("binary_search", p_err=p_err), seed=seed)
        return statistics.median(run_trial(cfg(s)).data_page_reads for s in range(1000))

    assert median_reads(0.3) > median_reads(0.0)


@given(st.floats(0, 1), st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_binary_search_bounds_stay_ordered_while_live(p_err, seed):
    s = store("hash", 300, seed=seed % 100)
    target = s.items()[seed % 300].key
    pol = BinarySearch(seed=seed, p_err=p_err)
    env = Environment(s, Condition.FLAT_SORTED, target, budget=None, max_calls=400)
    while not env.done:
        call = pol.step(env.observation())
        if call.name == "read_page":
            assert 1 <= pol.lo <= call.argument <= pol.hi <= s.N
        env.step(call)


def test_binary_search_rejects_bad_p_err():
    with pytest.raises(ValueError):
        BinarySearch(p_err=1.5)


@pytest.mark.parametrize("M", [50, 100, 200, 500, 1000, 2000, 5000])
def test_flat_toc_one_read(M):
    s = store("hash", M)
    for it in s.items()[:: max(1, M // 40)]:
        env = run(FlatTocTraversal(), s, Condition.INDEXED, it.key)
        assert env.correct and env.transcript.data_page_reads == 1


def test_deep_exactly_four_calls():
    s = store("hash", 5000)
    target = s.items()[1234].key
    env = run(DeepTraversal(), s, Condition.DEEP_INDEXED, target)
    names = [t.split("(")[0] for role, t in env.transcript.turns if role == "agent"]
    assert names == ["get_index", "get_section_index", "read_page", "submit_answer"]
    assert env.transcript.data_page_reads == 1 and env.correct


def test_corrupted_fallback_two_pages_skipping_read():
    s = store("hash", 20)
    for it in s.items():
        env = run(CorruptedFallback(skip_read=True), s, Condition.INDEXED_CORRUPTED, it.key)
        assert env.transcript.data_page_reads == 2 and env.correct


def test_corrupted_fallback_two_pages_rescanning():
    # the default rescan revisits page 1, so a target on page 2 costs a third read
    s = store("hash", 20)
    for it in s.items():
        env = run(CorruptedFallback(), s, Condition.INDEXED_CORRUPTED, it.key)
        assert env.correct
        assert env.transcript.data_page_reads == 1 + page_of(s, it.key)


@pytest.mark.parametrize("skip_read", [False, True])
def test_corrupted_fallback_reads(skip_read):
    s = store("hash", 500)
    for it in s.items()[::13]:
        env = run(CorruptedFallback(skip_read=skip_read), s, Condition.INDEXED_CORRUPTED, it.key, corrupt_seed=4)
        t = page_of(s, it.key)
        wrong = env.transcript.turns[3][1]  # result of the first read
        wrong_page = int(wrong.split()[1])
        extra = 0 if (skip_read and wrong_page < t) else 1
        assert env.correct
        assert env.transcript.data_page_reads == t + extra


def test_flat_toc_without_fallback_gives_up():
    s = store("hash", 100)
    env = run(FlatTocTraversal(), s, Condition.INDEXED_CORRUPTED, s.items()[5].key)
    assert not env.correct and env.transcript.data_page_reads == 1


# -- parametric shortcut ----------------------------------------------------


def test_shortcut_zero_familiarity_is_base():
    for cond, base in [("deep_indexed", "deep"), ("flat", "uniform_probe"), ("indexed", "flat_toc")]:
        for seed in range(20):
            plain = run_trial(TrialConfig(cond, HASH, 500, PolicySpec.of(base), seed=seed), keep_transcript=True)
            mixed = run_trial(
                TrialConfig(cond, HASH, 500, PolicySpec.of("shortcut", base=base, f=0.0, mode="free_text"), seed=seed),
                keep_transcript=True,
            )
            assert mixed.transcript == plain.transcript and mixed == plain


def test_shortcut_full_familiarity_guess_reads_nothing():
    for seed in range(30):
        r = run_trial(TrialConfig("indexed", ContentSpec("encyclopedia"), 200, PolicySpec.of("shortcut", base="flat_toc", f=1.0, mode="guess"), seed=seed))
        assert r.data_page_reads == 0 and r.turns == 1


def test_shortcut_guess_accuracy_by_content():
    numeric = [run_trial(TrialConfig("indexed", ContentSpec("numeric"), 200, PolicySpec.of("shortcut", base="flat_toc", f=1.0, mode="guess"), seed=s)).correct for s in range(40)]
    hashed = [run_trial(TrialConfig("indexed", HASH, 200, PolicySpec.of("shortcut", base="flat_toc", f=1.0, mode="guess"), seed=s)).correct for s in range(40)]
    assert all(numeric) and not any(hashed)


def test_shortcut_free_text_exhausts_budget():
    cfg = lambda s: TrialConfig("deep_indexed", ContentSpec("encyclopedia"), 200, PolicySpec.of("shortcut", f=0.9, mode="free_text"), seed=s)
    results = [run_trial(cfg(s)) for s in range(60)]
    assert sum(r.budget_exhausted for r in results) > 30


def test_shortcut_reads_nonincreasing_in_familiarity():
    means = []
    for f in (0.0, 0.25, 0.5, 0.75, 1.0):
        cfg = lambda s: TrialConfig("flat", HASH, 200, PolicySpec.of("shortcut", base="uniform_probe", f=f, mode="guess"), seed=s)
        means.append(statistics.fmean(run_trial(cfg(s)).data_page_reads for s in range(400)))
    assert all(a >= b for a, b in zip(means, means[1:]))


def test_shortcut_params_validated():
    with pytest.raises(ValueError):
        ShortcutParams(familiarity=2)
    with pytest.raises(ValueError):
        ShortcutParams(mode="shout")


def test_shortcut_base_sees_only_its_own_results():
    seen = []

    class Spy(LinearScan):
        def step(self, o):
            seen.append(o.last_result)
            return super().step(o)

    s = store("numeric", 100)
    pol = ParametricShortcut(Spy(), ShortcutParams(familiarity=0.5, mode="free_text", text_tokens=2), seed=1)
    env = Environment(s, Condition.FLAT_SORTED, 95, budget=None, max_calls=200)
    run_episode(env, pol)
    assert all(r == "" or r.startswith("PAGE ") for r in seen)


# -- determinism and clairvoyance -----------------------------------------


@pytest.mark.parametrize("policy, condition", [("uniform_probe", "flat"), ("binary_search", "flat_sorted"), ("corrupted_fallback", "indexed_corrupted"), ("deep", "deep_indexed")])
def test_seed_determinism(policy, condition):
    cfg = TrialConfig(condition, HASH, 300, PolicySpec.of(policy, **({"p_err": 0.2} if policy == "binary_search" else {})), seed=9)
    a, b = run_trial(cfg, keep_transcript=True), run_trial(cfg, keep_transcript=True)
    assert a.transcript == b.transcript and a.transcript_digest == b.transcript_digest


def test_swapping_store_changes_only_later_calls():
    s1, s2 = store("numeric", 200), store("numeric", 200)
    # s2 holds the same keys, but item 150 is missing from page 15 as shown
    s2 = paginate([it for it in s1.items() if it.key != 150], 10, kind="numeric")
    target = 150
    p1, p2 = LinearScan(), LinearScan()
    e1 = Environment(s1, Condition.FLAT_SORTED, target, budget=None, max_calls=None)
    e2 = Environment(s1, Condition.FLAT_SORTED, target, budget=None, max_calls=None)
    calls1, calls2 = [], []
    for step in range(40):
        if e1.done or e2.done:
            break
        if step == 10:
            e2.store = s2  # swap underneath the second policy
        c1, c2 = p1.step(e1.observation()), p2.step(e2.observation())
        calls1.append(c1)
        calls2.append(c2)
        e1.step(c1)
        e2.step(c2)
    first_diff = next(i for i, (a, b) in enumerate(zip(calls1, calls2)) if a != b)
    assert first_diff > 10  # identical until a result from the swapped store came back


# -- remote adapter ---------------------------------------------------------


def _deep_driver():
    """Mock endpoint that answers each request with the deep policy's next call."""
    state = {"policy": DeepTraversal(), "n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        msgs = body["messages"]
        last = msgs[-1]["content"] if msgs[-1]["role"] == "tool" else ""
        user = msgs[1]["content"]
        key = user.rsplit(" ", 1)[1].rstrip(".")
        o = Observation(last, state["n"], Condition.DEEP_INDEXED, 0, int(key), "hash")
        call = state["policy"].step(o)
        state["n"] += 1
        args = {}
        if call.name == "get_section_index":
            args = {"s": call.argument}
        elif call.name == "read_page":
            args = {"n": call.argument}
        elif call.name == "submit_answer":
            args = {"value": call.argument}
        msg = {"role": "assistant", "content": None, "tool_calls": [{"id": f"c{state['n']}", "type": "function", "function": {"name": call.name, "arguments": json.dumps(args)}}]}
        return httpx.Response(200, json={"choices": [{"message": msg}]})

    return handler


@pytest.fixture
def remote_env(monkeypatch):
    monkeypatch.setenv("REPRO_LLM_BASE_URL", "http://mock.invalid/v1")
    monkeypatch.setenv("REPRO_LLM_MODEL", "mock")


def test_remote_adapter_matches_deterministic_deep(remote_env):
    for seed in range(3):
        base = TrialConfig("deep_indexed", HASH, 2000, PolicySpec.of("deep"), seed=seed)
        client = httpx.Client(transport=httpx.MockTransport(_deep_driver()))
        remote = run_trial(TrialConfig("deep_indexed", HASH, 2000, PolicySpec.of("remote"), seed=seed), client=client)
        assert remote == run_trial(base)


def test_remote_non_tool_text_is_free_text(remote_env):
    replies = iter(["Let me think.", None])

    def handler(request):
        text = next(replies)
        if text is None:
            msg = {"role": "assistant", "tool_calls": [{"id": "x", "function": {"name": "submit_answer", "arguments": '{"value": "nope"}'}}]}
        else:
            msg = {"role": "assistant", "content": text}
        return httpx.Response(200, json={"choices": [{"message": msg}], "usage": {"total_tokens": 10}})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    r = run_trial(TrialConfig("flat", HASH, 50, PolicySpec.of("remote"), seed=0), client=client, keep_transcript=True)
    assert r.turns == 2 and r.tool_calls == 1
    assert r.transcript[0] == ("agent", "Let me think.")
    assert not r.correct and not r.infrastructure_error


def test_remote_unreachable_is_infrastructure_error(remote_env):
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    client = httpx.Client(transport=httpx.MockTransport(handler))
    r = run_trial(TrialConfig("flat", HASH, 50, PolicySpec.of("remote"), seed=0), client=client)
    assert r.infrastructure_error and not r.correct


def test_remote_http_error_is_infrastructure_error(remote_env):
    client = httpx.Client(transport=httpx.MockTransport(lambda req: httpx.Response(401, json={})))
    assert run_trial(TrialConfig("flat", HASH, 50, PolicySpec.of("remote")), client=client).infrastructure_error


def test_remote_malformed_retried_then_protocol_failure(remote_env):
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        return httpx.Response(200, json={"choices": [{"message": {"tool_calls": [{"function": {"name": "read_page", "arguments": "{bad"}}]}}]})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    r = run_trial(TrialConfig("flat", HASH, 50, PolicySpec.of("remote", max_retries=3)), client=client)
    assert r.protocol_failure and not r.correct and calls["n"] == 4


def test_remote_external_usage(remote_env):
    def handler(request):
        msg = {"tool_calls": [{"id": "a", "function": {"name": "submit_answer", "arguments": '{"value": "x"}'}}]}
        return httpx.Response(200, json={"choices": [{"message": msg}], "usage": {"prompt_tokens": 120, "completion_tokens": 8}})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    r = run_trial(TrialConfig("flat", HASH, 50, PolicySpec.of("remote"), counter="external"), client=client)
    assert r.tokens == 128


def test_remote_missing_env_is_infrastructure_error(monkeypatch):
    monkeypatch.delenv("REPRO_LLM_BASE_URL", raising=False)
    monkeypatch.delenv("REPRO_LLM_MODEL", raising=False)
    assert run_trial(TrialConfig("flat", HASH, 50, PolicySpec.of("remote"))).infrastructure_error


@pytest.mark.parametrize(
    "message, expected",
    [
        ({"tool_calls": [{"function": {"name": "read_page", "arguments": '{"n": "4"}'}}]}, ToolCall("read_page", 4)),
        ({"tool_calls": [{"function": {"name": "get_index", "arguments": ""}}]}, ToolCall("get_index")),
        ({"tool_calls": [{"function": {"name": "submit_answer", "arguments": {"value": 12}}}]}, ToolCall("submit_answer", "12")),
        ({"tool_calls": [{"function": {"name": "rm", "arguments": "{}"}}]}, None),
        ({"tool_calls": [{"function": {"name": "read_page", "arguments": "{}"}}]}, None),
        ({"content": ""}, None),
        ({"content": "hello"}, ToolCall("free_text", "hello")),
    ],
)
def test_parse_tool_call(message, expected):
    assert parse_tool_call(message) == expected


def test_remote_wire_log(remote_env, caplog):
    def handler(request):
        msg = {"tool_calls": [{"id": "a", "function": {"name": "submit_answer", "arguments": '{"value": "x"}'}}]}
        return httpx.Response(200, json={"choices": [{"message": msg}]})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    with caplog.at_level("INFO", logger="pagebench.wire"):
        run_trial(TrialConfig("flat", HASH, 50, PolicySpec.of("remote")), client=client, log_wire=True)
    assert any("request" in r.message for r in caplog.records)
    assert any("response 200" in r.message for r in caplog.records)

"""Command-line front end: sweeps, summary tables, theory comparison, plot data.

Sweep files are line oriented. Blank lines and ``#`` comments are ignored;
every other line is ``key = value``. ``arm`` may repeat::

    content = hash
    M = 50, 100, 200, 500
    trials = 50
    arm = flat uniform_probe
    arm = indexed flat_toc
    arm = indexed_corrupted corrupted_fallback skip_read=true
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from . import theory
from .environment import COUNTER_MODES, Condition
from .harness import (
    DEFAULT_B,
    DEFAULT_POLICY,
    GROW_ACCESS,
    PREAMBLES,
    SUMMARY_COLUMNS,
    CellSummary,
    GrowModeConfig,
    PolicySpec,
    SweepResult,
    TrialConfig,
    run_sweep,
    write_results_jsonl,
    grow_mode,
)
from .store import CONTENT_KINDS, ContentSpec


class SweepParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def parse_value(text: str) -> Any:
    """Best-effort scalar: bool, int, float, None, else the stripped string."""
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low == "none":
        return None
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def parse_params(tokens: Sequence[str]) -> dict[str, Any]:
    out = {}
    for tok in tokens:
        k, sep, v = tok.partition("=")
        if not sep or not k.strip():
            raise ValueError(f"expected key=value, got {tok!r}")
        out[k.strip()] = parse_value(v)
    return out


def parse_int_list(text: str) -> list[int]:
    vals = [int(x) for x in text.replace(" ", "").split(",") if x]
    if not vals:
        raise ValueError("empty list")
    return vals


def parse_budget(text: str | None) -> int | None:
    if text is None or str(text).strip().lower() in ("none", "off", "0"):
        return None
    return int(text)


@dataclass
class Sweep:
    """Declarative run description; :meth:`grid` expands it to trial configs."""

    arms: list[tuple[Condition, PolicySpec]] = field(default_factory=list)
    contents: list[str] = field(default_factory=lambda: ["hash"])
    corpus_path: str | None = None
    Ms: list[int] = field(default_factory=lambda: [500])
    P: int = 10
    S: int = 10
    trials: int | None = None
    budget: int | None = 100_000
    counter: str = "bytes4"
    preamble: str = "task"
    seed_offset: int = 0
    out_dir: str | None = None
    b: int = DEFAULT_B

    def grid(self) -> list[TrialConfig]:
        cells = []
        for condition, policy in self.arms:
            for kind in self.contents:
                content = ContentSpec(kind, self.corpus_path if kind == "encyclopedia" else None)
                for M in self.Ms:
                    cfg = TrialConfig(
                        condition, content, M, policy, P=self.P, S=self.S, budget=self.budget,
                        counter=self.counter, preamble=self.preamble, b=self.b,
                    )  # fmt: skip
                    cfg.validate()
                    cells.append(cfg)
        return cells


def parse_arm(text: str) -> tuple[Condition, PolicySpec]:
    parts = text.split()
    if not parts:
        raise ValueError("arm needs a condition")
    condition = Condition.parse(parts[0])
    rest = parts[1:]
    name = DEFAULT_POLICY[condition]
    if rest and "=" not in rest[0]:
        name, rest = rest[0], rest[1:]
    return condition, PolicySpec.of(name, **parse_params(rest))


def parse_sweep(text: str) -> Sweep:
    sw = Sweep()
    condition = policy = None
    params: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if not sep or not key:
            raise SweepParseError(lineno, f"expected key = value, got {raw.strip()!r}")
        try:
            if key == "arm":
                sw.arms.append(parse_arm(value))
            elif key == "condition":
                condition = Condition.parse(value)
            elif key == "policy":
                policy = value
            elif key == "policy_param":
                params.update(parse_params(value.split()))
            elif key == "content":
                kinds = [k.strip() for k in value.split(",") if k.strip()]
                for k in kinds:
                    ContentSpec(k)
                sw.contents = kinds
            elif key == "corpus":
                sw.corpus_path = value
            elif key == "m":
                sw.Ms = parse_int_list(value)
            elif key in ("p", "s", "b", "seed_offset"):
                setattr(sw, {"p": "P", "s": "S"}.get(key, key), int(value))
            elif key == "trials":
                sw.trials = int(value)
            elif key == "budget":
                sw.budget = parse_budget(value)
            elif key == "counter":
                if value not in COUNTER_MODES:
                    raise ValueError(f"counter must be one of {COUNTER_MODES}")
                sw.counter = value
            elif key == "preamble":
                if value not in PREAMBLES:
                    raise ValueError(f"preamble must be one of {PREAMBLES}")
                sw.preamble = value
            elif key == "out_dir":
                sw.out_dir = value
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise SweepParseError(lineno, str(exc)) from None
    if condition is not None:
        sw.arms.append((condition, PolicySpec.of(policy or DEFAULT_POLICY[condition], **params)))
    elif policy is not None or params:
        raise SweepParseError(0, "policy given without a condition")
    if not sw.arms:
        raise SweepParseError(0, "no arm or condition given")
    return sw


# -- tables ---------------------------------------------------------------


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def format_table(rows: Sequence[dict[str, Any]], columns: Sequence[str]) -> str:
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def write_csv(path: Path, rows: Sequence[dict[str, Any]], columns: Sequence[str], comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


COMPARE_COLUMNS = ("condition", "content", "M", "policy", "n_trials", "median_R", "predicted_R", "ratio", "max_R", "bound", "violation")


def compare(summaries: Sequence[CellSummary]) -> list[dict[str, Any]]:
    """Measured median vs prediction per cell; flags cells whose worst trial beats the bound."""
    rows = []
    for cs in summaries:
        s, c = cs.summary, cs.cell
        pred = float(cs.predicted_R)
        ratio = None if s.no_data or pred == 0 else s.median_R / pred
        rows.append(
            {
                "condition": c.condition.value,
                "content": c.content.kind,
                "M": c.M,
                "policy": c.policy.label,
                "n_trials": s.n_trials,
                "median_R": s.median_R,
                "predicted_R": pred,
                "ratio": ratio,
                "max_R": s.max_R,
                "bound": cs.predicted_bound,
                "violation": bool(s.max_R is not None and s.max_R > cs.predicted_bound),
            }
        )
    return rows


def summaries_from_jsonl(path: str | Path) -> list[CellSummary]:
    """Rebuild cell summaries from a results.jsonl written by ``run``."""
    from .harness import TrialResult, aggregate, predictions

    groups: dict[str, tuple[TrialConfig, list]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                c, r = rec["config"], rec["result"]
                cfg = TrialConfig(
                    Condition(c["condition"]), ContentSpec(c["content"], c.get("corpus_path")), c["M"],
                    PolicySpec.of(c["policy"], **c["policy_params"]), P=c["P"], S=c["S"], budget=c["budget"],
                    counter=c["counter"], preamble=c["preamble"], b=c["b"],
                )  # fmt: skip
                res = TrialResult(**r)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record ({exc})") from None
            key = json.dumps(cfg.cell.echo(), sort_keys=True)
            groups.setdefault(key, (cfg.cell, []))[1].append(res)
    out = []
    for cell, rs in groups.values():
        pr, pb = predictions(cell)
        out.append(CellSummary(cell, aggregate(rs), pr, pb))
    return out


# -- plot data ------------------------------------------------------------

PLOT_COLUMNS = ("label", "content", "P", "x_M", "y", "band_lo", "band_hi", "overlay")
PLOT_FILES = ("reads_vs_M", "separation_ratio", "tokens_vs_M", "deep_vs_flat", "content_comparison")


def _label(cs: CellSummary) -> str:
    return f"{cs.cell.condition.value}:{cs.cell.policy.label}"


def _series_rows(cells: Sequence[CellSummary], metric: str, overlay: str = "") -> list[dict[str, Any]]:
    rows = []
    for cs in sorted(cells, key=lambda c: (_label(c), c.cell.content.kind, c.cell.P, c.cell.M)):
        s = cs.summary
        if s.no_data:
            continue
        y, lo, hi = (s.median_R, s.iqr_lo_R, s.iqr_hi_R) if metric == "R" else (s.median_Tok, s.iqr_lo_Tok, s.iqr_hi_Tok)
        rows.append(
            {
                "label": _label(cs),
                "content": cs.cell.content.kind,
                "P": cs.cell.P,
                "x_M": cs.cell.M,
                "y": y,
                "band_lo": lo,
                "band_hi": hi,
                "overlay": overlay or _overlay(cs),
            }
        )
    return rows


def _overlay(cs: CellSummary) -> str:
    c = cs.cell.condition
    if c in (Condition.FLAT, Condition.FLAT_SORTED):
        return "sequential_expected"
    if c is Condition.INDEXED_CORRUPTED:
        return "sequential_expected_plus_one"
    return "indexed_bound"


def plot_data(summaries: Sequence[CellSummary]) -> dict[str, tuple[str, Sequence[str], list[dict[str, Any]]]]:
    """Rows for each figure file, keyed by file stem.

    Hash cells outside the deep condition go to the reads and tokens files;
    flat and deep index cells go to the deep-vs-flat file; non-hash cells go
    to the content comparison together with hash cells of the same arm.
    """
    deep = Condition.DEEP_INDEXED
    main = [cs for cs in summaries if cs.cell.content.kind == "hash" and cs.cell.condition is not deep]
    idx = [cs for cs in summaries if cs.cell.condition in (Condition.INDEXED, deep)]
    other = [cs for cs in summaries if cs.cell.content.kind != "hash" and cs.cell.condition is not deep]
    other_arms = {(_label(cs), cs.cell.P, cs.cell.M) for cs in other}
    content = other + [cs for cs in main if (_label(cs), cs.cell.P, cs.cell.M) in other_arms]

    # separation ratio: FLAT over INDEXED medians at matching content, P and M
    flat = {(cs.cell.content.kind, cs.cell.P, cs.cell.M): cs for cs in summaries if cs.cell.condition is Condition.FLAT}
    indexed = {(cs.cell.content.kind, cs.cell.P, cs.cell.M): cs for cs in summaries if cs.cell.condition is Condition.INDEXED}
    sep = []
    for key in sorted(set(flat) & set(indexed)):
        f, i = flat[key].summary, indexed[key].summary
        if f.no_data or i.no_data or not i.median_R:
            continue
        kind, P, M = key
        N = theory.StoreShape(M, P).N
        sep.append(
            {
                "content": kind,
                "P": P,
                "x_M": M,
                "measured_ratio": f.median_R / i.median_R,
                "predicted_ratio": float(theory.separation_ratio(N, flat[key].cell.b)),
                "approx_flat_reads": theory.approx_flat_reads(theory.StoreShape(M, P)),
            }
        )
    return {
        "reads_vs_M": ("median data-page reads vs M by condition; band is IQR", PLOT_COLUMNS, _series_rows(main, "R")),
        "separation_ratio": (
            "FLAT/INDEXED median reads vs M",
            ("content", "P", "x_M", "measured_ratio", "predicted_ratio", "approx_flat_reads"),
            sep,
        ),
        "tokens_vs_M": ("median cumulative tokens vs M by condition; band is IQR", PLOT_COLUMNS, _series_rows(main, "Tok", "none")),
        "deep_vs_flat": ("median reads for flat vs two-level index; band is IQR", PLOT_COLUMNS, _series_rows(idx, "R")),
        "content_comparison": ("median reads by content type; band is IQR", PLOT_COLUMNS, _series_rows(content, "R")),
    }


def emit_plotdata(summaries: Sequence[CellSummary], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for stem, (comment, cols, rows) in plot_data(summaries).items():
        p = out_dir / f"plot_{stem}.csv"
        write_csv(p, rows, cols, comment=f"{comment}; columns: {','.join(cols)}")
        paths.append(p)
    return paths


def write_outputs(sweep: SweepResult, out_dir: str | Path, meta: dict[str, Any]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results_jsonl(out / "results.jsonl", sweep.results)
    write_csv(out / "summary.csv", [cs.row() for cs in sweep.summaries], SUMMARY_COLUMNS)
    preamble = sorted({r.preamble_tokens for _, r in sweep.results})
    meta = dict(meta, preamble_tokens=preamble, n_results=len(sweep.results))
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    emit_plotdata(sweep.summaries, out)


# -- commands -------------------------------------------------------------


def _sweep_from_flags(args) -> Sweep:
    if not args.condition:
        raise ValueError("--condition or --sweep is required")
    condition = Condition.parse(args.condition)
    params = parse_params(args.policy_param or [])
    policy = PolicySpec.of(args.policy or DEFAULT_POLICY[condition], **params)
    return Sweep(
        arms=[(condition, policy)],
        contents=[args.content],
        corpus_path=args.corpus,
        Ms=parse_int_list(args.M),
        P=args.P,
        S=args.S,
        trials=args.trials,
        budget=parse_budget(args.budget),
        counter=args.counter,
        preamble=args.preamble,
        seed_offset=args.seed_offset,
        out_dir=args.out_dir,
    )


def cmd_run(args) -> int:
    try:
        if args.sweep:
            sw = parse_sweep(Path(args.sweep).read_text(encoding="utf-8"))
            if args.trials is not None:
                sw.trials = args.trials
            if args.out_dir:
                sw.out_dir = args.out_dir
        else:
            sw = _sweep_from_flags(args)
        grid = sw.grid()
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.log_wire:
        logging.basicConfig(level=logging.INFO, format="%(name)s %(message)s")
    result = run_sweep(grid, sw.trials, seed_offset=sw.seed_offset, workers=args.workers, log_wire=args.log_wire)
    rows = [cs.row() for cs in result.summaries]
    print(format_table(rows, SUMMARY_COLUMNS))
    if sw.out_dir:
        meta = {
            "cells": [c.echo() for c in grid],
            "trials": sw.trials,
            "seed_offset": sw.seed_offset,
            "counter": sw.counter,
            "budget": sw.budget,
            "preamble": sw.preamble,
        }
        write_outputs(result, sw.out_dir, meta)
        print(f"wrote {sw.out_dir}")
    n_infra = sum(cs.summary.n_infrastructure_errors for cs in result.summaries)
    if n_infra:
        print(f"{n_infra} trial(s) hit infrastructure errors", file=sys.stderr)
        if args.strict:
            return 1
    return 0


def cmd_predict(args) -> int:
    try:
        shape = theory.StoreShape(args.M, args.P)
        b = args.b if args.b is not None else theory.branching_factor(theory.CostParams(args.C, args.eta, args.kappa, args.delta))
        if b < 2:
            raise ValueError("b must be >= 2")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    N = shape.N
    exp = theory.expected_sequential_cost(N)
    print(f"N {N}")
    print(f"b {b}")
    print(f"expected_sequential_reads {float(exp):g}")
    print(f"worst_sequential_reads {theory.worst_sequential_cost(N)}")
    print(f"indexed_bound {theory.indexed_cost_bound(N, b)}")
    print(f"separation_ratio {float(theory.separation_ratio(N, b)):.6g}")
    return 0


def cmd_compare(args) -> int:
    summaries: list[CellSummary] = []
    for path in args.results:
        p = Path(path)
        if p.is_dir():
            p = p / "results.jsonl"
        try:
            summaries.extend(summaries_from_jsonl(p))
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    rows = compare(summaries)
    print(format_table(rows, COMPARE_COLUMNS))
    if args.out:
        write_csv(Path(args.out), rows, COMPARE_COLUMNS)
    return 0


def cmd_grow(args) -> int:
    try:
        cfgs = [GrowModeConfig(args.N0, args.T, access, args.P) for access in args.access]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rows = []
    for cfg in cfgs:
        totals = [sum(grow_mode(cfg, seed=args.seed_offset + r).data_reads) for r in range(args.runs)]
        predicted = (
            theory.cumulative_sequential_cost(theory.AccumulationShape(cfg.N0, cfg.T))
            if cfg.access == "sequential"
            else Fraction(cfg.T)
        )
        rows.append(
            {
                "access": cfg.access,
                "N0": cfg.N0,
                "T": cfg.T,
                "runs": args.runs,
                "mean_cumulative_reads": sum(totals) / len(totals),
                "predicted": float(predicted),
            }
        )
    cols = ("access", "N0", "T", "runs", "mean_cumulative_reads", "predicted")
    note = "predicted: expected-case sums with unit constants (sequential (N+1)/2 per lookup, indexed one data read per lookup)"
    print(format_table(rows, cols))
    print(note)
    if args.out:
        write_csv(Path(args.out), rows, cols, comment=note)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pagebench", description="Paged retrieval benchmark for tool-using agents.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a sweep and summarise it")
    run.add_argument("--sweep", help="sweep file (key = value lines)")
    run.add_argument("--condition", help="flat, flat_sorted, indexed, indexed_corrupted or deep_indexed")
    run.add_argument("--content", default="hash", choices=CONTENT_KINDS)
    run.add_argument("--corpus", help="JSONL corpus for encyclopedia content")
    run.add_argument("--M", default="500", help="comma-separated item counts")
    run.add_argument("--P", type=int, default=10, help="items per page")
    run.add_argument("--S", type=int, default=10, help="pages per section (deep index)")
    run.add_argument("--policy", help="policy name; defaults to the condition's usual policy")
    run.add_argument("--policy-param", action="append", metavar="K=V", help="policy parameter, repeatable")
    run.add_argument("--trials", type=int, help="trials per cell (default depends on the cell)")
    run.add_argument("--budget", default="100000", help="token budget per trial, or 'none'")
    run.add_argument("--counter", default="bytes4", choices=COUNTER_MODES)
    run.add_argument("--preamble", default="task", choices=PREAMBLES)
    run.add_argument("--seed-offset", type=int, default=0)
    run.add_argument("--workers", type=int, default=1, help="processes for local trials")
    run.add_argument("--out-dir", help="write results.jsonl, summary.csv, metadata.json and plot CSVs here")
    run.add_argument("--strict", action="store_true", help="exit 1 if any trial hit an infrastructure error")
    run.add_argument("--log-wire", action="store_true", help="log remote request/response bodies")
    run.set_defaults(func=cmd_run)

    pr = sub.add_parser("predict", help="closed-form costs for a store shape")
    pr.add_argument("--M", type=int, required=True)
    pr.add_argument("--P", type=int, default=10)
    pr.add_argument("--b", type=int, help="branching factor; computed from --C/--eta/--kappa/--delta if omitted")
    pr.add_argument("--C", type=int, default=4096, help="page capacity in tokens")
    pr.add_argument("--eta", type=int, default=8)
    pr.add_argument("--kappa", type=int, default=8)
    pr.add_argument("--delta", type=int, default=4)
    pr.set_defaults(func=cmd_predict)

    cmp_ = sub.add_parser("compare", help="measured vs predicted reads from results.jsonl files")
    cmp_.add_argument("results", nargs="*", help="results.jsonl files or run output directories")
    cmp_.add_argument("--out", help="also write the table as CSV")
    cmp_.set_defaults(func=cmd_compare)

    gr = sub.add_parser("grow", help="growing-store experiment")
    gr.add_argument("--N0", type=int, default=0)
    gr.add_argument("--T", type=int, default=1000)
    gr.add_argument("--P", type=int, default=10)
    gr.add_argument("--access", nargs="+", default=list(GROW_ACCESS), choices=GROW_ACCESS)
    gr.add_argument("--runs", type=int, default=100)
    gr.add_argument("--seed-offset", type=int, default=0)
    gr.add_argument("--out", help="also write the table as CSV")
    gr.set_defaults(func=cmd_grow)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Closed-form retrieval costs for paged stores.

Expected costs are returned as :class:`fractions.Fraction` so that values
like 25.5 compare exactly; bounds use an integer logarithm so exact powers
of the branching factor are not misclassified by float rounding.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


def _branching(page_capacity: int, eta: int, kappa: int, delta: int) -> int:
    b = page_capacity // (eta + kappa + delta)
    if b < 2:
        raise ValueError(f"branching factor below 2 (got {b})")
    return b


@dataclass(frozen=True)
class CostParams:
    """Token geometry of one index page.

    ``eta`` key tokens, ``kappa`` separator-key tokens and ``delta``
    formatting tokens per entry, in a page of ``page_capacity`` tokens.
    """

    page_capacity: int = 4096
    eta: int = 8
    kappa: int = 8
    delta: int = 4

    def __post_init__(self):
        for name in ("page_capacity", "eta", "kappa", "delta"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        _branching(self.page_capacity, self.eta, self.kappa, self.delta)


@dataclass(frozen=True)
class StoreShape:
    M: int
    P: int = 10
    S: int = 10

    def __post_init__(self):
        if self.M < 1 or self.P < 1 or self.S < 1:
            raise ValueError("M, P and S must all be >= 1")

    @property
    def N(self) -> int:
        return -(-self.M // self.P)


@dataclass(frozen=True)
class AccumulationShape:
    N0: int
    T: int

    def __post_init__(self):
        if self.N0 < 0 or self.T < 1:
            raise ValueError("need N0 >= 0 and T >= 1")


def branching_factor(p: CostParams) -> int:
    return _branching(p.page_capacity, p.eta, p.kappa, p.delta)


def ceil_log(n: int, b: int) -> int:
    """Smallest k >= 0 with b**k >= n."""
    if n < 1 or b < 2:
        raise ValueError("need n >= 1 and b >= 2")
    k, reach = 0, 1
    while reach < n:
        reach *= b
        k += 1
    return k


def expected_sequential_cost(N: int) -> Fraction:
    if N < 1:
        raise ValueError("N must be >= 1")
    return Fraction(N + 1, 2)


def worst_sequential_cost(N: int) -> int:
    if N < 1:
        raise ValueError("N must be >= 1")
    return N


def indexed_cost_bound(N: int, b: int) -> int:
    return ceil_log(N, b) + 1


def separation_ratio(N: int, b: int) -> Fraction:
    return expected_sequential_cost(N) / indexed_cost_bound(N, b)


def cumulative_sequential_cost(a: AccumulationShape) -> Fraction:
    """Expected-case accumulation: one retrieval per step from N0 + t pages."""
    T = a.T
    return Fraction(T * (a.N0 + 1) + T * (T + 1) // 2, 2)


def cumulative_indexed_cost(a: AccumulationShape, b: int) -> int:
    """Sum of indexed bounds over N0+1 .. N0+T pages.

    Walks runs of equal bound instead of every t, so T can be large.
    """
    if b < 2:
        raise ValueError("b must be >= 2")
    total = 0
    n, last = a.N0 + 1, a.N0 + a.T
    while n <= last:
        k = ceil_log(n, b)
        run_end = min(last, b**k)
        total += (run_end - n + 1) * (k + 1)
        n = run_end + 1
    return total


def predicted_flat_reads(s: StoreShape) -> Fraction:
    return expected_sequential_cost(s.N)


def approx_flat_reads(s: StoreShape) -> Fraction:
    """The M/(2P) approximation quoted alongside (N+1)/2."""
    return Fraction(s.M, 2 * s.P)

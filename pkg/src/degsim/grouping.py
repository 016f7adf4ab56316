"""Similarity preprocessing and the degradation grouping search.

The search minimizes the number of groups in an exact cover of the suite
subject to every group's worst PSNR drop staying within delta. Candidate
groups of each size are ranked by within-group average distance (variance
breaking near-ties); a binary search finds the largest verifiable group
size, each surviving level is truncated by a bisection for the last
verifiable rank, and a binary search on the group count drives a
depth-first exact-cover solver that re-verifies every group it uses.

The rank-prefix truncation assumes drops grow roughly monotonically with
rank; that assumption is a cost heuristic only, never a correctness
argument, because the solver re-verifies each candidate. Singleton groups
always verify (drop 0 by definition), so the all-singletons partition
anchors every search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterator, Mapping, Sequence

from .errors import SearchBudgetExceeded, ValidationError
from .oracle import OracleInterface, canonical_group_key, delta_p
from .similarity import SimilarityMatrix

BELL_GUARD_N = 12


@dataclass
class SearchConfig:
    delta: float
    tie_epsilon: float = 0.05
    max_oracle_calls: int | None = None
    emit_all_solutions: bool = False

    def validate(self) -> "SearchConfig":
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValidationError(f"delta must be > 0, got {self.delta}")
        if self.tie_epsilon < 0:
            raise ValidationError("tie_epsilon must be >= 0")
        if self.max_oracle_calls is not None and self.max_oracle_calls < 0:
            raise ValidationError("max_oracle_calls must be >= 0")
        return self


@dataclass
class CandidateLevel:
    """All size-L groups, ranked most-promising first."""

    size: int
    groups: list[tuple[str, ...]]
    stats: list[tuple[float, float]]  # (mean distance, variance) per group


@dataclass
class PartitionScheme:
    groups: list[tuple[str, ...]]
    m: int
    delta_p: dict[str, float]
    feasible: bool

    def covers(self, labels: Sequence[str]) -> bool:
        flat = [d for g in self.groups for d in g]
        return len(flat) == len(set(flat)) == len(set(labels)) and set(flat) == set(labels)


@dataclass
class SearchResult:
    schemes: list[PartitionScheme]
    m: int
    oracle_calls: int
    solve_calls: int
    incomplete: bool = False


@dataclass
class PipelineReport:
    result: SearchResult
    lmax: int
    lmax_calls: int
    prune_calls: dict[int, int] = field(default_factory=dict)
    level_kept: dict[int, int] = field(default_factory=dict)
    level_total: dict[int, int] = field(default_factory=dict)


def _group_key_stats(matrix: SimilarityMatrix, idx: tuple[int, ...]) -> tuple[float, float]:
    values = [float(matrix.distances[a, b]) for a, b in combinations(idx, 2)]
    mean = sum(values) / len(values)
    if math.isinf(mean):
        return mean, 0.0
    return mean, sum((v - mean) ** 2 for v in values) / len(values)


def enumerate_candidates(matrix: SimilarityMatrix, size: int, tie_epsilon: float = 0.05) -> CandidateLevel:
    """Rank all C(n, L) groups: mean distance ascending, variance within
    tie_epsilon-chained runs, lexicographic ids as the final tie-break."""
    n = matrix.n
    if size < 2 or size > n:
        raise ValidationError(f"candidate group size must be in [2, {n}], got {size}")
    ranked = []
    for combo in combinations(range(n), size):
        mean, var = _group_key_stats(matrix, combo)
        ranked.append((mean, var, tuple(matrix.labels[i] for i in combo)))
    ranked.sort(key=lambda t: (t[0], t[1], t[2]))

    # Chain consecutive entries whose means are within tie_epsilon and
    # reorder each run by (variance, ids).
    ordered: list[tuple[float, float, tuple[str, ...]]] = []
    i = 0
    while i < len(ranked):
        j = i + 1
        while j < len(ranked):
            prev, cur = ranked[j - 1][0], ranked[j][0]
            gap = 0.0 if prev == cur else cur - prev
            if gap <= tie_epsilon:
                j += 1
            else:
                break
        run = sorted(ranked[i:j], key=lambda t: (t[1], t[2]))
        ordered.extend(run)
        i = j
    return CandidateLevel(
        size=size,
        groups=[g for _, _, g in ordered],
        stats=[(m, v) for m, v, _ in ordered],
    )


def singleton_level(labels: Sequence[str]) -> CandidateLevel:
    return CandidateLevel(size=1, groups=[(lab,) for lab in labels], stats=[(0.0, 0.0)] * len(labels))


def _budget_guard(oracle: OracleInterface, cfg: SearchConfig) -> None:
    if cfg.max_oracle_calls is not None and oracle.calls >= cfg.max_oracle_calls:
        raise SearchBudgetExceeded(f"oracle call budget {cfg.max_oracle_calls} exhausted")


def find_lmax(levels: Mapping[int, CandidateLevel], oracle: OracleInterface, cfg: SearchConfig) -> int:
    """Largest group size whose top-ranked candidate verifies; >= 1 always."""
    cfg.validate()
    sizes = [s for s in levels if s >= 2]
    if not sizes:
        return 1

    def top_verifies(size: int) -> bool:
        level = levels.get(size)
        if level is None or not level.groups:
            return False
        _budget_guard(oracle, cfg)
        return delta_p(oracle, level.groups[0]) <= cfg.delta

    lo, hi = 1, max(sizes)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if top_verifies(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def prune_level(level: CandidateLevel, oracle: OracleInterface, cfg: SearchConfig) -> CandidateLevel:
    """Keep the rank prefix through the last verifiable position found by
    bisection (at most ceil(log2(count)) + 1 oracle probes)."""
    cfg.validate()
    count = len(level.groups)
    if count == 0:
        return level
    lo, hi, last = 0, count - 1, -1
    while lo <= hi:
        mid = (lo + hi) // 2
        _budget_guard(oracle, cfg)
        if delta_p(oracle, level.groups[mid]) <= cfg.delta:
            last = mid
            lo = mid + 1
        else:
            hi = mid - 1
    return CandidateLevel(size=level.size, groups=level.groups[: last + 1], stats=level.stats[: last + 1])


def _singleton_fallback(labels: Sequence[str]) -> PartitionScheme:
    groups = [(lab,) for lab in labels]
    return PartitionScheme(
        groups=groups,
        m=len(groups),
        delta_p={canonical_group_key(g): 0.0 for g in groups},
        feasible=True,
    )


def grouping_search(
    levels: Mapping[int, CandidateLevel],
    oracle: OracleInterface,
    cfg: SearchConfig,
    labels: Sequence[str],
) -> SearchResult:
    """Binary search on the group count with an exact-cover DFS per probe.

    A probe at count mid succeeds iff some mid-group exact cover of the
    suite exists using only verified candidate groups; the search converges
    to the least feasible count (feasibility of the all-singleton partition
    anchors it from above). On budget exhaustion the singleton partition is
    returned with the incomplete flag set.
    """
    cfg.validate()
    labels = list(labels)
    n = len(labels)
    if n == 0:
        raise ValidationError("empty degradation suite")
    order = {lab: i for i, lab in enumerate(labels)}
    levels = dict(levels)
    if 1 not in levels:
        levels[1] = singleton_level(labels)
    for level in levels.values():
        for g in level.groups:
            for d in g:
                if d not in order:
                    raise ValidationError(f"candidate group {g} mentions unknown degradation {d!r}")

    # Groups indexed by their first member in suite order: during DFS the
    # pivot is always the first uncovered label, and any usable group's
    # lowest-order member equals the pivot. Candidate order within a pivot:
    # level size descending, then rank.
    by_pivot: dict[str, list[tuple[str, ...]]] = {lab: [] for lab in labels}
    max_size = 1
    for size in sorted(levels, reverse=True):
        level = levels[size]
        if level.groups:
            max_size = max(max_size, size)
        for g in level.groups:
            by_pivot[min(g, key=order.__getitem__)].append(g)

    drop_memo: dict[str, float] = {}

    def verified(group: tuple[str, ...]) -> bool:
        key = canonical_group_key(group)
        if key not in drop_memo:
            _budget_guard(oracle, cfg)
            drop_memo[key] = delta_p(oracle, group)
        return drop_memo[key] <= cfg.delta

    calls_before = oracle.calls
    solve_calls = 0

    def solve(mid: int, emit_all: bool) -> list[tuple[tuple[str, ...], ...]]:
        solutions: list[tuple[tuple[str, ...], ...]] = []
        chosen: list[tuple[str, ...]] = []

        def rec(covered: frozenset[str]) -> bool:
            if len(chosen) == mid:
                if len(covered) == n:
                    solutions.append(tuple(chosen))
                    return not emit_all
                return False
            remaining = n - len(covered)
            slots = mid - len(chosen)
            if remaining < slots or remaining > slots * max_size:
                return False
            pivot = next(lab for lab in labels if lab not in covered)
            for g in by_pivot[pivot]:
                if covered.isdisjoint(g) and verified(g):
                    chosen.append(g)
                    stop = rec(covered | frozenset(g))
                    chosen.pop()
                    if stop:
                        return True
            return False

        rec(frozenset())
        return solutions

    try:
        left, right = 1, n
        found: dict[int, list] = {}
        while left < right:
            mid = (left + right) // 2
            solve_calls += 1
            sols = solve(mid, emit_all=False)
            if sols:
                right = mid
                found[mid] = sols
            else:
                left = mid + 1
        final_m = left
        sols = found.get(final_m)
        if sols is None or cfg.emit_all_solutions:
            solve_calls += 1
            sols = solve(final_m, emit_all=cfg.emit_all_solutions)
    except SearchBudgetExceeded:
        return SearchResult(
            schemes=[_singleton_fallback(labels)],
            m=n,
            oracle_calls=oracle.calls - calls_before,
            solve_calls=solve_calls,
            incomplete=True,
        )
    if not sols:
        raise RuntimeError("exact-cover search found no scheme at the converged group count")

    schemes = [
        PartitionScheme(
            groups=list(sol),
            m=final_m,
            delta_p={canonical_group_key(g): drop_memo.get(canonical_group_key(g), 0.0) for g in sol},
            feasible=True,
        )
        for sol in sols
    ]
    return SearchResult(
        schemes=schemes,
        m=final_m,
        oracle_calls=oracle.calls - calls_before,
        solve_calls=solve_calls,
    )


def verify_scheme(
    oracle: OracleInterface, cfg: SearchConfig, labels: Sequence[str], scheme: PartitionScheme
) -> bool:
    """Post-hoc check independent of search internals: exact cover + drops."""
    if not scheme.covers(labels):
        return False
    return all(delta_p(oracle, g) <= cfg.delta for g in scheme.groups)


def search_pipeline(
    matrix: SimilarityMatrix, oracle: OracleInterface, cfg: SearchConfig, prune: bool = True
) -> PipelineReport:
    """Full preprocessing + search: enumerate, L_max filter, per-level prune,
    append singletons, then the exact-cover search."""
    cfg.validate()
    labels = list(matrix.labels)
    n = len(labels)
    full = {size: enumerate_candidates(matrix, size, cfg.tie_epsilon) for size in range(2, n + 1)}

    calls0 = oracle.calls
    try:
        lmax = find_lmax(full, oracle, cfg)
    except SearchBudgetExceeded:
        result = SearchResult(
            schemes=[_singleton_fallback(labels)], m=n, oracle_calls=oracle.calls - calls0,
            solve_calls=0, incomplete=True,
        )
        return PipelineReport(result=result, lmax=1, lmax_calls=oracle.calls - calls0)
    lmax_calls = oracle.calls - calls0

    pruned: dict[int, CandidateLevel] = {}
    prune_calls: dict[int, int] = {}
    level_kept: dict[int, int] = {}
    level_total: dict[int, int] = {}
    for size in range(2, lmax + 1):
        before = oracle.calls
        try:
            pruned[size] = prune_level(full[size], oracle, cfg) if prune else full[size]
        except SearchBudgetExceeded:
            result = SearchResult(
                schemes=[_singleton_fallback(labels)], m=n, oracle_calls=oracle.calls - calls0,
                solve_calls=0, incomplete=True,
            )
            return PipelineReport(
                result=result, lmax=lmax, lmax_calls=lmax_calls,
                prune_calls=prune_calls, level_kept=level_kept, level_total=level_total,
            )
        prune_calls[size] = oracle.calls - before
        level_kept[size] = len(pruned[size].groups)
        level_total[size] = len(full[size].groups)

    pruned[1] = singleton_level(labels)
    result = grouping_search(pruned, oracle, cfg, labels)
    return PipelineReport(
        result=result,
        lmax=lmax,
        lmax_calls=lmax_calls,
        prune_calls=prune_calls,
        level_kept=level_kept,
        level_total=level_total,
    )


# --------------------------------------------------------------------------
# Brute-force validation oracle
# --------------------------------------------------------------------------


def iter_set_partitions(items: Sequence) -> Iterator[list[list]]:
    """All set partitions via restricted growth strings, canonical order."""
    n = len(items)
    if n == 0:
        yield []
        return
    a = [0] * n
    while True:
        blocks: list[list] = [[] for _ in range(max(a) + 1)]
        for item, bi in zip(items, a):
            blocks[bi].append(item)
        yield blocks
        prefix = [0] * n  # prefix[j] = max(a[:j])
        for k in range(1, n):
            prefix[k] = max(prefix[k - 1], a[k - 1])
        j = n - 1
        while j > 0 and a[j] >= prefix[j] + 1:
            j -= 1
        if j == 0:
            return
        a[j] += 1
        for k in range(j + 1, n):
            a[k] = 0


def brute_force_min_partition(
    oracle: OracleInterface, cfg: SearchConfig, labels: Sequence[str]
) -> tuple[int, list[PartitionScheme]]:
    """Enumerate every partition, filter by per-group drops, return the
    minimal group count and all minimal feasible schemes."""
    cfg.validate()
    labels = list(labels)
    n = len(labels)
    if n > BELL_GUARD_N:
        raise ValidationError(f"brute force guarded at n <= {BELL_GUARD_N}, got {n}")
    if n == 0:
        raise ValidationError("empty degradation suite")
    best_m: int | None = None
    best: list[PartitionScheme] = []
    for blocks in iter_set_partitions(labels):
        m = len(blocks)
        if best_m is not None and m > best_m:
            continue
        drops: dict[str, float] = {}
        feasible = True
        for block in blocks:
            drop = delta_p(oracle, block)
            if drop > cfg.delta:
                feasible = False
                break
            drops[canonical_group_key(block)] = drop
        if not feasible:
            continue
        if best_m is None or m < best_m:
            best_m = m
            best = []
        best.append(PartitionScheme(groups=[tuple(b) for b in blocks], m=m, delta_p=drops, feasible=True))
    assert best_m is not None  # all-singletons is always feasible
    return best_m, best

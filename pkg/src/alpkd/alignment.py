"""Alignment plans: which teacher layers feed each student layer.

A plan maps student layer j (1-based) to an ordered set of teacher layer
indices. Skip-style plans pick at most one teacher layer per student layer;
bucket plans assign contiguous groups (disjoint, or overlapping by exactly
one boundary layer); full-span plans expose every teacher layer to every
participating student layer. By default the last student layer takes no
hidden-state loss, which mirrors how these mappings are used in practice.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .errors import ConfigError


class Strategy(str, Enum):
    PKD_SKIP = "PKD_SKIP"
    BUCKET_NO = "BUCKET_NO"
    BUCKET_PO = "BUCKET_PO"
    FULL_SPAN = "FULL_SPAN"


@dataclass(frozen=True)
class AlignmentPlan:
    strategy: Strategy
    mapping: tuple[tuple[int, ...], ...]  # entry j-1 holds A(j), ascending
    n: int
    m: int

    def layer_set(self, j: int) -> tuple[int, ...]:
        return self.mapping[j - 1]

    def participating(self) -> list[int]:
        return [j for j in range(1, self.m + 1) if self.mapping[j - 1]]

    def to_string(self) -> str:
        body = ";".join(
            f"{j}:{','.join(map(str, self.mapping[j - 1]))}"
            for j in range(1, self.m + 1))
        return f"{self.strategy.value};n={self.n};m={self.m};{body}"


def plan_from_string(text: str) -> AlignmentPlan:
    try:
        parts = text.split(";")
        strategy = Strategy(parts[0])
        n = int(parts[1].split("=")[1])
        m = int(parts[2].split("=")[1])
        mapping: list[tuple[int, ...]] = [()] * m
        for chunk in parts[3:]:
            j, idx = chunk.split(":")
            mapping[int(j) - 1] = tuple(
                int(t) for t in idx.split(",")) if idx else ()
    except (ValueError, KeyError, IndexError) as exc:
        raise ConfigError(f"unparseable alignment plan {text!r}: {exc}") from exc
    return AlignmentPlan(strategy, tuple(mapping), n, m)


def _check_depths(n: int, m: int) -> None:
    if n < 1 or m < 1:
        raise ConfigError(f"need n, m >= 1, got n={n}, m={m}")


def make_pkd_plan(n: int, m: int,
                  picks: Sequence[Optional[int]]) -> AlignmentPlan:
    """Skip-style plan: each student layer matches at most one teacher layer.

    ``picks`` has one entry per student layer; None excludes that layer from
    hidden-state distillation. Present picks must be strictly increasing.
    """
    _check_depths(n, m)
    if len(picks) != m:
        raise ConfigError(f"picks has {len(picks)} entries for {m} student "
                          "layers")
    last = 0
    mapping: list[tuple[int, ...]] = []
    for j, pick in enumerate(picks, start=1):
        if pick is None:
            mapping.append(())
            continue
        if not 1 <= pick <= n:
            raise ConfigError(f"pick {pick} for student layer {j} outside "
                              f"1..{n}")
        if pick <= last:
            raise ConfigError(f"picks must be strictly increasing; layer {j} "
                              f"got {pick} after {last}")
        last = pick
        mapping.append((pick,))
    return AlignmentPlan(Strategy.PKD_SKIP, tuple(mapping), n, m)


def default_pkd_picks(n: int, m: int, include_last: bool = False) -> list[Optional[int]]:
    """First layer of each equal bucket, the empirically strong layout."""
    sizes = _bucket_sizes(n, _participating_count(m, include_last))
    picks: list[Optional[int]] = []
    start = 1
    for size in sizes:
        picks.append(start)
        start += size
    while len(picks) < m:
        picks.append(None)
    return picks


def _participating_count(m: int, include_last: bool) -> int:
    return m if include_last else m - 1


def _bucket_sizes(total: int, count: int) -> list[int]:
    if count < 1:
        raise ConfigError(f"no participating student layers (m too small "
                          f"without include_last)")
    if total < count:
        raise ConfigError(f"cannot split {total} teacher layers into {count} "
                          "buckets")
    base, extra = divmod(total, count)
    # earlier buckets absorb the remainder
    return [base + (1 if i < extra else 0) for i in range(count)]


def make_bucket_plan(n: int, m: int, overlap: str,
                     include_last: bool = False) -> AlignmentPlan:
    """Contiguous buckets of roughly equal size over all n teacher layers.

    ``overlap`` is "NO" (disjoint) or "PO" (each bucket shares its first
    layer with the preceding bucket).
    """
    _check_depths(n, m)
    overlap = overlap.upper()
    if overlap not in ("NO", "PO"):
        raise ConfigError(f"overlap must be NO or PO, got {overlap!r}")
    p = _participating_count(m, include_last)
    if overlap == "NO":
        sizes = _bucket_sizes(n, p)
        step = 1
    else:
        # each shared boundary layer occupies a slot in two buckets
        sizes = _bucket_sizes(n + max(p - 1, 0), p)
        step = 0
    mapping: list[tuple[int, ...]] = []
    start = 1
    for size in sizes:
        mapping.append(tuple(range(start, start + size)))
        start += size - 1 + step
    while len(mapping) < m:
        mapping.append(())
    strategy = Strategy.BUCKET_NO if overlap == "NO" else Strategy.BUCKET_PO
    return AlignmentPlan(strategy, tuple(mapping), n, m)


def make_full_span_plan(n: int, m: int,
                        include_last: bool = False) -> AlignmentPlan:
    """Every participating student layer attends to all n teacher layers."""
    _check_depths(n, m)
    p = _participating_count(m, include_last)
    if p < 1:
        raise ConfigError("full-span plan needs at least one participating "
                          "student layer")
    full = tuple(range(1, n + 1))
    mapping = tuple(full if j <= p else () for j in range(1, m + 1))
    return AlignmentPlan(Strategy.FULL_SPAN, mapping, n, m)


def validate(plan: AlignmentPlan) -> list[str]:
    """Check plan invariants; returns one message per violation (empty = ok).

    Skip-style plans are exempt from the union-coverage rule by definition;
    bucketed and full-span plans must cover every teacher layer.
    """
    violations: list[str] = []
    if len(plan.mapping) != plan.m:
        violations.append(f"mapping has {len(plan.mapping)} entries for "
                          f"m={plan.m}")
        return violations
    for j in range(1, plan.m + 1):
        bad = [k for k in plan.layer_set(j) if not 1 <= k <= plan.n]
        if bad:
            violations.append(f"student layer {j}: teacher indices {bad} "
                              f"outside 1..{plan.n}")

    nonempty = [(j, set(plan.layer_set(j))) for j in plan.participating()]

    if plan.strategy is Strategy.PKD_SKIP:
        for j in range(1, plan.m + 1):
            if len(plan.layer_set(j)) > 1:
                violations.append(f"student layer {j}: skip plans allow at "
                                  f"most one teacher layer, got "
                                  f"{plan.layer_set(j)}")
        return violations

    union: set[int] = set()
    for _, layers in nonempty:
        union |= layers
    missing = sorted(set(range(1, plan.n + 1)) - union)
    if missing:
        violations.append(f"teacher layers {missing} missing from the bucket "
                          "union")

    if plan.strategy is Strategy.BUCKET_NO:
        for (j1, s1), (j2, s2) in zip(nonempty, nonempty[1:]):
            shared = sorted(s1 & s2)
            if shared:
                violations.append(f"buckets not disjoint: student layers "
                                  f"{j1} and {j2} share {shared}")
    elif plan.strategy is Strategy.BUCKET_PO:
        for (j1, s1), (j2, s2) in zip(nonempty, nonempty[1:]):
            shared = sorted(s1 & s2)
            if shared != [max(s1)] or (shared and shared != [min(s2)]):
                violations.append(f"student layers {j1} and {j2} must share "
                                  f"exactly the boundary layer, share "
                                  f"{shared}")
    elif plan.strategy is Strategy.FULL_SPAN:
        full = set(range(1, plan.n + 1))
        for j, layers in nonempty:
            if layers != full:
                violations.append(f"student layer {j}: full-span plan must "
                                  f"use all 1..{plan.n}")
    return violations

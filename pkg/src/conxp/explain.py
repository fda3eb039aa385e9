"""Oracle checks, deletion-based shrinking, and the three explanation enumerators."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable

from .core import BoolMask, ModelHead, predict
from .erasure import Eraser, EraseError

Concepts = tuple[int, ...]


def canon(subset: Iterable[int]) -> Concepts:
    """Canonical form of a concept set: strictly ascending index tuple."""
    return tuple(sorted({int(i) for i in subset}))


@dataclass(frozen=True)
class Explanation:
    kind: str  # "axp" | "cxp"
    concepts: Concepts

    def __post_init__(self) -> None:
        if self.kind not in ("axp", "cxp"):
            raise ValueError(f"unknown explanation kind {self.kind!r}")
        if self.concepts != canon(self.concepts):
            raise ValueError("concepts must be strictly ascending and unique")


@dataclass(frozen=True)
class EnumBudget:
    """Search bounds: naive depth, duality-loop iterations, optional wall timeout."""

    max_depth: int = 2
    max_iterations: int = 250
    timeout: float | None = None

    def __post_init__(self) -> None:
        if self.max_depth < 1 or self.max_iterations < 1:
            raise ValueError("budget bounds must be positive")
        if self.timeout is not None and self.timeout < 0:
            raise ValueError("timeout must be nonnegative")


class Deadline:
    """Wall-clock cutoff polled between oracle calls."""

    def __init__(self, timeout: float | None) -> None:
        self._until = None if timeout is None else time.monotonic() + timeout

    def expired(self) -> bool:
        return self._until is not None and time.monotonic() >= self._until


_NEVER = Deadline(None)


@dataclass
class InstanceContext:
    """One image's embedding, its prediction, and the erase/predict oracle."""

    image_id: str
    z: object
    predicted_class: int
    eraser: Eraser
    head: ModelHead
    inexplicable: bool = field(default=False)

    @classmethod
    def build(cls, image_id: str, z, eraser: Eraser, head: ModelHead) -> "InstanceContext":
        predicted = predict(head, z)
        # SPLiCE's all-retain image is the reconstruction, which may already
        # flip the prediction; such instances carry no valid explanations.
        identity = eraser.erase(z, BoolMask.retain_all(eraser.bank.size), image_key=image_id)
        inexplicable = predict(head, identity) != predicted
        return cls(image_id, z, predicted, eraser, head, inexplicable)

    @property
    def vocab_size(self) -> int:
        return self.eraser.bank.size


def weak_axp_check(subset: Iterable[int], ctx: InstanceContext) -> bool:
    """Retain exactly `subset`, erase everything else; prediction must survive."""
    mask = BoolMask.retaining(canon(subset), ctx.vocab_size)
    r = ctx.eraser.erase(ctx.z, mask, image_key=ctx.image_id)
    return predict(ctx.head, r) == ctx.predicted_class


def weak_cxp_check(subset: Iterable[int], ctx: InstanceContext) -> bool:
    """Erase exactly `subset`, retain everything else; prediction must flip."""
    mask = BoolMask.erasing(canon(subset), ctx.vocab_size)
    r = ctx.eraser.erase(ctx.z, mask, image_key=ctx.image_id)
    return predict(ctx.head, r) != ctx.predicted_class


def check_for(kind: str) -> Callable[[Iterable[int], InstanceContext], bool]:
    return weak_axp_check if kind == "axp" else weak_cxp_check


def admissible(ctx: InstanceContext) -> bool:
    """Erasing the whole vocabulary must flip the prediction (trivial explanation)."""
    return not ctx.inexplicable and weak_cxp_check(range(ctx.vocab_size), ctx)


def shrink(
    subset: Iterable[int],
    check: Callable[[Iterable[int], InstanceContext], bool],
    ctx: InstanceContext,
    deadline: Deadline = _NEVER,
) -> Concepts:
    """Deletion-based minimization in ascending index order."""
    current = set(canon(subset))
    if not check(current, ctx):
        raise ValueError("shrink precondition: the starting set must pass the check")
    for c in canon(subset):
        if deadline.expired():
            raise TimeoutError
        trial = current - {c}
        if check(trial, ctx):
            current = trial
    return canon(current)


@dataclass(frozen=True)
class EnumResult:
    kind: str
    explanations: frozenset[Concepts]
    truncated: bool


def naive_enum(ctx: InstanceContext, kind: str, budget: EnumBudget) -> EnumResult:
    """Breadth-first candidate expansion up to the depth bound.

    Candidates are deduplicated by canonical form and supersets of confirmed
    explanations are pruned globally, so every returned set passes the weak
    check and no returned set contains another passing set.
    """
    check = check_for(kind)
    deadline = Deadline(budget.timeout)
    if deadline.expired():
        return EnumResult(kind, frozenset(), True)
    if check((), ctx):
        return EnumResult(kind, frozenset({()}), False)
    found: set[Concepts] = set()
    frontier: list[Concepts] = [()]
    n = ctx.vocab_size
    for _ in range(budget.max_depth):
        seen: set[Concepts] = set()
        next_frontier: list[Concepts] = []
        for cnd in frontier:
            for c in range(n):
                if c in cnd:
                    continue
                cand = canon(cnd + (c,))
                if cand in seen:
                    continue
                seen.add(cand)
                cand_set = set(cand)
                if any(cand_set > set(x) or cand_set == set(x) for x in found):
                    continue
                if deadline.expired():
                    return EnumResult(kind, frozenset(found), True)
                if check(cand, ctx):
                    found.add(cand)
                else:
                    next_frontier.append(cand)
        frontier = next_frontier
        if not frontier:
            break
    return EnumResult(kind, frozenset(found), False)


def find_mhs(
    cxps: Iterable[Concepts], axps: Iterable[Concepts]
) -> Concepts | None:
    """Minimum-cardinality set hitting every cxp while containing no axp.

    Ascending cardinality with lexicographic tie-break on sorted index tuples;
    None once the search space is exhausted. Padding a hitting set with extra
    elements can only create axp supersets, so candidates are drawn from the
    union of the cxp elements.
    """
    cxp_sets = [frozenset(x) for x in cxps]
    axp_sets = [frozenset(x) for x in axps]
    pool: list[int] = sorted(set().union(*cxp_sets)) if cxp_sets else []
    for k in range(len(pool) + 1):
        for combo in combinations(pool, k):
            s = frozenset(combo)
            if any(c.isdisjoint(s) for c in cxp_sets):
                continue
            if any(a <= s for a in axp_sets):
                continue
            return combo
    return None


@dataclass(frozen=True)
class XpEnumResult:
    axps: frozenset[Concepts]
    cxps: frozenset[Concepts]
    exhausted: bool


def xp_enum(ctx: InstanceContext, budget: EnumBudget) -> XpEnumResult:
    """Hitting-set duality loop: each candidate either shrinks to a new axp or
    its complement shrinks to a new cxp; exhaustion means both families are
    complete."""
    axps: set[Concepts] = set()
    cxps: set[Concepts] = set()
    deadline = Deadline(budget.timeout)
    full = canon(range(ctx.vocab_size))
    for _ in range(budget.max_iterations):
        if deadline.expired():
            return XpEnumResult(frozenset(axps), frozenset(cxps), False)
        candidate = find_mhs(cxps, axps)
        if candidate is None:
            return XpEnumResult(frozenset(axps), frozenset(cxps), True)
        try:
            if weak_axp_check(candidate, ctx):
                axps.add(shrink(candidate, weak_axp_check, ctx, deadline))
            else:
                complement = tuple(c for c in full if c not in candidate)
                cxps.add(shrink(complement, weak_cxp_check, ctx, deadline))
        except TimeoutError:
            return XpEnumResult(frozenset(axps), frozenset(cxps), False)
    return XpEnumResult(frozenset(axps), frozenset(cxps), False)


@dataclass(frozen=True)
class SaturationResult:
    per_image: dict[str, frozenset[Concepts]]
    skipped: tuple[str, ...]


def xp_sat_enum(
    ctxs: Iterable[InstanceContext],
    initial: dict[str, Iterable[Concepts]],
    kind: str,
) -> SaturationResult:
    """Cross-image saturation: pool every explanation found so far and test it
    on every other image, shrinking whatever transfers."""
    check = check_for(kind)
    ctxs = sorted(ctxs, key=lambda c: c.image_id)
    pool: set[Concepts] = set()
    for xs in initial.values():
        pool.update(canon(x) for x in xs)
    ordered_pool = sorted(pool, key=lambda x: (len(x), x))
    out: dict[str, frozenset[Concepts]] = {}
    skipped: list[str] = []
    for ctx in ctxs:
        mine = {canon(x) for x in initial.get(ctx.image_id, ())}
        try:
            for x in ordered_pool:
                if x in mine:
                    continue
                if check(x, ctx):
                    mine.add(shrink(x, check, ctx))
        except EraseError:
            skipped.append(ctx.image_id)
            continue
        out[ctx.image_id] = frozenset(mine)
    return SaturationResult(out, tuple(skipped))

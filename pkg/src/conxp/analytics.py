"""Behavior construction, signed aggregation, and the metric suite."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import BoolMask, ConceptBank, EmbeddingMatrix, ModelHead, concept_strengths, predict
from .erasure import Eraser
from .explain import Concepts, InstanceContext, admissible, canon, check_for

BEHAVIOR_CAP = 700

_SIGN_CHAR = {1: "+", -1: "-", 0: "0"}


@dataclass(frozen=True)
class Selector:
    """Image filter: correct(k) keeps true==pred==k; misclass(ki, kj) keeps
    true==ki with pred==kj."""

    kind: str  # "correct" | "misclass"
    true_class: int
    pred_class: int

    @classmethod
    def correct(cls, k: int) -> "Selector":
        return cls("correct", int(k), int(k))

    @classmethod
    def misclass(cls, true_k: int, pred_k: int) -> "Selector":
        if true_k == pred_k:
            raise ValueError("misclassification needs distinct classes")
        return cls("misclass", int(true_k), int(pred_k))

    @property
    def name(self) -> str:
        if self.kind == "correct":
            return f"correct:{self.true_class}"
        return f"misclass:{self.true_class}:{self.pred_class}"

    def accepts(self, true_class: int, pred_class: int) -> bool:
        return true_class == self.true_class and pred_class == self.pred_class


@dataclass(frozen=True)
class Behavior:
    name: str
    selector: Selector
    image_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.image_ids)


@dataclass(frozen=True, order=True)
class SignedExplanationKey:
    """Concept set plus per-concept sign; the ascending "i:s" join is the
    equality and hash key."""

    concepts: Concepts
    signs: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.concepts) != len(self.signs):
            raise ValueError("concepts and signs must align")
        if self.concepts != canon(self.concepts):
            raise ValueError("concepts must be strictly ascending and unique")
        if any(s not in (-1, 0, 1) for s in self.signs):
            raise ValueError("signs must be -1, 0, or +1")

    def canonical(self) -> str:
        return "|".join(f"{c}:{_SIGN_CHAR[s]}" for c, s in zip(self.concepts, self.signs))

    def __len__(self) -> int:
        return len(self.concepts)


def signed_key(concepts: Concepts, strengths: np.ndarray) -> SignedExplanationKey:
    concepts = canon(concepts)
    signs = tuple(int(np.sign(strengths[c])) for c in concepts)
    return SignedExplanationKey(concepts, signs)


Histogram = dict[SignedExplanationKey, int]


@dataclass(frozen=True)
class BehaviorHistograms:
    h_a: Histogram
    h_c: Histogram


@dataclass(frozen=True)
class AdmissionReport:
    selected: int
    inexplicable: int
    rejected: int
    admitted: int
    capped: int


def build_behavior(
    embeddings: EmbeddingMatrix,
    labels: Mapping[str, tuple[int, int]],
    selector: Selector,
    erasers: Sequence[Eraser],
    head: ModelHead,
    cap: int = BEHAVIOR_CAP,
    seed: int = 0,
) -> tuple[Behavior, AdmissionReport]:
    """Select, admit, and cap the images exhibiting one behavior.

    Admission requires the trivial explanation under every configured eraser:
    erasing the whole vocabulary must flip the prediction. SPLiCE-inexplicable
    images (reconstruction already flips) are rejected outright.
    """
    missing = [i for i in embeddings.image_ids if i not in labels]
    if missing:
        raise ValueError(f"labels missing for {len(missing)} images (first: {missing[0]})")
    selected = [i for i in embeddings.image_ids if selector.accepts(*labels[i])]
    admitted: list[str] = []
    inexplicable = 0
    for image_id in selected:
        z = embeddings.row(image_id)
        ctxs = [InstanceContext.build(image_id, z, er, head) for er in erasers]
        if any(c.inexplicable for c in ctxs):
            inexplicable += 1
            continue
        if all(admissible(c) for c in ctxs):
            admitted.append(image_id)
    capped = admitted
    if len(admitted) > cap:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(admitted), size=cap, replace=False)
        capped = [admitted[i] for i in sorted(picked)]
    report = AdmissionReport(
        selected=len(selected),
        inexplicable=inexplicable,
        rejected=len(selected) - inexplicable - len(admitted),
        admitted=len(admitted),
        capped=len(capped),
    )
    return Behavior(selector.name, selector, tuple(capped)), report


def aggregate(
    behavior: Behavior,
    per_image_axps: Mapping[str, Iterable[Concepts]],
    per_image_cxps: Mapping[str, Iterable[Concepts]],
    strengths_by_image: Mapping[str, np.ndarray],
) -> BehaviorHistograms:
    """Per-behavior histograms over signed explanations; each image contributes
    each of its explanations once, signed by that image's strengths."""

    def tally(per_image: Mapping[str, Iterable[Concepts]]) -> Histogram:
        h: Histogram = {}
        for image_id in behavior.image_ids:
            strengths = strengths_by_image[image_id]
            for x in set(map(canon, per_image.get(image_id, ()))):
                key = signed_key(x, strengths)
                h[key] = h.get(key, 0) + 1
        return h

    return BehaviorHistograms(tally(per_image_axps), tally(per_image_cxps))


def signed_sets_per_image(
    per_image: Mapping[str, Iterable[Concepts]],
    strengths_by_image: Mapping[str, np.ndarray],
) -> dict[str, frozenset[SignedExplanationKey]]:
    return {
        image_id: frozenset(
            signed_key(x, strengths_by_image[image_id]) for x in per_image.get(image_id, ())
        )
        for image_id in per_image
    }


def top_k(h: Histogram, k: int) -> list[SignedExplanationKey]:
    """Top k keys by descending count; ties by ascending canonical key."""
    if k < 1:
        raise ValueError("K must be positive")
    ranked = sorted(h.items(), key=lambda kv: (-kv[1], kv[0].canonical()))
    return [key for key, _ in ranked[:k]]


def gen_at_k(h_train: Histogram, h_test: Histogram, k: int) -> float:
    """IoU of the two top-k sets; defined as 0 when both histograms are empty."""
    a = set(top_k(h_train, k)) if h_train else set()
    b = set(top_k(h_test, k)) if h_test else set()
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def individual_coverage(
    h: Histogram,
    behavior: Behavior,
) -> dict[SignedExplanationKey, float]:
    """Fraction of behavior images each signed explanation applies to."""
    total = len(behavior)
    if total == 0:
        return {}
    return {key: count / total for key, count in h.items()}


def _cover_sets(
    per_image_signed: Mapping[str, frozenset[SignedExplanationKey]],
    image_ids: Iterable[str],
) -> dict[SignedExplanationKey, frozenset[str]]:
    covers: dict[SignedExplanationKey, set[str]] = {}
    for image_id in image_ids:
        for key in per_image_signed.get(image_id, ()):
            covers.setdefault(key, set()).add(image_id)
    return {k: frozenset(v) for k, v in covers.items()}


def max_cov_at_k(
    per_image_signed: Mapping[str, frozenset[SignedExplanationKey]],
    behavior: Behavior,
    k: int,
) -> tuple[list[SignedExplanationKey], list[int]]:
    """Greedy maximum coverage: repeatedly take the key with the largest
    marginal image gain (ties by ascending canonical key); returns the chosen
    keys and the cumulative covered count after each pick."""
    if k < 1:
        raise ValueError("K must be positive")
    covers = _cover_sets(per_image_signed, behavior.image_ids)
    chosen: list[SignedExplanationKey] = []
    counts: list[int] = []
    covered: set[str] = set()
    remaining = set(covers)
    for _ in range(min(k, len(covers))):
        best = min(
            remaining,
            key=lambda key: (-len(covers[key] - covered), key.canonical()),
        )
        chosen.append(best)
        covered |= covers[best]
        counts.append(len(covered))
        remaining.discard(best)
    return chosen, counts


def mixed_coverage(
    behaviors: Sequence[Behavior],
    per_image_signed: Mapping[str, frozenset[SignedExplanationKey]],
) -> dict[SignedExplanationKey, float]:
    """Individual coverage over the deduplicated union of the behaviors' images."""
    union: set[str] = set()
    for b in behaviors:
        union.update(b.image_ids)
    if not union:
        return {}
    counts: dict[SignedExplanationKey, int] = {}
    for image_id in union:
        for key in per_image_signed.get(image_id, ()):
            counts[key] = counts.get(key, 0) + 1
    return {key: c / len(union) for key, c in counts.items()}


@dataclass(frozen=True)
class ParsimonyRow:
    length: int
    count: int
    cov_min: float
    cov_q1: float
    cov_median: float
    cov_q3: float
    cov_max: float


def parsimony_stats(h: Histogram, behavior: Behavior) -> list[ParsimonyRow]:
    """Distribution of individual coverage grouped by explanation length."""
    coverage = individual_coverage(h, behavior)
    by_length: dict[int, list[float]] = {}
    for key, cov in coverage.items():
        by_length.setdefault(len(key), []).append(cov)
    rows = []
    for length in sorted(by_length):
        covs = np.asarray(by_length[length])
        q1, med, q3 = np.percentile(covs, [25, 50, 75])
        rows.append(
            ParsimonyRow(
                length=length,
                count=len(covs),
                cov_min=float(covs.min()),
                cov_q1=float(q1),
                cov_median=float(med),
                cov_q3=float(q3),
                cov_max=float(covs.max()),
            )
        )
    return rows


def cumulative_coverage_at_length(h: Histogram, behavior: Behavior, k: int) -> float:
    """Share of total individual coverage carried by explanations of length <= k."""
    coverage = individual_coverage(h, behavior)
    total = sum(coverage.values())
    if total == 0.0:
        return 0.0
    short = sum(cov for key, cov in coverage.items() if len(key) <= k)
    return short / total


@dataclass(frozen=True)
class RelevanceLabels:
    """Total map concept index -> relevant? for one behavior."""

    relevant: frozenset[int]
    vocab_size: int

    def __post_init__(self) -> None:
        if any(i < 0 or i >= self.vocab_size for i in self.relevant):
            raise IndexError("relevance label outside vocabulary")

    def is_relevant(self, index: int) -> bool:
        if not 0 <= index < self.vocab_size:
            raise IndexError(f"concept index {index} outside vocabulary")
        return index in self.relevant


def plausibility(
    key: SignedExplanationKey, labels: RelevanceLabels
) -> tuple[float, str]:
    """Validity ratio and category.

    A concept is valid when positively present and relevant, or negatively
    present and irrelevant; exact-zero signs count invalid. Empty keys are
    vacuously fully plausible.
    """
    if len(key) == 0:
        return 1.0, "full"
    valid = 0
    for c, s in zip(key.concepts, key.signs):
        rel = labels.is_relevant(c)
        if (s == 1 and rel) or (s == -1 and not rel):
            valid += 1
    ratio = valid / len(key)
    if ratio == 1.0:
        category = "full"
    elif ratio == 0.0:
        category = "implausible"
    else:
        category = "partial"
    return ratio, category


@dataclass(frozen=True)
class BehaviorInstances:
    """Everything the empirical tests need about one behavior's images."""

    ctxs: dict[str, InstanceContext]
    axps: dict[str, frozenset[Concepts]]
    cxps: dict[str, frozenset[Concepts]]


@dataclass(frozen=True)
class MonotonicityResult:
    o_a: float | None
    o_c: float | None
    skipped_axps: tuple[Concepts, ...]
    skipped_cxps: tuple[Concepts, ...]


def monotonicity_test(
    instances: BehaviorInstances,
    top_axps: Sequence[Concepts],
    top_cxps: Sequence[Concepts],
    n_top: int,
    n_images: int,
    n_added: int,
    seed: int = 0,
) -> MonotonicityResult:
    """Empirical monotonicity rates.

    For each of the first n_top explanations pick n_images holders, then add
    n_added random concepts one at a time and record whether the relaxed set
    still passes the weak check; O is the mean pass rate as a percentage.
    Explanations with fewer than n_images holders are skipped and reported.
    """
    if n_top < 1 or n_images < 1 or n_added < 1:
        raise ValueError("N, L, and m must all be positive")
    rng = np.random.default_rng(seed)

    def run(kind: str, top: Sequence[Concepts], per_image) -> tuple[float | None, tuple]:
        check = check_for(kind)
        outcomes: list[bool] = []
        skipped: list[Concepts] = []
        for x in [canon(t) for t in top[:n_top]]:
            holders = sorted(i for i, xs in per_image.items() if x in xs)
            if len(holders) < n_images:
                skipped.append(x)
                continue
            picked = rng.choice(len(holders), size=n_images, replace=False)
            for idx in sorted(picked):
                ctx = instances.ctxs[holders[idx]]
                grown = set(x)
                rest = [c for c in range(ctx.vocab_size) if c not in grown]
                take = min(n_added, len(rest))
                extras = rng.choice(len(rest), size=take, replace=False)
                for e in extras:
                    grown.add(rest[e])
                    outcomes.append(check(grown, ctx))
        rate = None if not outcomes else 100.0 * sum(outcomes) / len(outcomes)
        return rate, tuple(skipped)

    o_a, skipped_a = run("axp", top_axps, instances.axps)
    o_c, skipped_c = run("cxp", top_cxps, instances.cxps)
    return MonotonicityResult(o_a, o_c, skipped_a, skipped_c)


def vocab_alpha_test(
    images: EmbeddingMatrix,
    bank: ConceptBank,
    head: ModelHead,
    prefix_sizes: Sequence[int],
    eraser_factory: Callable[[ConceptBank], Eraser],
) -> dict[int, float]:
    """Fraction of images whose prediction flips when every concept of each
    prefix vocabulary is erased; SPLiCE-inexplicable images never count as
    flipped."""
    if len(images) == 0:
        raise ValueError("alpha test needs at least one image")
    out: dict[int, float] = {}
    for size in prefix_sizes:
        if not 1 <= size <= bank.size:
            raise ValueError(f"prefix size {size} outside [1, {bank.size}]")
        sub = bank.subset(range(size))
        eraser = eraser_factory(sub)
        none_mask = BoolMask(np.zeros(size, dtype=bool))
        flipped = 0
        for image_id, z in zip(images.image_ids, images.data):
            base = predict(head, z)
            identity = eraser.erase(z, BoolMask.retain_all(size), image_key=image_id)
            if predict(head, identity) != base:
                continue
            erased = eraser.erase(z, none_mask, image_key=image_id)
            if predict(head, erased) != base:
                flipped += 1
        out[size] = flipped / len(images)
    return out


def vocab_order_by_strength(embeddings: EmbeddingMatrix, bank: ConceptBank) -> list[int]:
    """Concept indices sorted by descending mean absolute strength over the
    dataset; ties by ascending index."""
    strengths = np.vstack([concept_strengths(z, bank).values for z in embeddings.data])
    mean_abs = np.abs(strengths).mean(axis=0)
    return sorted(range(bank.size), key=lambda i: (-mean_abs[i], i))


def vocab_prune_similar(
    bank: ConceptBank,
    frequency_rank: Sequence[int],
    threshold: float = 0.9,
) -> tuple[ConceptBank, tuple[int, ...]]:
    """Drop the less frequent member of every concept pair whose cosine
    exceeds the threshold; one stable pass over pairs by descending similarity.

    frequency_rank[i] is concept i's position in the frequency order (0 most
    frequent). Returns the pruned bank and the kept indices.
    """
    if len(frequency_rank) != bank.size:
        raise ValueError("frequency ranks must cover the vocabulary")
    norms = np.linalg.norm(bank.C, axis=0)
    cos = (bank.C.T @ bank.C) / np.outer(norms, norms)
    pairs = [
        (float(cos[i, j]), i, j)
        for i in range(bank.size)
        for j in range(i + 1, bank.size)
        if cos[i, j] > threshold
    ]
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    alive = [True] * bank.size
    for _, i, j in pairs:
        if alive[i] and alive[j]:
            drop = i if frequency_rank[i] > frequency_rank[j] else j
            alive[drop] = False
    kept = tuple(i for i in range(bank.size) if alive[i])
    return bank.subset(kept), kept

from __future__ import annotations

import numpy as np
import pytest

from conxp import (
    ConceptBank,
    EnumBudget,
    Eraser,
    InstanceContext,
    ModelHead,
    admissible,
    find_mhs,
    naive_enum,
    shrink,
    weak_axp_check,
    weak_cxp_check,
    xp_enum,
    xp_sat_enum,
)

from conftest import BitsWorld, random_monotone_world, random_nonmonotone_world
from oracles import is_minimal_hitting_set, minimal_passing_sets, original_definition_cxps


def or_and_world() -> BitsWorld:
    # prediction preserved iff c0 retained OR (c1 AND c2 retained)
    return BitsWorld(np.array([[2.0, 1.0, 1.0], [0.0, 0.0, 0.0]]), np.array([0.0, 1.5]))


def needs_c0_world() -> BitsWorld:
    return BitsWorld(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), np.array([0.0, 0.5]))


def brute_minimal(world: BitsWorld, ctx, kind: str) -> set[tuple[int, ...]]:
    k = world.pred_bits(np.ones(world.n))

    def passes(s: frozenset) -> bool:
        bits = np.zeros(world.n)
        if kind == "axp":
            for j in s:
                bits[j] = 1.0
            return world.pred_bits(bits) == k
        bits = np.ones(world.n)
        for j in s:
            bits[j] = 0.0
        return world.pred_bits(bits) != k

    return minimal_passing_sets(world.n, passes)


class TestWeakChecks:
    def test_full_vocabulary_is_weak_axp(self):
        ctx = or_and_world().ctx()
        assert weak_axp_check({0, 1, 2}, ctx)

    def test_monotone_requires_c0(self):
        ctx = needs_c0_world().ctx()
        assert weak_axp_check({0}, ctx)
        assert not weak_axp_check(set(), ctx)
        assert not weak_axp_check({1, 2}, ctx)

    def test_cxp_of_empty_set_is_false(self):
        ctx = or_and_world().ctx()
        assert not weak_cxp_check(set(), ctx)

    def test_cxp_of_full_vocab_on_admitted_instance(self):
        ctx = or_and_world().ctx()
        assert admissible(ctx)
        assert weak_cxp_check({0, 1, 2}, ctx)

    def test_cxp_monotone_example(self):
        ctx = needs_c0_world().ctx()
        assert weak_cxp_check({0}, ctx)
        assert not weak_cxp_check({1, 2}, ctx)

    def test_checks_against_brute_force_table(self, rng):
        for _ in range(10):
            world = random_monotone_world(rng, n=4)
            ctx = world.ctx()
            k = ctx.predicted_class
            for mask in range(2**4):
                retained = {i for i in range(4) if (mask >> i) & 1}
                bits = np.array([1.0 if i in retained else 0.0 for i in range(4)])
                expected = world.pred_bits(bits) == k
                assert weak_axp_check(retained, ctx) == expected
                erased = set(range(4)) - retained
                assert weak_cxp_check(erased, ctx) == (not expected)


class TestShrink:
    def test_drops_redundant_concept(self):
        ctx = needs_c0_world().ctx()
        assert shrink({0, 1}, weak_axp_check, ctx) == (0,)

    def test_already_minimal_unchanged(self):
        ctx = or_and_world().ctx()
        assert shrink({1, 2}, weak_axp_check, ctx) == (1, 2)

    def test_two_individually_sufficient_keeps_later(self):
        # pred preserved iff c0 OR c1: the ascending scan drops 0 first, then
        # cannot drop 1
        world = BitsWorld(np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([0.0, 0.5]))
        ctx = world.ctx()
        assert weak_axp_check({0}, ctx) and weak_axp_check({1}, ctx)
        assert shrink({0, 1}, weak_axp_check, ctx) == (1,)

    def test_precondition_enforced(self):
        ctx = needs_c0_world().ctx()
        with pytest.raises(ValueError):
            shrink({1}, weak_axp_check, ctx)


class TestNaiveEnum:
    def test_worked_axp_example(self):
        ctx = or_and_world().ctx()
        res = naive_enum(ctx, "axp", EnumBudget(max_depth=2))
        assert res.explanations == {(0,), (1, 2)}
        assert not res.truncated

    def test_worked_cxp_example(self):
        ctx = or_and_world().ctx()
        res = naive_enum(ctx, "cxp", EnumBudget(max_depth=2))
        assert res.explanations == {(0, 1), (0, 2)}

    def test_depth_bound_hides_deep_explanations(self):
        # pred preserved iff all three retained: the only axp has size 3
        world = BitsWorld(np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]), np.array([0.0, 2.5]))
        ctx = world.ctx()
        assert naive_enum(ctx, "axp", EnumBudget(max_depth=2)).explanations == frozenset()
        assert naive_enum(ctx, "axp", EnumBudget(max_depth=3)).explanations == {(0, 1, 2)}

    def test_empty_set_passing_returns_empty_set_only(self):
        # head ignores all concepts: prediction survives total erasure
        world = BitsWorld(np.zeros((2, 3)), np.array([1.0, 0.0]))
        ctx = world.ctx()
        assert not admissible(ctx)
        res = naive_enum(ctx, "axp", EnumBudget(max_depth=2))
        assert res.explanations == {()}
        # and no concept set can flip it
        assert naive_enum(ctx, "cxp", EnumBudget(max_depth=3)).explanations == frozenset()

    def test_timeout_zero_truncates(self):
        ctx = or_and_world().ctx()
        res = naive_enum(ctx, "axp", EnumBudget(max_depth=2, timeout=0.0))
        assert res.truncated and res.explanations == frozenset()

    def test_matches_brute_force_at_full_depth(self, rng):
        for _ in range(10):
            world = random_monotone_world(rng, n=5)
            ctx = world.ctx()
            for kind in ("axp", "cxp"):
                res = naive_enum(ctx, kind, EnumBudget(max_depth=5))
                assert res.explanations == brute_minimal(world, ctx, kind)

    def test_soundness_and_one_minimality(self, rng):
        for _ in range(5):
            world = random_monotone_world(rng, n=5)
            ctx = world.ctx()
            for kind, check in (("axp", weak_axp_check), ("cxp", weak_cxp_check)):
                for x in naive_enum(ctx, kind, EnumBudget(max_depth=5)).explanations:
                    assert check(x, ctx)
                    for c in x:
                        assert not check(set(x) - {c}, ctx)


class TestFindMhs:
    def test_singletons_force_union(self):
        assert find_mhs([(0,), (1,)], []) == (0, 1)

    def test_shared_element_wins(self):
        assert find_mhs([(0, 1), (1, 2)], []) == (1,)

    def test_axp_supersets_excluded(self):
        assert find_mhs([(0, 1)], [(0,), (1,)]) is None

    def test_empty_cxps_gives_empty_set(self):
        assert find_mhs([], []) == ()

    def test_lexicographic_tie_break(self):
        assert find_mhs([(0, 1)], []) == (0,)
        assert find_mhs([(1, 2), (2, 3)], []) == (2,)

    def test_exhaustive_minimum_cardinality(self, rng):
        from itertools import combinations

        for _ in range(20):
            n = 6
            fam = [
                tuple(sorted(rng.choice(n, size=rng.integers(1, 4), replace=False)))
                for _ in range(int(rng.integers(1, 6)))
            ]
            got = find_mhs(fam, [])
            assert got is not None
            sets = [frozenset(f) for f in fam]
            assert all(not s.isdisjoint(got) for s in sets)
            for size in range(len(got)):
                for combo in combinations(range(n), size):
                    assert any(s.isdisjoint(combo) for s in sets)


class TestXpEnum:
    def test_matches_naive_on_worked_example(self):
        ctx = or_and_world().ctx()
        res = xp_enum(ctx, EnumBudget(max_iterations=1000))
        assert res.exhausted
        assert res.axps == {(0,), (1, 2)}
        assert res.cxps == {(0, 1), (0, 2)}

    def test_single_iteration_yields_one_explanation(self):
        ctx = or_and_world().ctx()
        res = xp_enum(ctx, EnumBudget(max_iterations=1))
        assert not res.exhausted
        assert len(res.axps) + len(res.cxps) == 1

    def test_first_explanation_is_shrunk_full_vocab_cxp(self):
        ctx = or_and_world().ctx()
        res = xp_enum(ctx, EnumBudget(max_iterations=1))
        # empty candidate fails the axp check on an admitted instance, so the
        # first find shrinks the whole vocabulary to a cxp
        assert res.axps == frozenset()
        (cxp,) = res.cxps
        assert weak_cxp_check(cxp, ctx)

    def test_timeout_zero(self):
        ctx = or_and_world().ctx()
        res = xp_enum(ctx, EnumBudget(max_iterations=10, timeout=0.0))
        assert not res.exhausted
        assert res.axps == frozenset() and res.cxps == frozenset()

    def test_complete_enumeration_matches_brute_force(self, rng):
        for _ in range(10):
            world = random_monotone_world(rng, n=5)
            ctx = world.ctx()
            res = xp_enum(ctx, EnumBudget(max_iterations=10_000))
            assert res.exhausted
            assert res.axps == brute_minimal(world, ctx, "axp")
            assert res.cxps == brute_minimal(world, ctx, "cxp")

    def test_duality_on_complete_runs(self, rng):
        for _ in range(10):
            world = random_monotone_world(rng, n=5)
            res = xp_enum(world.ctx(), EnumBudget(max_iterations=10_000))
            assert res.exhausted
            cxp_sets = [frozenset(x) for x in res.cxps]
            axp_sets = [frozenset(x) for x in res.axps]
            for a in axp_sets:
                assert is_minimal_hitting_set(a, cxp_sets)
            for c in cxp_sets:
                assert is_minimal_hitting_set(c, axp_sets)

    def test_deterministic_across_runs(self, rng):
        world = random_monotone_world(rng, n=6)
        first = xp_enum(world.ctx(), EnumBudget(max_iterations=10_000))
        second = xp_enum(world.ctx(), EnumBudget(max_iterations=10_000))
        assert first == second


class TestSimplifiedCxpEquivalence:
    def test_simplified_cxps_equal_original_definition(self, rng):
        for _ in range(10):
            world = random_nonmonotone_world(rng, n=5)
            ctx = world.ctx()
            res = naive_enum(ctx, "cxp", EnumBudget(max_depth=5))
            expected = original_definition_cxps(
                world.n, world.pred_bits, ctx.predicted_class
            )
            assert res.explanations == expected


class TestXpSatEnum:
    def test_symmetric_images_share_everything(self):
        world = or_and_world()
        ctxs = [world.ctx("a"), world.ctx("b")]
        result = xp_sat_enum(ctxs, {"a": {(0,)}, "b": {(1, 2)}}, "axp")
        assert result.per_image["a"] == {(0,), (1, 2)}
        assert result.per_image["b"] == {(0,), (1, 2)}
        assert result.skipped == ()

    def test_transferred_explanation_is_shrunk(self):
        # class-0 score is 2 z0 b0 + z1 b1 against a 1.5 threshold: image "easy"
        # needs only c0, image "hard" needs both
        W = np.array([[2.0, 1.0], [0.0, 0.0]])
        b = np.array([0.0, 1.5])
        bank = ConceptBank(["c0", "c1"], np.eye(2))
        head = ModelHead("linear", ["k0", "k1"], W=W, b=b)
        easy = InstanceContext.build("easy", np.array([1.0, 1.0]), Eraser("ortho", bank), head)
        hard = InstanceContext.build("hard", np.array([0.5, 1.2]), Eraser("ortho", bank), head)
        result = xp_sat_enum([easy, hard], {"hard": {(0, 1)}}, "axp")
        assert result.per_image["easy"] == {(0,)}
        assert result.per_image["hard"] == {(0, 1)}

    def test_invalid_pooled_explanation_leaves_image_unchanged(self):
        ctx_a = needs_c0_world().ctx("a")
        ctx_b = needs_c0_world().ctx("b")
        result = xp_sat_enum([ctx_a, ctx_b], {"a": {(1,)}}, "cxp")
        # (1,) is no cxp for either image (only c0 matters), so nothing moves
        assert result.per_image["a"] == {(1,)}
        assert result.per_image["b"] == frozenset()

    def test_outputs_are_supersets_of_inputs(self, rng):
        world = random_monotone_world(rng, n=4)
        ctxs = [world.ctx(f"v{i}") for i in range(3)]
        initial = {
            "v0": set(naive_enum(ctxs[0], "axp", EnumBudget(max_depth=2)).explanations),
        }
        result = xp_sat_enum(ctxs, initial, "axp")
        assert initial["v0"] <= result.per_image["v0"]


class TestBudgetValidation:
    def test_positive_bounds_required(self):
        with pytest.raises(ValueError):
            EnumBudget(max_depth=0)
        with pytest.raises(ValueError):
            EnumBudget(max_iterations=0)


class TestExplanationType:
    def test_canonical_form_enforced(self):
        from conxp import Explanation

        x = Explanation("axp", (0, 2, 5))
        assert x == Explanation("axp", (0, 2, 5))
        with pytest.raises(ValueError):
            Explanation("axp", (2, 0))
        with pytest.raises(ValueError):
            Explanation("axp", (0, 0))
        with pytest.raises(ValueError):
            Explanation("why", (0,))


class TestInstanceContext:
    def test_splice_reconstruction_flip_is_inexplicable(self):
        # the sparse reconstruction lives on the concept axis while the
        # prediction hinges on the orthogonal coordinate, so the all-retain
        # image already flips
        bank = ConceptBank(["c0"], np.array([[1.0], [0.0]]))
        head = ModelHead(
            "linear", ["k0", "k1"], W=np.array([[0.0, 1.0], [1.0, 0.0]]), b=np.zeros(2)
        )
        z = np.array([0.3, 1.0])
        ctx = InstanceContext.build("v", z, Eraser("splice", bank), head)
        assert ctx.predicted_class == 0
        assert ctx.inexplicable
        assert not admissible(ctx)

    def test_ortho_never_inexplicable(self):
        ctx = or_and_world().ctx()
        assert not ctx.inexplicable

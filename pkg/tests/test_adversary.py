"""Adversarial lower-bound family: construction, expectation, empirics."""

from __future__ import annotations

import math
import random

import pytest

from chunkselect.adversary import (
    asymptotic_ratio_limit,
    build_family,
    empirical_competitive_ratio,
    expected_ratio,
    expected_ratio_bound,
    expected_ratio_direct,
    materialize,
    normalization_scale,
    opt_value,
)
from chunkselect.model import hard_violations, validate_instance

UNIT_E_HALF = build_family(1.0, math.e, eta=0.5, budget_units=10)


class TestBuildFamily:
    def test_unit_e_eta_half(self):
        """L=1, U=e, eta=0.5: three tiers with the top one weighted (1+eta)/H."""
        family = UNIT_E_HALF
        assert family.k == 2
        assert family.harmonic_denominator == pytest.approx(2.5, rel=1e-15)
        assert family.probabilities == pytest.approx((0.2, 0.2, 0.6), rel=1e-12)

    def test_probabilities_sum_to_one(self):
        rng = random.Random(30)
        for _ in range(200):
            lo = 10 ** rng.uniform(-2, 2)
            hi = lo * 10 ** rng.uniform(0.05, 3)
            family = build_family(lo, hi, eta=10 ** rng.uniform(-3, 0.5), budget_units=5)
            assert math.fsum(family.probabilities) == pytest.approx(1.0, abs=1e-12)

    def test_exact_power_boundary_included(self):
        # U/L = 4 with eta = 1 sits exactly on (1+eta)^2; k must be 2, not 1.
        family = build_family(1.0, 4.0, eta=1.0, budget_units=5)
        assert family.k == 2

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            build_family(1.0, 2.0, eta=0.0, budget_units=5)
        with pytest.raises(ValueError):
            build_family(1.0, 2.0, eta=-1.0, budget_units=5)
        with pytest.raises(ValueError):
            build_family(2.0, 1.0, eta=0.5, budget_units=5)
        with pytest.raises(ValueError):
            build_family(1.0, 2.0, eta=0.5, budget_units=0)

    def test_span_below_one_step_gives_single_tier(self):
        family = build_family(1.0, 1.2, eta=0.5, budget_units=5)
        assert family.k == 0
        assert family.probabilities == pytest.approx((1.0,))


class TestOptValue:
    def test_geometric_ladder(self):
        family = build_family(1.0, math.e, eta=0.5, budget_units=10)
        assert opt_value(family, 0) == pytest.approx(10.0)
        assert opt_value(family, 1) == pytest.approx(15.0)
        assert opt_value(family, 2) == pytest.approx(22.5)

    def test_index_range_checked(self):
        with pytest.raises(ValueError):
            opt_value(UNIT_E_HALF, 3)
        with pytest.raises(ValueError):
            opt_value(UNIT_E_HALF, -1)


class TestExpectedRatio:
    def test_all_in_on_top_tier(self):
        assert expected_ratio(UNIT_E_HALF, (0.0, 0.0, 1.0)) == pytest.approx(0.6)

    def test_spending_nothing_achieves_nothing(self):
        assert expected_ratio(UNIT_E_HALF, (0.0, 0.0, 0.0)) == 0.0

    def test_closed_form_equals_direct_sum(self):
        """Two independent evaluation routes must agree on random splits."""
        rng = random.Random(31)
        for _ in range(300):
            eta = 10 ** rng.uniform(-2, 0.3)
            family = build_family(1.0, 10 ** rng.uniform(0.1, 2), eta, 5)
            raw = [rng.random() for _ in range(family.k + 1)]
            total = sum(raw) or 1.0
            shares = [x / total * rng.uniform(0.0, 1.0) for x in raw]
            closed = expected_ratio(family, shares)
            direct = expected_ratio_direct(family, shares)
            assert closed == pytest.approx(direct, abs=1e-12)

    def test_no_split_beats_the_ceiling(self):
        rng = random.Random(32)
        family = build_family(1.0, 50.0, eta=0.25, budget_units=5)
        ceiling = expected_ratio_bound(family)
        for _ in range(2000):
            raw = [rng.random() for _ in range(family.k + 1)]
            total = sum(raw)
            shares = [x / total for x in raw]
            assert expected_ratio(family, shares) <= ceiling + 1e-9

    def test_share_validation(self):
        with pytest.raises(ValueError):
            expected_ratio(UNIT_E_HALF, (1.0, 1.0))  # wrong length
        with pytest.raises(ValueError):
            expected_ratio(UNIT_E_HALF, (0.5, -0.1, 0.5))
        with pytest.raises(ValueError):
            expected_ratio(UNIT_E_HALF, (0.5, 0.5, 0.5))  # sums past 1

    def test_small_eta_approaches_harmonic_limit(self):
        family = build_family(1.0, math.e, eta=1e-4, budget_units=5)
        assert asymptotic_ratio_limit(family) == pytest.approx(0.5, rel=1e-12)
        assert expected_ratio_bound(family) == pytest.approx(0.5, abs=1e-3)


class TestMaterialize:
    def test_instances_pass_validation(self):
        for m in range(UNIT_E_HALF.k + 1):
            with pytest.warns(UserWarning):  # budget_units=10 is small
                inst = materialize(UNIT_E_HALF, m)
            assert hard_violations(validate_instance(inst)) == []

    def test_shape_and_scaling(self):
        family = build_family(1.0, math.e, eta=0.5, budget_units=150)
        inst = materialize(family, 2)
        assert len(inst.prompts) == 3 * 150
        # The top tier is rescaled to relevance exactly 1.
        top = max(c.relevance for p in inst.prompts for c in p.candidates)
        assert top == pytest.approx(1.0, rel=1e-12)
        # The budget affords exactly budget_units unit purchases.
        price = inst.prompts[0].candidates[0].price
        assert inst.budget == pytest.approx(150 * price, rel=1e-12)

    def test_tier_ratios_follow_the_ladder(self):
        family = build_family(1.0, math.e, eta=0.5, budget_units=120)
        inst = materialize(family, 2)
        by_tier = {}
        for p in inst.prompts:
            cand = p.candidates[0]
            by_tier.setdefault(cand.source_id, cand.ratio)
        assert by_tier["tier-00"] == pytest.approx(1.0, rel=1e-12)
        assert by_tier["tier-01"] == pytest.approx(1.5, rel=1e-12)
        assert by_tier["tier-02"] == pytest.approx(2.25, rel=1e-12)

    def test_small_budget_units_warn(self):
        with pytest.warns(UserWarning, match="budget_units"):
            materialize(UNIT_E_HALF, 0)


class TestEmpiricalRatio:
    def test_threshold_policy_clears_its_guarantee(self):
        """The threshold policy's mean ratio stays above 1/(ln(U/L)+2)
        minus sampling noise, on a family with a meaningful span."""
        family = build_family(1.0, 20.0, eta=0.2, budget_units=400)
        floor = 1.0 / (math.log(20.0) + 2.0)
        result = empirical_competitive_ratio(family, samples=60, seed=9)
        assert result.samples == 60
        assert result.mean >= floor - 2 * result.stderr

    def test_reproducible_for_fixed_seed(self):
        family = build_family(1.0, 8.0, eta=0.5, budget_units=200)
        a = empirical_competitive_ratio(family, samples=20, seed=4)
        b = empirical_competitive_ratio(family, samples=20, seed=4)
        assert a == b

    def test_sample_count_validated(self):
        with pytest.raises(ValueError):
            empirical_competitive_ratio(UNIT_E_HALF, samples=0)

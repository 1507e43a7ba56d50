"""Online policies: threshold math, per-policy decision rules, safety."""

from __future__ import annotations

import math
import random

import pytest

from chunkselect.model import Candidate, Decision, Instance, PromptArrival
from chunkselect.selectors import (
    BudgetExceededError,
    SelectorState,
    ThresholdParams,
    budget_balance_step,
    low_regime_end,
    make_selector,
    make_stepper,
    open_budget_step,
    psi,
    random_step,
    relevance_greedy_step,
    ucosa_step,
)
from conftest import make_random_instance

UNIT_E = ThresholdParams(1.0, math.e)


def _arrival(*cands: tuple[float, float]) -> PromptArrival:
    return PromptArrival(
        "p",
        tuple(
            Candidate(f"c{i}", "s", r, p) for i, (r, p) in enumerate(cands)
        ),
    )


class TestPsi:
    def test_endpoints_unit_e(self):
        """For L=1, U=e the threshold runs from 1/e to e."""
        assert psi(0.0, UNIT_E) == pytest.approx(1.0 / math.e, rel=1e-15)
        assert psi(1.0, UNIT_E) == pytest.approx(math.e, rel=1e-15)

    def test_crosses_lower_bound_at_regime_boundary(self):
        # g = 1/(1 + ln(U/L)); for U/L = e that is exactly 1/2.
        g = low_regime_end(UNIT_E)
        assert g == pytest.approx(0.5, rel=1e-15)
        assert psi(0.5, UNIT_E) == pytest.approx(1.0, rel=1e-12)

    def test_endpoint_identities_hold_across_parameter_space(self):
        rng = random.Random(11)
        for _ in range(500):
            lo = 10 ** rng.uniform(-3, 3)
            hi = lo * 10 ** rng.uniform(math.log10(1.01), 4)
            params = ThresholdParams(lo, hi)
            assert psi(0.0, params) == pytest.approx(lo / math.e, rel=1e-12)
            assert psi(1.0, params) == pytest.approx(hi, rel=1e-12)
            g = low_regime_end(params)
            assert psi(g, params) == pytest.approx(lo, rel=1e-12)

    def test_strictly_increasing(self):
        rng = random.Random(12)
        for _ in range(500):
            lo = 10 ** rng.uniform(-2, 2)
            params = ThresholdParams(lo, lo * 10 ** rng.uniform(0.01, 3))
            z1, z2 = sorted((rng.random(), rng.random()))
            if z1 == z2:
                continue
            assert psi(z1, params) < psi(z2, params)

    def test_low_regime_filters_nothing(self):
        """Below the regime boundary the threshold sits at or under L."""
        rng = random.Random(13)
        for _ in range(500):
            lo = 10 ** rng.uniform(-2, 2)
            params = ThresholdParams(lo, lo * 10 ** rng.uniform(0.01, 3))
            z = rng.uniform(0.0, low_regime_end(params))
            assert psi(z, params) <= lo * (1 + 1e-12)

    def test_domain_errors(self):
        for z in (-0.001, 1.001, math.nan):
            with pytest.raises(ValueError):
                psi(z, UNIT_E)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ThresholdParams(0.0, 1.0)
        with pytest.raises(ValueError):
            ThresholdParams(2.0, 1.0)
        with pytest.raises(ValueError):
            ThresholdParams(1.0, math.inf)
        with pytest.raises(ValueError):
            ThresholdParams(-1.0, 1.0)


class TestSelectorState:
    def test_budget_validation(self):
        with pytest.raises(ValueError):
            SelectorState(-1.0)
        with pytest.raises(ValueError):
            SelectorState(math.nan)

    def test_z_pinned_for_unconstrained_budgets(self):
        assert SelectorState(math.inf).z == 0.0
        assert SelectorState(0.0).z == 0.0

    def test_z_is_spent_over_budget(self):
        state = SelectorState(4.0)
        state.spent = 1.0
        assert state.z == 0.25
        assert state.remaining == 3.0

    def test_record_backstop_raises_past_budget(self):
        state = SelectorState(1.0)
        cand = Candidate("c", "s", 0.9, 2.0)
        with pytest.raises(BudgetExceededError):
            state.record(Decision("p", cand, 0.0))
        # Nothing was recorded or charged.
        assert state.spent == 0.0
        assert state.decisions == []


class TestUcosaStep:
    def test_worked_midpoint_example(self):
        """At z=0.5 with L=1, U=e the threshold is 1: ratios 1.25 and 1.143
        qualify, ratio 0.9 does not, and the most relevant qualifier wins."""
        state = SelectorState(100.0)
        state.spent = 50.0
        arrival = _arrival((0.9, 1.0), (0.5, 0.4), (0.8, 0.7))
        decision = ucosa_step(state, arrival, UNIT_E)
        assert decision.enriched
        assert decision.candidate.relevance == 0.8
        assert decision.candidate.price == 0.7
        assert decision.z_at_decision == 0.5
        assert state.spent == pytest.approx(50.7, rel=1e-15)

    def test_empty_candidates_pass_through(self):
        state = SelectorState(100.0)
        decision = ucosa_step(state, PromptArrival("p", ()), UNIT_E)
        assert not decision.enriched
        assert state.spent == 0.0

    def test_exhausted_budget_forces_passthrough(self):
        """At z=1 the guard blocks even a ratio-exactly-U candidate."""
        state = SelectorState(100.0)
        state.spent = 100.0
        arrival = _arrival((math.e * 0.1, 0.1))  # ratio exactly U
        decision = ucosa_step(state, arrival, UNIT_E)
        assert not decision.enriched
        assert state.spent == 100.0

    def test_unaffordable_candidate_excluded_by_guard(self):
        # Ratio clears the threshold but the price exceeds what is left.
        state = SelectorState(1.0)
        state.spent = 0.5
        arrival = _arrival((0.9, 0.6), (0.4, 0.4))
        decision = ucosa_step(state, arrival, UNIT_E)
        assert decision.candidate.relevance == 0.4

    def test_z_read_before_the_decision(self):
        state = SelectorState(10.0)
        first = ucosa_step(state, _arrival((0.9, 1.0)), UNIT_E)
        second = ucosa_step(state, _arrival((0.9, 1.0)), UNIT_E)
        assert first.z_at_decision == 0.0
        assert second.z_at_decision == pytest.approx(0.1)

    def test_threshold_tightens_after_each_purchase(self):
        state = SelectorState(5.0)
        previous = psi(state.z, UNIT_E)
        for _ in range(6):
            decision = ucosa_step(state, _arrival((0.9, 0.8)), UNIT_E)
            current = psi(state.z, UNIT_E)
            if decision.enriched:
                assert current > previous
            previous = current


class TestGreedyStep:
    def test_only_affordable_candidate_selected(self):
        state = SelectorState(1.0)
        decision = relevance_greedy_step(state, _arrival((0.9, 2.0), (0.5, 0.5)))
        assert decision.candidate.relevance == 0.5

    def test_argmax_when_everything_affordable(self):
        state = SelectorState(10.0)
        decision = relevance_greedy_step(state, _arrival((0.9, 2.0), (0.5, 0.5)))
        assert decision.candidate.relevance == 0.9

    def test_nothing_affordable_passes_through(self):
        state = SelectorState(0.1)
        decision = relevance_greedy_step(state, _arrival((0.9, 2.0), (0.5, 0.5)))
        assert not decision.enriched


class TestRandomStep:
    def test_single_affordable_candidate_is_certain(self):
        state = SelectorState(1.0)
        decision = random_step(state, _arrival((0.9, 2.0), (0.5, 0.5)), random.Random(3))
        assert decision.candidate.relevance == 0.5

    def test_two_candidates_split_evenly(self):
        """10,000 seeded one-shot trials land near the 50/50 split."""
        rng = random.Random(42)
        arrival = _arrival((0.9, 0.5), (0.5, 0.5))
        counts = {"c0": 0, "c1": 0}
        for _ in range(10_000):
            state = SelectorState(10.0)
            decision = random_step(state, arrival, rng)
            counts[decision.candidate.chunk_id] += 1
        assert abs(counts["c0"] - 5000) <= 300
        assert abs(counts["c1"] - 5000) <= 300

    def test_passthrough_when_nothing_affordable(self):
        state = SelectorState(0.01)
        decision = random_step(state, _arrival((0.9, 2.0)), random.Random(3))
        assert not decision.enriched


class TestBalanceStep:
    def test_allowance_filters_then_argmax(self):
        # B=10 over 10 prompts gives a 1.0 allowance: the 1.5-priced
        # candidate is out even though the whole budget could afford it.
        state = SelectorState(10.0)
        decision = budget_balance_step(state, _arrival((0.9, 1.5), (0.6, 0.8)), 10)
        assert decision.candidate.relevance == 0.6

    def test_passthrough_when_every_price_exceeds_allowance(self):
        state = SelectorState(10.0)
        decision = budget_balance_step(state, _arrival((0.9, 1.2), (0.8, 1.1)), 10)
        assert not decision.enriched

    def test_infinite_budget_degenerates_to_argmax(self):
        state = SelectorState(math.inf)
        decision = budget_balance_step(state, _arrival((0.9, 5.0), (0.5, 0.1)), 10)
        assert decision.candidate.relevance == 0.9

    def test_no_rollover(self):
        """Unspent allowance from passed prompts does not accumulate."""
        state = SelectorState(10.0)
        budget_balance_step(state, PromptArrival("p0", ()), 10)
        budget_balance_step(state, PromptArrival("p1", ()), 10)
        decision = budget_balance_step(state, _arrival((0.9, 1.5)), 10)
        assert not decision.enriched

    def test_total_prompts_must_be_positive(self):
        with pytest.raises(ValueError):
            budget_balance_step(SelectorState(1.0), _arrival((0.5, 0.5)), 0)


class TestOpenBudgetStep:
    def test_price_is_ignored(self):
        state = SelectorState(math.inf)
        decision = open_budget_step(state, _arrival((0.9, 5.0), (0.8, 0.1)))
        assert decision.candidate.relevance == 0.9
        assert state.spent == 5.0

    def test_empty_candidates_pass_through(self):
        state = SelectorState(math.inf)
        assert not open_budget_step(state, PromptArrival("p", ())).enriched


class TestMakeStepper:
    def test_ucosa_requires_params(self):
        with pytest.raises(ValueError):
            make_stepper("ucosa", 1.0)

    def test_balance_requires_total_prompts(self):
        with pytest.raises(ValueError):
            make_stepper("balance", 1.0)

    def test_unknown_policy_rejected(self):
        with pytest.raises(ValueError):
            make_stepper("oracle", 1.0)

    def test_open_ignores_requested_budget(self):
        state, step = make_stepper("open", 2.0)
        step(_arrival((0.9, 5.0)))
        assert state.spent == 5.0  # would have violated a finite budget


FINITE_POLICIES = ("ucosa", "greedy", "random", "balance")


def _run(policy, instance, seed=0):
    state, step = make_selector(policy, instance, rng=random.Random(seed))
    for prompt in instance.prompts:
        step(prompt)
    return state


class TestCrossPolicyProperties:
    def test_budget_safety_and_z_range(self):
        """spent <= budget after every step, z within [0,1] throughout."""
        rng = random.Random(100)
        for _ in range(300):
            instance = make_random_instance(rng)
            for policy in FINITE_POLICIES:
                state, step = make_selector(
                    policy, instance, rng=random.Random(rng.getrandbits(32))
                )
                for prompt in instance.prompts:
                    step(prompt)
                    assert state.spent <= instance.budget
                    assert 0.0 <= state.z <= 1.0

    def test_decision_log_matches_stream(self):
        rng = random.Random(101)
        instance = make_random_instance(rng)
        state = _run("ucosa", instance)
        assert [d.prompt_id for d in state.decisions] == [
            p.prompt_id for p in instance.prompts
        ]

    def test_prefix_determinism(self):
        """Replaying a prefix of the stream reproduces the decision prefix."""
        rng = random.Random(102)
        for _ in range(25):
            instance = make_random_instance(rng, max_prompts=10)
            full = _run("ucosa", instance).decisions
            for cut in range(len(instance.prompts)):
                state, step = make_selector("ucosa", instance)
                for prompt in instance.prompts[:cut]:
                    step(prompt)
                assert state.decisions == full[:cut]

    def test_infinite_budget_ucosa_matches_open(self):
        """With no budget pressure the threshold never filters a valid
        candidate, so the threshold policy degenerates to open-budget."""
        rng = random.Random(103)
        for _ in range(50):
            instance = make_random_instance(rng, budget=math.inf)
            ucosa = _run("ucosa", instance)
            open_run = _run("open", instance)
            assert [
                d.candidate.chunk_id if d.candidate else None
                for d in ucosa.decisions
            ] == [
                d.candidate.chunk_id if d.candidate else None
                for d in open_run.decisions
            ]

    def test_scale_invariance(self):
        """Scaling relevances, prices, and the budget by one constant leaves
        every selected chunk_id unchanged (power-of-two scales are exact in
        floats, so the trajectories match decision for decision)."""
        rng = random.Random(104)
        for _ in range(200):
            instance = make_random_instance(rng)
            c = rng.choice([0.5, 0.25, 0.0078125])
            scaled = Instance(
                prompts=tuple(
                    PromptArrival(
                        p.prompt_id,
                        tuple(
                            Candidate(
                                x.chunk_id, x.source_id, x.relevance * c, x.price * c
                            )
                            for x in p.candidates
                        ),
                    )
                    for p in instance.prompts
                ),
                budget=instance.budget * c,
                ratio_lower=instance.ratio_lower,
                ratio_upper=instance.ratio_upper,
            )
            seed = rng.getrandbits(32)
            for policy in ("ucosa", "greedy", "random", "balance", "open"):
                base = _run(policy, instance, seed=seed)
                other = _run(policy, scaled, seed=seed)
                assert [
                    d.candidate.chunk_id if d.candidate else None
                    for d in base.decisions
                ] == [
                    d.candidate.chunk_id if d.candidate else None
                    for d in other.decisions
                ]

    def test_zero_budget_enriches_nothing(self):
        rng = random.Random(105)
        instance = make_random_instance(rng, budget=0.0, allow_empty_prompts=False)
        for policy in FINITE_POLICIES:
            state = _run(policy, instance)
            assert state.spent == 0.0
            assert all(not d.enriched for d in state.decisions)

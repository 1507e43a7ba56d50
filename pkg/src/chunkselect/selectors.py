"""Online selection policies.

Each policy consumes a prompt stream one arrival at a time and makes an
irrevocable enrich-or-pass decision under a shared budget.  The headline
policy (``ucosa``, the utility-cost online selection algorithm) admits a
candidate only when its relevance-per-price ratio clears an exponential
threshold that tightens as the budget is consumed:

    psi(z) = (U * e / L) ** z * (L / e)

where ``z`` is the fraction of budget spent *before* the current prompt and
``L``/``U`` are the instance's declared ratio bounds.  The threshold starts
below ``L`` (everything qualifies while spending is light), crosses ``L`` at
``z = 1 / (1 + ln(U/L))``, and reaches ``U`` at ``z = 1``.

All finite-budget policies additionally apply a hard affordability guard:
a candidate is only admissible when ``spent + price <= budget``.  That
comparison is exactly the budget-safety invariant, so recorded spending can
never exceed the budget, independent of float rounding.  The open-budget
policy is the single exception — it ignores prices entirely and is run
against an unconstrained state for post-hoc billing.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .model import Candidate, Decision, Instance, PromptArrival, preferred_candidate

#: Policy names accepted by the harness, the CLI, and the selection service.
POLICY_NAMES = ("ucosa", "greedy", "random", "balance", "open")


class BudgetExceededError(RuntimeError):
    """Backstop raised if a decision would push spending past the budget.

    Policies check affordability before selecting, so this only fires on a
    programming error (e.g. feeding an open-budget decision into a
    finite-budget state).
    """


@dataclass(frozen=True)
class ThresholdParams:
    """Declared ratio bounds consumed by the threshold policy.

    Requires ``0 < ratio_lower <= ratio_upper < inf``.
    """

    ratio_lower: float
    ratio_upper: float

    def __post_init__(self):
        if (
            not (self.ratio_lower > 0)
            or not (self.ratio_upper >= self.ratio_lower)
            or math.isinf(self.ratio_upper)
        ):
            raise ValueError(
                "threshold params need 0 < ratio_lower <= ratio_upper < inf, "
                f"got L={self.ratio_lower!r} U={self.ratio_upper!r}"
            )

    @classmethod
    def from_instance(cls, instance: Instance) -> "ThresholdParams":
        return cls(instance.ratio_lower, instance.ratio_upper)


def psi(z: float, params: ThresholdParams) -> float:
    """The admission threshold at budget fraction ``z``.

    Strictly increasing on [0, 1] with psi(0) = L/e and psi(1) = U.  Raises
    ``ValueError`` when ``z`` is outside [0, 1].
    """
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"budget fraction z must be in [0, 1], got {z!r}")
    lo, hi = params.ratio_lower, params.ratio_upper
    return (hi * math.e / lo) ** z * (lo / math.e)


def low_regime_end(params: ThresholdParams) -> float:
    """The budget fraction below which psi(z) <= ratio_lower.

    Up to this point every valid candidate clears the threshold, so the
    policy behaves greedily; beyond it the threshold starts filtering.
    """
    return 1.0 / (1.0 + math.log(params.ratio_upper / params.ratio_lower))


class SelectorState:
    """Mutable per-run state: the budget, spending so far, and the decision log.

    ``z`` is the fraction of budget spent (pinned to 0.0 for unconstrained
    or zero budgets); because spending never exceeds the budget, ``z`` stays
    in [0, 1].
    """

    __slots__ = ("budget", "spent", "decisions")

    def __init__(self, budget: float):
        if math.isnan(budget) or budget < 0:
            raise ValueError(f"budget must be >= 0 (or inf), got {budget!r}")
        self.budget = float(budget)
        self.spent = 0.0
        self.decisions: list[Decision] = []

    @property
    def remaining(self) -> float:
        return self.budget - self.spent

    @property
    def z(self) -> float:
        if not math.isfinite(self.budget) or self.budget <= 0:
            return 0.0
        return self.spent / self.budget

    def affords(self, price: float) -> bool:
        """True when buying at ``price`` keeps spending within the budget."""
        return self.spent + price <= self.budget

    def record(self, decision: Decision) -> Decision:
        if decision.candidate is not None:
            if not self.affords(decision.candidate.price):
                raise BudgetExceededError(
                    f"decision for prompt {decision.prompt_id} would spend "
                    f"{self.spent + decision.candidate.price:.6g} of budget "
                    f"{self.budget:.6g}"
                )
            self.spent = self.spent + decision.candidate.price
        self.decisions.append(decision)
        return decision


def ucosa_step(
    state: SelectorState, arrival: PromptArrival, params: ThresholdParams
) -> Decision:
    """One step of the threshold policy.

    The budget fraction ``z`` is read *before* the decision, the threshold
    psi(z) is computed, and the qualifying set is every candidate whose
    ratio clears the threshold and whose price is affordable.  The most
    relevant qualifying candidate is attached; an empty qualifying set means
    the prompt goes through plain.
    """
    z = state.z
    threshold = psi(z, params)
    qualifying = [
        c
        for c in arrival.candidates
        if c.relevance / c.price >= threshold and state.affords(c.price)
    ]
    chosen = preferred_candidate(qualifying) if qualifying else None
    return state.record(Decision(arrival.prompt_id, chosen, z))


def relevance_greedy_step(state: SelectorState, arrival: PromptArrival) -> Decision:
    """Attach the most relevant affordable candidate, ignoring prices otherwise."""
    z = state.z
    affordable = [c for c in arrival.candidates if state.affords(c.price)]
    chosen = preferred_candidate(affordable) if affordable else None
    return state.record(Decision(arrival.prompt_id, chosen, z))


def random_step(
    state: SelectorState, arrival: PromptArrival, rng: random.Random
) -> Decision:
    """Attach a uniformly random affordable candidate (pass when none)."""
    z = state.z
    affordable = [c for c in arrival.candidates if state.affords(c.price)]
    chosen = rng.choice(affordable) if affordable else None
    return state.record(Decision(arrival.prompt_id, chosen, z))


def budget_balance_step(
    state: SelectorState, arrival: PromptArrival, total_prompts: int
) -> Decision:
    """Spend at most an equal per-prompt allowance, with no rollover.

    The allowance is ``budget / total_prompts``; a candidate qualifies only
    if its price fits within that single-prompt allowance (unspent allowance
    from earlier prompts does not accumulate).  This is a semi-offline
    baseline: it must know the total number of prompts up front.
    """
    if total_prompts <= 0:
        raise ValueError(f"total_prompts must be positive, got {total_prompts!r}")
    z = state.z
    allowance = state.budget / total_prompts
    eligible = [
        c
        for c in arrival.candidates
        if c.price <= allowance and state.affords(c.price)
    ]
    chosen = preferred_candidate(eligible) if eligible else None
    return state.record(Decision(arrival.prompt_id, chosen, z))


def open_budget_step(state: SelectorState, arrival: PromptArrival) -> Decision:
    """Attach the most relevant candidate regardless of price.

    This policy models the unconstrained baseline: spending accumulates for
    post-hoc billing instead of being limited up front, so it must be run
    against a state created with an infinite budget.
    """
    z = state.z
    chosen = (
        preferred_candidate(arrival.candidates) if arrival.candidates else None
    )
    return state.record(Decision(arrival.prompt_id, chosen, z))


def make_stepper(
    policy: str,
    budget: float,
    *,
    params: ThresholdParams | None = None,
    rng: random.Random | None = None,
    total_prompts: int | None = None,
):
    """Build ``(state, step)`` for a named policy.

    ``step(arrival)`` makes one decision and records it on ``state``.  The
    ``ucosa`` policy requires ``params``; ``balance`` requires
    ``total_prompts``; ``random`` draws from ``rng`` (a fresh
    ``random.Random(0)`` when omitted); ``open`` runs against an
    unconstrained state regardless of the requested budget.
    """
    if policy == "ucosa":
        if params is None:
            raise ValueError("the ucosa policy requires threshold params")
        state = SelectorState(budget)
        bound_params = params

        def step(arrival: PromptArrival) -> Decision:
            return ucosa_step(state, arrival, bound_params)

    elif policy == "greedy":
        state = SelectorState(budget)

        def step(arrival: PromptArrival) -> Decision:
            return relevance_greedy_step(state, arrival)

    elif policy == "random":
        state = SelectorState(budget)
        chooser = rng if rng is not None else random.Random(0)

        def step(arrival: PromptArrival) -> Decision:
            return random_step(state, arrival, chooser)

    elif policy == "balance":
        if total_prompts is None:
            raise ValueError("the balance policy requires total_prompts")
        state = SelectorState(budget)
        n = total_prompts

        def step(arrival: PromptArrival) -> Decision:
            return budget_balance_step(state, arrival, n)

    elif policy == "open":
        state = SelectorState(math.inf)

        def step(arrival: PromptArrival) -> Decision:
            return open_budget_step(state, arrival)

    else:
        raise ValueError(
            f"unknown policy {policy!r}; expected one of {', '.join(POLICY_NAMES)}"
        )
    return state, step


def make_selector(
    policy: str,
    instance: Instance,
    *,
    rng: random.Random | None = None,
    total_prompts: int | None = None,
):
    """Build ``(state, step)`` for a named policy on the given instance.

    The threshold policy reads the instance's declared ratio bounds;
    ``balance`` divides the instance budget over its prompt count unless
    ``total_prompts`` overrides it.
    """
    params = (
        ThresholdParams.from_instance(instance) if policy == "ucosa" else None
    )
    if policy == "balance" and total_prompts is None:
        total_prompts = len(instance.prompts)
    return make_stepper(
        policy,
        instance.budget,
        params=params,
        rng=rng,
        total_prompts=total_prompts,
    )

"""Simulation harness: repeated shuffled runs, aggregation, budget sweeps.

Seed derivation (fixed, documented so runs are reproducible anywhere):

* ``permutation_seed(master_seed, rep) = splitmix64(master_seed XOR rep)``,
  where ``splitmix64`` is the standard 64-bit SplitMix finalizer;
* the arrival order of repetition ``rep`` is ``random.Random(permutation
  seed).shuffle`` applied to ``range(n)``;
* the random policy's generator for that repetition is seeded with
  ``splitmix64(permutation_seed XOR 0x6A09E667F3BCC909)`` (a fixed tag), so
  it is decoupled from the shuffle stream.

Within one repetition every policy sees the same arrival order, which makes
cross-policy comparisons paired.  The offline optimum is computed once per
budget point on the unpermuted instance — it is permutation-invariant.
"""

from __future__ import annotations

import math
import random
import statistics
from dataclasses import dataclass, replace
from typing import Sequence

from .metrics import RunMetrics, compute_metrics, metrics_from_selection
from .model import Decision, Instance
from .offline import (
    InstanceTooLargeError,
    OfflineSolution,
    QuantizationError,
    solve_bruteforce,
    solve_dp,
)
from .selectors import make_selector

_MASK64 = (1 << 64) - 1

#: XOR tag deriving the random-policy stream from the permutation seed.
_POLICY_RNG_TAG = 0x6A09E667F3BCC909


def splitmix64(x: int) -> int:
    """The SplitMix64 finalizer: a fixed 64-bit mixing function."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def permutation_seed(master_seed: int, repetition: int) -> int:
    """Seed of one repetition's shuffle, derived from the master seed."""
    return splitmix64((master_seed ^ repetition) & _MASK64)


def policy_rng_seed(perm_seed: int) -> int:
    """Seed of the random policy's generator for one repetition."""
    return splitmix64((perm_seed ^ _POLICY_RNG_TAG) & _MASK64)


def shuffled_indices(n: int, seed: int) -> tuple[int, ...]:
    """A seeded permutation of range(n)."""
    order = list(range(n))
    random.Random(seed).shuffle(order)
    return tuple(order)


@dataclass(frozen=True)
class RunRecord:
    """One policy run over one arrival order of one instance."""

    policy: str
    repetition: int
    permutation_seed: int
    budget: float
    decisions: tuple[Decision, ...]
    metrics: RunMetrics


def run_stream(
    instance: Instance,
    policy: str,
    permutation: Sequence[int] | None = None,
    *,
    rng: random.Random | None = None,
    repetition: int = 0,
    perm_seed: int = 0,
) -> RunRecord:
    """Stream the instance's prompts through a policy in the given order.

    ``permutation`` defaults to the identity order; it must be a
    permutation of ``range(len(instance.prompts))``.  Decisions are recorded
    in arrival order and the metrics are recomputed from the decision log.
    """
    n = len(instance.prompts)
    if permutation is None:
        permutation = range(n)
    order = list(permutation)
    if sorted(order) != list(range(n)):
        raise ValueError("permutation must reorder exactly the instance's prompts")

    state, step = make_selector(policy, instance, rng=rng)
    for idx in order:
        step(instance.prompts[idx])
    decisions = tuple(state.decisions)
    return RunRecord(
        policy=policy,
        repetition=repetition,
        permutation_seed=perm_seed,
        budget=instance.budget,
        decisions=decisions,
        metrics=compute_metrics(decisions),
    )


def open_budget_spend(instance: Instance) -> float:
    """Total spend of the unconstrained policy (permutation-invariant)."""
    return run_stream(instance, "open").metrics.spent


#: Budget-sweep grid as fractions of the open-budget spend: doubling from
#: 1%, capped and closed at 200%.
DEFAULT_SWEEP_FRACTIONS = (0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.28, 2.0)


def default_budget_grid(instance: Instance) -> tuple[float, ...]:
    """The default sweep: geometric x2 from 1% to 200% of open-budget spend."""
    base = open_budget_spend(instance)
    return tuple(f * base for f in DEFAULT_SWEEP_FRACTIONS)


@dataclass(frozen=True)
class ExperimentPlan:
    """What to run: instance, policies, repetitions, and optional sweep.

    ``budget_sweep=None`` runs at the instance's own budget.  When
    ``include_offline`` is set, the offline optimum is solved once per
    budget point (DP at ``price_quantum``, falling back to brute force;
    omitted with a note when neither solver applies).
    """

    instance: Instance
    policies: tuple[str, ...]
    repetitions: int = 100
    master_seed: int = 0
    budget_sweep: tuple[float, ...] | None = None
    include_offline: bool = True
    price_quantum: float = 0.01


@dataclass(frozen=True)
class AggregateRow:
    """Across-repetition summary for one (policy, budget) cell.

    ``ar_mean``/``perf_to_budget_mean`` average the repetitions where the
    metric is defined (None when it never is); ``nep_times_ar_stderr`` is
    the standard error of the headline metric.
    """

    policy: str
    budget: float
    repetitions: int
    nep_mean: float
    nep_std: float
    ar_mean: float | None
    ar_std: float | None
    nep_times_ar_mean: float
    nep_times_ar_std: float
    nep_times_ar_stderr: float
    total_relevance_mean: float
    total_relevance_std: float
    spent_mean: float
    spent_std: float
    perf_to_budget_mean: float | None
    perf_to_budget_std: float | None


@dataclass(frozen=True)
class ExperimentReport:
    """All run records plus aggregates and per-budget offline optima.

    ``offline`` maps each budget point to its solution, or to ``None`` when
    no exact solver applied; ``offline_notes`` records why.
    """

    plan: ExperimentPlan
    records: tuple[RunRecord, ...]
    aggregates: tuple[AggregateRow, ...]
    offline: dict[float, OfflineSolution | None]
    offline_notes: dict[float, str]


def _mean_std(values: list[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def _aggregate(policy: str, budget: float, runs: list[RunRecord]) -> AggregateRow:
    nep_mean, nep_std = _mean_std([float(r.metrics.nep) for r in runs])
    ar_values = [r.metrics.ar for r in runs if r.metrics.ar is not None]
    ar_mean, ar_std = _mean_std(ar_values) if ar_values else (None, None)
    nxa_mean, nxa_std = _mean_std([r.metrics.nep_times_ar for r in runs])
    rel_mean, rel_std = _mean_std([r.metrics.total_relevance for r in runs])
    spent_mean, spent_std = _mean_std([r.metrics.spent for r in runs])
    ptb_values = [
        r.metrics.perf_to_budget for r in runs if r.metrics.perf_to_budget is not None
    ]
    ptb_mean, ptb_std = _mean_std(ptb_values) if ptb_values else (None, None)
    return AggregateRow(
        policy=policy,
        budget=budget,
        repetitions=len(runs),
        nep_mean=nep_mean,
        nep_std=nep_std,
        ar_mean=ar_mean,
        ar_std=ar_std,
        nep_times_ar_mean=nxa_mean,
        nep_times_ar_std=nxa_std,
        nep_times_ar_stderr=nxa_std / math.sqrt(len(runs)) if len(runs) > 1 else 0.0,
        total_relevance_mean=rel_mean,
        total_relevance_std=rel_std,
        spent_mean=spent_mean,
        spent_std=spent_std,
        perf_to_budget_mean=ptb_mean,
        perf_to_budget_std=ptb_std,
    )


def solve_offline_for_budget(
    instance: Instance, budget: float, price_quantum: float = 0.01
) -> tuple[OfflineSolution | None, str]:
    """Best-effort exact optimum at a budget point, with a note on the route."""
    budgeted = replace(instance, budget=budget)
    try:
        return solve_dp(budgeted, price_quantum), "dp"
    except QuantizationError:
        pass
    except InstanceTooLargeError:
        pass
    try:
        return solve_bruteforce(budgeted), "bruteforce"
    except InstanceTooLargeError:
        return None, "skipped: prices off-grid and enumeration too large"


def offline_metrics(solution: OfflineSolution) -> RunMetrics:
    """Metrics of an offline solution, comparable to online run metrics."""
    return metrics_from_selection(solution.selections.values())


def run_experiment(plan: ExperimentPlan) -> ExperimentReport:
    """Execute the plan: reps x policies x budget points, plus aggregation.

    Every policy within a repetition sees the same shuffled arrival order.
    Records are emitted in (budget, repetition, policy) execution order;
    aggregates are sorted by (policy, budget).  When ``include_offline``
    is set, aggregates also carry one ``offline`` pseudo-policy row per
    solvable budget point.
    """
    if plan.repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {plan.repetitions!r}")
    for policy in plan.policies:
        # Fail fast on unknown policy names before running anything.
        make_selector(policy, replace(plan.instance, budget=math.inf))

    budgets = (
        tuple(plan.budget_sweep)
        if plan.budget_sweep is not None
        else (plan.instance.budget,)
    )
    n = len(plan.instance.prompts)

    records: list[RunRecord] = []
    offline: dict[float, OfflineSolution | None] = {}
    offline_notes: dict[float, str] = {}
    aggregates: list[AggregateRow] = []

    for budget in budgets:
        budgeted = replace(plan.instance, budget=budget)
        if plan.include_offline:
            solution, note = solve_offline_for_budget(
                plan.instance, budget, plan.price_quantum
            )
            offline[budget] = solution
            offline_notes[budget] = note

        per_policy: dict[str, list[RunRecord]] = {p: [] for p in plan.policies}
        for rep in range(plan.repetitions):
            seed = permutation_seed(plan.master_seed, rep)
            order = shuffled_indices(n, seed)
            for policy in plan.policies:
                rng = random.Random(policy_rng_seed(seed))
                record = run_stream(
                    budgeted,
                    policy,
                    order,
                    rng=rng,
                    repetition=rep,
                    perm_seed=seed,
                )
                per_policy[policy].append(record)
                records.append(record)

        for policy in plan.policies:
            aggregates.append(_aggregate(policy, budget, per_policy[policy]))
        if plan.include_offline and offline.get(budget) is not None:
            opt_metrics = offline_metrics(offline[budget])
            opt_record = RunRecord(
                policy="offline",
                repetition=0,
                permutation_seed=0,
                budget=budget,
                decisions=(),
                metrics=opt_metrics,
            )
            aggregates.append(_aggregate("offline", budget, [opt_record]))

    aggregates.sort(key=lambda row: (row.policy, row.budget))
    return ExperimentReport(
        plan=plan,
        records=tuple(records),
        aggregates=tuple(aggregates),
        offline=offline,
        offline_notes=offline_notes,
    )

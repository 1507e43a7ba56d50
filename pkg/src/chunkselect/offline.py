"""Offline (hindsight) optimum for a selection instance.

With the whole stream known up front, the best assignment is a
multiple-choice knapsack: pick at most one candidate per prompt, keep the
summed prices within the budget, and maximize total attached relevance.
Two independent solvers are provided and cross-checked in the test suite:

* :func:`solve_bruteforce` enumerates every assignment (pass counts as an
  option), for small instances only;
* :func:`solve_dp` is an exact dynamic program over integer price units;
  it requires every price to quantize onto the given grid.

Both resolve ties the same way: highest objective first, then least spent.
The returned objective is recomputed with ``math.fsum`` over the selected
chunks, so it is independent of the order the solver visited prompts in.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import Candidate, Instance, preferred_candidate

#: Enumeration cap for the brute-force solver (product of per-prompt option
#: counts, including the pass option).
BRUTE_FORCE_CAP = 10_000_000

#: Cap on the number of DP capacity states per prompt row.
DP_STATE_CAP = 10_000_000

#: Total DP table-cell cap (capacity states times prompts), a memory guard.
DP_CELL_CAP = 200_000_000

#: Absolute tolerance when checking that a price sits on the quantization grid.
QUANT_ATOL = 1e-9


class InstanceTooLargeError(Exception):
    """The instance exceeds the solver's enumeration or state caps."""


class QuantizationError(ValueError):
    """A price does not sit on the requested quantization grid."""


@dataclass(frozen=True)
class OfflineSolution:
    """An optimal assignment with its exact objective and spend."""

    selections: dict[str, Candidate] = field(default_factory=dict)
    objective: float = 0.0
    spent: float = 0.0


def _finalize(instance: Instance, selections: dict[str, Candidate]) -> OfflineSolution:
    objective = math.fsum(c.relevance for c in selections.values())
    spent = math.fsum(c.price for c in selections.values())
    return OfflineSolution(selections=selections, objective=objective, spent=spent)


def _argmax_per_prompt(instance: Instance) -> OfflineSolution:
    # With no binding budget the optimum decomposes per prompt: take the
    # most relevant candidate (cheapest among ties => least spent overall).
    selections = {
        p.prompt_id: preferred_candidate(p.candidates)
        for p in instance.prompts
        if p.candidates
    }
    return _finalize(instance, selections)


def solve_bruteforce(instance: Instance) -> OfflineSolution:
    """Exact optimum by exhaustive enumeration.

    Raises :class:`InstanceTooLargeError` when the assignment space (the
    product over prompts of candidate-count + 1) exceeds
    ``BRUTE_FORCE_CAP``.  Among equal-objective optima the least-spent one
    is returned; remaining ties resolve to the lexicographically first
    assignment in prompt order, with pass ordered before any candidate.
    """
    if math.isinf(instance.budget):
        return _argmax_per_prompt(instance)
    if instance.budget < 0:
        raise ValueError(f"budget must be >= 0, got {instance.budget!r}")

    options = [
        [(0.0, 0.0, None)] + [(c.relevance, c.price, c) for c in p.candidates]
        for p in instance.prompts
    ]
    size = math.prod(len(o) for o in options)
    if size > BRUTE_FORCE_CAP:
        raise InstanceTooLargeError(
            f"{size} assignments exceed the enumeration cap of {BRUTE_FORCE_CAP}"
        )

    budget = instance.budget
    best_obj = -1.0
    best_spent = math.inf
    best_combo = None
    for combo in itertools.product(*options):
        spent = math.fsum(o[1] for o in combo)
        if spent > budget:
            continue
        obj = math.fsum(o[0] for o in combo)
        if obj > best_obj or (obj == best_obj and spent < best_spent):
            best_obj, best_spent, best_combo = obj, spent, combo

    selections: dict[str, Candidate] = {}
    if best_combo is not None:
        for prompt, (_, _, cand) in zip(instance.prompts, best_combo):
            if cand is not None:
                selections[prompt.prompt_id] = cand
    return _finalize(instance, selections)


def solve_dp(instance: Instance, price_quantum: float = 0.01) -> OfflineSolution:
    """Exact optimum by dynamic programming over integer price units.

    Every candidate price must be an integer multiple of ``price_quantum``
    (within ``QUANT_ATOL``), otherwise :class:`QuantizationError` is raised.
    The budget itself is floored onto the grid, which is exact: all
    achievable spends are grid multiples, so no feasible assignment is lost.
    Ties resolve to the least-spent optimum, then to passing over taking.
    """
    if not (price_quantum > 0) or math.isinf(price_quantum):
        raise ValueError(f"price_quantum must be finite and > 0, got {price_quantum!r}")
    if math.isinf(instance.budget):
        return _argmax_per_prompt(instance)
    if instance.budget < 0:
        raise ValueError(f"budget must be >= 0, got {instance.budget!r}")

    capacity = int(math.floor(instance.budget / price_quantum + 1e-9))
    if capacity > DP_STATE_CAP:
        raise InstanceTooLargeError(
            f"budget/price_quantum = {capacity} states exceeds the cap of "
            f"{DP_STATE_CAP}; use a coarser quantum"
        )

    prompts = instance.prompts
    unit_rows: list[list[int]] = []
    for p in prompts:
        row = []
        for c in p.candidates:
            units = round(c.price / price_quantum)
            if abs(units * price_quantum - c.price) > QUANT_ATOL:
                raise QuantizationError(
                    f"price {c.price!r} of chunk {c.chunk_id} is not a multiple "
                    f"of {price_quantum!r}"
                )
            row.append(units)
        unit_rows.append(row)

    if len(prompts) * (capacity + 1) > DP_CELL_CAP:
        raise InstanceTooLargeError(
            f"{len(prompts)} prompts x {capacity + 1} states exceeds the DP "
            f"table cap of {DP_CELL_CAP}"
        )

    width = capacity + 1
    value = np.zeros(width)
    spent_units = np.zeros(width, dtype=np.int64)
    choice_rows: list[np.ndarray] = []
    for p, units in zip(prompts, unit_rows):
        new_value = value.copy()
        new_spent = spent_units.copy()
        choices = np.full(width, -1, dtype=np.int32)
        for j, u in enumerate(units):
            if u > capacity:
                continue
            cand_value = np.empty(width)
            cand_value[:u] = -np.inf
            cand_value[u:] = value[: width - u] + p.candidates[j].relevance
            cand_spent = np.zeros(width, dtype=np.int64)
            cand_spent[u:] = spent_units[: width - u] + u
            take = (cand_value > new_value) | (
                (cand_value == new_value) & (cand_spent < new_spent)
            )
            if take.any():
                new_value[take] = cand_value[take]
                new_spent[take] = cand_spent[take]
                choices[take] = j
        choice_rows.append(choices)
        value, spent_units = new_value, new_spent

    selections: dict[str, Candidate] = {}
    w = capacity
    for i in range(len(prompts) - 1, -1, -1):
        j = int(choice_rows[i][w])
        if j >= 0:
            selections[prompts[i].prompt_id] = prompts[i].candidates[j]
            w -= unit_rows[i][j]
    return _finalize(instance, selections)

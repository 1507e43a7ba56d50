"""Core domain model for budget-constrained chunk selection.

An :class:`Instance` is a stream of prompts.  Each prompt arrives with a
list of retrieval candidates (chunks scored for relevance and carrying a
price), and the selector may attach at most one chunk per prompt while the
running total of purchase prices stays within a shared budget.  The
instance also declares bounds ``ratio_lower``/``ratio_upper`` on the
relevance-per-price ratio of every candidate; the online threshold policy
reads those bounds, so they are part of the data, not a derived quantity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class InvalidInstanceError(ValueError):
    """Raised when an instance fails hard validation.

    ``violations`` holds one human-readable entry per violated invariant.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid instance")


@dataclass(frozen=True)
class Candidate:
    """One retrieved chunk offered for a prompt.

    ``relevance`` is a normalized score in (0, 1]; ``price`` is the cost in
    currency units charged if this chunk is attached to the prompt.
    """

    chunk_id: str
    source_id: str
    relevance: float
    price: float

    @property
    def ratio(self) -> float:
        """Relevance per unit price — the quantity the online threshold tests."""
        return self.relevance / self.price


@dataclass(frozen=True)
class PromptArrival:
    """A prompt together with its retrieval candidates (possibly empty)."""

    prompt_id: str
    candidates: tuple[Candidate, ...] = ()


@dataclass(frozen=True)
class Instance:
    """A full selection problem: prompt stream, budget, and ratio bounds.

    ``budget`` may be ``math.inf`` for unconstrained runs.  The declared
    bounds must contain every candidate's relevance/price ratio; see
    :func:`validate_instance`.
    """

    prompts: tuple[PromptArrival, ...]
    budget: float
    ratio_lower: float
    ratio_upper: float

    @classmethod
    def from_data_bounds(
        cls, prompts: tuple[PromptArrival, ...], budget: float
    ) -> "Instance":
        """Build an instance whose declared bounds are the tight data bounds.

        Convenience for offline experiments: ``ratio_lower``/``ratio_upper``
        are set to the exact min/max candidate ratio (1.0/1.0 when there are
        no candidates at all).
        """
        ratios = [c.ratio for p in prompts for c in p.candidates]
        if ratios:
            lo, hi = min(ratios), max(ratios)
        else:
            lo = hi = 1.0
        return cls(
            prompts=tuple(prompts), budget=budget, ratio_lower=lo, ratio_upper=hi
        )


@dataclass(frozen=True)
class Decision:
    """The irrevocable outcome for one prompt arrival.

    ``candidate`` is the attached chunk, or ``None`` when the prompt went
    through plain.  ``z_at_decision`` records the fraction of budget already
    spent when the prompt arrived (always 0.0 for unconstrained budgets).
    """

    prompt_id: str
    candidate: Candidate | None
    z_at_decision: float

    @property
    def enriched(self) -> bool:
        return self.candidate is not None


@dataclass(frozen=True)
class Assignment:
    """An offline answer: at most one selected candidate per prompt."""

    selections: dict[str, Candidate] = field(default_factory=dict)


def preferred_candidate(candidates) -> Candidate:
    """The deterministic pick among a non-empty set of qualifying candidates.

    Highest relevance wins; ties go to the lowest price, then to the
    lexicographically smallest chunk_id.  Every selector and the offline
    solvers share this convention so that runs are reproducible.
    """
    return min(candidates, key=lambda c: (-c.relevance, c.price, c.chunk_id))


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


#: Relative tolerance used when checking candidate ratios against the
#: declared bounds, so that exact-boundary data (ratio == bound) is not
#: rejected over float rounding.
RATIO_BOUND_RTOL = 1e-9


def validate_instance(instance: Instance, epsilon_warn: float = 0.01) -> list[str]:
    """Check every instance invariant and return one entry per violation.

    An empty list means the instance is valid.  Entries prefixed with
    ``"warning:"`` are soft: they flag candidates whose price exceeds
    ``epsilon_warn`` of the budget (the online guarantee assumes individual
    prices are small relative to the budget) but do not make the instance
    invalid.  Callers that only care about hard failures should filter them
    out, e.g. via :func:`hard_violations`.
    """
    problems: list[str] = []

    budget = instance.budget
    if not _is_num(budget) or math.isnan(budget) or budget < 0:
        problems.append(f"budget must be >= 0 (or inf), got {budget!r}")
        budget = math.inf  # suppress follow-on warnings against a bad budget

    lo, hi = instance.ratio_lower, instance.ratio_upper
    bounds_ok = True
    if not _is_num(lo) or not (lo > 0) or math.isinf(lo):
        problems.append(f"ratio_lower must be a finite number > 0, got {lo!r}")
        bounds_ok = False
    if not _is_num(hi) or not (hi > 0) or math.isinf(hi) or math.isnan(hi):
        problems.append(f"ratio_upper must be a finite number > 0, got {hi!r}")
        bounds_ok = False
    if bounds_ok and lo > hi:
        problems.append(
            f"ratio_lower {lo:.6g} must not exceed ratio_upper {hi:.6g}"
        )
        bounds_ok = False

    seen_prompt_ids: set[str] = set()
    for p_index, prompt in enumerate(instance.prompts):
        where = f"prompt {prompt.prompt_id or p_index}"
        if prompt.prompt_id in seen_prompt_ids:
            problems.append(f"duplicate prompt_id {prompt.prompt_id!r}")
        seen_prompt_ids.add(prompt.prompt_id)

        seen_chunks: set[str] = set()
        for cand in prompt.candidates:
            if cand.chunk_id in seen_chunks:
                problems.append(
                    f"{where}: duplicate chunk_id {cand.chunk_id!r}"
                )
            seen_chunks.add(cand.chunk_id)

            ok = True
            if not _is_num(cand.relevance) or not (0 < cand.relevance <= 1):
                problems.append(
                    f"{where}: candidate {cand.chunk_id} relevance must be in "
                    f"(0, 1], got {cand.relevance!r}"
                )
                ok = False
            if not _is_num(cand.price) or not (cand.price > 0) or math.isinf(
                cand.price
            ):
                problems.append(
                    f"{where}: candidate {cand.chunk_id} price must be > 0 "
                    f"and finite, got {cand.price!r}"
                )
                ok = False
            if ok and bounds_ok:
                ratio = cand.ratio
                if ratio < lo * (1 - RATIO_BOUND_RTOL):
                    problems.append(
                        f"{where}: candidate {cand.chunk_id} ratio {ratio:.6g} "
                        f"is below ratio_lower {lo:.6g}"
                    )
                elif ratio > hi * (1 + RATIO_BOUND_RTOL):
                    problems.append(
                        f"{where}: candidate {cand.chunk_id} ratio {ratio:.6g} "
                        f"exceeds ratio_upper {hi:.6g}"
                    )
            if (
                ok
                and math.isfinite(budget)
                and budget > 0
                and cand.price / budget > epsilon_warn
            ):
                problems.append(
                    f"warning: {where}: candidate {cand.chunk_id} price "
                    f"{cand.price:.6g} exceeds {epsilon_warn:.4g} of the budget; "
                    f"the online guarantee assumes small per-chunk prices"
                )
    return problems


def hard_violations(entries: list[str]) -> list[str]:
    """Filter a :func:`validate_instance` report down to hard failures."""
    return [e for e in entries if not e.startswith("warning:")]

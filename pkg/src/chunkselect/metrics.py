"""Run metrics and billing-model costs.

The headline quality measure is NEP x AR: the number of enriched prompts
times their average attached relevance.  Totals are accumulated with
``math.fsum`` so that metrics are exact to the final rounding and identical
across permutations of the same selections.

Billing models compared by the tooling:

* per-prompt flat rate: every submitted prompt is charged the average chunk
  price, enriched or not (``raas_cost``);
* open per-chunk: only enrichments are charged, at their actual prices,
  with no cap (``chunk_cost`` of an unconstrained run);
* budget-limited per-chunk: same per-chunk charging, but selection runs
  under a hard budget (``chunk_cost`` of a budgeted run).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .model import Candidate, Decision


@dataclass(frozen=True)
class RunMetrics:
    """Summary of one selection run.

    ``ar`` (average relevance over enriched prompts) is ``None`` when no
    prompt was enriched; ``perf_to_budget`` is ``None`` when nothing was
    spent.  ``nep_times_ar`` is always defined (0.0 for an empty run).
    """

    nep: int
    ar: float | None
    nep_times_ar: float
    total_relevance: float
    spent: float
    perf_to_budget: float | None


def metrics_from_selection(selected: Iterable[Candidate]) -> RunMetrics:
    """Compute metrics from the multiset of attached chunks."""
    chunks = list(selected)
    nep = len(chunks)
    total_relevance = math.fsum(c.relevance for c in chunks)
    spent = math.fsum(c.price for c in chunks)
    ar = total_relevance / nep if nep > 0 else None
    nep_times_ar = nep * ar if nep > 0 else 0.0
    ptb = nep_times_ar / spent if spent > 0 else None
    return RunMetrics(
        nep=nep,
        ar=ar,
        nep_times_ar=nep_times_ar,
        total_relevance=total_relevance,
        spent=spent,
        perf_to_budget=ptb,
    )


def compute_metrics(decisions: Sequence[Decision]) -> RunMetrics:
    """Metrics of a decision log (recomputable from the log alone)."""
    return metrics_from_selection(
        d.candidate for d in decisions if d.candidate is not None
    )


def perf_to_budget(metrics: RunMetrics) -> float:
    """NEP x AR per currency unit spent.

    Raises ``ValueError`` when nothing was spent (the ratio is undefined).
    """
    if metrics.spent == 0:
        raise ValueError("performance-to-budget is undefined when spent is 0")
    return metrics.nep_times_ar / metrics.spent


def raas_cost(num_prompts: int, avg_chunk_price: float) -> float:
    """Flat-rate billing: every submitted prompt pays the average chunk price."""
    if num_prompts < 0:
        raise ValueError(f"num_prompts must be >= 0, got {num_prompts!r}")
    if avg_chunk_price < 0:
        raise ValueError(f"avg_chunk_price must be >= 0, got {avg_chunk_price!r}")
    return num_prompts * avg_chunk_price


def chunk_cost(decisions: Sequence[Decision]) -> float:
    """Per-chunk billing: the exact total price of the attached chunks."""
    return math.fsum(
        d.candidate.price for d in decisions if d.candidate is not None
    )

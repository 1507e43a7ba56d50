"""Adversarial instance family for the online lower bound.

The construction shows no online selector can beat the threshold policy's
guarantee by more than an additive constant.  For a ratio range [L, U] and
a step factor ``1 + eta`` it defines nested instances I_0 ... I_k, where
``k`` is the largest integer with ``(1+eta)^k <= U/L``:

* instance I_m consists of ``(m+1) * budget_units`` unit-price prompts,
  one candidate each, arriving in ``m+1`` tiers of ``budget_units`` prompts;
  tier ``t`` carries ratio ``(1+eta)^t * L``;
* the adversary draws I_m with probability ``p_m = eta / H`` for ``m < k``
  and ``p_k = (1+eta) / H``, where ``H = (k+1)*eta + 1``.

Because the tiers are nested, an online algorithm cannot tell I_m from
I_{m'} (m' > m) until tier m has passed; its expected fraction of the
hindsight optimum is at most ``(1+eta) / H``, which tends to
``1 / (ln(U/L) + 1)`` as eta -> 0.

Two independent evaluations of the expected ratio are provided —
:func:`expected_ratio` (closed form) and :func:`expected_ratio_direct`
(explicit double sum) — and cross-checked in the tests.

Materialized instances are uniformly rescaled so relevance scores stay
within (0, 1]: relevances and prices are divided by ``(1+eta)^k * L`` and
the budget by the same factor.  Ratios, budget fractions, and every
achieved-vs-optimal comparison are invariant under that scaling.
"""

from __future__ import annotations

import math
import random
import statistics
import warnings
from dataclasses import dataclass
from typing import Sequence

from .model import Candidate, Instance, PromptArrival
from .selectors import make_selector

#: Relative slack when snapping ``k`` onto an exact power boundary, so that
#: U/L = (1+eta)^k (up to float rounding) yields that ``k`` rather than k-1.
_BOUNDARY_RTOL = 1e-12


@dataclass(frozen=True)
class AdversarialFamily:
    """The instance family I_0 ... I_k with its sampling distribution."""

    ratio_lower: float
    ratio_upper: float
    eta: float
    budget_units: int
    k: int
    probabilities: tuple[float, ...]

    @property
    def harmonic_denominator(self) -> float:
        """H = (k+1)*eta + 1, the normalizer of the sampling distribution."""
        return (self.k + 1) * self.eta + 1.0


def build_family(
    ratio_lower: float, ratio_upper: float, eta: float, budget_units: int
) -> AdversarialFamily:
    """Construct the family for the given ratio range and step factor.

    Requires ``eta > 0``, ``0 < ratio_lower <= ratio_upper < inf``, and a
    positive integer ``budget_units``.
    """
    if not (eta > 0) or math.isinf(eta):
        raise ValueError(f"eta must be finite and > 0, got {eta!r}")
    if not (0 < ratio_lower <= ratio_upper) or math.isinf(ratio_upper):
        raise ValueError(
            f"need 0 < ratio_lower <= ratio_upper < inf, got "
            f"L={ratio_lower!r} U={ratio_upper!r}"
        )
    if budget_units < 1:
        raise ValueError(f"budget_units must be >= 1, got {budget_units!r}")

    span = ratio_upper / ratio_lower
    k = int(math.floor(math.log(span) / math.log1p(eta)))
    # Snap onto exact power boundaries despite float rounding in the logs.
    while (1 + eta) ** (k + 1) <= span * (1 + _BOUNDARY_RTOL):
        k += 1
    while k > 0 and (1 + eta) ** k > span * (1 + _BOUNDARY_RTOL):
        k -= 1

    denom = (k + 1) * eta + 1.0
    probabilities = tuple(
        (1 + eta) / denom if m == k else eta / denom for m in range(k + 1)
    )
    return AdversarialFamily(
        ratio_lower=ratio_lower,
        ratio_upper=ratio_upper,
        eta=eta,
        budget_units=budget_units,
        k=k,
        probabilities=probabilities,
    )


def opt_value(family: AdversarialFamily, m: int) -> float:
    """Hindsight optimum of I_m in construction units.

    The optimum spends the whole budget on the top tier:
    ``budget_units * (1+eta)^m * ratio_lower``.  (Materialized instances are
    rescaled by :func:`normalization_scale`; divide by it to compare against
    runs on a materialized instance.)
    """
    _check_index(family, m)
    return family.budget_units * (1 + family.eta) ** m * family.ratio_lower


def expected_ratio_bound(family: AdversarialFamily) -> float:
    """The ceiling (1+eta)/H on any online algorithm's expected ratio."""
    return (1 + family.eta) / family.harmonic_denominator


def asymptotic_ratio_limit(family: AdversarialFamily) -> float:
    """The eta -> 0 limit of the ceiling: 1 / (ln(U/L) + 1)."""
    return 1.0 / (math.log(family.ratio_upper / family.ratio_lower) + 1.0)


def _check_index(family: AdversarialFamily, m: int) -> None:
    if not 0 <= m <= family.k:
        raise ValueError(f"instance index must be in [0, {family.k}], got {m!r}")


def _check_shares(family: AdversarialFamily, shares: Sequence[float]) -> None:
    if len(shares) != family.k + 1:
        raise ValueError(
            f"need one budget share per tier (k+1 = {family.k + 1}), "
            f"got {len(shares)}"
        )
    if any(b < 0 for b in shares):
        raise ValueError("budget shares must be >= 0")
    total = math.fsum(shares)
    if total > 1 + 1e-12:
        raise ValueError(f"budget shares sum to {total!r} > 1")


def expected_ratio(family: AdversarialFamily, shares: Sequence[float]) -> float:
    """Expected achieved/optimal ratio of a tier-share strategy, closed form.

    ``shares[m]`` is the fraction of budget an online algorithm commits to
    tier ``m``; because each tier contributes ``shares[m] * (1+eta)^m * L * B``
    and the inner geometric sums telescope, the expectation collapses to
    ``sum(shares) * (1+eta) / H`` — independent of how the budget is split.
    """
    _check_shares(family, shares)
    return math.fsum(shares) * (1 + family.eta) / family.harmonic_denominator


def expected_ratio_direct(
    family: AdversarialFamily, shares: Sequence[float]
) -> float:
    """Same expectation as :func:`expected_ratio`, summed term by term.

    Independent verification route: for each sampled instance I_i, the
    algorithm banks the tiers it bought up to tier i, and the optimum is the
    top tier, so the conditional ratio is
    ``sum_{m<=i} shares[m]*(1+eta)^m / (1+eta)^i``.  This function computes
    the full expectation over i without the telescoping simplification.
    """
    _check_shares(family, shares)
    step = 1 + family.eta
    terms = []
    for i, p_i in enumerate(family.probabilities):
        banked = math.fsum(shares[m] * step**m for m in range(i + 1))
        terms.append(p_i * banked / step**i)
    return math.fsum(terms)


def normalization_scale(family: AdversarialFamily) -> float:
    """Divisor applied to relevances, prices, and budget when materializing."""
    return (1 + family.eta) ** family.k * family.ratio_lower


def materialize(family: AdversarialFamily, m: int) -> Instance:
    """Build I_m as a concrete instance (rescaled so relevance <= 1).

    Tier ``t`` (0 <= t <= m) contributes ``budget_units`` single-candidate
    prompts with ratio ``(1+eta)^t * ratio_lower``, arriving tier by tier in
    increasing order; the budget affords exactly ``budget_units`` purchases.
    Emits a warning for small ``budget_units`` (< 100), where per-purchase
    granularity visibly distorts the asymptotic guarantee.
    """
    _check_index(family, m)
    if family.budget_units < 100:
        warnings.warn(
            f"budget_units={family.budget_units} is small; the guarantee "
            "assumes per-purchase prices are tiny relative to the budget",
            stacklevel=2,
        )
    scale = normalization_scale(family)
    price = 1.0 / scale
    prompts = []
    for tier in range(m + 1):
        relevance = ((1 + family.eta) ** tier * family.ratio_lower) / scale
        for i in range(family.budget_units):
            prompt_id = f"t{tier:02d}-{i:05d}"
            prompts.append(
                PromptArrival(
                    prompt_id,
                    (
                        Candidate(
                            chunk_id=f"{prompt_id}-c0",
                            source_id=f"tier-{tier:02d}",
                            relevance=relevance,
                            price=price,
                        ),
                    ),
                )
            )
    return Instance(
        prompts=tuple(prompts),
        budget=family.budget_units / scale,
        ratio_lower=family.ratio_lower,
        ratio_upper=family.ratio_upper,
    )


@dataclass(frozen=True)
class EmpiricalRatio:
    """Monte-Carlo estimate of a policy's achieved/optimal ratio."""

    mean: float
    stderr: float
    samples: int


def empirical_competitive_ratio(
    family: AdversarialFamily,
    *,
    samples: int = 100,
    seed: int = 0,
    policy: str = "ucosa",
) -> EmpiricalRatio:
    """Run a policy against instances drawn from the family.

    Each sample draws an index ``m`` from the family distribution, streams
    the materialized I_m through the policy, and records achieved relevance
    over the hindsight optimum.  Returns the sample mean with its standard
    error.
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples!r}")
    rng = random.Random(seed)
    scale = normalization_scale(family)
    cache: dict[int, Instance] = {}
    indices = range(family.k + 1)
    ratios = []
    for _ in range(samples):
        m = rng.choices(indices, weights=family.probabilities)[0]
        inst = cache.get(m)
        if inst is None:
            inst = cache[m] = materialize(family, m)
        state, step = make_selector(
            policy, inst, rng=random.Random(rng.getrandbits(64))
        )
        for prompt in inst.prompts:
            step(prompt)
        achieved = math.fsum(
            d.candidate.relevance for d in state.decisions if d.candidate
        )
        ratios.append(achieved / (opt_value(family, m) / scale))
    mean = statistics.fmean(ratios)
    stderr = (
        statistics.stdev(ratios) / math.sqrt(len(ratios)) if len(ratios) > 1 else 0.0
    )
    return EmpiricalRatio(mean=mean, stderr=stderr, samples=len(ratios))

"""Shared fixtures and random-instance helpers for the test suite."""

from __future__ import annotations

import random
from pathlib import Path

import pytest

from chunkselect.model import Candidate, Instance, PromptArrival

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
TOY_PATH = DATA_DIR / "toy_billing.yaml"
BENCHMARK_PATH = DATA_DIR / "benchmark_instance.yaml"
BENCHMARK_SPEC_PATH = DATA_DIR / "benchmark_spec.yaml"


def make_random_instance(
    rng: random.Random,
    *,
    max_prompts: int = 12,
    max_candidates: int = 4,
    budget: float | None = None,
    price_choices: tuple[float, ...] | None = None,
    allow_empty_prompts: bool = True,
) -> Instance:
    """A small valid instance with tight data-derived ratio bounds.

    Budget defaults to a random fraction of the total candidate price mass,
    so it is sometimes binding and sometimes slack.  Prices come from
    ``price_choices`` when given (useful for quantized-price tests),
    otherwise they are continuous.
    """
    n = rng.randint(1, max_prompts)
    prompts = []
    total_price = 0.0
    for i in range(n):
        low = 0 if allow_empty_prompts else 1
        count = rng.randint(low, max_candidates)
        candidates = []
        for j in range(count):
            if price_choices is not None:
                price = rng.choice(price_choices)
            else:
                price = rng.uniform(0.05, 1.0)
            relevance = rng.uniform(0.05, 1.0)
            candidates.append(
                Candidate(f"p{i:03d}-c{j:02d}", "src", relevance, price)
            )
            total_price += price
        prompts.append(PromptArrival(f"p{i:03d}", tuple(candidates)))
    if budget is None:
        budget = rng.uniform(0.0, max(total_price, 1.0))
    return Instance.from_data_bounds(tuple(prompts), budget)


@pytest.fixture(scope="session")
def toy_path() -> Path:
    assert TOY_PATH.exists(), f"missing bundled instance {TOY_PATH}"
    return TOY_PATH


@pytest.fixture(scope="session")
def benchmark_path() -> Path:
    assert BENCHMARK_PATH.exists(), f"missing bundled benchmark {BENCHMARK_PATH}"
    return BENCHMARK_PATH

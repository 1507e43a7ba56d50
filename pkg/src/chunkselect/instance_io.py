"""File formats and synthetic instance generation.

Instances are stored as human-readable YAML (schema_version 1).  Prompts
list their candidates inline; a candidate may omit ``price`` and inherit
``price_per_chunk`` from its source declared in the optional ``sources``
section.  ``budget`` is a number or the string ``"inf"``.

Run results are flat CSV with a fixed header, one row per (policy,
repetition, budget), numbers formatted to 9 significant digits, rows in
deterministic order — two runs with the same seeds produce byte-identical
files.
"""

from __future__ import annotations

import csv
import math
import random
import warnings
from dataclasses import dataclass
from pathlib import Path

import yaml

from .harness import AggregateRow, RunRecord
from .model import (
    Candidate,
    Instance,
    InvalidInstanceError,
    PromptArrival,
    hard_violations,
    validate_instance,
)

SCHEMA_VERSION = 1


class InstanceFormatError(ValueError):
    """The file is not a well-formed instance document (parse/schema problem)."""


class GeneratorSpecError(ValueError):
    """The generator spec is malformed or infeasible."""


class ResultsFormatError(ValueError):
    """A results CSV does not match the expected header/layout."""


def _parse_budget(raw, where: str) -> float:
    if isinstance(raw, str):
        if raw.strip().lower() == "inf":
            return math.inf
        raise InstanceFormatError(f"{where}: budget must be a number or 'inf', got {raw!r}")
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise InstanceFormatError(f"{where}: budget must be a number or 'inf', got {raw!r}")
    return float(raw)


def _require_number(raw, where: str) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise InstanceFormatError(f"{where}: expected a number, got {raw!r}")
    return float(raw)


def _require_str(raw, where: str) -> str:
    if not isinstance(raw, str) or not raw:
        raise InstanceFormatError(f"{where}: expected a non-empty string, got {raw!r}")
    return raw


def _require_mapping(raw, where: str) -> dict:
    if not isinstance(raw, dict):
        raise InstanceFormatError(f"{where}: expected a mapping, got {type(raw).__name__}")
    return raw


def _require_list(raw, where: str) -> list:
    if not isinstance(raw, list):
        raise InstanceFormatError(f"{where}: expected a list, got {type(raw).__name__}")
    return raw


def _reject_unknown(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise InstanceFormatError(f"{where}: unknown key(s) {', '.join(map(repr, unknown))}")


def load_instance(path, *, warn: bool = True) -> Instance:
    """Load and validate an instance file.

    Raises :class:`InstanceFormatError` on parse or schema problems,
    :class:`~chunkselect.model.InvalidInstanceError` (listing every
    violation) when the parsed instance breaks a hard invariant.  Soft
    validation warnings are emitted via ``warnings.warn`` unless ``warn``
    is False.
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise InstanceFormatError(f"{path}: not valid YAML: {exc}") from exc

    doc = _require_mapping(doc, str(path))
    _reject_unknown(
        doc,
        {"schema_version", "budget", "ratio_lower", "ratio_upper", "sources", "prompts"},
        str(path),
    )
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InstanceFormatError(
            f"{path}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
        )
    for key in ("budget", "ratio_lower", "ratio_upper", "prompts"):
        if key not in doc:
            raise InstanceFormatError(f"{path}: missing required key {key!r}")

    budget = _parse_budget(doc["budget"], f"{path}: budget")
    ratio_lower = _require_number(doc["ratio_lower"], f"{path}: ratio_lower")
    ratio_upper = _require_number(doc["ratio_upper"], f"{path}: ratio_upper")

    source_prices: dict[str, float] = {}
    for s_idx, raw_source in enumerate(_require_list(doc.get("sources", []), f"{path}: sources")):
        where = f"{path}: sources[{s_idx}]"
        source = _require_mapping(raw_source, where)
        _reject_unknown(source, {"source_id", "price_per_chunk"}, where)
        source_id = _require_str(source.get("source_id"), f"{where}.source_id")
        if source_id in source_prices:
            raise InstanceFormatError(f"{where}: duplicate source_id {source_id!r}")
        source_prices[source_id] = _require_number(
            source.get("price_per_chunk"), f"{where}.price_per_chunk"
        )

    prompts: list[PromptArrival] = []
    for p_idx, raw_prompt in enumerate(_require_list(doc["prompts"], f"{path}: prompts")):
        where = f"{path}: prompts[{p_idx}]"
        prompt = _require_mapping(raw_prompt, where)
        _reject_unknown(prompt, {"prompt_id", "candidates"}, where)
        prompt_id = _require_str(prompt.get("prompt_id"), f"{where}.prompt_id")
        candidates: list[Candidate] = []
        for c_idx, raw_cand in enumerate(
            _require_list(prompt.get("candidates", []), f"{where}.candidates")
        ):
            c_where = f"{where}.candidates[{c_idx}]"
            cand = _require_mapping(raw_cand, c_where)
            _reject_unknown(cand, {"chunk_id", "source_id", "relevance", "price"}, c_where)
            chunk_id = _require_str(cand.get("chunk_id"), f"{c_where}.chunk_id")
            source_id = _require_str(cand.get("source_id"), f"{c_where}.source_id")
            relevance = _require_number(cand.get("relevance"), f"{c_where}.relevance")
            if "price" in cand:
                price = _require_number(cand["price"], f"{c_where}.price")
            elif source_id in source_prices:
                price = source_prices[source_id]
            else:
                raise InstanceFormatError(
                    f"{c_where}: no price given and source {source_id!r} declares "
                    f"no price_per_chunk"
                )
            candidates.append(Candidate(chunk_id, source_id, relevance, price))
        prompts.append(PromptArrival(prompt_id, tuple(candidates)))

    instance = Instance(
        prompts=tuple(prompts),
        budget=budget,
        ratio_lower=ratio_lower,
        ratio_upper=ratio_upper,
    )
    report = validate_instance(instance)
    hard = hard_violations(report)
    if hard:
        raise InvalidInstanceError(hard)
    if warn:
        for entry in report:
            warnings.warn(f"{path}: {entry}", stacklevel=2)
    return instance


def save_instance(instance: Instance, path) -> None:
    """Write an instance as YAML; loading it back reproduces the instance.

    Prices are written per candidate (source inheritance is a reading-side
    convenience only).
    """
    doc = {
        "schema_version": SCHEMA_VERSION,
        "budget": "inf" if math.isinf(instance.budget) else float(instance.budget),
        "ratio_lower": float(instance.ratio_lower),
        "ratio_upper": float(instance.ratio_upper),
        "prompts": [
            {
                "prompt_id": p.prompt_id,
                "candidates": [
                    {
                        "chunk_id": c.chunk_id,
                        "source_id": c.source_id,
                        "relevance": float(c.relevance),
                        "price": float(c.price),
                    }
                    for c in p.candidates
                ],
            }
            for p in instance.prompts
        ],
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=False))


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of the synthetic instance generator.

    Each prompt receives between ``min_candidates`` and ``top_k`` candidates
    (except a deterministic ``empty_prompt_fraction`` share, which receives
    none), with the source — and hence the price — drawn uniformly and the
    relevance drawn from a truncated normal on [relevance_low,
    relevance_high].  The instance's declared ratio bounds are the tight
    data bounds rounded outward to 3 decimals.
    """

    num_prompts: int
    top_k: int = 20
    sources: tuple[tuple[str, float], ...] = (
        ("premium", 0.8),
        ("standard", 0.2),
        ("economy", 0.1),
    )
    relevance_mean: float = 0.6
    relevance_stddev: float = 0.2
    relevance_low: float = 0.05
    relevance_high: float = 1.0
    min_candidates: int = 1
    empty_prompt_fraction: float = 0.0
    budget: float = math.inf
    seed: int = 0


def _check_spec(spec: GeneratorSpec) -> None:
    if spec.num_prompts < 1:
        raise GeneratorSpecError(f"num_prompts must be >= 1, got {spec.num_prompts!r}")
    if not 0 <= spec.min_candidates <= spec.top_k:
        raise GeneratorSpecError(
            f"need 0 <= min_candidates <= top_k, got "
            f"{spec.min_candidates!r}/{spec.top_k!r}"
        )
    if not 0.0 <= spec.empty_prompt_fraction <= 1.0:
        raise GeneratorSpecError(
            f"empty_prompt_fraction must be in [0, 1], got {spec.empty_prompt_fraction!r}"
        )
    if not spec.sources:
        raise GeneratorSpecError("at least one source is required")
    seen = set()
    for source_id, price in spec.sources:
        if source_id in seen:
            raise GeneratorSpecError(f"duplicate source_id {source_id!r}")
        seen.add(source_id)
        if not (price > 0) or math.isinf(price):
            raise GeneratorSpecError(f"source {source_id!r} price must be finite and > 0")
    if not (0 < spec.relevance_low <= spec.relevance_high <= 1.0):
        raise GeneratorSpecError(
            "need 0 < relevance_low <= relevance_high <= 1, got "
            f"{spec.relevance_low!r}/{spec.relevance_high!r}"
        )
    if not (spec.relevance_low <= spec.relevance_mean <= spec.relevance_high):
        raise GeneratorSpecError("relevance_mean must lie within [low, high]")
    if not (spec.relevance_stddev > 0):
        raise GeneratorSpecError("relevance_stddev must be > 0")
    if math.isnan(spec.budget) or spec.budget < 0:
        raise GeneratorSpecError(f"budget must be >= 0 (or inf), got {spec.budget!r}")
    if spec.seed < 0:
        raise GeneratorSpecError(f"seed must be a non-negative integer, got {spec.seed!r}")


def _truncated_gauss(rng: random.Random, mean, stddev, low, high) -> float:
    while True:
        x = rng.gauss(mean, stddev)
        if low <= x <= high:
            return x


def generate_synthetic(spec: GeneratorSpec) -> Instance:
    """Deterministically generate an instance from a generator spec (seeded)."""
    _check_spec(spec)
    rng = random.Random(spec.seed)
    n = spec.num_prompts
    num_empty = round(spec.empty_prompt_fraction * n)
    empty_positions = set(rng.sample(range(n), num_empty))

    prompts: list[PromptArrival] = []
    ratios: list[float] = []
    for i in range(n):
        prompt_id = f"p{i:05d}"
        if i in empty_positions:
            prompts.append(PromptArrival(prompt_id, ()))
            continue
        count = rng.randint(spec.min_candidates, spec.top_k)
        candidates = []
        for j in range(count):
            source_id, price = spec.sources[rng.randrange(len(spec.sources))]
            relevance = _truncated_gauss(
                rng,
                spec.relevance_mean,
                spec.relevance_stddev,
                spec.relevance_low,
                spec.relevance_high,
            )
            candidates.append(
                Candidate(f"{prompt_id}-c{j:02d}", source_id, relevance, price)
            )
            ratios.append(relevance / price)
        prompts.append(PromptArrival(prompt_id, tuple(candidates)))

    if ratios:
        # Outward rounding keeps every data ratio inside the declared bounds.
        ratio_lower = math.floor(min(ratios) * 1000) / 1000
        ratio_upper = math.ceil(max(ratios) * 1000) / 1000
    else:
        ratio_lower = ratio_upper = 1.0
    if ratio_lower <= 0:
        raise GeneratorSpecError(
            "generated ratios round down to a zero lower bound; raise "
            "relevance_low or lower source prices"
        )

    instance = Instance(
        prompts=tuple(prompts),
        budget=spec.budget,
        ratio_lower=ratio_lower,
        ratio_upper=ratio_upper,
    )
    hard = hard_violations(validate_instance(instance))
    if hard:  # pragma: no cover - generation is constructed to be valid
        raise GeneratorSpecError("generated instance failed validation: " + "; ".join(hard))
    return instance


def load_generator_spec(path) -> GeneratorSpec:
    """Read a generator spec document (YAML mirror of :class:`GeneratorSpec`)."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise GeneratorSpecError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise GeneratorSpecError(f"{path}: expected a mapping at the top level")
    allowed = {
        "num_prompts",
        "top_k",
        "sources",
        "relevance",
        "min_candidates",
        "empty_prompt_fraction",
        "budget",
        "seed",
    }
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise GeneratorSpecError(f"{path}: unknown key(s) {', '.join(map(repr, unknown))}")
    if "num_prompts" not in doc:
        raise GeneratorSpecError(f"{path}: missing required key 'num_prompts'")

    kwargs: dict = {"num_prompts": doc["num_prompts"]}
    for key in ("top_k", "min_candidates", "seed"):
        if key in doc:
            kwargs[key] = doc[key]
    if "empty_prompt_fraction" in doc:
        kwargs["empty_prompt_fraction"] = doc["empty_prompt_fraction"]
    if "budget" in doc:
        raw = doc["budget"]
        kwargs["budget"] = (
            math.inf if isinstance(raw, str) and raw.strip().lower() == "inf" else raw
        )
    if "sources" in doc:
        sources = []
        for s_idx, raw_source in enumerate(doc["sources"]):
            if not isinstance(raw_source, dict) or set(raw_source) != {
                "source_id",
                "price_per_chunk",
            }:
                raise GeneratorSpecError(
                    f"{path}: sources[{s_idx}] must map source_id and price_per_chunk"
                )
            sources.append((raw_source["source_id"], raw_source["price_per_chunk"]))
        kwargs["sources"] = tuple(sources)
    if "relevance" in doc:
        rel = doc["relevance"]
        if not isinstance(rel, dict) or not set(rel) <= {"mean", "stddev", "low", "high"}:
            raise GeneratorSpecError(
                f"{path}: relevance must map a subset of mean/stddev/low/high"
            )
        for key, target in (
            ("mean", "relevance_mean"),
            ("stddev", "relevance_stddev"),
            ("low", "relevance_low"),
            ("high", "relevance_high"),
        ):
            if key in rel:
                kwargs[target] = rel[key]
    try:
        spec = GeneratorSpec(**kwargs)
    except TypeError as exc:
        raise GeneratorSpecError(f"{path}: {exc}") from exc
    _check_spec(spec)
    return spec


RESULTS_HEADER = (
    "policy",
    "repetition",
    "budget",
    "nep",
    "ar",
    "nep_times_ar",
    "total_relevance",
    "spent",
    "perf_to_budget",
)

AGGREGATES_HEADER = (
    "policy",
    "budget",
    "repetitions",
    "nep_mean",
    "nep_std",
    "ar_mean",
    "ar_std",
    "nep_times_ar_mean",
    "nep_times_ar_std",
    "nep_times_ar_stderr",
    "total_relevance_mean",
    "total_relevance_std",
    "spent_mean",
    "spent_std",
    "perf_to_budget_mean",
    "perf_to_budget_std",
)


def format_number(x) -> str:
    """Canonical cell formatting: blank for undefined, 9 significant digits."""
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    return f"{x:.9g}"


def write_results(records, path) -> None:
    """Write per-run rows sorted by (policy, repetition, budget)."""
    rows = sorted(records, key=lambda r: (r.policy, r.repetition, r.budget))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for r in rows:
            m = r.metrics
            writer.writerow(
                [
                    r.policy,
                    r.repetition,
                    format_number(r.budget),
                    m.nep,
                    format_number(m.ar),
                    format_number(m.nep_times_ar),
                    format_number(m.total_relevance),
                    format_number(m.spent),
                    format_number(m.perf_to_budget),
                ]
            )


def read_results(path) -> list[dict]:
    """Read rows written by :func:`write_results` back into dicts."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise ResultsFormatError(f"{path}: empty results file") from None
        if header != RESULTS_HEADER:
            raise ResultsFormatError(
                f"{path}: unexpected header {header!r}; expected {RESULTS_HEADER!r}"
            )
        rows = []
        for line_no, raw in enumerate(reader, start=2):
            if len(raw) != len(RESULTS_HEADER):
                raise ResultsFormatError(f"{path}:{line_no}: expected {len(RESULTS_HEADER)} cells")
            try:
                rows.append(
                    {
                        "policy": raw[0],
                        "repetition": int(raw[1]),
                        "budget": float(raw[2]),
                        "nep": int(raw[3]),
                        "ar": float(raw[4]) if raw[4] else None,
                        "nep_times_ar": float(raw[5]),
                        "total_relevance": float(raw[6]),
                        "spent": float(raw[7]),
                        "perf_to_budget": float(raw[8]) if raw[8] else None,
                    }
                )
            except ValueError as exc:
                raise ResultsFormatError(f"{path}:{line_no}: {exc}") from exc
        return rows


def write_aggregates(aggregates, path) -> None:
    """Write per-(policy, budget) summary rows."""
    rows = sorted(aggregates, key=lambda a: (a.policy, a.budget))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATES_HEADER)
        for a in rows:
            writer.writerow(
                [
                    a.policy,
                    format_number(a.budget),
                    a.repetitions,
                    format_number(a.nep_mean),
                    format_number(a.nep_std),
                    format_number(a.ar_mean),
                    format_number(a.ar_std),
                    format_number(a.nep_times_ar_mean),
                    format_number(a.nep_times_ar_std),
                    format_number(a.nep_times_ar_stderr),
                    format_number(a.total_relevance_mean),
                    format_number(a.total_relevance_std),
                    format_number(a.spent_mean),
                    format_number(a.spent_std),
                    format_number(a.perf_to_budget_mean),
                    format_number(a.perf_to_budget_std),
                ]
            )

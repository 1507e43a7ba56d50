"""Command-line front end.

Subcommands: ``gen`` (synthesize an instance file), ``simulate`` (repeated
shuffled runs, optional budget sweep, CSV output), ``solve`` (offline
optimum), ``adversary`` (lower-bound family numbers plus an empirical run),
and ``report`` (merge results files into tables or plot-ready series).

Exit codes: 0 success; 2 usage/spec/format errors; 3 instance validation
failure; 4 instance too large for the requested solver; 5 price
quantization failure.
"""

from __future__ import annotations

import argparse
import math
import statistics
import sys
from dataclasses import replace

from .adversary import (
    asymptotic_ratio_limit,
    build_family,
    empirical_competitive_ratio,
    expected_ratio_bound,
)
from .harness import (
    ExperimentPlan,
    default_budget_grid,
    run_experiment,
)
from .instance_io import (
    GeneratorSpecError,
    InstanceFormatError,
    ResultsFormatError,
    format_number,
    generate_synthetic,
    load_generator_spec,
    load_instance,
    read_results,
    save_instance,
    write_aggregates,
    write_results,
)
from .metrics import raas_cost
from .model import InvalidInstanceError
from .offline import (
    InstanceTooLargeError,
    QuantizationError,
    solve_bruteforce,
    solve_dp,
)
from .selectors import POLICY_NAMES

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID_INSTANCE = 3
EXIT_TOO_LARGE = 4
EXIT_QUANTIZATION = 5


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not (value > 0) or math.isinf(value) or math.isnan(value):
        raise argparse.ArgumentTypeError(f"expected a finite value > 0, got {text!r}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text!r}")
    return value


def _budget_value(text: str) -> float:
    if text.strip().lower() == "inf":
        return math.inf
    value = float(text)
    if math.isnan(value) or value < 0:
        raise argparse.ArgumentTypeError(f"budget must be >= 0 or 'inf', got {text!r}")
    return value


def _policy_list(text: str) -> tuple[str, ...]:
    policies = tuple(p.strip() for p in text.split(",") if p.strip())
    if not policies:
        raise argparse.ArgumentTypeError("at least one policy is required")
    for p in policies:
        if p not in POLICY_NAMES:
            raise argparse.ArgumentTypeError(
                f"unknown policy {p!r}; choose from {', '.join(POLICY_NAMES)}"
            )
    return policies


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunkselect",
        description="Budget-constrained online chunk selection tooling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic instance file")
    p_gen.add_argument("--spec", required=True, help="generator spec (YAML)")
    p_gen.add_argument("--out", required=True, help="instance file to write")
    p_gen.add_argument(
        "--seed", type=_u64, default=None, help="override the generator spec's seed"
    )
    p_gen.set_defaults(func=_cmd_gen)

    p_sim = sub.add_parser("simulate", help="run policies over shuffled repetitions")
    p_sim.add_argument("--instance", required=True, help="instance file (YAML)")
    p_sim.add_argument(
        "--policy",
        type=_policy_list,
        default=("ucosa",),
        help=f"policy name or comma-separated list ({', '.join(POLICY_NAMES)})",
    )
    p_sim.add_argument("--reps", type=_positive_int, default=100)
    p_sim.add_argument("--seed", type=_u64, default=0, help="master seed")
    p_sim.add_argument(
        "--budget-sweep",
        default=None,
        help="comma-separated budgets, or 'default' for the doubling grid "
        "from 1%% to 200%% of the open-budget spend",
    )
    p_sim.add_argument("--out", default=None, help="per-run results CSV to write")
    p_sim.add_argument("--agg-out", default=None, help="aggregates CSV to write")
    p_sim.add_argument(
        "--quantum",
        type=_positive_float,
        default=0.01,
        help="price quantum for the offline reference solve",
    )
    p_sim.add_argument(
        "--no-offline",
        action="store_true",
        help="skip the offline optimum reference",
    )
    p_sim.set_defaults(func=_cmd_simulate)

    p_solve = sub.add_parser("solve", help="compute the offline optimum")
    p_solve.add_argument("--instance", required=True)
    p_solve.add_argument("--method", choices=("brute", "dp"), required=True)
    p_solve.add_argument("--quantum", type=_positive_float, default=0.01)
    p_solve.set_defaults(func=_cmd_solve)

    p_adv = sub.add_parser(
        "adversary", help="lower-bound family numbers and an empirical run"
    )
    p_adv.add_argument("--L", type=_positive_float, required=True, dest="L")
    p_adv.add_argument("--U", type=_positive_float, required=True, dest="U")
    p_adv.add_argument("--eta", type=_positive_float, required=True)
    p_adv.add_argument("--budget-units", type=_positive_int, default=1000)
    p_adv.add_argument("--samples", type=_positive_int, default=100)
    p_adv.add_argument("--seed", type=_u64, default=0)
    p_adv.set_defaults(func=_cmd_adversary)

    p_rep = sub.add_parser("report", help="summarize results files")
    p_rep.add_argument("--results", nargs="+", required=True)
    p_rep.add_argument("--format", choices=("table", "plotdata"), default="table")
    p_rep.add_argument(
        "--instance",
        default=None,
        help="instance file; enables the billing-variant comparison",
    )
    p_rep.set_defaults(func=_cmd_report)
    return parser


def _cmd_gen(args) -> int:
    spec = load_generator_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    instance = generate_synthetic(spec)
    save_instance(instance, args.out)
    total_candidates = sum(len(p.candidates) for p in instance.prompts)
    print(
        f"wrote {args.out}: {len(instance.prompts)} prompts, "
        f"{total_candidates} candidates, budget={format_number(instance.budget)}, "
        f"ratio bounds [{format_number(instance.ratio_lower)}, "
        f"{format_number(instance.ratio_upper)}], seed={spec.seed}"
    )
    return EXIT_OK


def _parse_sweep(raw: str | None, instance) -> tuple[float, ...] | None:
    if raw is None:
        return None
    if raw.strip().lower() == "default":
        return default_budget_grid(instance)
    try:
        return tuple(_budget_value(part) for part in raw.split(",") if part.strip())
    except argparse.ArgumentTypeError as exc:
        raise ValueError(f"bad --budget-sweep: {exc}") from exc


def _fmt_opt(x, digits=6) -> str:
    return "n/a" if x is None else f"{x:.{digits}g}"


def _cmd_simulate(args) -> int:
    instance = load_instance(args.instance)
    sweep = _parse_sweep(args.budget_sweep, instance)
    plan = ExperimentPlan(
        instance=instance,
        policies=args.policy,
        repetitions=args.reps,
        master_seed=args.seed,
        budget_sweep=sweep,
        include_offline=not args.no_offline,
        price_quantum=args.quantum,
    )
    report = run_experiment(plan)
    if args.out:
        write_results(report.records, args.out)
    if args.agg_out:
        write_aggregates(report.aggregates, args.agg_out)
    for row in report.aggregates:
        print(
            f"{row.policy} budget={format_number(row.budget)} reps={row.repetitions} "
            f"nep={row.nep_mean:.6g} ar={_fmt_opt(row.ar_mean)} "
            f"nep_x_ar={row.nep_times_ar_mean:.6g}"
            f" (stderr {row.nep_times_ar_stderr:.3g}) "
            f"spent={row.spent_mean:.6g} "
            f"perf_to_budget={_fmt_opt(row.perf_to_budget_mean)}"
        )
    for budget, note in sorted(report.offline_notes.items()):
        if report.offline.get(budget) is None and not args.no_offline:
            print(f"offline budget={format_number(budget)}: {note}", file=sys.stderr)
    return EXIT_OK


def _cmd_solve(args) -> int:
    instance = load_instance(args.instance)
    if args.method == "brute":
        solution = solve_bruteforce(instance)
    else:
        solution = solve_dp(instance, args.quantum)
    print(
        f"method={args.method} objective={format_number(solution.objective)} "
        f"spent={format_number(solution.spent)} "
        f"enriched={len(solution.selections)}/{len(instance.prompts)}"
    )
    for prompt in instance.prompts:
        chosen = solution.selections.get(prompt.prompt_id)
        if chosen is None:
            print(f"{prompt.prompt_id} pass")
        else:
            print(
                f"{prompt.prompt_id} {chosen.chunk_id} "
                f"relevance={format_number(chosen.relevance)} "
                f"price={format_number(chosen.price)}"
            )
    return EXIT_OK


def _cmd_adversary(args) -> int:
    family = build_family(args.L, args.U, args.eta, args.budget_units)
    bound = expected_ratio_bound(family)
    span = math.log(family.ratio_upper / family.ratio_lower)
    print(
        f"k={family.k} H={format_number(family.harmonic_denominator)} "
        f"probabilities={','.join(format_number(p) for p in family.probabilities)}"
    )
    print(f"online_expected_ratio_ceiling={format_number(bound)}")
    print(
        f"asymptotic_ceiling={format_number(asymptotic_ratio_limit(family))} "
        f"(= 1/(ln(U/L)+1))"
    )
    print(f"threshold_policy_floor={format_number(1.0 / (span + 2.0))} (= 1/(ln(U/L)+2))")
    result = empirical_competitive_ratio(
        family, samples=args.samples, seed=args.seed, policy="ucosa"
    )
    print(
        f"empirical_ucosa_ratio mean={format_number(result.mean)} "
        f"stderr={format_number(result.stderr)} samples={result.samples}"
    )
    return EXIT_OK


def _aggregate_rows(rows: list[dict]) -> list[dict]:
    cells: dict[tuple[str, float], list[dict]] = {}
    for row in rows:
        cells.setdefault((row["policy"], row["budget"]), []).append(row)
    out = []
    for (policy, budget), group in sorted(cells.items()):
        nxa = [r["nep_times_ar"] for r in group]
        ar_vals = [r["ar"] for r in group if r["ar"] is not None]
        ptb_vals = [r["perf_to_budget"] for r in group if r["perf_to_budget"] is not None]
        std = statistics.stdev(nxa) if len(nxa) > 1 else 0.0
        out.append(
            {
                "policy": policy,
                "budget": budget,
                "repetitions": len(group),
                "nep_mean": statistics.fmean(r["nep"] for r in group),
                "ar_mean": statistics.fmean(ar_vals) if ar_vals else None,
                "nep_times_ar_mean": statistics.fmean(nxa),
                "nep_times_ar_stderr": std / math.sqrt(len(nxa)) if len(nxa) > 1 else 0.0,
                "spent_mean": statistics.fmean(r["spent"] for r in group),
                "perf_to_budget_mean": statistics.fmean(ptb_vals) if ptb_vals else None,
            }
        )
    return out


def _billing_variants(rows: list[dict], num_prompts: int) -> list[dict]:
    """Cost / performance / performance-per-cost per billing variant.

    Flat per-prompt billing charges every prompt the average attached-chunk
    price of the unconstrained run; open per-chunk billing charges exactly
    what the unconstrained run attached; budget-capped billing reruns
    selection under each finite budget found in the results.
    """
    open_rows = [r for r in rows if r["policy"] == "open"]
    capped_rows = [r for r in rows if r["policy"] == "ucosa"]
    variants = []
    if open_rows:
        perf = statistics.fmean(r["nep_times_ar"] for r in open_rows)
        chunk_mean = statistics.fmean(r["spent"] for r in open_rows)
        flat_costs = [
            raas_cost(num_prompts, r["spent"] / r["nep"]) for r in open_rows if r["nep"]
        ]
        if flat_costs:
            flat = statistics.fmean(flat_costs)
            variants.append(
                {
                    "variant": "flat_per_prompt",
                    "budget": None,
                    "cost": flat,
                    "nep_times_ar": perf,
                    "perf_to_budget": perf / flat if flat > 0 else None,
                }
            )
        variants.append(
            {
                "variant": "open_per_chunk",
                "budget": None,
                "cost": chunk_mean,
                "nep_times_ar": perf,
                "perf_to_budget": perf / chunk_mean if chunk_mean > 0 else None,
            }
        )
    for budget in sorted({r["budget"] for r in capped_rows}):
        group = [r for r in capped_rows if r["budget"] == budget]
        perf = statistics.fmean(r["nep_times_ar"] for r in group)
        cost = statistics.fmean(r["spent"] for r in group)
        variants.append(
            {
                "variant": "budget_capped",
                "budget": budget,
                "cost": cost,
                "nep_times_ar": perf,
                "perf_to_budget": perf / cost if cost > 0 else None,
            }
        )
    return variants


def _cmd_report(args) -> int:
    rows: list[dict] = []
    for path in args.results:
        rows.extend(read_results(path))
    aggregates = _aggregate_rows(rows)

    variants = None
    if args.instance is not None:
        instance = load_instance(args.instance, warn=False)
        variants = _billing_variants(rows, len(instance.prompts))

    if args.format == "table":
        header = (
            f"{'policy':<10} {'budget':>12} {'reps':>5} {'nep':>8} {'ar':>8} "
            f"{'nep_x_ar':>10} {'stderr':>8} {'spent':>10} {'perf/spend':>10}"
        )
        print(header)
        print("-" * len(header))
        for a in aggregates:
            print(
                f"{a['policy']:<10} {format_number(a['budget']):>12} "
                f"{a['repetitions']:>5} {a['nep_mean']:>8.3f} "
                f"{_fmt_opt(a['ar_mean'], 4):>8} {a['nep_times_ar_mean']:>10.4f} "
                f"{a['nep_times_ar_stderr']:>8.3g} {a['spent_mean']:>10.4f} "
                f"{_fmt_opt(a['perf_to_budget_mean'], 4):>10}"
            )
        if variants is not None:
            print()
            print("billing variants:")
            for v in variants:
                budget_note = (
                    "" if v["budget"] is None else f" (budget {format_number(v['budget'])})"
                )
                print(
                    f"  {v['variant']:<16} cost={v['cost']:.6g} "
                    f"nep_x_ar={v['nep_times_ar']:.6g} "
                    f"perf_to_budget={_fmt_opt(v['perf_to_budget'])}{budget_note}"
                )
    else:
        print("# series: aggregate_by_policy")
        print("policy,budget,repetitions,nep_mean,ar_mean,nep_times_ar_mean,nep_times_ar_stderr,spent_mean,perf_to_budget_mean")
        for a in aggregates:
            print(
                f"{a['policy']},{format_number(a['budget'])},{a['repetitions']},"
                f"{format_number(a['nep_mean'])},{format_number(a['ar_mean'])},"
                f"{format_number(a['nep_times_ar_mean'])},"
                f"{format_number(a['nep_times_ar_stderr'])},"
                f"{format_number(a['spent_mean'])},"
                f"{format_number(a['perf_to_budget_mean'])}"
            )
        print("# series: budget_performance")
        print("policy,budget,nep_times_ar_mean,nep_times_ar_stderr")
        for a in aggregates:
            print(
                f"{a['policy']},{format_number(a['budget'])},"
                f"{format_number(a['nep_times_ar_mean'])},"
                f"{format_number(a['nep_times_ar_stderr'])}"
            )
        if variants is not None:
            print("# series: billing_variants")
            print("variant,budget,cost,nep_times_ar,perf_to_budget")
            for v in variants:
                print(
                    f"{v['variant']},{format_number(v['budget'])},"
                    f"{format_number(v['cost'])},{format_number(v['nep_times_ar'])},"
                    f"{format_number(v['perf_to_budget'])}"
                )
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidInstanceError as exc:
        print("error: instance failed validation:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  - {violation}", file=sys.stderr)
        return EXIT_INVALID_INSTANCE
    except (InstanceFormatError, GeneratorSpecError, ResultsFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QuantizationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_QUANTIZATION
    except InstanceTooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

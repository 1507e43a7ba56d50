"""Budget-constrained online chunk selection for retrieval-augmented prompting.

The package streams prompts with priced retrieval candidates through online
selection policies, compares them against the offline optimum and an
adversarial lower-bound family, and ships the simulation, file, CLI, and
HTTP-service tooling around them.
"""

from .model import (
    Assignment,
    Candidate,
    Decision,
    Instance,
    InvalidInstanceError,
    PromptArrival,
    hard_violations,
    validate_instance,
)
from .selectors import (
    POLICY_NAMES,
    SelectorState,
    ThresholdParams,
    low_regime_end,
    make_selector,
    psi,
)
from .metrics import RunMetrics, chunk_cost, compute_metrics, perf_to_budget, raas_cost
from .offline import (
    InstanceTooLargeError,
    OfflineSolution,
    QuantizationError,
    solve_bruteforce,
    solve_dp,
)
from .adversary import (
    AdversarialFamily,
    build_family,
    empirical_competitive_ratio,
    expected_ratio,
    expected_ratio_bound,
    expected_ratio_direct,
    materialize,
    opt_value,
)
from .harness import (
    ExperimentPlan,
    ExperimentReport,
    RunRecord,
    default_budget_grid,
    open_budget_spend,
    run_experiment,
    run_stream,
    splitmix64,
)
from .instance_io import (
    GeneratorSpec,
    generate_synthetic,
    load_generator_spec,
    load_instance,
    read_results,
    save_instance,
    write_results,
)

__version__ = "0.1.0"

"""chernsim - Chernoff sampling for active hypothesis testing and regression.

Sequential experiment design: at every round pick an arm from the design
that best verifies the currently most likely hypothesis (finite testing) or
maximizes the smallest eigenvalue of the Fisher information at the current
estimate (active regression), then stop or refit. Baseline policies, problem
constants and a seeded Monte-Carlo harness are included.

Example:
    from chernsim import PolicyConfig, StoppingRule, run_trial, testing_envs

    env = testing_envs.get("example1").build()
    rule = StoppingRule.for_table(env.table, delta=0.1)
    report = run_trial(env, PolicyConfig("cs", seed=7), rule)
    print(report.stop_time, report.correct)
"""

from chernsim._version import __version__
from chernsim.core import (
    Design,
    MeansTable,
    NoiseSpec,
    TestingEnv,
    TrialHistory,
    TrialReport,
    draw_reward,
    most_likely,
    update_losses,
)
from chernsim.design_opt import (
    DesignSolution,
    EigInstance,
    LpInstance,
    VerificationDesigns,
    brute_force_design,
    solve_min_eig_design,
    solve_verification_lp,
    sparsify_design,
)
from chernsim.diagnostics import PredictedTerms, ProblemConstants, compute_constants, predicted_terms
from chernsim.envs import DatasetSpec, ingest_csv, regression_envs, testing_envs
from chernsim.exceptions import (
    AssumptionError,
    ChernsimError,
    ConfigError,
    DatasetError,
    DimensionError,
)
from chernsim.harness import (
    RunReport,
    derive_seed,
    published_schema,
    regression_report,
    testing_report,
)
from chernsim.persistence import TrialLog, write_report
from chernsim.registry import BuilderEntry, Registry
from chernsim.regression import (
    LinearModel,
    LogisticModel,
    ParamModel,
    RegressionEnv,
    RegressionMetrics,
    ReluNetModel,
    fit_least_squares,
    regression_step,
    run_regression,
)
from chernsim.testing_policies import PolicyConfig, StoppingRule, check_stop, run_trial
from chernsim.types import ArmSampler

__all__ = [
    "ArmSampler",
    "AssumptionError",
    "BuilderEntry",
    "ChernsimError",
    "ConfigError",
    "DatasetError",
    "DatasetSpec",
    "Design",
    "DesignSolution",
    "DimensionError",
    "EigInstance",
    "LinearModel",
    "LogisticModel",
    "LpInstance",
    "MeansTable",
    "NoiseSpec",
    "ParamModel",
    "PolicyConfig",
    "PredictedTerms",
    "ProblemConstants",
    "Registry",
    "RegressionEnv",
    "RegressionMetrics",
    "ReluNetModel",
    "RunReport",
    "StoppingRule",
    "TestingEnv",
    "TrialHistory",
    "TrialLog",
    "TrialReport",
    "VerificationDesigns",
    "__version__",
    "brute_force_design",
    "check_stop",
    "compute_constants",
    "derive_seed",
    "draw_reward",
    "fit_least_squares",
    "ingest_csv",
    "most_likely",
    "predicted_terms",
    "published_schema",
    "regression_envs",
    "regression_report",
    "regression_step",
    "run_regression",
    "run_trial",
    "solve_min_eig_design",
    "solve_verification_lp",
    "sparsify_design",
    "testing_envs",
    "testing_report",
    "update_losses",
    "write_report",
]

"""Command-line interface.

Subcommands ``test``, ``regress``, ``design``, ``diagnose`` and ``schema``.
Settings come from an optional JSON file (``--config``) overlaid with
flags. Exit status is 0 on success, 2 on configuration errors and 3 on
I/O or dataset errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from chernsim._version import __version__
from chernsim.config import (
    DesignConfig,
    DiagnoseConfig,
    EnvSelector,
    RegressionConfig,
    TestingConfig,
    load_config,
)
from chernsim.core import TestingEnv
from chernsim.design_opt import (
    DesignSolution,
    EigInstance,
    LpInstance,
    solve_min_eig_design,
    solve_verification_lp,
    sparsify_design,
)
from chernsim.diagnostics import PredictedTerms, ProblemConstants, compute_constants, predicted_terms
from chernsim.envs import regression_envs, testing_envs
from chernsim.exceptions import AssumptionError, ConfigError, DatasetError
from chernsim.harness import RunReport, published_schema, regression_report, testing_report
from chernsim.persistence import TrialLog, render_report, write_report
from chernsim.regression import RegressionEnv
from chernsim.testing_policies import StoppingRule
from chernsim.types import FloatArray

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3

# Output plumbing kept out of the echoed config so reports do not depend on it.
ECHO_EXCLUDE = {"out", "format", "log_level", "workers", "trial_log"}


class DesignReport(BaseModel):
    """A one-shot design computation."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    version: str = __version__
    env: str
    kind: Literal["lp", "eig"]
    hyp: int | None = None
    theta: list[float] | None = None
    probs: list[float]
    support: list[int]
    support_size: int
    objective: float
    iters: int
    converged: bool
    duality_gap: float
    degenerate: bool = False
    non_spanning: bool = False


class DiagnoseReport(BaseModel):
    """Problem constants and predicted sample-complexity terms."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    version: str = __version__
    env: str
    constants: ProblemConstants
    predicted: PredictedTerms


def _build_testing_env(selector: EnvSelector) -> TestingEnv:
    try:
        return testing_envs.get(selector.name).build(**selector.params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"env {selector.name}: {exc}") from exc


def _build_regression_env(selector: EnvSelector) -> RegressionEnv:
    try:
        return regression_envs.get(selector.name).build(**selector.params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"env {selector.name}: {exc}") from exc


def _echo(config: BaseModel) -> dict[str, Any]:
    return config.model_dump(mode="json", exclude=ECHO_EXCLUDE)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out = out.expanduser()
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")


def _deliver(report: RunReport, config: TestingConfig | RegressionConfig) -> None:
    if config.out is None:
        sys.stdout.write(render_report(report, config.format))
    else:
        write_report(report, config.out, config.format)


def cmd_test(config: TestingConfig) -> RunReport:
    """Run the finite testing comparison and write its report."""
    env = dataclasses.replace(_build_testing_env(config.env), noise=config.noise.build())
    try:
        env.noise.check_envelope(env.table.means)
        rule = StoppingRule.for_table(env.table, config.delta, config.stopping, env.noise.eta)
    except (AssumptionError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    report, results = testing_report(
        env,
        config.policy_configs(),
        rule,
        config.trials,
        config.master_seed,
        config.workers,
        config=_echo(config),
        constants=config.constants,
    )
    if config.trial_log is not None:
        log = TrialLog(config.trial_log)
        log.clear()
        with log:
            for reports in results.values():
                log.extend(reports)
        logger.info("trial log %s holds %d report(s)", log.file_path, log.count())
    _deliver(report, config)
    return report


def cmd_regress(config: RegressionConfig) -> RunReport:
    """Run the active regression comparison and write its report."""
    env = _build_regression_env(config.env)
    if config.noise is not None:
        env = dataclasses.replace(env, noise=config.noise.build())
    if config.horizon < env.model.dim:
        raise ConfigError(f"horizon {config.horizon} is below the model dimension {env.model.dim}")
    if "eog" in config.policies and not env.model.single_index:
        raise ConfigError(f"eog needs a single-index model, not {env.model.kind}")
    report = regression_report(
        env,
        config.policy_configs(),
        config.horizon,
        config.trials,
        config.master_seed,
        config.workers,
        config=_echo(config),
        per_decade=config.per_decade,
        sparsify=config.sparsify,
    )
    _deliver(report, config)
    return report


def _design_report(
    name: str,
    kind: Literal["lp", "eig"],
    solution: DesignSolution,
    probs: FloatArray,
    support: Sequence[int],
    **extra: Any,
) -> DesignReport:
    return DesignReport(
        env=name,
        kind=kind,
        probs=[float(p) for p in probs],
        support=[int(i) for i in support],
        support_size=len(support),
        objective=solution.objective,
        iters=solution.iters,
        converged=solution.converged,
        duality_gap=solution.duality_gap,
        degenerate=solution.degenerate,
        non_spanning=solution.non_spanning,
        **extra,
    )


def cmd_design(config: DesignConfig) -> DesignReport:
    """Compute one design: verification LP for testing envs, eigenvalue design otherwise."""
    if config.format != "json":
        raise ConfigError("design output is JSON only")
    selector = config.env
    if selector.name in testing_envs:
        env = _build_testing_env(selector)
        hyp = env.true_hyp if config.hyp is None else config.hyp
        try:
            inst = LpInstance.for_hypothesis(env.table, hyp)
        except ValueError as exc:
            raise ConfigError(f"hyp: {exc}") from exc
        solution = solve_verification_lp(inst)
        design = sparsify_design(solution.design, inst) if config.sparsify else solution.design
        result = _design_report(env.name, "lp", solution, design.probs, design.support, hyp=hyp)
    else:
        reg = _build_regression_env(selector)
        theta = reg.theta_star if config.theta is None else np.asarray(config.theta)
        try:
            grads = reg.model.jacobian(theta)
        except ValueError as exc:
            raise ConfigError(f"theta: {exc}") from exc
        eig = EigInstance(grads)
        solution = solve_min_eig_design(eig)
        design = solution.design
        if config.sparsify and not solution.non_spanning:
            design = sparsify_design(design, eig)
        result = _design_report(
            reg.name,
            "eig",
            solution,
            design.probs,
            design.support,
            theta=[float(v) for v in theta],
        )
        result = result.model_copy(update={"objective": eig.value(design.probs)})
    _emit(result.model_dump_json(indent=2) + "\n", config.out)
    return result


def cmd_diagnose(config: DiagnoseConfig) -> DiagnoseReport:
    """Print problem constants and predicted terms of a testing environment."""
    if config.format != "json":
        raise ConfigError("diagnose output is JSON only")
    env = _build_testing_env(config.env)
    noise = config.noise.build()
    try:
        consts = compute_constants(env.table, env.true_hyp, noise=noise, decimals=config.decimals)
    except ValueError as exc:
        raise ConfigError(f"decimals: {exc}") from exc
    terms = predicted_terms(consts, env.table.hyp_count, config.delta)
    result = DiagnoseReport(env=env.name, constants=consts, predicted=terms)
    _emit(result.model_dump_json(indent=2) + "\n", config.out)
    return result


def _env_override(args: argparse.Namespace) -> dict[str, Any] | None:
    params: dict[str, Any] = {}
    for item in args.param or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            params[key] = raw
    if args.env is None:
        if params:
            raise ConfigError("--param needs --env")
        return None
    return {"name": args.env, "params": params}


def _policies(args: argparse.Namespace) -> list[str] | None:
    if args.policies is None:
        return None
    return [p.strip() for p in args.policies.split(",") if p.strip()]


def _common(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "env": _env_override(args),
        "out": args.out,
        "format": getattr(args, "format", None),
        "log_level": args.log_level,
    }


def _run_test(args: argparse.Namespace) -> int:
    overrides = {
        **_common(args),
        "policies": _policies(args),
        "delta": args.delta,
        "trials": args.trials,
        "master_seed": args.seed,
        "max_rounds": args.max_rounds,
        "stopping": args.stopping,
        "workers": args.workers,
        "trial_log": args.trial_log,
    }
    config = load_config(TestingConfig, args.config, overrides)
    logging.getLogger().setLevel(config.log_level)
    cmd_test(config)
    return EXIT_OK


def _run_regress(args: argparse.Namespace) -> int:
    overrides = {
        **_common(args),
        "policies": _policies(args),
        "horizon": args.horizon,
        "trials": args.trials,
        "master_seed": args.seed,
        "workers": args.workers,
    }
    config = load_config(RegressionConfig, args.config, overrides)
    logging.getLogger().setLevel(config.log_level)
    cmd_regress(config)
    return EXIT_OK


def _run_design(args: argparse.Namespace) -> int:
    theta = None
    if args.theta is not None:
        try:
            theta = [float(v) for v in args.theta.split(",")]
        except ValueError as exc:
            raise ConfigError(f"--theta: {exc}") from exc
    overrides = {
        **_common(args),
        "hyp": args.hyp,
        "theta": theta,
        "sparsify": False if args.no_sparsify else None,
    }
    config = load_config(DesignConfig, args.config, overrides)
    logging.getLogger().setLevel(config.log_level)
    cmd_design(config)
    return EXIT_OK


def _run_diagnose(args: argparse.Namespace) -> int:
    overrides = {**_common(args), "delta": args.delta, "decimals": args.decimals}
    config = load_config(DiagnoseConfig, args.config, overrides)
    logging.getLogger().setLevel(config.log_level)
    cmd_diagnose(config)
    return EXIT_OK


def _run_schema(args: argparse.Namespace) -> int:
    schema = RunReport.model_json_schema() if args.model else published_schema()
    _emit(json.dumps(schema, indent=2) + "\n", args.out)
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser, *, formats: bool = True) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--env", help="environment name")
    parser.add_argument(
        "--param", action="append", metavar="KEY=VALUE", help="environment builder parameter"
    )
    parser.add_argument("--out", type=Path, help="output file (stdout when omitted)")
    if formats:
        parser.add_argument("--format", choices=["json", "csv"])


def build_parser() -> argparse.ArgumentParser:
    """The ``chernsim`` argument parser."""
    parser = argparse.ArgumentParser(
        prog="chernsim", description="Chernoff sampling for active testing and regression"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging threshold"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    test = sub.add_parser(
        "test",
        help="compare testing policies by stopping time",
        epilog=testing_envs.describe(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    _add_common(test)
    test.add_argument("--policies", help="comma list: cs,top2,eps_cs,uniform,batch_cs:B")
    test.add_argument("--delta", type=float)
    test.add_argument("--trials", type=int)
    test.add_argument("--seed", type=int, help="master seed")
    test.add_argument("--max-rounds", type=int)
    test.add_argument("--stopping", choices=["gaussian", "sub_gaussian"])
    test.add_argument("--workers", type=int)
    test.add_argument("--trial-log", type=Path, help="JSONL file of per-trial reports")
    test.set_defaults(handler=_run_test)

    regress = sub.add_parser(
        "regress",
        help="compare regression policies by estimation error",
        epilog=regression_envs.describe(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    _add_common(regress)
    regress.add_argument("--policies", help="comma list: cs,eps_cs,uniform,eog,batch_cs:B")
    regress.add_argument("--horizon", type=int)
    regress.add_argument("--trials", type=int)
    regress.add_argument("--seed", type=int, help="master seed")
    regress.add_argument("--workers", type=int)
    regress.set_defaults(handler=_run_regress)

    design = sub.add_parser(
        "design",
        help="compute one sampling design",
        epilog=testing_envs.describe() + "\n\n" + regression_envs.describe(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    _add_common(design, formats=False)
    design.add_argument("--hyp", type=int, help="hypothesis to verify (testing envs)")
    design.add_argument("--theta", help="comma list of parameters (regression envs)")
    design.add_argument("--no-sparsify", action="store_true")
    design.set_defaults(handler=_run_design)

    diagnose = sub.add_parser(
        "diagnose",
        help="problem constants and predicted terms",
        epilog=testing_envs.describe(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    _add_common(diagnose, formats=False)
    diagnose.add_argument("--delta", type=float)
    diagnose.add_argument("--decimals", type=int, help="round verification designs first")
    diagnose.set_defaults(handler=_run_diagnose)

    schema = sub.add_parser("schema", help="print the published run report JSON schema")
    schema.add_argument("--out", type=Path)
    schema.add_argument(
        "--model", action="store_true", help="generate from the report model instead of the shipped file"
    )
    schema.set_defaults(handler=_run_schema)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level or "WARNING",
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return int(args.handler(args))
    except ConfigError as exc:
        print(f"chernsim: config error: {exc.describe()}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"chernsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, OSError) as exc:
        print(f"chernsim: {exc}", file=sys.stderr)
        return EXIT_IO

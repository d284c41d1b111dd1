"""Experiment configuration.

Pydantic models for every CLI command, loaded from an optional JSON file
and overlaid with explicit command-line flags. Errors point at the file
and line of the offending key.
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path
from typing import Any, Literal, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from chernsim.core import DEFAULT_STD, NoiseKind, NoiseSpec
from chernsim.envs import regression_envs, testing_envs
from chernsim.exceptions import ConfigError
from chernsim.regression import REGRESSION_POLICIES
from chernsim.testing_policies import (
    DEFAULT_MAX_ROUNDS,
    TESTING_POLICIES,
    PolicyConfig,
    StoppingVariant,
)

logger = logging.getLogger(__name__)

OutputFormat = Literal["json", "csv"]
LogLevel = Literal["DEBUG", "INFO", "WARNING", "ERROR"]
ConfigT = TypeVar("ConfigT", bound="BaseConfig")


class BaseConfig(BaseModel):
    """Common settings of every command."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    out: Path | None = None
    format: OutputFormat = "json"
    log_level: LogLevel = "WARNING"


class EnvSelector(BaseModel):
    """Environment name plus builder parameters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    params: dict[str, Any] = Field(default_factory=dict)


class NoiseConfig(BaseModel):
    """Observation noise; see ``NoiseSpec``."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: NoiseKind = "gaussian"
    std: float = Field(default=DEFAULT_STD, ge=0.0)
    bound: float = Field(default=0.0, ge=0.0)
    eta: float | None = Field(default=None, gt=0.0)

    def build(self) -> NoiseSpec:
        """The matching NoiseSpec."""
        try:
            return NoiseSpec(self.kind, self.std, self.bound, self.eta)
        except ValueError as exc:
            raise ConfigError(f"noise: {exc}") from exc


def _check_env(selector: EnvSelector, known: list[str], kind: str) -> EnvSelector:
    if selector.name not in known:
        raise ValueError(f"unknown {kind} environment {selector.name!r} (known: {', '.join(known)})")
    return selector


class TestingConfig(BaseConfig):
    """Settings of ``chernsim test``."""

    __test__ = False

    env: EnvSelector = EnvSelector(name="example1")
    policies: list[str] = Field(default_factory=lambda: ["cs", "top2", "eps_cs", "uniform"], min_length=1)
    delta: float = Field(default=0.1, gt=0.0, lt=1.0)
    trials: int = Field(default=100, ge=1)
    master_seed: int = Field(default=0, ge=0)
    max_rounds: int = Field(default=DEFAULT_MAX_ROUNDS, ge=1)
    stopping: StoppingVariant = "gaussian"
    noise: NoiseConfig = NoiseConfig()
    refresh_on_leader_change: bool = True
    workers: int = Field(default=1, ge=1)
    trial_log: Path | None = None
    constants: bool = True

    @field_validator("env")
    @classmethod
    def _known_env(cls, value: EnvSelector) -> EnvSelector:
        return _check_env(value, testing_envs.names(), "testing")

    @field_validator("policies")
    @classmethod
    def _known_policies(cls, value: list[str]) -> list[str]:
        names = []
        for text in value:
            policy = PolicyConfig.parse(text)
            if policy.kind not in TESTING_POLICIES:
                raise ValueError(f"policy {text!r} has no testing counterpart")
            names.append(policy.name)
        if len(set(names)) != len(names):
            raise ValueError("policies repeat")
        return names

    def policy_configs(self) -> list[PolicyConfig]:
        """One template PolicyConfig per requested policy (seed filled per trial)."""
        return [
            PolicyConfig.parse(
                text,
                max_rounds=self.max_rounds,
                refresh_on_leader_change=self.refresh_on_leader_change,
            )
            for text in self.policies
        ]


class RegressionConfig(BaseConfig):
    """Settings of ``chernsim regress``."""

    env: EnvSelector = EnvSelector(name="logistic_groups")
    policies: list[str] = Field(default_factory=lambda: ["cs", "eps_cs", "uniform"], min_length=1)
    horizon: int = Field(default=500, ge=1)
    trials: int = Field(default=50, ge=1)
    master_seed: int = Field(default=0, ge=0)
    noise: NoiseConfig | None = None
    sparsify: bool = True
    per_decade: int = Field(default=10, ge=1)
    workers: int = Field(default=1, ge=1)

    @field_validator("env")
    @classmethod
    def _known_env(cls, value: EnvSelector) -> EnvSelector:
        return _check_env(value, regression_envs.names(), "regression")

    @field_validator("policies")
    @classmethod
    def _known_policies(cls, value: list[str]) -> list[str]:
        names = []
        for text in value:
            policy = PolicyConfig.parse(text)
            if policy.kind not in REGRESSION_POLICIES:
                raise ValueError(f"policy {text!r} has no regression counterpart")
            names.append(policy.name)
        if len(set(names)) != len(names):
            raise ValueError("policies repeat")
        return names

    def policy_configs(self) -> list[PolicyConfig]:
        return [PolicyConfig.parse(text) for text in self.policies]


class DesignConfig(BaseConfig):
    """Settings of ``chernsim design``.

    A testing environment with ``hyp`` gives the verification LP design; a
    regression environment gives the eigenvalue design at ``theta`` (the
    true parameter when omitted).
    """

    env: EnvSelector = EnvSelector(name="example1")
    hyp: int | None = Field(default=None, ge=0)
    theta: list[float] | None = None
    sparsify: bool = True

    @field_validator("env")
    @classmethod
    def _known_env(cls, value: EnvSelector) -> EnvSelector:
        return _check_env(value, testing_envs.names() + regression_envs.names(), "design")


class DiagnoseConfig(BaseConfig):
    """Settings of ``chernsim diagnose``."""

    env: EnvSelector = EnvSelector(name="example1")
    delta: float = Field(default=0.1, gt=0.0, lt=1.0)
    decimals: int | None = Field(default=None, ge=0)
    noise: NoiseConfig = NoiseConfig()

    @field_validator("env")
    @classmethod
    def _known_env(cls, value: EnvSelector) -> EnvSelector:
        return _check_env(value, testing_envs.names(), "testing")


def _key_line(text: str, loc: tuple[int | str, ...]) -> int | None:
    """1-based line of the innermost key of ``loc`` in a JSON document."""
    pos = 0
    found = False
    for key in loc:
        if not isinstance(key, str):
            continue
        match = re.search(rf'"{re.escape(key)}"\s*:', text[pos:])
        if match is None:
            break
        pos += match.start()
        found = True
    return text.count("\n", 0, pos) + 1 if found else None


def _describe(error: dict[str, Any]) -> str:
    loc = ".".join(str(part) for part in error["loc"]) or "config"
    return f"{loc}: {error['msg']}"


def load_config(
    model: type[ConfigT],
    path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> ConfigT:
    """Build ``model`` from a JSON file and explicit overrides.

    ``None`` values in ``overrides`` are ignored, so unset CLI flags never
    shadow the file.

    Raises:
        ConfigError: Malformed JSON or invalid settings, located by line
            when the value came from the file.
        OSError: The file cannot be read.
    """
    data: dict[str, Any] = {}
    text = ""
    source = str(path) if path is not None else None
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, path=source, line=exc.lineno) from exc
        if not isinstance(loaded, dict):
            raise ConfigError("top level must be a JSON object", path=source, line=1)
        data = loaded
    flags = {key: value for key, value in (overrides or {}).items() if value is not None}
    data = {**data, **flags}

    try:
        return model.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = tuple(first["loc"])
        if loc and loc[0] in flags:
            raise ConfigError(f"--{str(loc[0]).replace('_', '-')}: {first['msg']}") from exc
        line = _key_line(text, loc) if text else None
        raise ConfigError(_describe(dict(first)), path=source, line=line) from exc

"""Environment builders and CSV dataset ingestion.

Finite testing environments (the two-arm counterexample, the three-group
table, the minimax family), regression environments (logistic groups,
ReLU network, random linear), loaders for user CSV files, and the named
registries the CLI selects environments from.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import numpy.typing as npt
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from chernsim.core import DEFAULT_STD, MeansTable, NoiseSpec, TestingEnv
from chernsim.exceptions import DatasetError, DimensionError
from chernsim.registry import Registry
from chernsim.regression import LinearModel, LogisticModel, RegressionEnv, ReluNetModel
from chernsim.types import FloatArray

logger = logging.getLogger(__name__)

EXAMPLE1_MEANS = ((1.0, 0.001, 0.0), (1.0, 1.002, 0.998))
THREE_GROUP_ARMS = 50
THREE_GROUP_HYPS = 6
THREE_GROUP_IOTA = 0.01
LOGISTIC_GROUP_IOTA = 0.05
LOGISTIC_DIAGONAL = 0.71

testing_envs: Registry[TestingEnv] = Registry("testing environment")
regression_envs: Registry[RegressionEnv] = Registry("regression environment")


def _distinct_uniform(
    rng: np.random.Generator, size: int, high: float, max_rounds: int = 100
) -> FloatArray:
    """``size`` pairwise distinct draws from the open interval (0, high)."""
    values = rng.uniform(0.0, high, size)
    for _ in range(max_rounds):
        _, first = np.unique(values, return_index=True)
        clash = np.ones(size, dtype=bool)
        clash[first] = False
        clash |= values <= 0.0
        if not clash.any():
            return values
        values[clash] = rng.uniform(0.0, high, int(clash.sum()))
    raise RuntimeError("could not draw distinct perturbations")


def _assert_positive_gap(table: MeansTable, name: str) -> None:
    if table.eta0() <= 0.0:
        raise DimensionError(f"{name}: two hypotheses share a mean on some arm (eta0 = 0)")


@testing_envs.register("example1", summary="two arms, three hypotheses; uniform beats CS")
def build_example1() -> TestingEnv:
    """The two-arm, three-hypothesis table where the truth is hypothesis 0."""
    table = MeansTable(np.array(EXAMPLE1_MEANS))
    _assert_positive_gap(table, "example1")
    return TestingEnv("example1", table, 0)


@testing_envs.register(
    "three_group", summary="50 arms in three informativeness groups", params={"seed": 0}
)
def build_three_group(seed: int = 0) -> TestingEnv:
    """50 arms x 6 hypotheses in three groups.

    One arm separates the truth from everything, five arms each single out
    one hypothesis, and 44 arms are barely informative.

    Arm 0 is 0 under five hypotheses, so this table has eta0 = 0.
    """
    rng = np.random.default_rng(seed)
    means = np.empty((THREE_GROUP_ARMS, THREE_GROUP_HYPS))
    means[0] = [3.0] + [0.0] * (THREE_GROUP_HYPS - 1)
    for arm in range(1, THREE_GROUP_HYPS):
        means[arm] = 2.0
        means[arm, arm] = 3.0
    rest = THREE_GROUP_ARMS - THREE_GROUP_HYPS
    iota = _distinct_uniform(rng, rest * THREE_GROUP_HYPS, THREE_GROUP_IOTA)
    means[THREE_GROUP_HYPS:] = 1.0 + iota.reshape(rest, THREE_GROUP_HYPS)
    table = MeansTable(means)
    logger.debug("three_group table built (seed %d, eta0 %.3g)", seed, table.eta0())
    return TestingEnv("three_group", table, 0)


@testing_envs.register(
    "minimax",
    summary="one arm carries all discrimination power",
    params={"hyp_count": 4, "arm_count": 10, "gamma": 1.0, "seed": 0},
)
def build_minimax(hyp_count: int = 4, arm_count: int = 10, gamma: float = 1.0, seed: int = 0) -> TestingEnv:
    """Minimax family: only arm 0 discriminates.

    Arm 0 reads ``gamma * (1 - k/J)`` under hypothesis k; every other arm
    holds distinct values below ``gamma / (4J)``.

    Raises:
        ValueError: ``gamma <= 0``, fewer than two hypotheses or no arms.
    """
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if hyp_count < 2 or arm_count < 1:
        raise ValueError("minimax needs J >= 2 and n >= 1")
    rng = np.random.default_rng(seed)
    means = np.empty((arm_count, hyp_count))
    means[0] = gamma * (1.0 - np.arange(hyp_count) / hyp_count)
    if arm_count > 1:
        eps = _distinct_uniform(rng, (arm_count - 1) * hyp_count, gamma / (4.0 * hyp_count))
        means[1:] = eps.reshape(arm_count - 1, hyp_count)
    table = MeansTable(means)
    _assert_positive_gap(table, "minimax")
    return TestingEnv(f"minimax(J={hyp_count},gamma={gamma:g})", table, 0)


def build_means_csv(path: str | Path) -> MeansTable:
    """Read a numeric table (rows = arms, columns = hypotheses).

    A first row that is not entirely numeric is taken as a header.

    Raises:
        DatasetError: Unreadable file, empty table, missing or non-numeric cells.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, header=None, dtype=str, skipinitialspace=True)
    except OSError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    if pd.to_numeric(raw.iloc[0], errors="coerce").isna().any():
        raw = raw.iloc[1:]
    if raw.empty:
        raise DatasetError(f"{path}: no rows")
    if raw.isna().any().any():
        raise DatasetError(f"{path}: missing cells in the means table")
    numeric = raw.apply(pd.to_numeric, errors="coerce")
    if numeric.isna().any().any():
        row, col = np.argwhere(numeric.isna().to_numpy())[0]
        raise DatasetError(f"{path}: non-numeric cell {raw.iat[row, col]!r} at row {row + 1}")
    try:
        return MeansTable(numeric.to_numpy(dtype=np.float64))
    except DimensionError as exc:
        raise DatasetError(f"{path}: {exc}") from exc


@testing_envs.register(
    "means_csv", summary="means table from a CSV file", params={"path": "", "true_hyp": 0}
)
def _build_means_file(path: str = "", true_hyp: int = 0) -> TestingEnv:
    if not path:
        raise ValueError("means_csv needs a path")
    return TestingEnv(f"csv:{Path(path).name}", build_means_csv(path), true_hyp)


@regression_envs.register(
    "logistic_groups", summary="50 logistic arms in three groups", params={"seed": 0}
)
def build_logistic_groups(seed: int = 0) -> RegressionEnv:
    """Optimal arm (1, 0), informative arm (0, 1) and 48 near-diagonal arms.

    The near-diagonal arms are ``(0.71 + s*iota, 0.71 - s*iota)`` with
    alternating sign ``s`` and distinct ``iota`` in (0, 0.05); the true
    parameter is (1, 0).
    """
    rng = np.random.default_rng(seed)
    iota = _distinct_uniform(rng, 48, LOGISTIC_GROUP_IOTA)
    signs = np.where(np.arange(48) % 2 == 0, 1.0, -1.0)
    diagonal = np.column_stack(
        [LOGISTIC_DIAGONAL + signs * iota, LOGISTIC_DIAGONAL - signs * iota]
    )
    features = np.vstack([[1.0, 0.0], [0.0, 1.0], diagonal])
    return RegressionEnv("logistic_groups", LogisticModel(features), np.array([1.0, 0.0]))


def _two_cluster_cloud(rng: np.random.Generator, n_points: int) -> FloatArray:
    big = int(round(0.7 * n_points))
    first = rng.normal([-1.0, 0.5], 0.5, size=(big, 2))
    second = rng.normal([1.0, -0.5], 0.3, size=(n_points - big, 2))
    return np.vstack([first, second])


@regression_envs.register(
    "relu_net",
    summary="two-unit ReLU network over a two-cluster point cloud",
    params={"seed": 0, "n_points": 100},
)
def build_relu_net(seed: int = 0, n_points: int = 100, max_tries: int = 1000) -> RegressionEnv:
    """Seeded non-uniform 2-D point cloud and a seeded true network.

    The true network is redrawn until each hidden unit is active on at
    least 10% and at most 90% of the points.

    Raises:
        ValueError: Fewer than 10 points.
    """
    if n_points < 10:
        raise ValueError(f"relu_net needs at least 10 points, got {n_points}")
    rng = np.random.default_rng(seed)
    model = ReluNetModel(_two_cluster_cloud(rng, n_points))
    for _ in range(max_tries):
        theta = np.concatenate(
            [
                rng.standard_normal(2),
                0.5 * rng.standard_normal(1),
                rng.standard_normal(2),
                0.5 * rng.standard_normal(1),
                rng.choice([-1.0, 1.0], size=2),
            ]
        )
        pre1 = model.features @ theta[0:2] + theta[2]
        pre2 = model.features @ theta[3:5] + theta[5]
        active = np.array([np.mean(pre1 > 0.0), np.mean(pre2 > 0.0)])
        if np.all((active >= 0.1) & (active <= 0.9)):
            return RegressionEnv("relu_net", model, theta)
    raise RuntimeError("could not draw a non-degenerate network")


@regression_envs.register(
    "linear",
    summary="random Gaussian linear model",
    params={"seed": 0, "arm_count": 20, "dim": 3},
)
def build_linear(seed: int = 0, arm_count: int = 20, dim: int = 3) -> RegressionEnv:
    """Gaussian features and a Gaussian true parameter.

    Raises:
        ValueError: Fewer arms than dimensions.
    """
    if dim < 1 or arm_count < dim:
        raise ValueError(f"need arm_count >= dim >= 1, got n={arm_count}, d={dim}")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((arm_count, dim))
    if np.linalg.matrix_rank(features) < dim:
        raise DimensionError("features do not span")
    return RegressionEnv("linear", LinearModel(features), rng.standard_normal(dim))


class DatasetSpec(BaseModel):
    """Where and how to read a regression dataset.

    Attributes:
        path: CSV file (comma separated, header row, UTF-8).
        target_column: Target column name or 0-based index (negative counts
            from the end).
        feature_columns: Feature column names or indices; all non-target
            columns when empty.
        normalize: ``standardize`` centers and scales every feature.
        noise_std: Standard deviation of the simulated observation noise.
    """

    model_config = ConfigDict(frozen=True)

    path: Path
    target_column: str | int = -1
    feature_columns: list[str | int] = Field(default_factory=list)
    normalize: Literal["none", "standardize"] = "none"
    noise_std: float = Field(default=DEFAULT_STD, ge=0.0)

    @field_validator("feature_columns")
    @classmethod
    def _no_duplicates(cls, value: list[str | int]) -> list[str | int]:
        if len(set(value)) != len(value):
            raise ValueError("feature columns repeat")
        return value


@dataclass(frozen=True, eq=False)
class IngestedDataset:
    """A regression environment read from CSV plus ingestion bookkeeping."""

    env: RegressionEnv
    feature_names: tuple[str, ...]
    target_name: str
    dropped_rows: int


def _column(frame: pd.DataFrame, key: str | int, path: Path) -> str:
    columns = [str(c) for c in frame.columns]
    if isinstance(key, int):
        if not -len(columns) <= key < len(columns):
            raise DatasetError(f"{path}: column index {key} out of range")
        return columns[key]
    if key not in columns:
        raise DatasetError(f"{path}: no column named {key!r}")
    return key


def ingest_csv(spec: DatasetSpec) -> IngestedDataset:
    """Turn a CSV file into a linear regression environment.

    Rows become arms; the true parameter is the ordinary least-squares fit
    of the target on the features. Rows with a missing selected cell are
    dropped and counted.

    Raises:
        DatasetError: Unreadable file, non-numeric cell, constant feature
            under standardization, or fewer rows than features.
    """
    path = spec.path
    try:
        frame = pd.read_csv(path, encoding="utf-8", skipinitialspace=True)
    except OSError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    frame.columns = [str(c) for c in frame.columns]

    target = _column(frame, spec.target_column, path)
    if spec.feature_columns:
        features = [_column(frame, key, path) for key in spec.feature_columns]
    else:
        features = [c for c in frame.columns if c != target]
    if not features:
        raise DatasetError(f"{path}: no feature columns")
    if target in features:
        raise DatasetError(f"{path}: target {target!r} is also a feature")

    selected = frame[[*features, target]]
    missing = selected.isna()
    numeric = selected.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna() & ~missing
    if bad.any().any():
        row, col = np.argwhere(bad.to_numpy())[0]
        cell = selected.iat[row, col]
        raise DatasetError(
            f"{path}: non-numeric cell {cell!r} in column {selected.columns[col]!r}, row {row + 2}"
        )
    keep = ~missing.any(axis=1)
    dropped = int((~keep).sum())
    if dropped:
        logger.warning("%s: dropped %d row(s) with missing values", path, dropped)
    numeric = numeric[keep]

    x = numeric[features].to_numpy(dtype=np.float64)
    y = numeric[target].to_numpy(dtype=np.float64)
    n, d = x.shape
    if n < d:
        raise DatasetError(f"{path}: {n} usable rows but {d} features")
    if spec.normalize == "standardize":
        scale = x.std(axis=0)
        if np.any(scale == 0.0):
            raise DatasetError(f"{path}: constant feature cannot be standardized")
        x = (x - x.mean(axis=0)) / scale

    theta_star, *_ = np.linalg.lstsq(x, y, rcond=None)
    env = RegressionEnv(
        f"csv:{path.name}", LinearModel(x), theta_star, NoiseSpec.gaussian(spec.noise_std)
    )
    logger.info("%s: %d arms, %d features", path, n, d)
    return IngestedDataset(env, tuple(features), target, dropped)


def write_dataset_csv(
    env: RegressionEnv,
    path: str | Path,
    feature_names: npt.ArrayLike | None = None,
    target_name: str = "target",
) -> Path:
    """Write features and the noiseless target so that ingestion recovers ``env``."""
    path = Path(path)
    features = env.model.features
    names = (
        [str(n) for n in np.asarray(feature_names)]
        if feature_names is not None
        else [f"x{i}" for i in range(features.shape[1])]
    )
    if len(names) != features.shape[1]:
        raise DimensionError(f"{len(names)} names for {features.shape[1]} features")
    frame = pd.DataFrame(features, columns=names)
    frame[target_name] = env.true_means()
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


@regression_envs.register(
    "csv",
    summary="linear model from a CSV dataset",
    params={
        "path": "",
        "target_column": -1,
        "feature_columns": [],
        "normalize": "none",
        "noise_std": DEFAULT_STD,
    },
)
def _build_csv_env(
    path: str = "",
    target_column: str | int = -1,
    feature_columns: list[str | int] | None = None,
    normalize: Literal["none", "standardize"] = "none",
    noise_std: float = DEFAULT_STD,
) -> RegressionEnv:
    if not path:
        raise ValueError("csv environment needs a path")
    spec = DatasetSpec(
        path=Path(path),
        target_column=target_column,
        feature_columns=list(feature_columns or []),
        normalize=normalize,
        noise_std=noise_std,
    )
    return ingest_csv(spec).env

"""Finite populations: synthetic superpopulation draws and CSV ingestion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import _rng
from .exceptions import ConfigError

MODELS = ("xi1", "xi2", "xi3", "xi4")
EXTERNAL = "external"

_N_COVARIATES = {"xi1": 4, "xi2": 4, "xi3": 4, "xi4": 6}

# Lower bound applied to |X1| before taking its log in xi4.
LOG_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class FinitePopulation:
    """N units with a response ``y`` and an ``(N, p)`` covariate matrix ``x``.

    ``signal`` holds the generating conditional mean m(X_u) for synthetic
    populations (None for external data); ``y - signal`` are the realised
    model errors. ``flags`` records generation caveats such as log clamping.
    """

    y: np.ndarray
    x: np.ndarray
    model_id: str
    seed: int | None = None
    columns: tuple[str, ...] = ()
    signal: np.ndarray | None = None
    flags: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim != 1 or y.size == 0:
            raise ValueError("population response must be a non-empty vector")
        if x.shape[0] != y.size:
            raise ValueError(f"x has {x.shape[0]} rows but y has {y.size}")
        if self.model_id in _N_COVARIATES and x.shape[1] != _N_COVARIATES[self.model_id]:
            raise ValueError(f"{self.model_id} needs {_N_COVARIATES[self.model_id]} covariates")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        if not self.columns:
            object.__setattr__(self, "columns", tuple(f"x{k + 1}" for k in range(x.shape[1])))

    @property
    def size(self) -> int:
        return self.y.size

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def errors(self) -> np.ndarray:
        if self.signal is None:
            raise ValueError("error terms are only known for synthetic populations")
        return self.y - self.signal


def generate_population(model_id: str, n: int, seed: int) -> FinitePopulation:
    """Draw ``n`` i.i.d. units from one of the four simulation models.

    Each covariate column and the error column use their own substream, so
    a column is reproducible on its own.
    """
    if model_id not in MODELS:
        raise ConfigError(f"unknown model {model_id!r}; expected one of {MODELS}")
    if n < 1:
        raise ValueError("population size must be at least 1")

    def col(k, kind, a, b):
        rng = _rng.substream(seed, "population", model_id, "x", k)
        return _rng.normal(rng, a, b, n) if kind == "normal" else _rng.uniform(rng, a, b, n)

    eps_rng = _rng.substream(seed, "population", model_id, "eps")
    flags = []

    if model_id == "xi1":
        x = np.column_stack([col(0, "normal", 2, 1), col(1, "normal", 2, 1),
                             col(2, "normal", 4, 1), col(3, "normal", 4, 1)])
        signal = 4 * x[:, 0] + 4 * x[:, 1] + 2 * x[:, 2] + 2 * x[:, 3]
        eps = _rng.normal(eps_rng, 0.0, 3.0, n)
    elif model_id == "xi2":
        x = np.column_stack([col(0, "uniform", 0, 4), col(1, "uniform", 0, 4),
                             col(2, "uniform", 4, 8), col(3, "uniform", 4, 8)])
        sq = x**2
        signal = (4 * sq[:, 0] + 4 * sq[:, 1] + 2 * sq[:, 2] + 2 * sq[:, 3]
                  + (x[:, 0] + x[:, 1]) ** 2 + (x[:, 2] + x[:, 3]) ** 2)
        eps = _rng.normal(eps_rng, 0.0, 50.0, n)
    elif model_id == "xi3":
        x = np.column_stack([col(k, "uniform", -1, 1) for k in range(4)])
        signal = -np.sin(x[:, 0]) + x[:, 1] ** 2 + x[:, 2] - np.exp(-x[:, 3] ** 2)
        eps = _rng.normal(eps_rng, 0.0, np.sqrt(0.5), n)
    else:
        x = np.column_stack([col(k, "normal", 0, 1) for k in range(6)])
        abs_x1 = np.abs(x[:, 0])
        if np.any(abs_x1 < LOG_FLOOR):
            flags.append("log_abs_x1_clamped")
        log_x1 = np.log(np.maximum(abs_x1, LOG_FLOOR))
        signal = (x[:, 0] + 0.707 * x[:, 1] ** 2 + 2.0 * (x[:, 2] > 0)
                  + 0.873 * log_x1 * np.abs(x[:, 2]) + 0.894 * x[:, 1] * x[:, 3]
                  + 2.0 * (x[:, 4] > 0) + 0.46 * np.exp(x[:, 5]))
        eps = _rng.normal(eps_rng, 0.0, 1.0, n)

    return FinitePopulation(y=signal + eps, x=x, model_id=model_id, seed=seed,
                            signal=signal, flags=tuple(flags))


def read_population_csv(path, response: str, covariates=None) -> FinitePopulation:
    """Load an external population; every non-response column is a covariate."""
    frame = pd.read_csv(path)
    if response not in frame.columns:
        raise ConfigError(f"response column {response!r} not found in {path}")
    covariates = list(covariates) if covariates else [c for c in frame.columns if c != response]
    missing = [c for c in covariates if c not in frame.columns]
    if missing:
        raise ConfigError(f"covariate columns not found in {path}: {missing}")
    sub = frame[[response, *covariates]]
    if sub.isna().any().any():
        bad = sub.columns[sub.isna().any()].tolist()
        raise ValueError(f"missing cells in {path}, columns {bad}")
    return FinitePopulation(y=sub[response].to_numpy(np.float64),
                            x=sub[covariates].to_numpy(np.float64),
                            model_id=EXTERNAL, columns=tuple(covariates))


def _values(pop_or_y) -> np.ndarray:
    if isinstance(pop_or_y, FinitePopulation):
        return pop_or_y.y
    return np.asarray(pop_or_y, dtype=np.float64)


def finite_cdf(pop, t):
    """Share of units with response at or below ``t`` (vectorised over ``t``)."""
    ys = np.sort(_values(pop))
    counts = np.searchsorted(ys, np.asarray(t, dtype=np.float64), side="right")
    out = counts / ys.size
    return float(out) if np.ndim(out) == 0 else out


def finite_quantile(pop, alpha: float) -> float:
    """Smallest response value whose population CDF reaches ``alpha``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    ys = np.sort(_values(pop))
    # CDF at each order statistic, computed exactly as finite_cdf does.
    cdf = np.searchsorted(ys, ys, side="right") / ys.size
    return float(ys[np.searchsorted(cdf, alpha, side="left")])

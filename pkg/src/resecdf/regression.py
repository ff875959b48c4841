"""Working-model fit on the convenience sample.

The mean function is linear with an intercept, m(x; b) = b0 + x @ b[1:],
and the known scale function nu(x) is either constant or |x_k|^power.
The fit solves the weighted least-squares score equation
sum_j (y_j - m(x_j; b)) x_j / nu(x_j)^2 = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import EstimationError, InvariantViolation


@dataclass(frozen=True)
class ScaleFunction:
    """nu(x): ``kind`` is "constant" (nu = value) or "power" (nu = |x[column]|^power)."""

    kind: str = "constant"
    value: float = 1.0
    column: int | None = None
    power: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "power"):
            raise ValueError(f"unknown scale function {self.kind!r}")
        if self.kind == "constant" and not self.value > 0:
            raise ValueError("constant scale must be strictly positive")
        if self.kind == "power" and self.column is None:
            raise ValueError("power scale needs a covariate column")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.kind == "constant":
            return np.full(x.shape[0], float(self.value))
        nu = np.abs(x[:, self.column]) ** self.power
        if not np.all(nu > 0) or not np.all(np.isfinite(nu)):
            raise InvariantViolation("scale function must be strictly positive and finite")
        return nu

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "column": self.column, "power": self.power}

    @classmethod
    def parse(cls, text: str) -> "ScaleFunction":
        """Parse "constant", "constant:2.5" or "power:<column>:<exponent>"."""
        parts = text.strip().split(":")
        if parts[0] == "constant":
            return cls("constant", value=float(parts[1]) if len(parts) > 1 else 1.0)
        if parts[0] == "power" and len(parts) == 3:
            return cls("power", column=int(parts[1]), power=float(parts[2]))
        raise ValueError(f"cannot parse scale function {text!r}")


@dataclass(frozen=True, eq=False)
class FittedModel:
    beta: np.ndarray
    residuals_sorted: np.ndarray
    nu: ScaleFunction = ScaleFunction()
    columns: tuple[str, ...] = ()

    @property
    def n_features(self) -> int:
        return self.beta.size - 1

    @property
    def n_residuals(self) -> int:
        return self.residuals_sorted.size

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} covariates, got {x.shape[1]}")
        return x

    def predict(self, x) -> np.ndarray:
        """m(x; beta) for each row of ``x``."""
        x = self._check(x)
        return self.beta[0] + x @ self.beta[1:]

    def scale(self, x) -> np.ndarray:
        return self.nu(self._check(x))

    def standardized_threshold(self, x, t):
        """(t - m(x)) / nu(x) per row; ``t`` broadcasts against the rows."""
        x = self._check(x)
        return (np.asarray(t, dtype=np.float64) - self.predict(x)) / self.nu(x)

    def to_json(self) -> str:
        return json.dumps({
            "beta": [float(b) for b in self.beta],
            "nu": self.nu.to_dict(),
            "columns": list(self.columns),
            "residuals_sorted": [float(r) for r in self.residuals_sorted],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        doc = json.loads(text)
        return cls(beta=np.asarray(doc["beta"], dtype=np.float64),
                   residuals_sorted=np.asarray(doc["residuals_sorted"], dtype=np.float64),
                   nu=ScaleFunction(**doc["nu"]), columns=tuple(doc["columns"]))


def predict(model: FittedModel, x_row) -> float | np.ndarray:
    """m(x; beta); a 1-D ``x_row`` is one unit and gives a float."""
    out = model.predict(x_row)
    return float(out[0]) if np.ndim(x_row) == 1 else out


def standardized_threshold(model: FittedModel, x_row, t: float):
    out = model.standardized_threshold(x_row, t)
    return float(out[0]) if np.ndim(x_row) == 1 else out


def _collinear_columns(design: np.ndarray, rank: int, names: list[str]) -> list[str]:
    _, _, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    return [names[k] for k in sorted(piv[rank:])]


def fit_linear(x, y, nu: ScaleFunction | None = None, columns=None, *, counts=None) -> FittedModel:
    """Weighted least-squares fit of y on [1, x].

    ``counts`` gives integer multiplicities (a bootstrap resample expressed as
    frequency weights); the residual pool then repeats each unit accordingly.
    """
    nu = nu or ScaleFunction()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=np.float64)
    n, p = x.shape
    names = ["intercept", *(columns or [f"x{k + 1}" for k in range(p)])]
    if counts is not None:
        counts = np.asarray(counts)
        keep = counts > 0
        x, y, counts = x[keep], y[keep], counts[keep]
        n_eff = int(counts.sum())
    else:
        n_eff = n
    if n_eff <= p + 1:
        raise ValueError(f"need more than {p + 1} rows to fit {p + 1} coefficients, got {n_eff}")

    scale = nu(x)
    root = 1.0 / scale if counts is None else np.sqrt(counts) / scale
    design = np.column_stack([np.ones(x.shape[0]), x])
    a = design * root[:, None]
    beta, _, rank, sv = np.linalg.lstsq(a, y * root, rcond=None)
    tol = sv.max() * max(a.shape) * np.finfo(np.float64).eps if sv.size else 0.0
    if rank < p + 1 or (sv.size and sv.min() <= tol):
        bad = _collinear_columns(a, min(rank, p), names)
        raise EstimationError(f"design matrix is rank deficient; collinear columns: {bad}", bad)
    if not np.all(np.isfinite(beta)):
        raise EstimationError("non-finite coefficients")

    resid = (y - design @ beta) / scale
    if counts is not None:
        resid = np.repeat(resid, counts)
    return FittedModel(beta=beta, residuals_sorted=np.sort(resid), nu=nu,
                       columns=tuple(names[1:]))

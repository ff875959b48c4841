"""Probability (SRS) and convenience (stratified MAR/MNAR) samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _rng
from .exceptions import ConfigError, SamplingError
from .population import FinitePopulation, finite_quantile

SRSWOR = "srswor"
EXTERNAL_WEIGHTS = "external"
MAR, MNAR, EXTERNAL = "MAR", "MNAR", "external"


@dataclass(frozen=True, eq=False)
class ProbabilitySample:
    """Sample A: covariates and design weights d_i = 1/pi_i.

    ``y`` is only attached in simulations and for real-data reference
    estimates; the integrated estimators never read it.
    """

    x: np.ndarray
    weight: np.ndarray
    pop_size: int
    design: str = SRSWOR
    idx: np.ndarray | None = None
    y: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 1 or w.size != x.shape[0]:
            raise ValueError("weight must be a vector with one entry per row of x")
        if w.size == 0:
            raise ValueError("probability sample is empty")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("design weights must be positive and finite")
        if self.design not in (SRSWOR, EXTERNAL_WEIGHTS):
            raise ConfigError(f"unknown design {self.design!r}")
        if self.pop_size < 1:
            raise ValueError("population size must be positive")
        if self.idx is not None and np.unique(self.idx).size != np.size(self.idx):
            raise ValueError("sample indices must be unique")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "weight", w)
        if self.y is not None:
            object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64))

    @property
    def size(self) -> int:
        return self.weight.size

    @property
    def fraction(self) -> float:
        return self.size / self.pop_size


@dataclass(frozen=True, eq=False)
class ConvenienceSample:
    """Sample B: response and covariates, no weights.

    ``inclusion`` holds the true Pr(u in B) over the population when the
    sample was drawn by :func:`draw_convenience`; it exists for simulation
    diagnostics only.
    """

    x: np.ndarray
    y: np.ndarray
    mechanism: str = EXTERNAL
    idx: np.ndarray | None = None
    inclusion: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 1 or y.size != x.shape[0]:
            raise ValueError("y must be a vector with one entry per row of x")
        if y.size == 0:
            raise ValueError("convenience sample is empty")
        if self.idx is not None and np.unique(self.idx).size != np.size(self.idx):
            raise ValueError("sample indices must be unique")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def size(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class JointInclusion:
    """Second-order inclusion probabilities for the units of sample A."""

    kind: str
    n: int
    pop_size: int | None = None
    explicit: np.ndarray | None = None

    def matrix(self) -> np.ndarray:
        if self.kind == SRSWOR:
            n, big_n = self.n, self.pop_size
            off = n * (n - 1) / (big_n * (big_n - 1)) if big_n > 1 else 1.0
            m = np.full((n, n), off)
            np.fill_diagonal(m, n / big_n)
            return m
        return self.explicit

    def first_order(self) -> np.ndarray:
        return np.diag(self.matrix()).copy()


def draw_srs_wor(pop: FinitePopulation | int, n: int, seed: int, *stream) -> ProbabilitySample:
    """Simple random sample without replacement; every weight is N/n.

    ``stream`` extends the substream path (e.g. a replicate number).
    """
    big_n = pop if isinstance(pop, int) else pop.size
    if not 1 <= n <= big_n:
        raise ValueError(f"sample size must be in [1, {big_n}], got {n}")
    rng = _rng.substream(seed, "sample-a", *stream)
    idx = np.sort(rng.choice(big_n, size=n, replace=False))
    weight = np.full(n, big_n / n)
    if isinstance(pop, int):
        return ProbabilitySample(x=np.empty((n, 0)), weight=weight, pop_size=big_n, idx=idx)
    return ProbabilitySample(x=pop.x[idx], weight=weight, pop_size=big_n, idx=idx, y=pop.y[idx])


def strongest_covariate(pop: FinitePopulation) -> int:
    """Column index of the covariate with the largest |Pearson r| against Y.

    Ties go to the lowest index; constant columns count as r = 0.
    """
    x = pop.x - pop.x.mean(axis=0)
    y = pop.y - pop.y.mean()
    denom = np.sqrt((x**2).sum(axis=0) * (y**2).sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, (x * y[:, None]).sum(axis=0) / denom, 0.0)
    return int(np.argmax(np.abs(r)))


def _allocation(n_b: int, upper_frac: float) -> tuple[int, int]:
    n_low = int(np.floor((1.0 - upper_frac) * n_b + 0.5))
    return n_low, n_b - n_low


def stratum_labels(pop: FinitePopulation, mechanism: str) -> np.ndarray:
    """True for units in the upper stratum (stratum II).

    MAR reads only the covariates; MNAR reads only the response.
    """
    if mechanism == MAR:
        col = pop.x[:, strongest_covariate(pop)]
        return col > finite_quantile(col, 0.5)
    if mechanism == MNAR:
        return pop.y > finite_quantile(pop.y, 0.5)
    raise ConfigError(f"unknown mechanism {mechanism!r}; expected MAR or MNAR")


def inclusion_probabilities(pop: FinitePopulation, n_b: int, mechanism: str,
                            upper_frac: float = 0.85) -> np.ndarray:
    """Pr(u in B) for every unit under the stratified design."""
    upper = stratum_labels(pop, mechanism)
    n_low, n_up = _allocation(n_b, upper_frac)
    size_up = int(upper.sum())
    size_low = pop.size - size_up
    _check_strata(size_low, size_up, n_low, n_up)
    return np.where(upper, n_up / size_up if size_up else 0.0,
                    n_low / size_low if size_low else 0.0)


def _check_strata(size_low, size_up, n_low, n_up):
    if n_low > size_low or n_up > size_up:
        raise SamplingError(
            f"stratum too small for allocation: sizes (I={size_low}, II={size_up}), "
            f"requested (I={n_low}, II={n_up})",
            stratum_sizes=(size_low, size_up), allocation=(n_low, n_up))


def draw_convenience(pop: FinitePopulation, n_b: int, mechanism: str, seed: int, *stream,
                     upper_frac: float = 0.85) -> ConvenienceSample:
    """Stratified SRS: round((1 - upper_frac) n_b) units from stratum I, the rest from II."""
    if not 0.0 < upper_frac < 1.0:
        raise ValueError("upper_frac must lie strictly between 0 and 1")
    if not 1 <= n_b <= pop.size:
        raise ValueError(f"n_b must be in [1, {pop.size}], got {n_b}")
    upper = stratum_labels(pop, mechanism)
    low_idx = np.flatnonzero(~upper)
    up_idx = np.flatnonzero(upper)
    n_low, n_up = _allocation(n_b, upper_frac)
    _check_strata(low_idx.size, up_idx.size, n_low, n_up)

    rng = _rng.substream(seed, "sample-b", mechanism, *stream)
    pick_low = rng.choice(low_idx.size, size=n_low, replace=False)
    pick_up = rng.choice(up_idx.size, size=n_up, replace=False)
    idx = np.sort(np.concatenate([low_idx[pick_low], up_idx[pick_up]]))
    incl = np.where(upper, n_up / max(up_idx.size, 1), n_low / max(low_idx.size, 1))
    return ConvenienceSample(x=pop.x[idx], y=pop.y[idx], mechanism=mechanism, idx=idx,
                             inclusion=incl)


def joint_inclusion(design: ProbabilitySample | str, n: int | None = None,
                    pop_size: int | None = None, explicit=None) -> JointInclusion:
    """Joint inclusion probabilities from an SRS descriptor or an explicit matrix.

    Raises ValueError when any pi_uv is outside (0, 1] or the matrix is not
    symmetric; the double-sum variance estimator needs every pair positive.
    """
    if isinstance(design, ProbabilitySample):
        n, pop_size, kind = design.size, design.pop_size, design.design
    else:
        kind = design
    if explicit is not None:
        m = np.asarray(explicit, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("joint inclusion matrix must be square")
        if n is not None and m.shape[0] != n:
            raise ValueError(f"joint inclusion matrix is {m.shape[0]}x{m.shape[0]}, sample has {n} units")
        if not np.allclose(m, m.T, rtol=0, atol=1e-12):
            raise ValueError("joint inclusion matrix must be symmetric")
        if np.any(m <= 0) or np.any(m > 1):
            raise ValueError("joint inclusion probabilities must lie in (0, 1]")
        return JointInclusion(kind="explicit", n=m.shape[0], explicit=m)
    if kind != SRSWOR:
        raise ValueError("joint inclusion probabilities need an SRS design or an explicit matrix")
    if n is None or pop_size is None or not 1 <= n <= pop_size:
        raise ValueError("SRS joint inclusion needs 1 <= n <= N")
    if n < 2 and pop_size > 1:
        raise ValueError("SRS with n = 1 has zero joint inclusion probabilities")
    return JointInclusion(kind=SRSWOR, n=n, pop_size=pop_size)

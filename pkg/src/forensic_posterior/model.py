"""Two-covariance Gaussian category models and their closed-form likelihoods.

Each category (sub-population) k carries a hidden per-person identity
variable ``Y ~ N(mean_k, B_k)``; every recording of that person is
``X | Y ~ N(Y, W_k)``.  Integrating ``Y`` out gives Gaussian likelihoods for
any number of recordings, which is all the inference layer needs.

All likelihoods are returned as natural-log densities.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = math.log(2.0 * math.pi)

# relative eigenvalue floor used for the PSD / PD checks
EIG_RTOL = 1e-10


class ModelError(ValueError):
    """Invalid model, catalog or evidence."""


class DimensionError(ModelError):
    """Recordings and model disagree on the feature dimension."""


def _as_matrix(value, name: str) -> np.ndarray:
    m = np.array(value, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ModelError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ModelError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(m))))
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * scale):
        raise ModelError(f"{name} is not symmetric")
    m = 0.5 * (m + m.T)
    m.setflags(write=False)
    return m


def _as_recordings(recordings, dim: int | None = None, name: str = "recordings") -> np.ndarray:
    x = np.array(recordings, dtype=float)
    if x.ndim == 1:
        # a flat list is a list of scalar (d=1) recordings
        x = x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ModelError(f"{name} must be a nonempty list of feature vectors")
    if not np.all(np.isfinite(x)):
        raise ModelError(f"{name} has non-finite entries")
    if dim is not None and x.shape[1] != dim:
        raise DimensionError(f"{name} have dimension {x.shape[1]}, model has {dim}")
    return x


@dataclass(frozen=True, eq=False)
class CategoryModel:
    """Generative model of one sub-population.

    ``between_cov`` is the spread of identity variables across people (may be
    exactly zero); ``within_cov`` is the spread of recordings around one
    person's identity variable and must be positive definite.
    """

    id: str
    label: str
    mean: np.ndarray
    between_cov: np.ndarray
    within_cov: np.ndarray
    _within_chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.array(self.mean, dtype=float))
        if mean.ndim != 1 or mean.size == 0 or not np.all(np.isfinite(mean)):
            raise ModelError(f"category {self.id!r}: mean must be a finite nonempty vector")
        mean.setflags(write=False)
        B = _as_matrix(self.between_cov, f"category {self.id!r}: between_cov")
        W = _as_matrix(self.within_cov, f"category {self.id!r}: within_cov")
        d = mean.size
        if B.shape != (d, d) or W.shape != (d, d):
            raise DimensionError(
                f"category {self.id!r}: mean has dimension {d} but covariances are "
                f"{B.shape} and {W.shape}"
            )
        eb = np.linalg.eigvalsh(B)
        if eb.min() < -EIG_RTOL * max(float(np.abs(eb).max()), np.finfo(float).tiny):
            raise ModelError(f"category {self.id!r}: between_cov is not positive semidefinite")
        ew = np.linalg.eigvalsh(W)
        if ew.min() <= EIG_RTOL * ew.max() or ew.max() <= 0:
            raise ModelError(f"category {self.id!r}: within_cov is not positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "between_cov", B)
        object.__setattr__(self, "within_cov", W)
        object.__setattr__(self, "_within_chol", np.linalg.cholesky(W))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class CategoryCatalog:
    """Ordered collection of category models sharing one feature dimension."""

    categories: tuple[CategoryModel, ...]

    def __post_init__(self):
        cats = tuple(self.categories)
        if not cats:
            raise ModelError("catalog must contain at least one category")
        ids = [c.id for c in cats]
        if len(set(ids)) != len(ids):
            raise ModelError(f"duplicate category ids in catalog: {ids}")
        dims = {c.dim for c in cats}
        if len(dims) != 1:
            raise DimensionError(f"categories have differing dimensions {sorted(dims)}")
        object.__setattr__(self, "categories", cats)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.categories)

    @property
    def dim(self) -> int:
        return self.categories[0].dim

    def __len__(self) -> int:
        return len(self.categories)

    def __iter__(self) -> Iterator[CategoryModel]:
        return iter(self.categories)

    def __getitem__(self, category_id: str) -> CategoryModel:
        for c in self.categories:
            if c.id == category_id:
                return c
        raise KeyError(category_id)

    def __contains__(self, category_id) -> bool:
        return category_id in self.ids


@dataclass(frozen=True, eq=False)
class Evidence:
    """Suspect recordings and trace (perpetrator) recordings, one row each."""

    suspect_recordings: np.ndarray
    trace_recordings: np.ndarray

    def __post_init__(self):
        xs = _as_recordings(self.suspect_recordings, name="suspect_recordings")
        xr = _as_recordings(self.trace_recordings, name="trace_recordings")
        if xs.shape[1] != xr.shape[1]:
            raise DimensionError(
                f"suspect recordings have dimension {xs.shape[1]}, trace recordings {xr.shape[1]}"
            )
        xs.setflags(write=False)
        xr.setflags(write=False)
        object.__setattr__(self, "suspect_recordings", xs)
        object.__setattr__(self, "trace_recordings", xr)

    @property
    def dim(self) -> int:
        return self.suspect_recordings.shape[1]

    def check_dim(self, dim: int) -> None:
        if self.dim != dim:
            raise DimensionError(f"evidence has dimension {self.dim}, models have {dim}")


# -- instrumentation ---------------------------------------------------------

class LikelihoodCounter:
    """Number of closed-form likelihood evaluations seen inside a ``with`` block."""

    def __init__(self):
        self.count = 0


_active_counters: ContextVar[tuple[LikelihoodCounter, ...]] = ContextVar(
    "_active_counters", default=()
)


@contextmanager
def count_likelihood_evaluations() -> Iterator[LikelihoodCounter]:
    counter = LikelihoodCounter()
    token = _active_counters.set(_active_counters.get() + (counter,))
    try:
        yield counter
    finally:
        _active_counters.reset(token)


def _tick() -> None:
    for c in _active_counters.get():
        c.count += 1


# -- likelihoods -------------------------------------------------------------

def _gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    L = np.linalg.cholesky(cov)
    z = solve_triangular(L, x - mean, lower=True)
    return float(-0.5 * x.size * LOG_2PI - np.log(np.diag(L)).sum() - 0.5 * z @ z)


def _marginal(x: np.ndarray, model: CategoryModel) -> float:
    # Splits the n recordings into their mean and the residual scatter:
    # the scatter only sees W, the mean is N(mu, B + W/n).
    n, d = x.shape
    _tick()
    xbar = x.mean(axis=0)
    Lw = model._within_chol
    ll = _gaussian_logpdf(xbar, model.mean, model.between_cov + model.within_cov / n)
    if n > 1:
        z = solve_triangular(Lw, (x - xbar).T, lower=True)
        logdet_w = 2.0 * np.log(np.diag(Lw)).sum()
        ll += (
            -0.5 * (n - 1) * d * LOG_2PI
            - 0.5 * (n - 1) * logdet_w
            - 0.5 * d * math.log(n)
            - 0.5 * float(np.sum(z * z))
        )
    return ll


def marginal_log_likelihood(recordings: Sequence | np.ndarray, model: CategoryModel) -> float:
    """Log density of recordings of one unknown individual from ``model``'s population.

    Equivalent to the log density of the stacked recordings under
    ``N(1_n kron mean, I_n kron W + 1_n 1_n^T kron B)``.
    """
    x = _as_recordings(recordings, model.dim)
    return _marginal(x, model)


def same_source_log_likelihood(evidence: Evidence, model: CategoryModel) -> float:
    """Log density of all suspect and trace recordings sharing one identity variable."""
    evidence.check_dim(model.dim)
    x = np.concatenate([evidence.suspect_recordings, evidence.trace_recordings], axis=0)
    return _marginal(x, model)


def different_source_log_likelihood(
    evidence: Evidence, suspect_model: CategoryModel, trace_model: CategoryModel
) -> float:
    evidence.check_dim(suspect_model.dim)
    evidence.check_dim(trace_model.dim)
    return _marginal(evidence.suspect_recordings, suspect_model) + _marginal(
        evidence.trace_recordings, trace_model
    )

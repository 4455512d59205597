"""Independent numerical checks for the closed forms and the posterior formula.

None of these routines call the closed-form Gaussian algebra in
:mod:`forensic_posterior.model` for the quantity they check.  Quadrature and
Monte Carlo integrate the identity variable out numerically using scipy's
densities.  :func:`exact_joint_posterior` enumerates every
(suspect category, trace category, hypothesis) triple under an explicit joint
prior instead of multiplying per-question posteriors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .inference import PriorConfig, posterior_general
from .model import (
    CategoryCatalog,
    CategoryModel,
    Evidence,
    _as_recordings,
    marginal_log_likelihood,
    same_source_log_likelihood,
)

MIN_POINTS = 16
DEFAULT_POINTS = 2048
COVER_SIGMAS = 8.0
# grid spacing as a fraction of the narrowest possible integrand width
_SPACING = 0.5
_MAX_GRID = 4_000_000


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    """Fixed-grid trapezoid rule over a box in identity-variable space."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points_per_dimension: int = DEFAULT_POINTS
    scheme: str = "trapezoid"

    def __post_init__(self):
        if self.scheme != "trapezoid":
            raise OracleError(f"unsupported quadrature scheme {self.scheme!r}")
        if self.points_per_dimension < MIN_POINTS:
            raise OracleError(f"need at least {MIN_POINTS} points per dimension")
        if len(self.lower) != len(self.upper) or not self.lower:
            raise OracleError("lower and upper bounds must have the same nonzero length")
        if any(not lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise OracleError("each lower bound must be below its upper bound")

    @classmethod
    def for_problem(cls, recordings, model: CategoryModel, min_points: int = DEFAULT_POINTS) -> "QuadratureSpec":
        """Box and resolution adequate for integrating ``recordings`` under ``model``.

        The box spans the model mean and every recording, padded by eight
        standard deviations of the widest direction of B + W.  The grid is
        refined until its spacing is half the smallest width the integrand
        can have, which follows from the eigenvalues of B and W alone.
        """
        x = _as_recordings(recordings, model.dim)
        n = x.shape[0]
        pad = COVER_SIGMAS * math.sqrt(np.linalg.eigvalsh(model.between_cov + model.within_cov).max())
        lo = np.minimum(model.mean, x.min(axis=0)) - pad
        hi = np.maximum(model.mean, x.max(axis=0)) + pad
        b_min = np.linalg.eigvalsh(model.between_cov).min()
        w_min = np.linalg.eigvalsh(model.within_cov).min()
        narrowest = math.sqrt(1.0 / (1.0 / b_min + n / w_min)) if b_min > 0 else 0.0
        points = min_points
        if narrowest > 0:
            points = max(points, int(math.ceil((hi - lo).max() / (_SPACING * narrowest))) + 1)
        return cls(tuple(lo.tolist()), tuple(hi.tolist()), points)


def _degenerate_log_likelihood(x: np.ndarray, model: CategoryModel) -> float:
    # B = 0: every recording is an independent draw around the mean
    mvn = stats.multivariate_normal(model.mean, model.within_cov)
    return float(np.atleast_1d(mvn.logpdf(x)).sum())


def _trapezoid_log_weights(lo: float, hi: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    grid = np.linspace(lo, hi, n)
    w = np.full(n, (hi - lo) / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return grid, np.log(w)


def quadrature_marginal(recordings, model: CategoryModel, spec: QuadratureSpec | None = None) -> float:
    """log of the integral over Y of prod_i N(x_i; Y, W) N(Y; mean, B), on a grid.

    Supports d <= 2.  With a between-individual covariance of exactly zero
    there is no density to integrate against; the integral then reduces to
    independent recordings around the mean, which is evaluated directly.
    """
    x = _as_recordings(recordings, model.dim)
    d = model.dim
    if d > 2:
        raise OracleError(f"grid quadrature supports d <= 2, got d={d}")
    if not np.any(model.between_cov):
        return _degenerate_log_likelihood(x, model)
    if np.linalg.eigvalsh(model.between_cov).min() <= 0:
        raise OracleError("grid quadrature needs a positive definite between_cov (or exactly zero)")
    if spec is None:
        spec = QuadratureSpec.for_problem(x, model)
    if len(spec.lower) != d:
        raise OracleError(f"quadrature box has dimension {len(spec.lower)}, model has {d}")
    pad = COVER_SIGMAS * math.sqrt(np.linalg.eigvalsh(model.between_cov + model.within_cov).max())
    for i in range(d):
        if spec.lower[i] > model.mean[i] - pad or spec.upper[i] < model.mean[i] + pad:
            raise OracleError("quadrature box does not cover the prior mass of the identity variable")
    n = spec.points_per_dimension
    if n**d > _MAX_GRID:
        raise OracleError(f"quadrature grid of {n}^{d} points is too large")

    axes = [_trapezoid_log_weights(spec.lower[i], spec.upper[i], n) for i in range(d)]
    if d == 1:
        y = axes[0][0][:, None]
        logw = axes[0][1]
    else:
        g0, g1 = np.meshgrid(axes[0][0], axes[1][0], indexing="ij")
        y = np.column_stack([g0.ravel(), g1.ravel()])
        logw = (axes[0][1][:, None] + axes[1][1][None, :]).ravel()

    log_f = stats.multivariate_normal(model.mean, model.between_cov).logpdf(y).reshape(-1)
    noise = stats.multivariate_normal(np.zeros(d), model.within_cov)
    for xi in x:
        log_f = log_f + noise.logpdf(xi - y).reshape(-1)
    return float(logsumexp(log_f + logw))


def quadrature_same_source(evidence: Evidence, model: CategoryModel, spec: QuadratureSpec | None = None) -> float:
    x = np.concatenate([evidence.suspect_recordings, evidence.trace_recordings], axis=0)
    return quadrature_marginal(x, model, spec)


def mc_marginal(recordings, model: CategoryModel, n_samples: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of the marginal log-likelihood and its standard error.

    Draws identity variables from N(mean, B) with a counter-based Philox
    generator, so a seed reproduces the estimate bit for bit.  The standard
    error is the delta-method error of the log of the sample mean.
    """
    if n_samples < 10_000:
        raise OracleError("Monte Carlo check needs at least 10^4 samples")
    x = _as_recordings(recordings, model.dim)
    d = model.dim
    eig_b, vec_b = np.linalg.eigh(model.between_cov)
    tol = 1e-10 * max(float(np.abs(eig_b).max()), np.finfo(float).tiny)
    if eig_b.min() < -tol:
        raise OracleError("between_cov is not positive semidefinite")
    root = vec_b * np.sqrt(np.clip(eig_b, 0.0, None))
    rng = np.random.Generator(np.random.Philox(seed))
    y = model.mean + rng.standard_normal((n_samples, d)) @ root.T

    noise = stats.multivariate_normal(np.zeros(d), model.within_cov)
    log_p = np.zeros(n_samples)
    for xi in x:
        log_p += noise.logpdf(xi - y).reshape(-1)
    m = log_p.max()
    p = np.exp(log_p - m)
    mean = p.mean()
    se = p.std(ddof=1) / math.sqrt(n_samples) / mean
    return float(m + math.log(mean)), float(se)


@dataclass(frozen=True)
class JointHypothesisSpace:
    """Explicit joint prior over (suspect category, trace category, hypothesis).

    Under H1 both people are the same, so H1 mass sits on the diagonal only:
    ``prior(k, k, H1) = pi_s[k] pi_r[k] pi_h[k]`` and
    ``prior(k, k, H2) = pi_s[k] pi_r[k] (1 - pi_h[k])``; off the diagonal all
    mass ``pi_s[k] pi_r[j]`` is H2.
    """

    catalog: CategoryCatalog
    prior: PriorConfig

    def __post_init__(self):
        self.prior.check_against(self.catalog)

    def joint_prior(self) -> np.ndarray:
        """Array indexed [suspect category, trace category, 0 for H1 / 1 for H2]."""
        ids = self.catalog.ids
        ps = np.array([self.prior.suspect.get(k, 0.0) for k in ids])
        pr = np.array([self.prior.trace.get(k, 0.0) for k in ids])
        ph = np.array([self.prior.h1_given_category.get(k, 0.0) for k in ids])
        outer = np.outer(ps, pr)
        out = np.zeros((len(ids), len(ids), 2))
        out[:, :, 1] = outer
        diag = np.arange(len(ids))
        out[diag, diag, 0] = outer[diag, diag] * ph
        out[diag, diag, 1] = outer[diag, diag] * (1.0 - ph)
        return out


def exact_joint_posterior(evidence: Evidence, space: JointHypothesisSpace) -> float:
    """P(H1 | evidence) by summing prior times likelihood over every joint state."""
    catalog = space.catalog
    evidence.check_dim(catalog.dim)
    prior = space.joint_prior()
    ids = catalog.ids
    log_s = {}
    log_r = {}
    h1_terms, all_terms = [], []
    for i, k in enumerate(ids):
        for j, c in enumerate(ids):
            for hyp in (0, 1):
                w = prior[i, j, hyp]
                if w <= 0.0:
                    continue
                if hyp == 0:
                    ll = same_source_log_likelihood(evidence, catalog[k])
                else:
                    if k not in log_s:
                        log_s[k] = marginal_log_likelihood(evidence.suspect_recordings, catalog[k])
                    if c not in log_r:
                        log_r[c] = marginal_log_likelihood(evidence.trace_recordings, catalog[c])
                    ll = log_s[k] + log_r[c]
                term = math.log(w) + ll
                all_terms.append(term)
                if hyp == 0:
                    h1_terms.append(term)
    if not all_terms:
        raise OracleError("joint prior has no mass")
    total = logsumexp(all_terms)
    if not np.isfinite(total):
        raise OracleError("evidence has zero probability under every joint state")
    if not h1_terms:
        return 0.0
    return float(np.exp(logsumexp(h1_terms) - total))


@dataclass(frozen=True)
class DiscrepancyReport:
    """Factorized-sum posterior against exact enumeration for the same inputs."""

    formula_posterior: float
    exact_posterior: float
    absolute_gap: float
    relative_gap: float


def discrepancy_report(evidence: Evidence, catalog: CategoryCatalog, prior: PriorConfig) -> DiscrepancyReport:
    formula = posterior_general(evidence, catalog, prior).posterior
    exact = exact_joint_posterior(evidence, JointHypothesisSpace(catalog, prior))
    gap = abs(formula - exact)
    if exact > 0:
        rel = gap / exact
    else:
        rel = 0.0 if gap == 0 else math.inf
    return DiscrepancyReport(formula, exact, gap, rel)


def quadrature_checks(
    evidence: Evidence, catalog: CategoryCatalog
) -> list[tuple[str, str, float, float]]:
    """(quantity, category, closed form, quadrature) for every category; d <= 2."""
    out = []
    for m in catalog:
        out.append(("suspect", m.id, marginal_log_likelihood(evidence.suspect_recordings, m),
                    quadrature_marginal(evidence.suspect_recordings, m)))
        out.append(("trace", m.id, marginal_log_likelihood(evidence.trace_recordings, m),
                    quadrature_marginal(evidence.trace_recordings, m)))
        out.append(("same_source", m.id, same_source_log_likelihood(evidence, m),
                    quadrature_same_source(evidence, m)))
    return out


def mc_checks(
    evidence: Evidence, catalog: CategoryCatalog, n_samples: int = 100_000, seed: int = 0
) -> list[tuple[str, str, float, float, float]]:
    """(side, category, closed form, MC estimate, MC standard error) for every category."""
    out = []
    sides: Sequence[tuple[str, np.ndarray]] = (
        ("suspect", evidence.suspect_recordings),
        ("trace", evidence.trace_recordings),
        ("same_source", np.concatenate([evidence.suspect_recordings, evidence.trace_recordings])),
    )
    for m in catalog:
        for name, x in sides:
            est, se = mc_marginal(x, m, n_samples, seed)
            out.append((name, m.id, marginal_log_likelihood(x, m), est, se))
    return out

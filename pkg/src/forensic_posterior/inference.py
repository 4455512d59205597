"""Posterior for "suspect and perpetrator are the same person" (H1).

Two routes are provided:

* :func:`posterior_factorized` handles the two-sided hard-conditioning case
  where the suspect and the trace each have (at most) two candidate
  categories that share exactly one category.  It works in odds-against form:
  prior odds times likelihood ratio for each of the suspect-category,
  trace-category and same-source questions, then multiplies the three
  probabilities.
* :func:`posterior_general` handles any prior over K categories and sums
  ``P(s in C_k | X_s) P(r in C_k | X_r) P(H1 | X_s, X_r, M_k)`` over k.

Odds are *against* the proposition: ``O = (1 - P) / P``, so 0 means
certainty and ``inf`` means impossibility.  Likelihood ratios are carried as
natural logs; probabilities are only formed after max-subtraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .model import (
    CategoryCatalog,
    CategoryModel,
    Evidence,
    _as_recordings,
    different_source_log_likelihood,
    marginal_log_likelihood,
    same_source_log_likelihood,
)

DEFAULT_THETA = 1e-4
DECISION_MODES = ("three-tests", "additive", "exact")
SIMPLEX_TOL = 1e-12

# exp() overflows just above this; larger log-odds are reported as inf
_MAX_LOG = math.log(np.finfo(float).max)


class InferenceError(ValueError):
    """Inputs are valid on their own but the requested inference is undefined."""


class StructureError(InferenceError):
    """The prior does not have the shape the factorized route needs."""


class Verdict(str, Enum):
    H1 = "H1"
    H2 = "H2"


# -- odds algebra ------------------------------------------------------------

def prob_to_odds_against(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    if p == 0.0:
        return math.inf
    return (1.0 - p) / p


def odds_against_to_prob(o: float) -> float:
    o = float(o)
    if not o >= 0.0:
        raise ValueError(f"odds-against must be nonnegative, got {o}")
    if math.isinf(o):
        return 0.0
    return 1.0 / (1.0 + o)


def _odds_from_log(log_odds: float) -> float:
    if log_odds > _MAX_LOG:
        return math.inf
    return math.exp(log_odds)


def _log_prior_odds(p: float) -> float:
    """log((1 - p) / p) with the endpoints mapped to +-inf."""
    if p <= 0.0:
        return math.inf
    if p >= 1.0:
        return -math.inf
    return math.log1p(-p) - math.log(p)


def _check_odds(odds: Iterable[float]) -> list[float]:
    out = [float(o) for o in odds]
    if not out:
        raise ValueError("need at least one odds value")
    for o in out:
        if not o >= 0.0:
            raise ValueError(f"odds-against must be nonnegative, got {o}")
    return out


def combine_odds_exact(odds: Iterable[float]) -> float:
    """Odds against a conjunction of independent propositions: prod(1 + O_i) - 1."""
    values = _check_odds(odds)
    if any(math.isinf(o) for o in values):
        return math.inf
    return math.expm1(math.fsum(math.log1p(o) for o in values))


class AdditiveOdds(NamedTuple):
    approx: float
    epsilon: float
    bound_ok: bool


def _cross_terms(values: Sequence[float]) -> float:
    """Sum of all products of two or more distinct entries (elementary symmetric, degree >= 2)."""
    esym = [1.0] + [0.0] * len(values)
    for o in values:
        for j in range(len(esym) - 1, 0, -1):
            esym[j] += o * esym[j - 1]
    return math.fsum(esym[2:])


def combine_odds_additive(odds: Iterable[float], theta: float = DEFAULT_THETA) -> AdditiveOdds:
    """Sum of odds, plus the neglected cross terms and a check of their bound.

    ``epsilon`` is the sum of all products of two or more of the odds (the
    elementary symmetric polynomials of degree >= 2), which equals
    ``combine_odds_exact(odds) - sum(odds)`` without the cancellation.
    ``bound_ok`` is False only when every odds value is below ``theta`` and
    epsilon nevertheless exceeds ``(1 + theta)^n - 1 - n theta``.
    """
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    values = _check_odds(odds)
    approx = math.fsum(values)
    if math.isinf(approx):
        return AdditiveOdds(math.inf, math.inf, True)
    epsilon = _cross_terms(values)
    bound_ok = True
    if all(o < theta for o in values):
        # same rounding path for the bound, (1 + theta)^n - 1 - n theta, keeps the check monotone
        bound_ok = epsilon <= _cross_terms([theta] * len(values))
    return AdditiveOdds(approx, epsilon, bound_ok)


# -- priors ------------------------------------------------------------------

def _check_simplex(name: str, weights: Mapping[str, float]) -> dict[str, float]:
    out = {}
    for k, v in weights.items():
        v = float(v)
        if not (math.isfinite(v) and v >= 0.0):
            raise ValueError(f"{name}[{k!r}] must be a finite nonnegative probability, got {v}")
        out[str(k)] = v
    total = math.fsum(out.values())
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"{name} sums to {total!r}, not 1")
    return out


@dataclass(frozen=True)
class PriorConfig:
    """Category priors for the suspect and the trace, and P(H1) per shared category.

    Categories missing from ``suspect`` or ``trace`` get zero mass, which is
    how hard conditioning ("the perpetrator is non-native") is expressed.
    ``h1_given_category[k]`` is the prior probability that suspect and
    perpetrator are the same person given both belong to category k; it must
    be supplied for every category both priors support.
    """

    suspect: Mapping[str, float]
    trace: Mapping[str, float]
    h1_given_category: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(self, "suspect", MappingProxyType(_check_simplex("suspect prior", self.suspect)))
        object.__setattr__(self, "trace", MappingProxyType(_check_simplex("trace prior", self.trace)))
        h1 = {}
        for k, v in self.h1_given_category.items():
            v = float(v)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"h1_given_category[{k!r}] must lie in [0, 1], got {v}")
            h1[str(k)] = v
        object.__setattr__(self, "h1_given_category", MappingProxyType(h1))

    def suspect_support(self, catalog: CategoryCatalog) -> tuple[str, ...]:
        return tuple(k for k in catalog.ids if self.suspect.get(k, 0.0) > 0.0)

    def trace_support(self, catalog: CategoryCatalog) -> tuple[str, ...]:
        return tuple(k for k in catalog.ids if self.trace.get(k, 0.0) > 0.0)

    def intersection(self, catalog: CategoryCatalog) -> tuple[str, ...]:
        r = set(self.trace_support(catalog))
        return tuple(k for k in self.suspect_support(catalog) if k in r)

    def check_against(self, catalog: CategoryCatalog) -> None:
        for name, m in (("suspect", self.suspect), ("trace", self.trace), ("h1_given_category", self.h1_given_category)):
            unknown = [k for k in m if k not in catalog]
            if unknown:
                raise ValueError(f"{name} prior names unknown categories {unknown}")
        missing = [k for k in self.intersection(catalog) if k not in self.h1_given_category]
        if missing:
            raise ValueError(f"h1_given_category is missing shared categories {missing}")

    def with_h1(self, value: float) -> "PriorConfig":
        """Same category priors with every per-category H1 prior set to ``value``."""
        return replace(self, h1_given_category={k: value for k in self.h1_given_category})


# -- likelihood ratios and category posteriors -------------------------------

def category_lr(recordings, numerator_model: CategoryModel, denominator_model: CategoryModel) -> float:
    """Natural-log likelihood ratio of two category models for one side's recordings."""
    x = _as_recordings(recordings, numerator_model.dim)
    return marginal_log_likelihood(x, numerator_model) - marginal_log_likelihood(x, denominator_model)


def same_source_odds_lr(evidence: Evidence, model: CategoryModel) -> float:
    """log R_h: different-source over same-source likelihood (odds-against orientation)."""
    return different_source_log_likelihood(evidence, model, model) - same_source_log_likelihood(
        evidence, model
    )


def _logsumexp(values: Sequence[float]) -> float:
    m = max(values)
    if m == -math.inf:
        return -math.inf
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def _normalize(log_weights: Mapping[str, float]) -> dict[str, float]:
    total = _logsumexp(list(log_weights.values()))
    if total == -math.inf:
        raise InferenceError("all posterior mass is zero")
    return {k: math.exp(v - total) for k, v in log_weights.items()}


def _log_weights(prior: Mapping[str, float], loglik: Mapping[str, float]) -> dict[str, float]:
    return {k: math.log(prior[k]) + loglik[k] for k in loglik}


def category_posterior(recordings, catalog: CategoryCatalog, prior: Mapping[str, float]) -> dict[str, float]:
    """Posterior over categories for one side; zero-prior categories stay exactly 0."""
    x = _as_recordings(recordings, catalog.dim)
    prior = _check_simplex("category prior", prior)
    loglik = {c.id: marginal_log_likelihood(x, c) for c in catalog if prior.get(c.id, 0.0) > 0.0}
    if not loglik:
        raise InferenceError("all posterior mass is zero")
    post = _normalize(_log_weights(prior, loglik))
    return {k: post.get(k, 0.0) for k in catalog.ids}


def _h1_log_odds(pi_h: float, log_rh: float) -> float:
    lo = _log_prior_odds(pi_h)
    if math.isinf(lo):
        return lo
    return lo + log_rh


def conditional_h1_posterior(evidence: Evidence, model: CategoryModel, pi_h: float) -> float:
    """P(H1 | recordings, both people in ``model``'s category, prior ``pi_h``)."""
    pi_h = float(pi_h)
    if not 0.0 <= pi_h <= 1.0:
        raise ValueError(f"pi_h must lie in [0, 1], got {pi_h}")
    if pi_h in (0.0, 1.0):
        return pi_h
    return odds_against_to_prob(_odds_from_log(_h1_log_odds(pi_h, same_source_odds_lr(evidence, model))))


# -- likelihood table (the prior-free part) ----------------------------------

@dataclass(frozen=True)
class LikelihoodTable:
    """Per-category log-likelihoods, independent of every prior.

    ``suspect[k]`` and ``trace[k]`` are the marginal log-likelihoods of each
    side's recordings under category k; ``same_source[k]`` is the joint log
    likelihood of both sides under one shared identity in category k.  A
    table may be partial: only categories some prior needs are filled in.
    """

    suspect: Mapping[str, float]
    trace: Mapping[str, float]
    same_source: Mapping[str, float]

    def log_rh(self, category_id: str) -> float:
        return self.suspect[category_id] + self.trace[category_id] - self.same_source[category_id]


def likelihood_table(
    evidence: Evidence,
    catalog: CategoryCatalog,
    suspect_ids: Iterable[str] | None = None,
    trace_ids: Iterable[str] | None = None,
    h1_ids: Iterable[str] | None = None,
) -> LikelihoodTable:
    evidence.check_dim(catalog.dim)
    suspect_ids = catalog.ids if suspect_ids is None else tuple(suspect_ids)
    trace_ids = catalog.ids if trace_ids is None else tuple(trace_ids)
    h1_ids = catalog.ids if h1_ids is None else tuple(h1_ids)
    need_s = set(suspect_ids) | set(h1_ids)
    need_r = set(trace_ids) | set(h1_ids)
    return LikelihoodTable(
        suspect=MappingProxyType(
            {k: marginal_log_likelihood(evidence.suspect_recordings, catalog[k]) for k in catalog.ids if k in need_s}
        ),
        trace=MappingProxyType(
            {k: marginal_log_likelihood(evidence.trace_recordings, catalog[k]) for k in catalog.ids if k in need_r}
        ),
        same_source=MappingProxyType(
            {k: same_source_log_likelihood(evidence, catalog[k]) for k in catalog.ids if k in h1_ids}
        ),
    )


# -- results -----------------------------------------------------------------

@dataclass(frozen=True)
class CaseResult:
    """Everything the court needs, for one evidence set and one prior.

    ``odds_components`` holds (O'_a, O'_g, O'_h), the odds against the
    suspect being in the shared category, against the perpetrator being in
    it, and against H1 given both are.  It exists only when the two priors
    share exactly one category; otherwise only the ``exact`` decision mode
    applies.  ``log_lr_components`` holds the matching (log R_a, log R_g,
    log R_h) when each side has at most two candidate categories.
    """

    method: str
    category_ids: tuple[str, ...]
    intersection: tuple[str, ...]
    posterior: float
    odds: float
    theta: float
    suspect_posterior: Mapping[str, float] | None = None
    trace_posterior: Mapping[str, float] | None = None
    h1_posterior: Mapping[str, float] = field(default_factory=dict)
    log_rh: Mapping[str, float] = field(default_factory=dict)
    table: LikelihoodTable | None = None
    odds_components: tuple[float, float, float] | None = None
    log_lr_components: tuple[float, float, float] | None = None
    additive: AdditiveOdds | None = None
    verdicts: Mapping[str, Verdict] = field(default_factory=dict)

    @property
    def log_posterior(self) -> float:
        return math.log(self.posterior) if self.posterior > 0 else -math.inf


def decide(
    result: CaseResult,
    theta: float = DEFAULT_THETA,
    mode: str = "exact",
    component_thetas: tuple[float, float, float] | None = None,
) -> Verdict:
    """Court decision at reasonable-doubt threshold ``theta``; ties go to H2.

    ``three-tests`` finds for H2 if either category question leaves odds
    against at or above its threshold, and otherwise thresholds the
    same-source odds.  ``additive`` thresholds O'_a + O'_g + O'_h.
    ``exact`` thresholds the combined odds O'_f.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if mode not in DECISION_MODES:
        raise ValueError(f"unknown decision mode {mode!r}; expected one of {DECISION_MODES}")
    if mode == "exact":
        return Verdict.H1 if result.odds < theta else Verdict.H2
    if result.odds_components is None:
        if result.posterior == 0.0:
            return Verdict.H2
        raise InferenceError(
            f"mode {mode!r} needs per-question odds, which exist only when the "
            "suspect and trace priors share exactly one category"
        )
    oa, og, oh = result.odds_components
    if mode == "additive":
        return Verdict.H1 if math.fsum((oa, og, oh)) < theta else Verdict.H2
    ta, tg, th = component_thetas if component_thetas is not None else (theta, theta, theta)
    if oa >= ta or og >= tg:
        return Verdict.H2
    return Verdict.H1 if oh < th else Verdict.H2


def _with_verdicts(result: CaseResult) -> CaseResult:
    modes = DECISION_MODES if result.odds_components is not None else ("exact",)
    verdicts = {m: decide(result, result.theta, m) for m in modes}
    additive = None
    if result.odds_components is not None:
        additive = combine_odds_additive(result.odds_components, result.theta)
    return replace(result, verdicts=MappingProxyType(verdicts), additive=additive)


def _empty_result(catalog: CategoryCatalog, theta: float, method: str) -> CaseResult:
    return _with_verdicts(
        CaseResult(
            method=method,
            category_ids=catalog.ids,
            intersection=(),
            posterior=0.0,
            odds=math.inf,
            theta=theta,
        )
    )


def _odds_against_one(log_weights: Mapping[str, float], target: str) -> float:
    others = [v for k, v in log_weights.items() if k != target]
    if not others:
        return 0.0
    return _odds_from_log(_logsumexp(others) - log_weights[target])


def _general_from_table(
    table: LikelihoodTable, catalog: CategoryCatalog, prior: PriorConfig, theta: float
) -> CaseResult:
    supp_s = prior.suspect_support(catalog)
    supp_r = prior.trace_support(catalog)
    inter = prior.intersection(catalog)
    ws = _log_weights(prior.suspect, {k: table.suspect[k] for k in supp_s})
    wr = _log_weights(prior.trace, {k: table.trace[k] for k in supp_r})
    a = _normalize(ws)
    g = _normalize(wr)

    h, not_h, log_rh, h_odds = {}, {}, {}, {}
    for k in inter:
        log_rh[k] = table.log_rh(k)
        h_odds[k] = oh = _odds_from_log(_h1_log_odds(prior.h1_given_category[k], log_rh[k]))
        h[k] = odds_against_to_prob(oh)
        not_h[k] = 1.0 if math.isinf(oh) else oh / (1.0 + oh)

    p_f = math.fsum(a[k] * g[k] * h[k] for k in inter)
    # 1 - p_f summed term by term so that near-certain cases keep their precision
    complement = math.fsum(
        [a[k] * math.fsum(g[j] for j in supp_r if j != k) for k in supp_s]
        + [a[k] * g[k] * not_h[k] for k in inter]
    )
    odds = math.inf if p_f == 0.0 else complement / p_f

    components = None
    if len(inter) == 1:
        k = inter[0]
        components = (_odds_against_one(ws, k), _odds_against_one(wr, k), h_odds[k])

    return _with_verdicts(
        CaseResult(
            method="general",
            category_ids=catalog.ids,
            intersection=inter,
            posterior=p_f,
            odds=odds,
            theta=theta,
            suspect_posterior=MappingProxyType({k: a.get(k, 0.0) for k in catalog.ids}),
            trace_posterior=MappingProxyType({k: g.get(k, 0.0) for k in catalog.ids}),
            h1_posterior=MappingProxyType(h),
            log_rh=MappingProxyType(log_rh),
            table=table,
            odds_components=components,
        )
    )


def _validate(evidence: Evidence, catalog: CategoryCatalog, prior: PriorConfig, theta: float) -> None:
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    evidence.check_dim(catalog.dim)
    prior.check_against(catalog)


def posterior_general(
    evidence: Evidence, catalog: CategoryCatalog, prior: PriorConfig, theta: float = DEFAULT_THETA
) -> CaseResult:
    """Final posterior of H1 for arbitrary suspect and trace category priors.

    If no category carries prior mass on both sides the answer is 0 and no
    likelihood is evaluated.
    """
    _validate(evidence, catalog, prior, theta)
    inter = prior.intersection(catalog)
    if not inter:
        return _empty_result(catalog, theta, "general")
    table = likelihood_table(
        evidence,
        catalog,
        suspect_ids=prior.suspect_support(catalog),
        trace_ids=prior.trace_support(catalog),
        h1_ids=inter,
    )
    return _general_from_table(table, catalog, prior, theta)


def posterior_factorized(
    evidence: Evidence, catalog: CategoryCatalog, prior: PriorConfig, theta: float = DEFAULT_THETA
) -> CaseResult:
    """Final posterior as P_a * P_g * P_h, each obtained from prior odds times an LR.

    Requires each side's prior to support at most two categories, with
    exactly one category supported by both.
    """
    _validate(evidence, catalog, prior, theta)
    supp_s = prior.suspect_support(catalog)
    supp_r = prior.trace_support(catalog)
    inter = prior.intersection(catalog)
    if len(supp_s) > 2 or len(supp_r) > 2 or len(inter) != 1:
        raise StructureError(
            "factorized posterior needs at most two candidate categories per side and exactly "
            f"one shared category; got suspect {list(supp_s)}, trace {list(supp_r)}"
        )
    k = inter[0]
    model = catalog[k]
    xs, xr = evidence.suspect_recordings, evidence.trace_recordings

    def side(ids, x, pi):
        other = [j for j in ids if j != k]
        if not other:
            return 0.0, 0.0
        log_r = category_lr(x, catalog[other[0]], model)
        return log_r, _odds_from_log(math.log(pi[other[0]]) - math.log(pi[k]) + log_r)

    log_ra, oa = side(supp_s, xs, prior.suspect)
    log_rg, og = side(supp_r, xr, prior.trace)
    log_rh = same_source_odds_lr(evidence, model)
    pi_h = prior.h1_given_category[k]
    oh = _odds_from_log(_h1_log_odds(pi_h, log_rh))

    p_a, p_g, p_h = (odds_against_to_prob(o) for o in (oa, og, oh))
    odds = combine_odds_exact((oa, og, oh))

    def two_way(ids, p):
        return MappingProxyType({j: (p if j == k else (1.0 - p if j in ids else 0.0)) for j in catalog.ids})

    return _with_verdicts(
        CaseResult(
            method="factorized",
            category_ids=catalog.ids,
            intersection=inter,
            posterior=p_a * p_g * p_h,
            odds=odds,
            theta=theta,
            suspect_posterior=two_way(supp_s, p_a),
            trace_posterior=two_way(supp_r, p_g),
            h1_posterior=MappingProxyType({k: p_h}),
            log_rh=MappingProxyType({k: log_rh}),
            odds_components=(oa, og, oh),
            log_lr_components=(log_ra, log_rg, log_rh),
        )
    )


# -- prior sensitivity -------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    prior: PriorConfig
    posterior: float
    odds: float
    verdict: Verdict
    result: CaseResult


def pi_h_grid(base: PriorConfig, values: Iterable[float]) -> list[PriorConfig]:
    return [base.with_h1(v) for v in values]


def category_prior_grid(
    base: PriorConfig, side: str, category_id: str, values: Iterable[float]
) -> list[PriorConfig]:
    """Vary one category's weight on one side, rescaling the others proportionally."""
    if side not in ("suspect", "trace"):
        raise ValueError(f"side must be 'suspect' or 'trace', got {side!r}")
    weights = dict(getattr(base, side))
    rest = {k: v for k, v in weights.items() if k != category_id}
    rest_total = math.fsum(rest.values())
    out = []
    for v in values:
        v = float(v)
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"category weight must lie in [0, 1], got {v}")
        if rest_total > 0:
            new = {k: w * (1.0 - v) / rest_total for k, w in rest.items()}
        elif v != 1.0:
            raise ValueError(f"no other {side} category to take up mass {1.0 - v}")
        else:
            new = {}
        new[category_id] = v
        # absorb rounding so the simplex check holds
        drift = 1.0 - math.fsum(new.values())
        new[category_id] += drift
        out.append(replace(base, **{side: new}))
    return out


def sensitivity_sweep(
    evidence: Evidence,
    catalog: CategoryCatalog,
    grid: Sequence[PriorConfig],
    theta: float = DEFAULT_THETA,
) -> list[SweepRow]:
    """Posterior and exact-mode verdict at each prior in ``grid``.

    The likelihood table is computed at most once and shared by every row.
    """
    if not grid:
        raise ValueError("sensitivity grid is empty")
    for p in grid:
        _validate(evidence, catalog, p, theta)
    table = None
    rows = []
    for p in grid:
        if not p.intersection(catalog):
            res = _empty_result(catalog, theta, "general")
        else:
            if table is None:
                table = likelihood_table(evidence, catalog)
            res = _general_from_table(table, catalog, p, theta)
        rows.append(SweepRow(p, res.posterior, res.odds, res.verdicts["exact"], res))
    return rows

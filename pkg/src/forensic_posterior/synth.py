"""Synthetic cases with known ground truth, and the experiments run on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from .inference import (
    DECISION_MODES,
    DEFAULT_THETA,
    PriorConfig,
    Verdict,
    decide,
    posterior_general,
    prob_to_odds_against,
)
from .model import CategoryCatalog, CategoryModel, Evidence
from .oracle import JointHypothesisSpace, exact_joint_posterior

MIN_CALIBRATION_CASES = 1000
MIN_BIN_COUNT = 20
SOURCES = ("formula", "oracle")


@dataclass(frozen=True)
class ScenarioSpec:
    """What to simulate.

    Cases are drawn from the joint prior built from ``truth_prior`` (or from
    ``prior`` when it is None) and analysed with ``prior``; setting a
    different ``truth_prior`` gives a misspecified-prior study.
    """

    catalog: CategoryCatalog
    prior: PriorConfig
    suspect_recordings: int = 1
    trace_recordings: int = 1
    seed: int = 0
    truth_prior: PriorConfig | None = None

    def __post_init__(self):
        if self.suspect_recordings < 1 or self.trace_recordings < 1:
            raise ValueError("need at least one recording per side")
        self.prior.check_against(self.catalog)
        if self.truth_prior is not None:
            self.truth_prior.check_against(self.catalog)

    @property
    def generating_prior(self) -> PriorConfig:
        return self.truth_prior if self.truth_prior is not None else self.prior


class GroundTruth(NamedTuple):
    suspect_category: str
    trace_category: str
    same_source: bool


def _draw_identity(rng: np.random.Generator, model: CategoryModel) -> np.ndarray:
    eig, vec = np.linalg.eigh(model.between_cov)
    root = vec * np.sqrt(np.clip(eig, 0.0, None))
    return model.mean + root @ rng.standard_normal(model.dim)


def _draw_recordings(rng: np.random.Generator, y: np.ndarray, model: CategoryModel, n: int) -> np.ndarray:
    return y + rng.standard_normal((n, model.dim)) @ model._within_chol.T


def sample_case(spec: ScenarioSpec, case_index: int) -> tuple[Evidence, GroundTruth]:
    """One case; the same (seed, case_index) always gives the same case."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, case_index]))
    catalog = spec.catalog
    joint = JointHypothesisSpace(catalog, spec.generating_prior).joint_prior()
    flat = joint.ravel()
    state = rng.choice(flat.size, p=flat / flat.sum())
    i, j, hyp = np.unravel_index(state, joint.shape)
    ms, mr = catalog.categories[i], catalog.categories[j]
    same = hyp == 0
    ys = _draw_identity(rng, ms)
    yr = ys if same else _draw_identity(rng, mr)
    evidence = Evidence(
        _draw_recordings(rng, ys, ms, spec.suspect_recordings),
        _draw_recordings(rng, yr, mr, spec.trace_recordings),
    )
    return evidence, GroundTruth(ms.id, mr.id, bool(same))


def _posterior(spec: ScenarioSpec, evidence: Evidence, source: str) -> float:
    if source == "oracle":
        return exact_joint_posterior(evidence, JointHypothesisSpace(spec.catalog, spec.prior))
    return posterior_general(evidence, spec.catalog, spec.prior).posterior


def _check_source(source: str) -> None:
    if source not in SOURCES:
        raise ValueError(f"unknown posterior source {source!r}; expected one of {SOURCES}")


# -- calibration -------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    mean_predicted: float
    h1_frequency: float
    std_error: float  # binomial, at the bin's mean predicted probability
    flagged: bool  # fewer than MIN_BIN_COUNT cases

    @property
    def center(self) -> float:
        return 0.5 * (self.lower + self.upper)


def calibration_experiment(
    spec: ScenarioSpec, n_cases: int, bins: int = 10, source: str = "formula"
) -> list[CalibrationBin]:
    """Reliability table: empirical H1 frequency per equal-width bin of predicted P(H1)."""
    _check_source(source)
    if n_cases < MIN_CALIBRATION_CASES:
        raise ValueError(f"calibration needs at least {MIN_CALIBRATION_CASES} cases, got {n_cases}")
    if bins < 1:
        raise ValueError("need at least one bin")
    pred = np.empty(n_cases)
    truth = np.empty(n_cases, dtype=bool)
    for c in range(n_cases):
        ev, gt = sample_case(spec, c)
        pred[c] = _posterior(spec, ev, source)
        truth[c] = gt.same_source
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, pred, side="right") - 1, 0, bins - 1)
    table = []
    for b in range(bins):
        sel = idx == b
        n = int(sel.sum())
        if n:
            p = float(pred[sel].mean())
            freq = float(truth[sel].mean())
            se = math.sqrt(p * (1.0 - p) / n)
        else:
            p = freq = se = math.nan
        table.append(CalibrationBin(float(edges[b]), float(edges[b + 1]), n, p, freq, se, n < MIN_BIN_COUNT))
    return table


# -- decision error rates ----------------------------------------------------

@dataclass(frozen=True)
class ErrorRates:
    """Decision outcomes against ground truth; rates are per simulated case."""

    n_cases: int
    theta: float
    mode: str
    true_h1: int
    found_h1: int
    false_h1: int  # decided H1, truth H2
    false_h2: int  # decided H2, truth H1
    false_h1_rate: float
    false_h2_rate: float
    false_h1_ci: tuple[float, float]
    false_h2_ci: tuple[float, float]
    mean_h2_posterior_found_h1: float  # nan when nothing was found H1


def _wilson(k: int, n: int) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def error_rate_experiment(
    spec: ScenarioSpec,
    n_cases: int,
    theta: float = DEFAULT_THETA,
    mode: str = "exact",
    source: str = "formula",
) -> ErrorRates:
    _check_source(source)
    if n_cases < 1:
        raise ValueError("need at least one case")
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if mode not in DECISION_MODES:
        raise ValueError(f"unknown decision mode {mode!r}")
    if source == "oracle" and mode != "exact":
        raise ValueError("oracle posteriors support only the exact decision mode")

    true_h1 = found_h1 = false_h1 = false_h2 = 0
    h2_post = []
    for c in range(n_cases):
        ev, gt = sample_case(spec, c)
        if source == "oracle":
            p = exact_joint_posterior(ev, JointHypothesisSpace(spec.catalog, spec.prior))
            verdict = Verdict.H1 if prob_to_odds_against(p) < theta else Verdict.H2
        else:
            res = posterior_general(ev, spec.catalog, spec.prior, theta)
            p = res.posterior
            verdict = decide(res, theta, mode)
        true_h1 += gt.same_source
        if verdict is Verdict.H1:
            found_h1 += 1
            h2_post.append(1.0 - p)
            false_h1 += not gt.same_source
        else:
            false_h2 += gt.same_source
    return ErrorRates(
        n_cases=n_cases,
        theta=theta,
        mode=mode,
        true_h1=true_h1,
        found_h1=found_h1,
        false_h1=false_h1,
        false_h2=false_h2,
        false_h1_rate=false_h1 / n_cases,
        false_h2_rate=false_h2 / n_cases,
        false_h1_ci=_wilson(false_h1, n_cases),
        false_h2_ci=_wilson(false_h2, n_cases),
        mean_h2_posterior_found_h1=float(np.mean(h2_post)) if h2_post else math.nan,
    )

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forensic_posterior.inference import (
    DEFAULT_THETA,
    InferenceError,
    PriorConfig,
    StructureError,
    Verdict,
    category_lr,
    category_posterior,
    category_prior_grid,
    combine_odds_additive,
    combine_odds_exact,
    conditional_h1_posterior,
    decide,
    odds_against_to_prob,
    pi_h_grid,
    posterior_factorized,
    posterior_general,
    prob_to_odds_against,
    same_source_odds_lr,
    sensitivity_sweep,
)
from forensic_posterior.model import (
    CategoryCatalog,
    Evidence,
    count_likelihood_evaluations,
    marginal_log_likelihood,
)

from conftest import model_1d, random_model

probs = st.floats(min_value=1e-300, max_value=1.0, allow_nan=False)
small_odds = st.floats(min_value=0.0, max_value=1e3, allow_nan=False)


class TestOddsConversion:
    def test_anchors(self):
        assert prob_to_odds_against(0.5) == 1.0
        assert odds_against_to_prob(1.0) == 0.5
        assert prob_to_odds_against(1.0) == 0.0
        assert odds_against_to_prob(0.0) == 1.0
        assert prob_to_odds_against(0.8) == pytest.approx(0.25, abs=1e-15)

    def test_infinite_endpoints(self):
        assert prob_to_odds_against(0.0) == math.inf
        assert odds_against_to_prob(math.inf) == 0.0

    @pytest.mark.parametrize("p", [-0.1, 1.5, math.nan])
    def test_rejects_bad_probability(self, p):
        with pytest.raises(ValueError):
            prob_to_odds_against(p)

    @pytest.mark.parametrize("o", [-1e-9, math.nan])
    def test_rejects_bad_odds(self, o):
        with pytest.raises(ValueError):
            odds_against_to_prob(o)

    @given(probs)
    def test_roundtrip(self, p):
        assert odds_against_to_prob(prob_to_odds_against(p)) == pytest.approx(p, rel=1e-12, abs=1e-12)


class TestCombineOdds:
    def test_expansion(self):
        assert combine_odds_exact([0.1, 0.2, 0.3]) == pytest.approx(0.716, abs=1e-15)
        assert combine_odds_exact([0.0, 0.0, 0.0]) == 0.0
        assert combine_odds_exact([0.37]) == pytest.approx(0.37, rel=1e-15)
        assert combine_odds_exact([0.1, math.inf]) == math.inf

    def test_additive_small(self):
        res = combine_odds_additive([0.001] * 3, theta=0.01)
        assert res.approx == pytest.approx(0.003, rel=1e-15)
        assert res.epsilon == pytest.approx(3e-6 + 1e-9, rel=1e-12)
        assert res.bound_ok
        assert res.epsilon <= 3 * 0.01**2 + 0.01**3

    def test_additive_zero(self):
        assert combine_odds_additive([0.0, 0.0, 0.0]).epsilon == 0.0

    def test_bound_is_vacuous_when_an_odds_exceeds_theta(self):
        res = combine_odds_additive([0.5, 0.5, 0.5], theta=0.01)
        assert res.bound_ok
        assert res.epsilon == pytest.approx(combine_odds_exact([0.5] * 3) - 1.5, rel=1e-12)

    @given(st.lists(small_odds, min_size=1, max_size=6))
    def test_epsilon_is_exact_minus_sum(self, odds):
        res = combine_odds_additive(odds, theta=0.5)
        exact = combine_odds_exact(odds)
        assert res.approx + res.epsilon == pytest.approx(exact, rel=1e-12, abs=1e-300)

    @given(
        st.lists(st.floats(min_value=0.0, max_value=1e-4, exclude_max=True), min_size=3, max_size=3),
        st.sampled_from([1e-2, 1e-4]),
    )
    def test_bound_holds_below_theta(self, odds, theta):
        odds = [o * theta / 1e-4 for o in odds]
        odds = [o if o < theta else math.nextafter(theta, 0.0) for o in odds]
        res = combine_odds_additive(odds, theta)
        assert res.bound_ok
        # the inequality itself, in exact rational arithmetic on the same inputs
        q = [Fraction(o) for o in odds]
        t = Fraction(theta)
        eps = (1 + q[0]) * (1 + q[1]) * (1 + q[2]) - 1 - sum(q)
        assert eps <= 3 * t**2 + t**3
        assert float(eps) == pytest.approx(res.epsilon, rel=1e-13, abs=1e-300)

    def test_rejects_bad_theta(self):
        with pytest.raises(ValueError):
            combine_odds_additive([0.1], theta=0.0)


class TestCategoryLR:
    def test_identical_models(self):
        m = model_1d("a", 0.3, 0.7, 1.2)
        assert category_lr([0.1, 0.5], m, m) == 0.0

    def test_unit_case(self):
        got = category_lr([0.0], model_1d("n", 0.0, 1.0), model_1d("d", 0.0, 0.0))
        assert got == pytest.approx(-1.265512 + 0.918939, abs=2e-6)
        assert got == pytest.approx(-0.5 * math.log(2), abs=1e-14)

    def test_antisymmetric(self):
        rng = np.random.default_rng(1)
        a, b = random_model(rng, 2, "a"), random_model(rng, 2, "b")
        x = rng.normal(size=(3, 2))
        assert category_lr(x, a, b) == -category_lr(x, b, a)


class TestSameSourceLR:
    def test_zero_between(self):
        assert same_source_odds_lr(Evidence([0.4], [-2.0]), model_1d("a", 0.0, 0.0)) == pytest.approx(0.0, abs=1e-14)

    def test_unit_case(self):
        got = same_source_odds_lr(Evidence([0.0], [0.0]), model_1d("a", 0.0))
        assert got == pytest.approx(math.log(math.sqrt(3) / 2), abs=1e-14)
        # quadrature cross-check frozen from scipy.integrate.quad
        assert got == pytest.approx(-0.14384103622588995, abs=1e-12)

    def test_separated_recordings_favour_different_sources(self):
        assert same_source_odds_lr(Evidence([10.0], [-10.0]), model_1d("a", 0.0)) > 10


class TestCategoryPosterior:
    def test_symmetry(self):
        cat = CategoryCatalog((model_1d("a", 0.0), model_1d("b", 0.0), model_1d("c", 0.0)))
        post = category_posterior([1.3], cat, {"a": 1 / 3, "b": 1 / 3, "c": 1 / 3 + 1e-17})
        for v in post.values():
            assert v == pytest.approx(1 / 3, abs=1e-15)

    def test_three_to_one(self):
        # within-only models whose densities at x differ by a factor of 3
        x = 0.0
        shift = math.sqrt(2 * math.log(3))
        cat = CategoryCatalog((model_1d("a", 0.0, 0.0), model_1d("b", shift, 0.0)))
        post = category_posterior([x], cat, {"a": 0.5, "b": 0.5})
        assert post["a"] == pytest.approx(0.75, abs=1e-14)
        assert post["b"] == pytest.approx(0.25, abs=1e-14)

    def test_odds_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a, b = random_model(rng, 2, "a"), random_model(rng, 2, "b")
            cat = CategoryCatalog((a, b))
            x = rng.normal(0, 2, size=(2, 2))
            pi = float(rng.uniform(0.01, 0.99))
            post = category_posterior(x, cat, {"a": pi, "b": 1 - pi})
            prior_odds = (1 - pi) / pi
            lr = math.exp(marginal_log_likelihood(x, b) - marginal_log_likelihood(x, a))
            assert prob_to_odds_against(post["a"]) == pytest.approx(prior_odds * lr, rel=1e-12)

    def test_zero_prior_category_is_exactly_zero_and_not_evaluated(self):
        cat = CategoryCatalog((model_1d("a", 0.0), model_1d("b", 5.0)))
        with count_likelihood_evaluations() as c:
            post = category_posterior([4.9], cat, {"a": 1.0, "b": 0.0})
        assert post == {"a": 1.0, "b": 0.0}
        assert c.count == 1

    def test_no_mass(self):
        cat = CategoryCatalog((model_1d("a", 0.0),))
        with pytest.raises(ValueError):
            category_posterior([0.0], cat, {})

    def test_extreme_likelihoods_do_not_underflow(self):
        cat = CategoryCatalog((model_1d("a", 0.0, 0.0, 1e-4), model_1d("b", 1.0, 0.0, 1e-4)))
        post = category_posterior([0.6], cat, {"a": 0.5, "b": 0.5})
        assert post["b"] > 0.999 and math.isfinite(post["a"])


class TestConditionalH1:
    def test_anchors(self):
        m = model_1d("a", 0.0, 0.0)
        ev = Evidence([0.0], [1.0])
        assert conditional_h1_posterior(ev, m, 0.5) == pytest.approx(0.5, abs=1e-15)
        assert conditional_h1_posterior(ev, m, 1.0) == 1.0
        assert conditional_h1_posterior(ev, m, 0.0) == 0.0

    def test_odds_identity(self):
        m = model_1d("a", 0.2, 1.5, 0.5)
        ev = Evidence([0.1, 0.3], [0.0])
        for pi in (0.01, 0.3, 0.9):
            p = conditional_h1_posterior(ev, m, pi)
            assert prob_to_odds_against(p) == pytest.approx((1 - pi) / pi * math.exp(same_source_odds_lr(ev, m)), rel=1e-12)

    def test_rejects_bad_prior(self):
        with pytest.raises(ValueError):
            conditional_h1_posterior(Evidence([0.0], [0.0]), model_1d("a", 0.0), 1.1)


class TestPriorConfig:
    def test_simplex_checked(self):
        with pytest.raises(ValueError, match="sums"):
            PriorConfig({"a": 0.5}, {"a": 1.0}, {"a": 0.5})
        with pytest.raises(ValueError):
            PriorConfig({"a": 1.5, "b": -0.5}, {"a": 1.0}, {"a": 0.5})
        with pytest.raises(ValueError):
            PriorConfig({"a": 1.0}, {"a": 1.0}, {"a": 2.0})

    def test_check_against_catalog(self, running_catalog):
        with pytest.raises(ValueError, match="unknown"):
            PriorConfig({"zz": 1.0}, {"mn": 1.0}, {}).check_against(running_catalog)
        with pytest.raises(ValueError, match="missing"):
            PriorConfig({"mn": 1.0}, {"mn": 1.0}, {}).check_against(running_catalog)

    def test_supports(self, running_catalog, running_prior):
        assert running_prior.suspect_support(running_catalog) == ("mn", "mnb")
        assert running_prior.trace_support(running_catalog) == ("mnb", "mbnb")
        assert running_prior.intersection(running_catalog) == ("mnb",)


class TestFactorized:
    def test_product_arithmetic(self):
        # P_a = P_g = 0.9 and P_h = 0.5 -> 0.405
        p = odds_against_to_prob(1 / 9) * odds_against_to_prob(1 / 9) * odds_against_to_prob(1.0)
        assert p == pytest.approx(0.405, abs=1e-15)

    def test_worked_example(self, running_catalog, running_prior, running_evidence):
        res = posterior_factorized(running_evidence, running_catalog, running_prior)
        # frozen from adaptive quadrature of each marginal and the joint, chained by hand
        assert res.suspect_posterior["mnb"] == pytest.approx(0.6899744811276126, abs=1e-12)
        assert res.trace_posterior["mnb"] == pytest.approx(0.710949502625004, abs=1e-12)
        assert res.h1_posterior["mnb"] == pytest.approx(0.533202990505494, abs=1e-12)
        assert res.posterior == pytest.approx(0.26155580291527647, abs=1e-12)
        log_ra, log_rg, log_rh = res.log_lr_components
        assert log_ra == pytest.approx(-0.8, abs=1e-12)
        assert log_rg == pytest.approx(-0.9, abs=1e-12)
        assert log_rh == pytest.approx(-0.1330077028925567, abs=1e-12)
        assert res.verdicts["exact"] is Verdict.H2

    def test_odds_identities(self, running_catalog, running_prior, running_evidence):
        res = posterior_factorized(running_evidence, running_catalog, running_prior)
        oa, og, oh = res.odds_components
        log_ra, log_rg, log_rh = res.log_lr_components
        assert oa == pytest.approx(1.0 * math.exp(log_ra), rel=1e-14)
        assert og == pytest.approx(1.0 * math.exp(log_rg), rel=1e-14)
        assert oh == pytest.approx(1.0 * math.exp(log_rh), rel=1e-14)

    def test_path_equivalence(self, running_catalog, running_prior, running_evidence):
        res = posterior_factorized(running_evidence, running_catalog, running_prior)
        assert res.posterior == pytest.approx(odds_against_to_prob(combine_odds_exact(res.odds_components)), abs=1e-15)

    def test_rejects_disjoint_and_wide_supports(self, running_catalog, running_evidence):
        disjoint = PriorConfig({"mn": 1.0}, {"mbnb": 1.0}, {})
        with pytest.raises(StructureError):
            posterior_factorized(running_evidence, running_catalog, disjoint)
        wide = PriorConfig({"mn": 0.4, "mnb": 0.3, "mbn": 0.3}, {"mnb": 1.0}, {"mnb": 0.5})
        with pytest.raises(StructureError):
            posterior_factorized(running_evidence, running_catalog, wide)


class TestGeneral:
    def test_empty_intersection(self, running_catalog, running_evidence):
        prior = PriorConfig({"mn": 1.0}, {"mnb": 1.0}, {})
        with count_likelihood_evaluations() as c:
            res = posterior_general(running_evidence, running_catalog, prior)
        assert res.posterior == 0.0
        assert res.odds == math.inf
        assert c.count == 0
        assert res.verdicts["exact"] is Verdict.H2

    def test_single_category(self):
        m = model_1d("a", 0.4, 0.8, 0.6)
        cat = CategoryCatalog((m,))
        ev = Evidence([0.1, 0.2], [0.5])
        res = posterior_general(ev, cat, PriorConfig({"a": 1.0}, {"a": 1.0}, {"a": 0.5}))
        assert res.posterior == pytest.approx(conditional_h1_posterior(ev, m, 0.5), abs=1e-15)

    def test_reduces_to_factorized(self, running_catalog, running_prior, running_evidence):
        g = posterior_general(running_evidence, running_catalog, running_prior)
        f = posterior_factorized(running_evidence, running_catalog, running_prior)
        assert g.posterior == pytest.approx(f.posterior, abs=1e-12)
        assert g.odds == pytest.approx(f.odds, rel=1e-12)
        for a, b in zip(g.odds_components, f.odds_components):
            assert a == pytest.approx(b, rel=1e-12)

    def test_general_k(self):
        rng = np.random.default_rng(8)
        cat = CategoryCatalog(tuple(random_model(rng, 2, c) for c in "abcd"))
        ev = Evidence(rng.normal(size=(2, 2)), rng.normal(size=(1, 2)))
        ws, wr = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        ws[-1] = 1 - ws[:-1].sum()
        wr[-1] = 1 - wr[:-1].sum()
        prior = PriorConfig(dict(zip("abcd", ws)), dict(zip("abcd", wr)), dict(zip("abcd", rng.uniform(size=4))))
        res = posterior_general(ev, cat, prior)
        assert 0 <= res.posterior <= 1
        assert sum(res.suspect_posterior.values()) == pytest.approx(1.0, abs=1e-12)
        assert sum(res.trace_posterior.values()) == pytest.approx(1.0, abs=1e-12)
        assert res.odds_components is None
        assert odds_against_to_prob(res.odds) == pytest.approx(res.posterior, abs=1e-14)
        # hand sum of the displayed formula
        expected = sum(
            res.suspect_posterior[k] * res.trace_posterior[k] * conditional_h1_posterior(ev, cat[k], prior.h1_given_category[k])
            for k in "abcd"
        )
        assert res.posterior == pytest.approx(expected, abs=1e-14)
        assert set(res.verdicts) == {"exact"}

    def test_near_certain_odds_keep_precision(self):
        # naive 1 - P would lose about 7 of 16 digits here
        cat = CategoryCatalog((model_1d("a", 0.0, 1e8, 1e-12),))
        ev = Evidence([30.0, 30.000001, 29.999999], [30.0000005, 29.9999995])
        prior = PriorConfig({"a": 1.0}, {"a": 1.0}, {"a": 0.5})
        res = posterior_general(ev, cat, prior)
        expected = math.exp(same_source_odds_lr(ev, cat["a"]))
        assert expected < 1e-9
        assert res.odds == pytest.approx(expected, rel=1e-9)


class TestDecide:
    def _result(self, odds, components=None, posterior=None):
        from forensic_posterior.inference import CaseResult

        return CaseResult(
            method="test",
            category_ids=("a",),
            intersection=("a",),
            posterior=odds_against_to_prob(odds) if posterior is None else posterior,
            odds=odds,
            theta=DEFAULT_THETA,
            odds_components=components,
        )

    def test_exact(self):
        assert decide(self._result(0.716)) is Verdict.H2
        assert decide(self._result(5e-5)) is Verdict.H1

    def test_tie_goes_to_h2(self):
        assert decide(self._result(1e-4), 1e-4) is Verdict.H2
        assert decide(self._result(0.0, (1e-4, 0.0, 0.0)), 1e-4, "three-tests") is Verdict.H2

    def test_additive(self):
        r = self._result(combine_odds_exact([1e-5] * 3), (1e-5, 1e-5, 1e-5))
        assert decide(r, 1e-4, "additive") is Verdict.H1
        r = self._result(combine_odds_exact([4e-5] * 3), (4e-5, 4e-5, 4e-5))
        assert decide(r, 1e-4, "additive") is Verdict.H2
        assert decide(r, 1e-4, "three-tests") is Verdict.H1

    def test_three_tests_rejects_on_any_component(self):
        r = self._result(0.5, (0.5, 0.0, 0.0))
        assert decide(r, 1e-4, "three-tests") is Verdict.H2
        r = self._result(0.5, (0.0, 0.0, 0.5))
        assert decide(r, 1e-4, "three-tests") is Verdict.H2

    def test_component_threshold_override(self):
        r = self._result(1e-3, (5e-4, 0.0, 5e-5))
        assert decide(r, 1e-4, "three-tests") is Verdict.H2
        assert decide(r, 1e-4, "three-tests", component_thetas=(1e-3, 1e-3, 1e-4)) is Verdict.H1

    def test_missing_components(self):
        with pytest.raises(InferenceError):
            decide(self._result(0.1), 1e-4, "additive")

    def test_default_theta(self):
        assert DEFAULT_THETA == 1 / 10000

    @pytest.mark.parametrize("theta", [0.0, 1.0, -1.0])
    def test_bad_theta(self, theta):
        with pytest.raises(ValueError):
            decide(self._result(0.1), theta)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            decide(self._result(0.1), 1e-4, "majority")


class TestSweep:
    def test_single_point(self, running_catalog, running_prior, running_evidence):
        rows = sensitivity_sweep(running_evidence, running_catalog, [running_prior])
        assert rows[0].posterior == posterior_general(running_evidence, running_catalog, running_prior).posterior

    def test_likelihoods_computed_once(self, running_catalog, running_prior, running_evidence):
        grid = pi_h_grid(running_prior, np.linspace(0.05, 0.95, 7))
        with count_likelihood_evaluations() as c:
            rows = sensitivity_sweep(running_evidence, running_catalog, grid)
        assert c.count == 3 * len(running_catalog)
        tables = {id(r.result.table) for r in rows}
        assert len(tables) == 1

    def test_monotone_in_pi_h(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            cat = CategoryCatalog(tuple(random_model(rng, 1, c) for c in "abc"))
            ev = Evidence(rng.normal(size=(1, 1)), rng.normal(size=(2, 1)))
            base = PriorConfig({"a": 0.3, "b": 0.7}, {"b": 0.6, "c": 0.4}, {"b": 0.5})
            rows = sensitivity_sweep(ev, cat, pi_h_grid(base, np.linspace(0, 1, 11)))
            post = [r.posterior for r in rows]
            assert all(b >= a for a, b in zip(post, post[1:]))

    def test_empty_intersection_row(self, running_catalog, running_prior, running_evidence):
        disjoint = PriorConfig({"mn": 1.0}, {"mbnb": 1.0}, {})
        rows = sensitivity_sweep(running_evidence, running_catalog, [disjoint, running_prior])
        assert rows[0].posterior == 0.0 and rows[0].verdict is Verdict.H2
        assert rows[1].posterior > 0

    def test_category_prior_grid(self, running_prior):
        grid = category_prior_grid(running_prior, "trace", "mnb", [0.0, 0.25, 1.0])
        assert [g.trace["mnb"] for g in grid] == [0.0, 0.25, 1.0]
        assert grid[1].trace["mbnb"] == pytest.approx(0.75)

    def test_empty_grid(self, running_catalog, running_evidence):
        with pytest.raises(ValueError):
            sensitivity_sweep(running_evidence, running_catalog, [])

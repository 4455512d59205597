import numpy as np
import pytest

from forensic_posterior import CategoryCatalog, CategoryModel, Evidence, PriorConfig


def model_1d(cid, mean, between=1.0, within=1.0):
    return CategoryModel(cid, cid, [mean], [[between]], [[within]])


def random_spd(rng, d, scale=1.0, floor=0.1):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T / d) + floor * np.eye(d)


def random_model(rng, d, cid="k"):
    return CategoryModel(cid, cid, rng.normal(0, 2, d), random_spd(rng, d), random_spd(rng, d, 0.5))


def draw_recordings(rng, model, n):
    y = rng.multivariate_normal(model.mean, model.between_cov)
    return rng.multivariate_normal(y, model.within_cov, size=n)


@pytest.fixture
def running_catalog():
    return CategoryCatalog(
        (
            model_1d("mn", -1.0),
            model_1d("mnb", 1.0),
            model_1d("mbnb", 3.0),
            model_1d("mbn", -3.0),
        )
    )


@pytest.fixture
def running_prior():
    return PriorConfig({"mn": 0.5, "mnb": 0.5}, {"mnb": 0.5, "mbnb": 0.5}, {"mnb": 0.5})


@pytest.fixture
def running_evidence():
    return Evidence([0.8], [1.1])


# -- acceptance summary ------------------------------------------------------

_acceptance_key = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Record one PASS/FAIL line per acceptance criterion; printed now and in the summary."""
    lines = request.config.stash.setdefault(_acceptance_key, [])

    def log(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_acceptance_key, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

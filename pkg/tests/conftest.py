from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from pinlab import acceptance
from pinlab.renewal import intersection_tables, make_tables

settings.register_profile("pinlab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pinlab")


@pytest.fixture(scope="session")
def pin():
    return make_tables("pinning", 1 << 12)


@pytest.fixture(scope="session")
def pin14():
    return make_tables("pinning", 1 << 14)


@pytest.fixture(scope="session")
def wet():
    return make_tables("wetting", 1 << 12)


@pytest.fixture(scope="session")
def stable_small():
    return make_tables("stable", 1 << 12)


@pytest.fixture(scope="session")
def stable_big():
    # far beyond every n probed: renormalising on the horizon bends u(n) near n_max
    return make_tables("stable", 1 << 22)


@pytest.fixture(scope="session")
def pin18():
    return make_tables("pinning", 1 << 18)


@pytest.fixture(scope="session")
def inter18(pin18):
    return intersection_tables(pin18)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def suite_run(tmp_path_factory, pytestconfig):
    """The acceptance battery, run once; returns (output dir, {number: result})."""
    out = tmp_path_factory.mktemp("suite")
    results = acceptance.run_suite(out, seed=acceptance.DEFAULT_SEED)
    pytestconfig.stash[ACCEPTANCE_KEY] = [acceptance.format_line(r) for r in results]
    return out, {r.number: r for r in results}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

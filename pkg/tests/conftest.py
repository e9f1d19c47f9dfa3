from __future__ import annotations

import pytest

from perturbmc import experiment as ex
from perturbmc.sampler import PMConfig, run_exact_mh

# criterion number -> (passed, detail), filled by the acceptance tests
ACCEPTANCE_RESULTS: dict = {}

VONMISES_ITERATIONS = 50_000
VONMISES_SEED = 7


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def vonmises_setup():
    """The default simulated dataset, its posterior mode and the proposal covariance."""
    return ex.vonmises_setup()


@pytest.fixture(scope="session")
def vonmises_full_trace(vonmises_setup):
    s = vonmises_setup
    config = PMConfig(iterations=VONMISES_ITERATIONS, seed=VONMISES_SEED + 1)
    return run_exact_mh(s.model, s.data, config, s.proposal_cov, s.mode.theta)


@pytest.fixture(scope="session")
def vonmises_order2(vonmises_setup, vonmises_full_trace):
    return ex.run_vonmises(cv_order=2, iterations=VONMISES_ITERATIONS, seed=VONMISES_SEED,
                           setup=vonmises_setup, full_trace=vonmises_full_trace)


@pytest.fixture(scope="session")
def vonmises_order1(vonmises_setup, vonmises_full_trace):
    return ex.run_vonmises(cv_order=1, iterations=VONMISES_ITERATIONS, seed=VONMISES_SEED,
                           setup=vonmises_setup, full_trace=vonmises_full_trace)

import numpy as np
import pytest

from lnmfa.simulate import builtin_specs, generate


@pytest.fixture(scope="session")
def small_study1():
    return generate(builtin_specs(n=150, seed=11)["study1"])


@pytest.fixture(scope="session")
def small_study2():
    return generate(builtin_specs(n=150, seed=12)["study2"])


ACCEPTANCE_TITLES = {
    1: "study 1 selection and ARI",
    2: "study 2 selection and ARI",
    3: "study 1 parameter recovery",
    4: "ELBO tightness against quadrature",
    5: "cycle-1 gradients against finite differences",
    6: "factor-posterior identities and cycle-2 equality",
    7: "Woodbury inverse and log-determinant",
    8: "surrogate objective monotone",
    9: "parameter counts",
    10: "ARI against pair counting",
}


def pytest_configure(config):
    config.acceptance = {}


@pytest.fixture
def record(pytestconfig):
    """Store the outcome of an acceptance criterion for the terminal summary."""

    def _record(number, ok, detail):
        pytestconfig.acceptance[number] = (bool(ok), detail)

    return _record


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_TITLES):
        if n in results:
            ok, detail = results[n]
            terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {ACCEPTANCE_TITLES[n]}: {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d} NOT RUN  {ACCEPTANCE_TITLES[n]}")

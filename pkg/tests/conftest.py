import pytest

from amm_lab.core import baseline_params, noise_trading_params
from amm_lab.riccati import solve


@pytest.fixture(scope="session")
def base_p():
    return baseline_params()


@pytest.fixture(scope="session")
def nt_p():
    return noise_trading_params()


@pytest.fixture(scope="session")
def base_sol(base_p):
    return solve(base_p, n_steps=10_000)


@pytest.fixture(scope="session")
def nt_sol(nt_p):
    return solve(nt_p, n_steps=10_000)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

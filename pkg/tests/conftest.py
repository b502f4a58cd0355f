import pytest

from provchain.network import run_scenario, write_outputs


@pytest.fixture(scope="session")
def scenario():
    """The 5-node, 10-product, 50-transaction fixture."""
    return run_scenario(n_nodes=5, n_products=10, rng_seed=2024)


@pytest.fixture(scope="session")
def scenario_dir(scenario, tmp_path_factory):
    out = tmp_path_factory.mktemp("scenario")
    write_outputs(scenario, out)
    return out


@pytest.fixture(scope="session")
def ledger_path(scenario_dir):
    return scenario_dir / "ledger.ndjson"


def pytest_terminal_summary(terminalreporter):
    from helpers import CRITERIA_LINES
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda text: int(text.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from distnesterov.graph import Scheme, WeightProcess, build_geometric_supergraph  # noqa: E402
from distnesterov.objective import huber_experiment_objective  # noqa: E402

EXPERIMENT_GRAPH_SEED = 2
EXPERIMENT_RADIUS = 0.57


@pytest.fixture(scope="session")
def experiment_graph():
    return build_geometric_supergraph(10, EXPERIMENT_RADIUS, EXPERIMENT_GRAPH_SEED)


@pytest.fixture(scope="session")
def failing_network(experiment_graph):
    return WeightProcess(experiment_graph, Scheme.UNIFORM, 0.1)


@pytest.fixture(scope="session")
def static_network(experiment_graph):
    return WeightProcess(experiment_graph, Scheme.DETERMINISTIC)


@pytest.fixture(scope="session")
def huber_objs():
    return huber_experiment_objective(seed=0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[num])

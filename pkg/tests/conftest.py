from pathlib import Path

import pytest

from giby import RelationshipGraph, parse_dataset, train
from giby.synthgen import DetectabilityOracle, PlantScenario, generate_normal, plant_graph

DATA = Path(__file__).parent / "data"

# Plant trace shared by the attack, replay and determinism checks.
PLANT = PlantScenario(seed=1, duration=20000)


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def worked_graph():
    return RelationshipGraph.load(DATA / "worked_graph.ini")


@pytest.fixture(scope="session")
def worked_normal(worked_graph):
    return parse_dataset(DATA / "worked_normal.csv", graph=worked_graph)


@pytest.fixture(scope="session")
def worked_attack(worked_graph):
    return parse_dataset(DATA / "worked_attack.csv", graph=worked_graph)


@pytest.fixture(scope="session")
def plant():
    return generate_normal(PLANT), plant_graph()


@pytest.fixture(scope="session")
def plant_trained(plant):
    data, graph = plant
    return train(data, graph)


@pytest.fixture(scope="session")
def plant_oracle(plant):
    data, graph = plant
    return DetectabilityOracle(data, graph)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if not RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(RESULTS):
        title, status, detail = RESULTS[n]
        terminalreporter.write_line(f"[{status}] {n:>2}. {title} ({detail})")

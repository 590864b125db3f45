import numpy as np
import pytest

from elconsensus import config
from elconsensus.graph import NetworkTopology, path_topology
from elconsensus.kernels import BACKENDS

REF_L = np.array([
    [1, -1, 0, 0, 0],
    [-1, 2, -1, 0, 0],
    [0, -1, 2, -1, 0],
    [0, 0, -1, 2, -1],
    [0, 0, 0, -1, 1],
], dtype=float)
REF_A = np.array([
    [0, 1, 0, 0, 0],
    [1, 0, 1, 0, 0],
    [0, 1, 0, 1, 0],
    [0, 0, 1, 0, 1],
    [0, 0, 0, 1, 0],
], dtype=float)


@pytest.fixture
def reference_topology():
    return NetworkTopology(REF_A, np.ones(5))


@pytest.fixture
def reference_raw():
    return config.load_json(config.shipped_scenario_path())


@pytest.fixture
def reference_scenario(reference_raw):
    return config.scenario_from_dict(reference_raw)


def random_topology(rng, n, p_edge=0.5, leader_p=0.5, weighted=True):
    adj = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p_edge:
                adj[i, j] = adj[j, i] = rng.uniform(0.1, 3.0) if weighted else 1.0
    lw = np.where(rng.random(n) < leader_p, rng.uniform(0.1, 2.0, n), 0.0)
    return NetworkTopology(adj, lw)


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return request.param


# one summary line per acceptance criterion
_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if "test_acceptance" in report.nodeid and name.startswith("test_criterion_"):
        if report.when == "call" or report.outcome == "failed":
            key = name.split("[")[0]
            prev = _criteria.get(key, "PASS")
            _criteria[key] = "FAIL" if (report.outcome == "failed" or prev == "FAIL") else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda k: int(k.split("_")[2])):
        terminalreporter.write_line(f"{_criteria[key]}  {key}")


__all__ = ["REF_A", "REF_L", "random_topology", "path_topology"]

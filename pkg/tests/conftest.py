import numpy as np
import pytest

from gcl.data import SbmParams, generate_sbm
from gcl.graph import from_edge_list


def random_graph(rng, n, p=0.3):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return from_edge_list(n, np.stack([iu[keep], ju[keep]], axis=1))


def dense_adjacency(g):
    a = np.zeros((g.n, g.n))
    rows, cols = g.edge_arrays()
    a[rows, cols] = 1.0
    return a


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sbm6():
    return generate_sbm(SbmParams(seed=0))


@pytest.fixture(scope="session")
def sbm4():
    return generate_sbm(SbmParams(classes=4, nodes_per_class=40, seed=3))


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number: int, ok: bool | None, detail: str):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number}: {status}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

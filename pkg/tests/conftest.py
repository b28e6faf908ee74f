import numpy as np
import pytest

from dga.data import generate_sbm, stratified_split
from dga.gcn import init_params
from dga.graph import Split, build_graph


def random_graph(n, p, rng):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return build_graph(np.stack([iu[keep], ju[keep]], 1), n)


def tiny_instance(seed, n=5, d=3, h=2, c=2, p=0.5):
    """Random graph, features, labels and params for gradient checks."""
    rng = np.random.default_rng(seed)
    g = random_graph(n, p, rng)
    x = rng.standard_normal((n, d))
    y = rng.integers(0, c, n)
    params = init_params(d, h, c, rng)
    params.W1 *= 3.0  # push the hidden units away from the relu kink
    params.W2 *= 3.0
    return g, x, y, params, rng


@pytest.fixture(scope="session")
def sbm():
    g, x, y = generate_sbm(100, 2, 0.3, 0.02, seed=0)
    return g, x, y, stratified_split(y, 0)


@pytest.fixture
def toy_split():
    return Split([0, 1], [2], [3, 4])


ACCEPTANCE = {}


def record(criterion, ok, detail=""):
    """Store an acceptance outcome; printed in the terminal summary."""
    ACCEPTANCE[criterion] = ("PASS" if ok else "FAIL", detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    order = lambda k: (int(str(k).split("-")[0]), str(k))
    for key in sorted(ACCEPTANCE, key=order):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {str(key):>2}: {status}  {detail}")

import sys
from importlib.resources import files
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import pomdp_iltl as pi  # noqa: E402
from pomdp_iltl import logic  # noqa: E402

DATA = files("pomdp_iltl") / "data"

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def data_dir():
    return Path(str(DATA))


@pytest.fixture(scope="session")
def guarded():
    model = pi.load_pomdp(DATA / "guarded.json")
    table = logic.load_ap_table(DATA / "guarded_aps.json", model.states)
    aut = pi.load_ldba(DATA / "fg_or_fg.json")
    return model, aut, [table[n] for n in aut.ap_names]


@pytest.fixture(scope="session")
def tiger():
    return pi.load_pomdp(DATA / "tiger.json")


@pytest.fixture(scope="session")
def constant():
    return pi.load_pomdp(DATA / "constant.json")


def make_model(T, Z, p0, R, gamma=0.9, states=None, actions=None, observations=None):
    T, Z, R = np.asarray(T, float), np.asarray(Z, float), np.asarray(R, float)
    n, m, l = T.shape[0], T.shape[1], Z.shape[1]
    return pi.Pomdp(states or [f"s{i}" for i in range(n)],
                    actions or [f"a{k}" for k in range(m)],
                    observations or [f"o{j}" for j in range(l)],
                    T, Z, p0, R, gamma)


@pytest.fixture
def two_state():
    """Identity dynamics, noisy sensor: P(o1|s1)=0.8, P(o1|s2)=0.4."""
    T = np.stack([np.eye(2)], axis=1)
    Z = [[0.8, 0.2], [0.4, 0.6]]
    return make_model(T, Z, [0.5, 0.5], [[1.0], [0.0]], 0.9,
                      states=["s1", "s2"], actions=["a"], observations=["o1", "o2"])


def random_model(rng, n, m, l, sparse=False):
    T = rng.dirichlet(np.ones(n), size=(n, m))
    Z = rng.dirichlet(np.ones(l), size=n)
    if sparse:
        T = np.where(rng.random(T.shape) < 0.3, 0.0, T) + 1e-3
        T /= T.sum(axis=2, keepdims=True)
    p0 = rng.dirichlet(np.ones(n))
    R = rng.normal(size=(n, m))
    return make_model(T, Z, p0, R, float(rng.uniform(0.5, 0.95)))

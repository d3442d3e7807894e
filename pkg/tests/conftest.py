import numpy as np
import pytest

from jumpsem import load_model, load_true_model, true_sigma

# criterion id -> (passed, detail); filled by the acceptance module
ACCEPTANCE = {}


def record(cid, passed, detail):
    ACCEPTANCE[cid] = (bool(passed), detail)
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {cid}: {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: (int(c.rstrip("abcdef")), c)):
        passed, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {cid}: {detail}")


@pytest.fixture(scope="session")
def model1():
    return load_model("model1")


@pytest.fixture(scope="session")
def model2():
    return load_model("model2")


@pytest.fixture(scope="session")
def model3():
    return load_model("model3")


@pytest.fixture(scope="session")
def true_model():
    return load_true_model("true_model")


@pytest.fixture(scope="session")
def sigma0(true_model):
    return true_sigma(true_model)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

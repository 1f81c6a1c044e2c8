import numpy as np
import pytest

from macarm.lattice import LatticeSpec
from macarm.model import JointOracle, JointTable
from macarm.protocols import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def two_var_joint():
    """p(00)=0.1, p(01)=0.2, p(10)=0.3, p(11)=0.4 with x_0 the first digit."""
    spec = LatticeSpec(2, 2)
    return JointTable(spec, np.array([[0.1, 0.2], [0.3, 0.4]]))


@pytest.fixture
def two_var_oracle(two_var_joint):
    return JointOracle(two_var_joint)


def random_joint(spec, rng, concentration=1.0):
    probs = rng.dirichlet(np.full(spec.alphabet_size ** spec.n_vars, concentration))
    return JointTable(spec, probs)


ACCEPTANCE_LINES = []


def record_acceptance(number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

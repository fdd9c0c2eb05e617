import numpy as np
import pytest

from circuittag.expr import And, Const, Not, Or, Var, Xor
from circuittag.library import demo_library
from circuittag.selftest import two_reg_netlist


@pytest.fixture(scope="session")
def lib():
    return demo_library()


@pytest.fixture(scope="session")
def two_reg(lib):
    return two_reg_netlist(lib)


def random_expr(rng, names, depth=4, const_prob=0.05):
    """Random expression tree over ``names``; shared by several test modules."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < const_prob:
            return Const(int(rng.integers(2)))
        return Var(names[rng.integers(len(names))])
    r = rng.random()
    if r < 0.2:
        return Not(random_expr(rng, names, depth - 1, const_prob))
    if r < 0.45:
        kids = [random_expr(rng, names, depth - 1, const_prob) for _ in range(int(rng.integers(2, 4)))]
        return And(tuple(kids))
    if r < 0.75:
        kids = [random_expr(rng, names, depth - 1, const_prob) for _ in range(int(rng.integers(2, 4)))]
        return Or(tuple(kids))
    return Xor((random_expr(rng, names, depth - 1, const_prob), random_expr(rng, names, depth - 1, const_prob)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])

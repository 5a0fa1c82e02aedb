import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from sympolicy.exprtree import ALL_OPS, ExprTree, Node, arity

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SIG = ("y1", "y2", "xstar")

finite_floats = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
consts = st.floats(-5, 5, allow_nan=False, allow_infinity=False).map(Node.const)


def node_strategy(n_vars: int = len(SIG), ops=ALL_OPS, max_leaves: int = 12):
    leaves = st.one_of(consts, st.integers(0, n_vars - 1).map(Node.var))

    def extend(children):
        return st.sampled_from(ops).flatmap(
            lambda op: st.tuples(*[children] * arity(op)).map(lambda kids: Node(op, kids)))

    return st.recursive(leaves, extend, max_leaves=max_leaves)


trees = node_strategy().map(lambda n: ExprTree(n, SIG))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

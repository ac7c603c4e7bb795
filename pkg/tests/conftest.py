import functools

import numpy as np
import pytest

from stokesmg.fespace import build_dofmap
from stokesmg.mesh import build_hierarchy, make_channel_with_cylinder, make_unit_hypercube
from stokesmg.mfoperator import StokesOperator
from stokesmg.verify import assemble

#: (criterion, passed, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for crit, ok, detail in ACCEPTANCE_LINES:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {crit}: {detail}")


@functools.lru_cache(maxsize=None)
def square_level(n_ref, k=2):
    """Dofmap of the unit square refined ``n_ref`` times from one cell."""
    return build_dofmap(make_unit_hypercube(2, n_ref)[-1], k)


@functools.lru_cache(maxsize=None)
def cube_level(n_ref, k=2):
    return build_dofmap(make_unit_hypercube(3, n_ref)[-1], k)


@functools.lru_cache(maxsize=None)
def channel_level(n_ref):
    return build_dofmap(build_hierarchy(make_channel_with_cylinder(), n_ref)[-1], 2, (0, 2, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def square2():
    dm = square_level(1)
    return dm, StokesOperator(dm), assemble(dm)


@pytest.fixture(scope="session")
def square8():
    dm = square_level(3)
    return dm, StokesOperator(dm), assemble(dm)

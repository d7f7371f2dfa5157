import functools

import pytest

from porowg.mesh import build_structured_mesh
from porowg.wgfem import PhysicalParams, assemble


@functools.lru_cache(maxsize=None)
def mesh(dim, n):
    return build_structured_mesh(dim, n)


@functools.lru_cache(maxsize=None)
def blocks(dim, n, lam=1.0, mu=1.0, dt=1e-3):
    return assemble(mesh(dim, n), PhysicalParams(mu=mu, lam=lam, dt=dt))


@pytest.fixture
def small_blocks():
    return blocks(2, 4)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])

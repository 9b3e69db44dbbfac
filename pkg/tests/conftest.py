import functools

import pytest

from locmarket.dcopf import solve_dispatch
from locmarket.market import fixture


@functools.lru_cache(maxsize=None)
def solved(name: str):
    """Fixture instance and its dispatch, solved once per session."""
    inst = fixture(name)
    return inst, solve_dispatch(inst)


@pytest.fixture
def example1():
    return solved("example1")


@pytest.fixture
def example2():
    return solved("example2")


@pytest.fixture
def example3():
    return solved("example3")


@pytest.fixture
def convex_demo():
    return solved("convex-demo")


ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    """Remember one acceptance verdict for the end-of-run summary."""
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

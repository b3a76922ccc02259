import numpy as np
import pytest

from tauscreen.null_dist import exact_null
from tauscreen.tau_core import build_design_structure

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Record one acceptance line: record(criterion_id, passed, detail)."""
    def _record(cid: str, passed: bool, detail: str):
        ACCEPTANCE[cid] = (bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] {cid}: {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c.split()[0].lstrip("AC"))):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {cid}: {detail}")


@pytest.fixture(scope="session")
def d3():
    return build_design_structure((1, 2, 3))


@pytest.fixture(scope="session")
def nd3(d3):
    return exact_null(d3)


@pytest.fixture(scope="session")
def d444():
    return build_design_structure(tuple(float(g) for g in (1, 2, 3) for _ in range(4)))


@pytest.fixture(scope="session")
def nd444(d444):
    return exact_null(d444)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

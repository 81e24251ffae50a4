import time

import numpy as np
import pytest
from hypothesis import settings

from multipose.normtable import axis_nodes, build_norm_table

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# criterion number -> [(passed, detail)]; filled by the acceptance tests
ACCEPTANCE = {}
TIMINGS = {}


def record(number, passed, detail):
    ACCEPTANCE.setdefault(number, []).append((bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        results = ACCEPTANCE[number]
        status = "PASS" if all(ok for ok, _ in results) else "FAIL"
        details = "; ".join(detail for _, detail in results)
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {details}")


@pytest.fixture(scope="session")
def table():
    """The default dense table (about 40 s to build)."""
    start = time.perf_counter()
    t = build_norm_table()
    TIMINGS["table_build"] = time.perf_counter() - start
    return t


@pytest.fixture(scope="session")
def coarse_table():
    """A 12-node grid for tests that only need a consistent interpolant."""
    return build_norm_table([axis_nodes(-900.0, 12)] * 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(a, b):
    """Norm-wise relative difference, safe when both sides vanish."""
    a, b = np.ravel(np.asarray(a, float)), np.ravel(np.asarray(b, float))
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))

from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_boxes(rng, n, spread=3.0):
    """Paired (n, 7) box arrays with a decent fraction of overlaps."""
    a = np.column_stack([rng.uniform(-spread, spread, (n, 3)), rng.uniform(0.3, 5.0, (n, 3)),
                         rng.uniform(-np.pi, np.pi, n)])
    b = np.column_stack([a[:, 0:3] + rng.normal(0.0, 1.0, (n, 3)),
                         a[:, 3:6] * rng.uniform(0.6, 1.4, (n, 3)),
                         rng.uniform(-np.pi, np.pi, n)])
    return a, b


# ------------------------------------------------------- acceptance report

_CRITERIA = {}


@pytest.fixture
def measured(request):
    """Dict of measured values shown next to the criterion's pass/fail line."""
    request.node.measured = {}
    return request.node.measured


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    _, ok, values = _CRITERIA.get(number, (title, True, {}))
    values.update(getattr(item, "measured", {}))
    _CRITERIA[number] = (title, ok and rep.passed, values)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, values = _CRITERIA[number]
        shown = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                          for k, v in values.items())
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
                                    + (f"  [{shown}]" if shown else ""))

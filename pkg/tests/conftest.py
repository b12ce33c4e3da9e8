import os
import sys
import time
from collections import defaultdict
from types import SimpleNamespace

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from nfcodebook.experiments import ComparisonSettings, run_comparison  # noqa: E402
from nfcodebook.geometry import ArrayConfig  # noqa: E402

_CRITERIA = defaultdict(list)
_TITLES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    _TITLES[number] = title
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA[number].append((item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        ok = all(o == "passed" for _, o in parts)
        failed = [name for name, o in parts if o != "passed"]
        detail = f"  (failed: {', '.join(failed)})" if failed else ""
        tr.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  "
                      f"{_TITLES[number]}{detail}")


def _comparison(cfg):
    t0 = time.perf_counter()
    report, books = run_comparison(cfg, ComparisonSettings())
    return SimpleNamespace(cfg=cfg, report=report, books=books,
                           seconds=time.perf_counter() - t0)


@pytest.fixture(scope="session")
def ula_comparison():
    """1000-user, 15-bit comparison on a 512-element ULA (shared, slow)."""
    return _comparison(ArrayConfig.ula(512))


@pytest.fixture(scope="session")
def upa_comparison():
    """1000-user comparison on a 16 x 16 UPA at c = 0.95 (shared, slow)."""
    return _comparison(ArrayConfig.upa(16))

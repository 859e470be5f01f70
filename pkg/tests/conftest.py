"""Per-criterion PASS/FAIL summary for tests marked ``criterion("A#")``."""

from collections import defaultdict

import pytest

_outcomes = defaultdict(lambda: {"passed": 0, "failed": 0, "skipped": 0})
_measured = defaultdict(dict)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    for mark in item.iter_markers("criterion"):
        counts = _outcomes[mark.args[0]]
        if rep.failed:
            counts["failed"] += 1
        elif rep.skipped:
            counts["skipped"] += 1
        elif rep.when == "call":
            counts["passed"] += 1


@pytest.fixture
def measured(request):
    """Record a measured value that is echoed next to the criterion verdict."""
    marks = list(request.node.iter_markers("criterion"))

    def put(key, value):
        for mark in marks:
            _measured[mark.args[0]][key] = value

    return put


def _fmt(v):
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_outcomes, key=lambda c: int(c[1:])):
        c = _outcomes[cid]
        verdict = "PASS" if c["failed"] == 0 and c["skipped"] == 0 and c["passed"] else "FAIL"
        extra = " ".join(f"{k}={_fmt(v)}" for k, v in sorted(_measured[cid].items()))
        tr.write_line(f"{cid} {verdict}  ({c['passed']} passed, {c['failed']} failed) {extra}".rstrip())

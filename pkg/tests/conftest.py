import numpy as np
import pytest

from lidtwist.config import RunConfig


@pytest.fixture
def cfg():
    return RunConfig().with_overrides(["encoder.mode=passthrough"])


@pytest.fixture
def quiet_cfg():
    """No noise and no friction draw spread: for exact dynamics checks."""
    return RunConfig().with_overrides(["encoder.mode=passthrough", "randomization.enabled=false"])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance
_VERDICTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when == "teardown":
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        _VERDICTS[number] = (title, "FAIL", detail)
    elif rep.when == "call":
        _VERDICTS[number] = (title, "SKIP" if rep.skipped else "PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, verdict, detail = _VERDICTS[number]
        line = f"[{verdict}] {number:>2}. {title}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))

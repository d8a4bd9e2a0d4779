import contextlib

import pytest

_VERDICTS = pytest.StashKey[list]()


class _Verdict:
    def __init__(self):
        self.detail = ""

    def check(self, cond, message):
        if not cond:
            raise AssertionError(message)


@pytest.fixture
def criterion(request):
    """Context manager recording one acceptance criterion as PASS or FAIL."""
    store = request.config.stash.setdefault(_VERDICTS, [])

    @contextlib.contextmanager
    def run(name):
        v = _Verdict()
        try:
            yield v
        except BaseException as exc:
            store.append(("FAIL", name, f"{v.detail} | {exc}".strip(" |")))
            raise
        store.append(("PASS", name, v.detail))

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = config.stash.get(_VERDICTS, [])
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in verdicts:
        terminalreporter.write_line(f"{status}  {name}: {detail}")

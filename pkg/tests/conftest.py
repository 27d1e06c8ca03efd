"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

import pytest

_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Attach a detail string to the running acceptance test."""

    def note(text: str) -> None:
        request.node.user_properties.append(("detail", text))

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    label = item.get_closest_marker("criterion")
    if label is None or rep.when != "call":
        return
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    if rep.failed and call.excinfo is not None:
        msg = str(call.excinfo.value).splitlines()[0] if str(call.excinfo.value) else ""
        detail = f"{detail}; {msg}" if detail else msg
    _RESULTS[label.args[0]] = (rep.passed, detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=int):
        ok, detail = _RESULTS[key]
        terminalreporter.write_line(f"ACCEPTANCE C{key} {'PASS' if ok else 'FAIL'}  {detail}")

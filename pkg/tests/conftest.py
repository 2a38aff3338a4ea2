import pytest

_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(tag: str, ok: bool, detail: str):
        line = f"{tag}: {'PASS' if ok else 'FAIL'} {detail}"
        _ACCEPTANCE[tag] = line
        print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[tag])

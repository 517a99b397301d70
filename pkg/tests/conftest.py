import pytest

_LINES: list[tuple] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Append one ``criterion N: PASS|FAIL ...`` line; echoed in the terminal summary."""
    def log(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append((number, 0, line))
        print(line)
        return ok
    return log


@pytest.fixture(scope="session")
def acceptance_note():
    """Extra indented line shown under criterion ``number`` (not a verdict)."""
    def note(number, text):
        _LINES.append((number, 1, "    " + text))
        print(text)
    return note


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(_LINES, key=lambda x: (x[0], x[1])):
        terminalreporter.write_line(line)

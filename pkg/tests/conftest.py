import pytest

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def acceptance_log(request):
    """Append ``(number, title, passed, detail)`` to the acceptance summary."""
    lines = request.config.stash[_LINES_KEY]

    def log(number, title, passed, detail):
        lines.append((number, f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"))

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, text in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(text)

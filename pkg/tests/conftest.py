import pytest

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line and assert it."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[ACCEPTANCE_KEY]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

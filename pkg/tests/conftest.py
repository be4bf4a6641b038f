import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def report(request):
    """Print one PASS/FAIL line per acceptance criterion and keep it for the summary."""
    lines = request.config.stash[_LINES]

    def emit(number, name, passed, detail=""):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip()
        print(line)
        lines.append(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_LINES]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

import pytest

from synthetic import write_kdd_csv

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    """Record and print one result line: ``criterion(n, ok, detail)``; returns ``ok``."""
    def record(number, ok, detail="", status=None):
        status = status or ("PASS" if ok else "FAIL")
        line = f"criterion {number:>2}: {status}  {detail}".rstrip()
        request.config.stash[_LINES].append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def kdd_file(tmp_path):
    return write_kdd_csv(tmp_path / "kdd_train.txt", n=400, seed=1)


@pytest.fixture
def kdd_test_file(tmp_path):
    return write_kdd_csv(tmp_path / "kdd_test.txt", n=150, seed=2)

import pytest

ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption("--run-benchmark", action="store_true", default=False,
                     help="run the long benchmark profile (hours)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-benchmark"):
        return
    skip = pytest.mark.skip(reason="benchmark profile; pass --run-benchmark")
    for item in items:
        if "benchmark" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import os

import pytest


@pytest.fixture(scope="session", autouse=True)
def reference_cache(tmp_path_factory):
    """Keep reference solutions out of the working tree during tests."""
    path = tmp_path_factory.mktemp("references")
    old = os.environ.get("RKBENCH_REFERENCE_DIR")
    os.environ["RKBENCH_REFERENCE_DIR"] = str(path)
    yield path
    if old is None:
        os.environ.pop("RKBENCH_REFERENCE_DIR", None)
    else:
        os.environ["RKBENCH_REFERENCE_DIR"] = old


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

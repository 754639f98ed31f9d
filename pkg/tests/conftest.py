import pytest

from sdane.harness.runner import build_problem

from benchmarks import QUAD_BENCH

_acceptance = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    if report.when == "call" or (report.when == "setup" and report.failed):
        _acceptance[key] = report.passed


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_acceptance, key=lambda k: int(k.split(".")[0])):
        terminalreporter.write_line(f"criterion {key}: {'PASS' if _acceptance[key] else 'FAIL'}")


@pytest.fixture(scope="session")
def quad_bench():
    return build_problem(dict(QUAD_BENCH))

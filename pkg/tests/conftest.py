import pytest

CRITERIA = {
    1: "limiting closed form, quadratic hazard, chi = 3",
    2: "limiting mixed-penalty example, p = 1/3",
    3: "calibrated N and gamma per estimate and chi",
    4: "mu and sample standard deviation estimates",
    5: "calibrated N and gamma, exponential penalty",
    6: "finite-N solves at calibrated parameters",
    7: "strategy convergence slope",
    8: "epsilon-equilibrium slope",
    9: "property suite",
    10: "power-penalty closed form vs grid argmax",
}

_results: dict[int, list[tuple[str, bool]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _results.setdefault(marker.args[0], []).append((item.name, rep.passed))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        runs = _results[n]
        ok = all(passed for _, passed in runs)
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {CRITERIA.get(n, '')}"
        failed = [name for name, passed in runs if not passed]
        if failed:
            line += f" (failed: {', '.join(failed)})"
        terminalreporter.write_line(line)

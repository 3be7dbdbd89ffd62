"""Terminal summary: one pass/fail line per acceptance criterion."""

_RESULTS = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance" in report.nodeid and name.startswith("test_criterion"):
        if report.when == "call" or report.outcome == "failed":
            _RESULTS.setdefault(name, report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_RESULTS):
        outcome = _RESULTS[name].upper()
        label = name.replace("test_criterion_", "criterion ")
        terminalreporter.write_line(f"{'PASS' if outcome == 'PASSED' else 'FAIL'}"
                                    f"  {label}")

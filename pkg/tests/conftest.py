import helpers


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not helpers.ACCEPTANCE_PARTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(helpers.ACCEPTANCE_PARTS):
        parts = helpers.ACCEPTANCE_PARTS[number]
        verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        details = "; ".join(detail for _, detail in parts)
        terminalreporter.write_line(f"criterion {number}: {verdict} - {details}")

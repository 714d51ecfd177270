CRITERIA = []


def report(number, passed, detail, status=None):
    status = status or ("PASS" if passed else "FAIL")
    line = f"criterion {number}: {status} {detail}"
    CRITERIA.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

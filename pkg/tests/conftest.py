import pytest

# filled by tests/test_acceptance.py: criterion number -> (passed, summary line)
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, title, passed, detail=""):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
        if detail:
            line += f": {detail}"
        ACCEPTANCE[number] = (passed, line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number][1])

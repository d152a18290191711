import pytest

_results: list = []


@pytest.fixture
def criterion(request):
    """Records one pass/fail line for an acceptance criterion; errors before recording count as failures."""
    seen = []

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        seen.append(number)
        _results.append((number, line))
        print(line)
        return ok

    yield record
    if not seen:
        _results.append((999, f"{request.node.name}: FAIL  raised before a result was recorded"))


def pytest_terminal_summary(terminalreporter):
    if _results:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_results):
            terminalreporter.write_line(line)

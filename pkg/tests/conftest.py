import re

import pytest


def pytest_configure(config):
    config._criteria = {}


@pytest.fixture
def record_criterion(request):
    """record_criterion("6b", passed, detail): collected for the end-of-run summary."""

    def record(key, passed, detail):
        request.config._criteria[str(key)] = (bool(passed), detail)
        print(f"criterion {key}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    parts = getattr(config, "_criteria", {})
    if not parts:
        return
    grouped = {}
    for key, value in parts.items():
        num = int(re.match(r"\d+", key).group())
        grouped.setdefault(num, []).append((key, *value))
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(grouped):
        items = sorted(grouped[num])
        ok = all(p for _, p, _ in items)
        if len(items) == 1:
            detail = items[0][2]
        else:
            detail = "; ".join(f"{k} {'ok' if p else 'FAILED'}: {d}" for k, p, d in items)
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'} | {detail}")

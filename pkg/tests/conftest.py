import pytest

# criterion number -> (passed, one-line detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}

TITLES = {
    1: "deterministic per-slot bounds, T=1e4",
    2: "projection vs exhaustive oracle",
    3: "benchmark LP vs enumeration / grid / Lagrangian",
    4: "queue growth ~ sqrt(T)",
    5: "regret sublinearity",
    6: "constraint violation decay",
    7: "mixing contraction",
    8: "perturbation gap halving",
    9: "byte-identical CLI runs",
}


@pytest.fixture
def acceptance():
    """Record the outcome of one criterion: ``acceptance(n, ok, detail)``."""

    def record(n, ok, detail=""):
        ACCEPTANCE[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(TITLES):
        if n not in ACCEPTANCE:
            terminalreporter.write_line(f"criterion {n} NOT RUN   {TITLES[n]}")
            continue
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}      {TITLES[n]}: {detail}")

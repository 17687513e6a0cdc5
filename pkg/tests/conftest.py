import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion id -> list of (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}

CRITERIA = {
    "1": "quadrature precision, n_q=21 vs 41 within 1e-4",
    "2": "per-study quadrature vs brute-force grid integration",
    "3": "simulation study, true-model bias and SD, 100 replications",
    "4": "qualitative findings: CL shrinks sigma, normal fit to beta truth inflates pi",
    "5": "nesting and GLMM-equivalence properties",
    "6": "copula unit suite",
    "7": "SROC properties",
    "8": "end-to-end report formats on the bundled dataset",
}


@pytest.fixture
def acceptance():
    def record(criterion, passed, detail=""):
        ACCEPTANCE.setdefault(str(criterion), []).append((bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid, label in CRITERIA.items():
        results = ACCEPTANCE.get(cid)
        if not results:
            tr.write_line(f"criterion {cid}: NOT RUN  {label}")
            continue
        ok = all(p for p, _ in results)
        tr.write_line(f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {label}")
        for p, detail in results:
            if detail:
                tr.write_line(f"    [{'ok' if p else 'x '}] {detail}")

"""Shared pytest configuration: acceptance-criterion summary lines.

Tests named ``test_criterion_<n>_*`` (in test_acceptance.py) are rolled up
into one PASS/FAIL line per criterion at the end of the run.
"""

import re

_CRITERION = re.compile(r"test_criterion_(\d+)")

_TITLES = {
    1: "loss lower-bound fuzz (>=1000 configs, slack >= -1e-9, < 30 s)",
    2: "equality conditions tight; any 0.1 perturbation breaks them",
    3: "imbalance gap formula and majority/minority ordering grid",
    4: "finite-difference suite over every op and loss (< 60 s)",
    5: "loss-distribution phenomenon: balanced gap exceeds imbalanced",
    6: "combined variant beats unsupervised baseline on minority/macro F1",
    7: "degenerate reductions: log(|B|-1) uniform batches, n=2 zero",
    8: "byte-identical run records and reports per seed",
}


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if not match:
                continue
            number = int(match.group(1))
            ok = status == "passed"
            outcomes[number] = outcomes.get(number, True) and ok
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(outcomes):
        verdict = "PASS" if outcomes[number] else "FAIL"
        title = _TITLES.get(number, "")
        terminalreporter.write_line(f"CRITERION {number}: {verdict} - {title}")

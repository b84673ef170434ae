"""Acceptance battery: each criterion at full size, one PASS/FAIL line apiece.

The lines are repeated in the terminal summary; ``critlab run suite all``
runs the same battery outside pytest.
"""
import pytest

from critlab.acceptance import CRITERIA

# stated wall-clock budgets, seconds
BUDGET = {1: 5.0, 2: 60.0, 5: 120.0}


@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k, acceptance_lines):
    res = CRITERIA[k]()
    line = res.line()
    if k in BUDGET and res.elapsed >= BUDGET[k]:
        line = line.replace("[PASS]", "[FAIL]") + f" (over the {BUDGET[k]:g} s budget)"
    acceptance_lines.append(line)
    print(line)
    assert res.number == k
    assert res.passed, res.detail
    assert res.elapsed < BUDGET.get(k, float("inf"))

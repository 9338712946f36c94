"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import time

import pytest

from taskblend.verify import CheckResult, run_criterion

# criterion -> (title, runtime limit in seconds or None)
CRITERIA: dict[int, tuple[str, float | None]] = {
    1: ("simplex and unbiased weight sampling", 10.0),
    2: ("unbiased doubly stochastic gradient", 30.0),
    3: ("fixed-step plateau bound", 300.0),
    4: ("decreasing-step 1/k rate", 300.0),
    5: ("RLW noise exceeds fixed-weight noise", 30.0),
    6: ("RLW escapes the sharp minimum at least as often as EW", 300.0),
    7: ("strategy oracles", 60.0),
    8: ("delta_p correctness", None),
    9: ("RLW and EW convergence parity", 300.0),
    10: ("determinism and gradient correctness", None),
}
SLOW = {3, 4, 6, 9}


def evaluate(number: int) -> tuple[bool, str, list[CheckResult], float]:
    title, limit = CRITERIA[number]
    t0 = time.perf_counter()
    results = run_criterion(number)
    elapsed = time.perf_counter() - t0
    in_time = limit is None or elapsed < limit
    ok = bool(results) and all(r.passed for r in results) and in_time
    budget = f" (limit {limit:.0f}s)" if limit is not None else ""
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}  [{elapsed:.1f}s{budget}]"
    return ok, line, results, elapsed


@pytest.mark.parametrize("number", [pytest.param(n, marks=pytest.mark.slow) if n in SLOW else n for n in CRITERIA])
def test_criterion(number, capsys):
    ok, line, results, elapsed = evaluate(number)
    with capsys.disabled():
        print(f"\n{line}")
        for r in results:
            print(f"    {r.line()}")
    failed = [r.line() for r in results if not r.passed]
    assert not failed, "\n".join(failed)
    limit = CRITERIA[number][1]
    assert limit is None or elapsed < limit, f"took {elapsed:.1f}s, limit {limit:.0f}s"
    assert ok


if __name__ == "__main__":
    import sys

    outcomes = []
    for n in CRITERIA:
        ok, line, _, _ = evaluate(n)
        print(line, flush=True)
        outcomes.append(ok)
    sys.exit(0 if all(outcomes) else 1)

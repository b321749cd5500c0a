import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from valvetune import bo

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SUITE_LIMIT_S = 600.0
TALLY = {"evaluations": 0, "violations": [], "start": time.perf_counter()}


def _check_record(state, rec):
    b = state.problem.bounds
    theta, x = np.asarray(rec.theta), np.asarray(rec.x)
    lo, hi = np.asarray(b.lower), np.asarray(b.upper)
    tol = 1e-12 * np.maximum(np.abs(lo), np.abs(hi))
    inside = np.all(theta >= lo - tol) and np.all(theta <= hi + tol)
    inside &= np.all(x >= 0) and np.all(x <= 1)
    TALLY["evaluations"] += 1
    if not inside:
        TALLY["violations"].append((rec.iteration, list(rec.theta)))


@pytest.fixture(scope="session", autouse=True)
def safety_tally():
    """Watch every campaign step in the suite for out-of-bounds evaluations."""
    original = bo.step

    def watched(state):
        n = len(state.records)
        out = original(state)
        for rec in state.records[n:]:
            _check_record(state, rec)
        return out

    bo.step = watched
    yield TALLY
    bo.step = original


def _acceptance_results():
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return None
    return RESULTS


def pytest_sessionfinish(session, exitstatus):
    TALLY["elapsed"] = time.perf_counter() - TALLY["start"]
    results = _acceptance_results()
    if not results:
        return
    failed = bool(TALLY["violations"])
    if 8 in results and TALLY["elapsed"] > SUITE_LIMIT_S:
        failed = True
    if failed and session.exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    results = _acceptance_results()
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key])
    n, bad = TALLY["evaluations"], len(TALLY["violations"])
    terminalreporter.write_line(f"[suite-wide ] {'PASS' if bad == 0 else 'FAIL'}: {bad} out-of-bounds "
                                f"among {n} campaign evaluations in the whole suite")
    if 8 in results:
        elapsed = TALLY.get("elapsed", time.perf_counter() - TALLY["start"])
        ok = elapsed <= SUITE_LIMIT_S
        terminalreporter.write_line(f"[suite-wide ] {'PASS' if ok else 'FAIL'}: full suite runtime "
                                    f"{elapsed:.0f} s (limit {SUITE_LIMIT_S:.0f} s)")

"""Acceptance criteria A1..A8 at their stated tolerances, on the default suite configs.

Each suite runs once per session; its results are shared by the criteria it
covers. One PASS/FAIL line per criterion goes to the terminal.
"""

import json
import time

import pytest

from morawetz_lab.artifacts import compare_runs, write_run
from morawetz_lab.checks import CHECK_IDS, SUITE_CHECKS, run_suite
from morawetz_lab.config import build_config

SUITE_OF = {cid: suite for suite, ids in SUITE_CHECKS.items() for cid in ids}
# cheapest full suite for the rerun comparison
DETERMINISM_SUITE = "run-local"


@pytest.fixture(scope="session")
def suite_runs(tmp_path_factory):
    cache = {}

    def get(suite):
        if suite not in cache:
            cfg = build_config(suite)
            out = tmp_path_factory.mktemp(suite)
            t0 = time.perf_counter()
            results = run_suite(cfg)
            write_run(out, cfg, results, time.perf_counter() - t0)
            cache[suite] = ({r.check_id: r for r in results}, out, cfg)
        return cache[suite]

    return get


def report_line(capsys, text):
    with capsys.disabled():
        print(f"\n{text}")


@pytest.mark.parametrize("check_id", CHECK_IDS[:7])
def test_criterion(check_id, suite_runs, capsys):
    results, _, _ = suite_runs(SUITE_OF[check_id])
    res = results[check_id]
    report_line(capsys, f"{res.line()} ({res.seconds:.1f} s)")
    assert res.passed, "\n".join(res.measured.get("failures", [])) or json.dumps(res.measured, default=str)[:2000]


def test_determinism(suite_runs, tmp_path, capsys):
    results, first, cfg = suite_runs(DETERMINISM_SUITE)
    t0 = time.perf_counter()
    again = run_suite(cfg)
    write_run(tmp_path, cfg, again, time.perf_counter() - t0)
    cmp = compare_runs(first, tmp_path)
    ok = cmp["identical"] and cmp["files"] > 0
    report_line(capsys, f"{CHECK_IDS[7]}: {'PASS' if ok else 'FAIL'} ({cmp['files']} files compared)")
    assert ok, cmp["differing"]

"""Acceptance criteria C1 to C9 at their stated tolerances and runtime budgets.

Each test records one PASS/FAIL line, printed in the terminal summary and
to stdout.
"""
import json
import time

import pytest

from movingframes import cli, experiments
from movingframes.io import to_json

from conftest import ACCEPTANCE

BUDGET = {"C1": 60, "C2": 120, "C3": 90, "C4": 600, "C6": 300, "C8": 900}
_RUNS = {}


def run(subcommand, overrides=None):
    cfg = cli.load_config(subcommand, overrides=overrides)
    t0 = time.perf_counter()
    rep = experiments.RUNNERS[subcommand](cfg)
    return rep, time.perf_counter() - t0


def cached(subcommand):
    if subcommand not in _RUNS:
        _RUNS[subcommand] = run(subcommand)
    return _RUNS[subcommand]


def record(cid, rep, elapsed, extra=""):
    mine = [c for c in rep.checks if c["criterion"] == cid]
    failed = [c["name"] for c in mine if not c["passed"]]
    budget = BUDGET.get(cid)
    in_time = budget is None or elapsed <= budget
    passed = bool(mine) and not failed and in_time
    detail = f"{len(mine) - len(failed)}/{len(mine)} checks, {elapsed:.1f} s"
    if budget is not None:
        detail += f" (budget {budget} s)"
    if failed:
        detail += f"; failed: {', '.join(failed)}"
    if extra:
        detail += f"; {extra}"
    ACCEPTANCE[cid] = (passed, detail)
    print(f"{cid}: {'PASS' if passed else 'FAIL'}  {detail}")
    return passed, failed, in_time


def _assert(cid, res):
    passed, failed, in_time = res
    assert not failed, f"{cid} failing checks: {failed}"
    assert in_time, f"{cid} over its runtime budget"
    assert passed


def test_c1_hedgehog_morrey_identity():
    rep, t = cached("hedgehog")
    r = rep.results
    _assert("C1", record("C1", rep, t, f"quantity {r['quantity']:.4f} vs 8pi {r['target']:.4f}"))


def test_c2_structure_identity_convergence():
    rep, t = cached("check-identities")
    worst = min(v for k, v in rep.results["ratios"].items() if k in experiments.CONVERGING)
    _assert("C2", record("C2", rep, t, f"worst ratio {worst:.2f}"))


def test_c3_wente_constant():
    rep, t = cached("wente-constant")
    r = rep.results
    _assert("C3", record("C3", rep, t, f"analytic rho {r['analytic_rho']:.6f}, max random {r['max_rho']:.4f}"))


def test_c4_coulomb_gauge_and_q_constancy():
    rep, t = cached("coulomb")
    devs = [m["q_deviation"] for m in rep.results["members"]]
    ctrl = [c["q_deviation"] for c in rep.results["hedgehog_control"]]
    _assert("C4", record("C4", rep, t, f"Q-deviation {min(devs):.1e}..{max(devs):.1e}, hedgehog {ctrl}"))


def test_c5_frame_quality():
    rep, t = cached("frames")
    lo, hi = rep.results["ratio_range"]
    _assert("C5", record("C5", rep, t, f"frame ratio range {lo:.4f}..{hi:.4f}"))


def test_c6_noether_and_conservation():
    rep, t = cached("noether")
    r = rep.results
    _assert("C6", record("C6", rep, t, f"max div {r['currents']['max_divergence']:.2e}, "
                                      f"conservation {r['conservation']['relative']:.2e}"))


def test_c7_harmonic_monotonicity():
    cfg = cli.load_config("regularity")
    rep = experiments.Report("regularity", cfg)
    t0 = time.perf_counter()
    experiments.monotonicity_check(rep, {2: 128, 3: 48})
    t = time.perf_counter() - t0
    worst = rep.checks[0]["value"]
    _assert("C7", record("C7", rep, t, f"worst drop {100 * worst:.2f}%"))


def test_c8_regularity_ratios():
    rep, t = run("regularity", {"experiment": {"monotonicity": False}})
    _RUNS["regularity"] = (rep, t)
    _assert("C8", record("C8", rep, t))


RERUN = ["hedgehog", "check-identities", "wente-constant", "frames", "noether"]


def test_c9_determinism():
    mismatched = []
    for sub in RERUN:
        first, _ = cached(sub)
        again, _ = run(sub)
        same = (to_json(first.results) == to_json(again.results)
                and to_json(first.checks) == to_json(again.checks)
                and {k: v for k, v in first.artifacts.items() if isinstance(v, str)}
                == {k: v for k, v in again.artifacts.items() if isinstance(v, str)})
        if not same:
            mismatched.append(sub)
    passed = not mismatched
    detail = f"{len(RERUN) - len(mismatched)}/{len(RERUN)} pipelines bit-identical on rerun"
    if mismatched:
        detail += f"; differing: {mismatched}"
    ACCEPTANCE["C9"] = (passed, detail)
    print(f"C9: {'PASS' if passed else 'FAIL'}  {detail}")
    assert passed, detail

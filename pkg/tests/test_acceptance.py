"""Acceptance criteria A1-A11 on the default experiment configuration.

Every test records one ``A# PASS/FAIL`` line (echoed in the terminal
summary) and then asserts the criterion at its stated tolerance, reading
the raw numbers rather than the runner's own verdict.  The full module
takes roughly 8 minutes on one core, most of it in A8/A9.
"""
import math
import time

import numpy as np
import pytest

from excursions import harness
from excursions.harness import ExperimentConfig, _decreasing_with_slack, _strictly_decreasing


def _fmt(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (float, np.floating)):
        return f"{v:.3g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}={_fmt(x)}" for k, x in v.items() if k != "passed") + "}"
    return str(v)


def _line(key, passed, claim, seconds, budget, **shown):
    parts = " ".join(f"{k}={_fmt(v)}" for k, v in shown.items())
    return f"{key} {'PASS' if passed else 'FAIL'} {claim} {parts} ({seconds:.0f}s, budget {budget}s)"


@pytest.fixture(scope="module")
def cfg(tmp_path_factory):
    return ExperimentConfig(out=str(tmp_path_factory.mktemp("acceptance"))).validate()


def _timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def interior(cfg):
    return _timed(harness.run_interior_kernel_checks, cfg)


@pytest.fixture(scope="module")
def machinery(cfg):
    return _timed(harness.run_path_machinery, cfg)


@pytest.fixture(scope="module")
def paths(cfg):
    return _timed(harness.run_path_convergence, cfg)


def test_a1_green_constant(cfg, interior, acceptance_line):
    rep, sec = interior
    c = rep.criteria["A1"]
    err = c.detail["errors"]
    ok = c.detail["ns"] == [8, 16, 32, 64] and err[-1] <= 0.05 and err[-1] < err[0]
    acceptance_line(_line("A1", ok, c.claim, sec, 120, errors=err))
    assert ok and c.passed


def test_a2_potential_kernel(acceptance_line):
    c, sec = _timed(harness.check_potential_kernel, 32)
    d = c.detail
    ok = d["a10_error"] <= 1e-6 and d["a11_error"] <= 1e-6 and d["harmonicity_residual"] <= 1e-8
    acceptance_line(_line("A2", ok, c.claim, sec, 60, **d))
    assert ok and c.passed


def test_a3_excursion_enumeration(acceptance_line):
    c, sec = _timed(harness.check_excursion_enumeration, 9, 40, 1e-6)
    d = c.detail
    ok = d["max_width"] <= 1e-6 and d["max_violation"] <= harness.FLOAT_TOL and d["arc_pairs"] > 0
    acceptance_line(_line("A3", ok, c.claim, sec, 60, **d))
    assert ok and c.passed


def test_a4_arc_mass(cfg, acceptance_line):
    rep, sec = _timed(harness.run_mass_convergence, cfg)
    c = rep.criteria["A4"]
    assert c.detail["target"] == pytest.approx(math.log(2) / math.pi, rel=1e-10)
    ok = True
    for name in ("disk", "square"):
        gaps = c.detail[name]["rel_gaps"]
        ok &= gaps[-1] <= 0.10 and _strictly_decreasing(gaps)
    acceptance_line(_line("A4", ok, c.claim, sec, 300, disk=c.detail["disk"]["rel_gaps"],
                          square=c.detail["square"]["rel_gaps"]))
    assert ok and c.passed


def test_a5_pointwise_kernel(cfg, acceptance_line):
    rep, sec = _timed(harness.run_pointwise_epk, cfg)
    c = rep.criteria["A5"]
    med = c.detail["medians"]
    ok = c.detail["ns"][0] == 16 and c.detail["ns"][-1] == 64 and med[-1] <= 0.10 and _strictly_decreasing(med)
    acceptance_line(_line("A5", ok, c.claim, sec, 180, medians=med))
    assert ok and c.passed


def test_a6_prohorov(machinery, acceptance_line):
    crits, sec = machinery
    c = crits["A6"]
    d = c.detail
    ok = (d["cases"] == 200 and d["max_oracle_gap"] <= 1e-12 and d["scaling_lemma"] and d["mass_bounds"]
          and d["coupling_above_exact"])
    acceptance_line(_line("A6", ok, c.claim, sec, 60, **d))
    assert ok and c.passed


@pytest.mark.xfail(strict=True, reason="dd <= dK + osc(g2, 2 dK) fails when durations differ; "
                                       "see test_single_chain_counterexample in test_curve_space")
def test_a7_curve_metrics(machinery, acceptance_line):
    crits, sec = machinery
    c = crits["A7"]
    d = c.detail
    ok = d["scale_sandwich"] and d["metric_chain"] and d["round_trips"]
    acceptance_line(_line("A7", ok, c.claim, sec, 60, **d))
    assert ok and c.passed


def test_a7_remaining_parts(machinery):
    # everything in A7 apart from the single-dK chain holds, including the doubled chain
    d = machinery[0]["A7"].detail
    assert d["scale_sandwich"] and d["dK_below_dd"] and d["round_trips"] and d["serialization"]
    assert d["metric_chain_doubled"]


def test_a8_endpoint_laws(cfg, paths, acceptance_line):
    rep, sec = paths
    c = rep.criteria["A8"]
    w, b = c.detail["walk"], c.detail["brownian"]
    ok = (w["samples"] == 100000 and b["samples"] == 100000 and cfg.endpoint_N == 16 and cfg.bm_eps == 1e-2
          and w["pvalue"] > 1e-3 and b["pvalue"] > 1e-3)
    acceptance_line(_line("A8", ok, c.claim, sec, 300, walk_p=w["pvalue"], brownian_p=b["pvalue"]))
    assert ok and c.passed


def test_a9_path_coupling(paths, acceptance_line):
    rep, sec = paths
    c = rep.criteria["A9"]
    ww, wb = c.detail["walk_walk"], c.detail["walk_brownian"]
    ok = c.detail["Ns"] == [8, 16, 32] and _decreasing_with_slack(ww, 0.10) and _decreasing_with_slack(wb, 0.10)
    acceptance_line(_line("A9", ok, c.claim, sec, 600, walk_walk=ww, walk_brownian=wb))
    assert ok and c.passed


def test_a10_caratheodory(cfg, acceptance_line):
    rep, sec = _timed(harness.run_cara, cfg)
    c = rep.criteria["A10"]
    ok = True
    for name in ("disk", "square"):
        d = c.detail[name]
        ok &= _strictly_decreasing(d["deviations"]) and d["exponent"] <= -0.3
    ok &= c.detail["disk"]["deviations"][-1] <= 0.05
    acceptance_line(_line("A10", ok, c.claim, sec, 300,
                          disk_exponent=c.detail["disk"]["exponent"], square_exponent=c.detail["square"]["exponent"],
                          disk_dev64=c.detail["disk"]["deviations"][-1]))
    assert ok and c.passed


def test_a11_conformal_covariance(cfg, interior, acceptance_line):
    rep, _ = interior
    # rerun on its own for timing; the runner's copy must agree
    c, sec = _timed(harness.check_conformal_covariance, cfg.tolerances.covariance, harness._seed(cfg, "covariance"))
    assert c.detail == rep.criteria["A11"].detail
    d = c.detail
    ok = d["max_residual"] <= 1e-9 and d["mobius_product_error"] <= 1e-12
    acceptance_line(_line("A11", ok, c.claim, sec, 60, **d))
    assert ok and c.passed

"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import json
import math
import time

import numpy as np
import pytest

from hmmlab.cli import main as cli_main
from hmmlab.convergence import (
    chain_rule_gap,
    check_lemma_a1,
    diff_series,
    empirical_bconv_exponent,
    laplace_stabilization_report,
    lemma34_segment,
    verify_ineq_system,
)
from hmmlab.divergence import (
    DivergenceModel,
    brute_force_v,
    closed_form_map,
    path_log_score,
    random_competitors,
    sample,
)
from hmmlab.experiments import chain_rule_instance, discrete_instance, lemma34_instance, lemma_a1_instance
from hmmlab.models import discrete_gaussian, laplace_gaussian, linear_gaussian, sample_trajectory
from hmmlab.newton import SolverConfig, prefix_series, solve_map
from hmmlab.rng import EXPERIMENT, make_rng
from hmmlab.viterbi import brute_force_map, renewal_times, viterbi


@pytest.fixture
def report(capsys):
    def emit(number, name, passed, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if passed else 'FAIL'} {name}: {detail}")
        return passed
    return emit


def kalman_smoother(y, a, b, q, r, p0):
    """Forward Kalman filter and backward RTS pass (smoothed means)."""
    n = len(y)
    mf, pf = np.empty(n), np.empty(n)
    mp, pp = 0.0, p0
    for t in range(n):
        if t:
            mp, pp = a * mf[t - 1], a * a * pf[t - 1] + q
        gain = pp * b / (b * b * pp + r)
        mf[t] = mp + gain * (y[t] - b * mp)
        pf[t] = (1 - gain * b) * pp
    ms = mf.copy()
    for t in range(n - 2, -1, -1):
        g = pf[t] * a / (a * a * pf[t] + q)
        ms[t] = mf[t] + g * (ms[t + 1] - a * mf[t])
    return ms


def test_01_kalman_equivalence(report):
    params = dict(a=0.9, b=1.0, q=1.0, r=1.0, p0=1.0)
    model = linear_gaussian(**params)
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        y = sample_trajectory(model, 300, seed).observations
        worst = max(worst, float(np.max(np.abs(solve_map(model, y).path - kalman_smoother(y, **params)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 2.0
    assert report(1, "Kalman equivalence", ok, f"max |diff| = {worst:.3g}, runtime {elapsed:.2f} s")


def test_02_exponential_prefix_decay(report):
    model = linear_gaussian(a=0.9, b=1.0, q=1.0, r=1.0, p0=1.0)
    y = sample_trajectory(model, 60, 0).observations
    ps = prefix_series(model, y, 1)
    rep = diff_series(ps, window=(10, 60))
    bc = empirical_bconv_exponent(rep, beta=2.0)
    ok = rep.exp_rate < 0 and rep.r2_exp >= 0.95 and rep.points_used >= 2 and bc.passed
    assert report(2, "exponential prefix decay", ok,
                  f"slope {rep.exp_rate:.4f}, r2 {rep.r2_exp:.4f} on {rep.points_used} points, "
                  f"beta=2 check {'passed' if bc.passed else 'failed'} (worst ratio {bc.worst_ratio:.3g})")


def test_03_laplace_freezing(report):
    events = violations = 0
    worst = 0.0
    for seed in range(10):
        y = sample_trajectory(laplace_gaussian(), 2000, seed).observations
        rep = laplace_stabilization_report(y, tol=1e-8)
        events += rep.events.size
        violations += len(rep.violations)
        worst = max(worst, rep.max_value_error, rep.max_prefix_error)
    ok = violations == 0 and events > 0
    assert report(3, "Laplace freezing", ok, f"{events} events, {violations} violations, worst error {worst:.3g}")


def test_04_discrete_decoder_exactness(report):
    mismatches = 0
    worst = 0.0
    for seed in range(500):
        model, y = discrete_instance(seed, d=3, n=7)
        path, score = brute_force_map(model, y)
        res = viterbi(model, y)
        gap = abs(res.log_score - score)
        worst = max(worst, gap)
        if not np.array_equal(res.path, path) or gap > 1e-12:
            mismatches += 1
    assert report(4, "Viterbi equals enumeration", mismatches == 0,
                  f"{mismatches}/500 mismatches, max score gap {worst:.3g}")


def test_05_dominance_set_freezing(report):
    model = discrete_gaussian([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]], [0.0, 10.0])
    N = 200
    y = sample_trajectory(model, N, 0).observations
    decoded = [viterbi(model, y[:k]).path for k in range(1, N + 1)]
    checked = violations = 0
    for i0 in range(model.d):
        for m in renewal_times(model, y, i0).times:
            for k in range(m + 1, N + 1):  # horizons that contain position m
                checked += 1
                violations += int(decoded[k - 1][m] != i0)
    ok = violations == 0 and checked > 0
    assert report(5, "D-set freezing", ok, f"{checked} (renewal, horizon) pairs, {violations} violations")


def test_06_divergence_oracle_equality(report):
    model = DivergenceModel(eps=0.1)
    path_mismatch = beaten = 0
    probes = 0
    for seed in range(200):
        rng = make_rng(seed, EXPERIMENT)
        n = int(rng.integers(2, 9))
        _, _, y = sample(model, n, seed)
        v_bf, _ = brute_force_v(model, y)
        u_hat, v_hat, _ = closed_form_map(model, y)
        path_mismatch += int(not np.array_equal(v_bf, v_hat))
        best = path_log_score(model, u_hat, v_hat, y)
        for u, v in random_competitors(model, y, 1000, rng):
            probes += 1
            beaten += int(path_log_score(model, u, v, y) > best)
    ok = path_mismatch == 0 and beaten == 0
    assert report(6, "closed-form MAP vs oracle", ok,
                  f"{path_mismatch}/200 path mismatches, {beaten}/{probes} competitors above the closed form")


def test_07_divergence_of_jstar(report, tmp_path):
    cfg = {"model": {"kind": "divergence", "eps": 0.1}, "N": 20000, "seeds": list(range(50)),
           "jstar_level": 3, "jstar_fraction": 0.9, "calibration_runs": 200}
    path = tmp_path / "diverge.json"
    path.write_text(json.dumps(cfg))
    t0 = time.perf_counter()
    code = cli_main(["diverge", "--config", str(path), "--out", str(tmp_path / "out")])
    elapsed = time.perf_counter() - t0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    meta = summary["metadata"]
    mono = all(c["pass"] for c in summary["checks"] if c["name"] == "jstar_nondecreasing")
    cal = meta["calibration"]
    ok = (code == 0 and mono and meta["fraction_at_level"] >= 0.9 and elapsed < 30.0
          and cal["wilson_lower_95"] >= 0.9)
    assert report(7, "divergence of j*", ok,
                  f"fraction with j*(N) >= 3: {meta['fraction_at_level']:.2f}, median j*(N) "
                  f"{meta['median_jstar_final']:g}, calibration p = {cal['probability_estimate']:.3f} "
                  f"(95% lower {cal['wilson_lower_95']:.3f}, {cal['runs']} runs), runtime {elapsed:.1f} s")


def test_08_lemma34_inequalities(report):
    checked = violations = 0
    worst = math.inf
    for family in ("linear_gaussian", "power_family"):
        for seed in range(50):
            model, y, u0, u1 = lemma34_instance(seed, family=family, max_n=30)
            seg = lemma34_segment(model, y, u0, u1, s_values=(0.0, 0.5, 1.0), method="fd", rel_tol=1e-4)
            for rep in seg.reports:
                checked += rep.residual.size
                violations += rep.violations.size
                worst = min(worst, rep.worst)
    ok = violations == 0
    assert report(8, "influence inequalities", ok,
                  f"{checked} residuals over 100 models x 3 anchors, {violations} violations, "
                  f"min(residual + tol) = {worst:.3g}")


def test_09_lemma_a1_bound(report):
    thetas = (1.0, 2.0, 5.0)
    unsound = failures = skipped = 0
    worst = math.inf
    for seed in range(10_000):
        theta = thetas[seed % 3]
        seq = lemma_a1_instance(seed, theta, max_n=200)
        unsound += int(not verify_ineq_system(seq.b, seq.c)[0])
        chk = check_lemma_a1(seq, theta)
        if not chk.applicable:
            skipped += 1
            continue
        failures += int(not chk.passed)
        worst = min(worst, chk.bound - chk.b1)
    ok = unsound == 0 and failures == 0 and skipped == 0
    assert report(9, "decay bound for the inequality system", ok,
                  f"10000 sequences, {unsound} unsound, {failures} bound failures, {skipped} outside domain, "
                  f"min margin {worst:.3g}")


def test_10_chain_rule_consistency(report):
    config = SolverConfig()
    worst = 0.0
    failures = 0
    for seed in range(100):
        model, y, m, n = chain_rule_instance(seed, max_n=20)
        gap = chain_rule_gap(model, y, m, n, config)
        worst = max(worst, gap)
        failures += int(gap > 10 * config.grad_tol)
    assert report(10, "chain-rule consistency", failures == 0,
                  f"{failures}/100 over 10*grad_tol, max gap {worst:.3g}")

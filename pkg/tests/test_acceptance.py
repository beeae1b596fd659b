"""Acceptance criteria on the reference configuration.

Reference: M=2 homogeneous, p0=(0.8, 0.2), p1=(0.2, 0.8), uniform prior
over anomalies, eps=0.1, eta=10 unless a test says otherwise. Each test
prints one PASS/FAIL line, collected again in the terminal summary.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.stats import norm

from anomver import (DAS, ORS, RoundRobin, RecordingTrajectory, Threshold, achievability_constants,
                     achievability_threshold, brute_force_maxmin, brute_force_small, convolve_n,
                     decompose, estimate, l_distribution, max_min_divergence, select, simulate,
                     strong_converse, sweep, weak_converse_rate)
from anomver.belief import TrajectoryState, confidence, update
from anomver.bounds import increment_moments
from anomver.channels import sample_observation
from anomver.sim import ALT_STREAM, NULL_STREAM, trial_rng
from conftest import random_model, record_criterion

TRIALS = 100_000
EPS = 0.1
SWEEP_N = (20, 50, 100, 200)


def report(number, ok, detail):
    record_criterion(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}")
    assert ok, detail


def log_sigma(phi, phi_ci):
    """Standard error of -log(phi_hat) by the delta method."""
    return (phi_ci / 1.959963984540054) / phi


@pytest.fixture(scope="module")
def reference_sweep(ref_model, ref_solution):
    start = time.perf_counter()
    records = sweep(ref_model, ref_solution, ["das", "ors"], SWEEP_N, EPS, TRIALS, seed=7,
                    eta=10, phi_method="likelihood_ratio", threads=4)
    elapsed = time.perf_counter() - start
    assert all(r.error == "" for r in records), [r.error for r in records]
    return {(r.strategy, r.n): r for r in records}, elapsed


def test_criterion_01_closed_form_matches_grid_search():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for i in range(20):
        model = random_model(rng, 2 + i % 2)
        value, _ = brute_force_maxmin(model, 1e-3)
        worst = max(worst, abs(max_min_divergence(model).d_star - value))
    elapsed = time.perf_counter() - start
    report(1, worst <= 2e-3 and elapsed < 30,
           f"max |closed form - grid| = {worst:.2e} (<= 2e-3) over 20 models, {elapsed:.1f}s (< 30s)")


def test_criterion_02_decomposition_identity():
    rng = np.random.default_rng(11)
    models = [random_model(rng, int(rng.integers(2, 5))) for _ in range(10)]
    solutions = [max_min_divergence(m) for m in models]
    start = time.perf_counter()
    worst = 0.0
    for name in ("ors", "das", "round_robin"):
        for trial in range(1000):
            k = trial % len(models)
            model, sol = models[k], solutions[k]
            strategy = {"ors": ORS(sol.alpha_star), "das": DAS(), "round_robin": RoundRobin()}[name]
            trng = trial_rng(11, k, trial)
            x = int(trng.integers(0, model.M + 1))
            rec = RecordingTrajectory(model, sol)
            for _ in range(50):
                u = select(strategy, rec.state, model, trng)
                rec.record(u, sample_observation(model, x, u, trng))
            kl_term, sum_term = decompose(rec.state, model, sol)
            worst = max(worst, abs(confidence(rec.state, model) - (kl_term + sum_term)))
    elapsed = time.perf_counter() - start
    report(2, worst <= 1e-9 and elapsed < 10,
           f"max |C - (kl + sum)| = {worst:.2e} (<= 1e-9) on 3x1000 trajectories, {elapsed:.1f}s (< 10s)")


def test_criterion_03_threshold_bounds_phi(ref_model, ref_solution):
    start = time.perf_counter()
    lines = []
    ok = True
    for strategy in (DAS(), ORS(ref_solution.alpha_star)):
        est = estimate(ref_model, ref_solution, strategy, Threshold(2.0), 50, TRIALS, seed=3,
                       phi_method="direct", threads=4)
        bound = math.exp(-2.0) + 3 * est.phi_ci
        ok &= est.phi_hat <= bound
        lines.append(f"{strategy.name} phi_hat={est.phi_hat:.4f} <= {bound:.4f}")
    elapsed = time.perf_counter() - start
    report(3, ok and elapsed < 60, f"{'; '.join(lines)}, {elapsed:.1f}s (< 60s)")


def _increment_check(model, solution, steps):
    law = l_distribution(model)
    # exact: from any state, the z_bar increment depends on y only, not on u
    rng = np.random.default_rng(1)
    functional = True
    for _ in range(20):
        state = TrajectoryState(5, rng.normal(size=model.M), float(rng.normal()))
        for y in range(model.max_alphabet):
            steps_u = [update(state, model, solution, u, y).z_bar - state.z_bar
                       for u in range(1, model.M + 1)]
            functional &= max(steps_u) - min(steps_u) <= 1e-15
    worst = 0.0
    for strategy in (ORS(solution.alpha_star), DAS()):
        rng = np.random.default_rng(5)
        counts = np.zeros(len(law))
        done = 0
        while done < steps:
            rec = RecordingTrajectory(model, solution)
            prev = 0.0
            for _ in range(min(100, steps - done)):
                u = select(strategy, rec.state, model, rng)
                rec.record(u, sample_observation(model, 0, u, rng))
                step = rec.state.z_bar - prev
                prev = rec.state.z_bar
                counts[int(np.argmin(np.abs(law.values - step)))] += 1
                done += 1
        sigma = np.sqrt(steps * law.probs * (1 - law.probs))
        worst = max(worst, float(np.max(np.abs(counts - steps * law.probs) / sigma)))
    return functional, worst


def test_criterion_04_increment_law_is_strategy_free(ref_model, ref_solution):
    ok_ref, z_ref = _increment_check(ref_model, ref_solution, 100_000)
    wide = random_model(np.random.default_rng(4), 3, alphabet=3, homogeneous=True)
    ok_wide, z_wide = _increment_check(wide, max_min_divergence(wide), 100_000)
    worst = max(z_ref, z_wide)
    report(4, ok_ref and ok_wide and worst <= 3,
           f"exact y-only increments: {ok_ref and ok_wide}; max multinomial deviation "
           f"{worst:.2f} sigma (<= 3) for ORS and DAS at 1e5 steps")


def test_criterion_05_strong_converse_consistency(reference_sweep, ref_model, ref_solution):
    records, elapsed = reference_sweep
    ok = elapsed < 600
    parts = []
    for n in SWEEP_N:
        r = records[("das", n)]
        psi_ok = r.psi_hat >= 1 - EPS - 3 * r.psi_ci
        lower = r.phi_hat - 3 * r.phi_ci / 1.959963984540054
        neg_log = -math.log(lower) if lower > 0 else math.inf
        sc = [strong_converse(ref_model, ref_solution, n, EPS, eta) for eta in (2, 10)]
        ok &= psi_ok and neg_log <= min(sc)
        parts.append(f"N={n}: psi={r.psi_hat:.4f} -log(phi-3s)={neg_log:.2f} <= {min(sc):.2f}")
    report(5, ok, f"{'; '.join(parts)}; sweep {elapsed:.0f}s (< 600s)")


def test_criterion_06_das_beats_ors_near_converse(reference_sweep):
    records, _ = reference_sweep
    das, ors = records[("das", 200)], records[("ors", 200)]
    combined = 3 * math.hypot(log_sigma(das.phi_hat, das.phi_ci), log_sigma(ors.phi_hat, ors.phi_ci))
    sc = das.strong_converse
    margin_ok = das.neg_log_phi - ors.neg_log_phi > combined
    gap_ok = sc - das.neg_log_phi < sc - ors.neg_log_phi
    report(6, margin_ok and gap_ok,
           f"N=200 DAS {das.neg_log_phi:.2f} vs ORS {ors.neg_log_phi:.2f} (3 sigma {combined:.2f}); "
           f"gap to strong converse {sc - das.neg_log_phi:.2f} vs {sc - ors.neg_log_phi:.2f}")


def test_criterion_07_weak_converse(reference_sweep, ref_model, ref_solution):
    records, _ = reference_sweep
    hand = weak_converse_rate(ref_model, ref_solution, 10, 0.1)
    ok = abs(hand - 0.6161308) <= 1e-6
    worst = -math.inf
    for r in records.values():
        upper_phi = r.phi_hat + 3 * r.phi_ci / 1.959963984540054
        worst = max(worst, -math.log(upper_phi) / r.n - r.weak_rate)
    ok &= worst <= 0
    report(7, ok, f"hand value {hand:.7f}; max (-log phi)/N - weak rate = {worst:.4f} (<= 0 within MC error)")


def test_criterion_08_berry_esseen(ref_model, ref_solution):
    start = time.perf_counter()
    v, t = increment_moments(ref_model, ref_solution)
    ok = abs(v - 0.3074899) <= 1e-6 and abs(t - 0.2898647) <= 1e-6
    law = l_distribution(ref_model)
    worst_ratio = 0.0
    for n in range(1, 51):
        total = convolve_n(law, n)
        bound = 6 * t / math.sqrt(n * v**3)
        x = (total.values - n * ref_solution.d_star) / math.sqrt(n * v)
        cdf = np.cumsum(total.probs)
        left = cdf - total.probs
        dev = np.maximum(np.abs(cdf - norm.cdf(x)), np.abs(left - norm.cdf(x)))
        worst_ratio = max(worst_ratio, float(dev.max()) / bound)
    elapsed = time.perf_counter() - start
    ok &= worst_ratio <= 1 and elapsed < 5
    report(8, ok, f"V={v:.7f} T={t:.7f}; max deviation / bound = {worst_ratio:.3f} (<= 1) "
                  f"for N=1..50, {elapsed:.2f}s (< 5s)")


def test_criterion_09_oracle_dominance(ref_model, ref_solution):
    start = time.perf_counter()
    ok = True
    checked = 0
    parts = []
    strategies = (DAS(), ORS(ref_solution.alpha_star), RoundRobin())
    for n in (1, 2, 3):
        # the simulated confidences do not depend on eps
        runs = [(simulate(ref_model, ref_solution, s, n, TRIALS, 9, NULL_STREAM).confidence,
                 simulate(ref_model, ref_solution, s, n, TRIALS, 9, ALT_STREAM).confidence)
                for s in strategies]
        for eps in (0.1, 0.25):
            oracle = brute_force_small(ref_model, n, eps)
            sc = [strong_converse(ref_model, ref_solution, n, eps, eta) for eta in (2, 10)]
            ok &= -math.log(oracle.phi_opt) <= min(sc)
            worst = math.inf
            for null, alt in runs:
                # every threshold rule this strategy can realize
                for theta in np.unique(np.round(null, 12)) - 1e-9:
                    psi = np.mean(null >= theta)
                    if psi < 1 - eps:
                        continue
                    phi = np.mean(alt >= theta)
                    checked += 1
                    worst = min(worst, phi + 3 * math.sqrt(phi * (1 - phi) / TRIALS) - oracle.phi_opt)
            ok &= worst >= 0
            parts.append(f"N={n} eps={eps}: phi_opt={oracle.phi_opt:.4f} slack={worst:.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    report(9, ok, f"{checked} feasible (strategy, threshold) pairs; {'; '.join(parts)}; "
                  f"{elapsed:.0f}s (< 120s)")


def test_criterion_10_achievability(ref_model, ref_solution):
    consts = achievability_constants(ref_model, ref_solution, delta=0.25)
    theta, _, _, found = achievability_threshold(ref_model, ref_solution, 100, EPS, 10, delta=0.25)
    est = estimate(ref_model, ref_solution, DAS(), Threshold(theta), 100, TRIALS, seed=10, threads=4)
    ok = found and consts.varsigma < 1 and est.psi_hat >= 1 - EPS - 3 * est.psi_ci
    report(10, ok, f"varsigma={consts.varsigma:.4f} (< 1) at s*={consts.s_star:.3f}; "
                   f"theta={theta:.2f} gives psi_hat={est.psi_hat:.4f} at N=100")


def test_criterion_11_thread_count_does_not_change_output(tmp_path):
    model = tmp_path / "model.json"
    model.write_text('{"components": [{"p0": [0.8, 0.2], "p1": [0.2, 0.8]},'
                     ' {"p0": [0.8, 0.2], "p1": [0.2, 0.8]}]}')
    outputs = []
    for threads in ("1", "4"):
        out = tmp_path / f"sweep_{threads}.csv"
        subprocess.run([sys.executable, "-m", "anomver.cli", "sweep", "--config", str(model),
                        "--n", "20,50", "--strategy", "das,ors,round_robin", "--trials", "20000",
                        "--seed", "123", "--phi-method", "likelihood_ratio", "--threads", threads,
                        "--output", str(out)], check=True, capture_output=True)
        outputs.append(out.read_bytes())
    report(11, outputs[0] == outputs[1] and len(outputs[0].splitlines()) == 7,
           f"--threads 1 and 4 sweeps byte-identical ({len(outputs[0])} bytes, 6 rows)")

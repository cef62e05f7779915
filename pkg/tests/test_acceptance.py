"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The tolerances and configurations are the required ones; a FAIL here is a
real shortfall of the model or the library, not a flaky check.
"""
import itertools
import math
import time

import numpy as np
import pytest

from spikeinit import (DiffusionMoments, LayerTopology, LifParams, PoissonInput, RwQuery, ShotNoiseSpec,
                       WeightSpec, WienerQuery, rw_spike_probability, run_network, shot_noise_rate, siegert_rate,
                       solve_weight_sigma, threshold_integration_lif, wiener_spike_probability)
from spikeinit.backprop import finite_difference_ds, predicted_variance_ratio, smooth_backward
from spikeinit.experiments import (gradient_flow, neuron_params, resolve, run_distributions, run_multilayer,
                                   run_sweep)
from spikeinit.pipeline import RateTheta

pytestmark = pytest.mark.acceptance

SWEEP_DTS = [1.0, 2.0, 5.0, 10.0, 20.0]


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def sweep(name, dts, **overrides):
    cfg = resolve(name, {"run": {"dts_ms": dts}, **overrides})
    _, rows = run_sweep(cfg)
    return {r["dt_ms"]: r["rate_hz"] for r in rows}, rows[0]["theory_hz"]


def fmt_rates(rates):
    return ", ".join(f"{dt:g}ms={r:.2f}" for dt, r in rates.items())


# ----------------------------------------------------------------- 1
def test_criterion_01_siegert_reproduction(criterion):
    p = LifParams(tau=0.01, v_th=1.0, v_r=0.0)
    with Timer() as t:
        r = siegert_rate(p, DiffusionMoments(0.8, math.sqrt(0.025)))
    ok = abs(r - 18.26) <= 0.05 and t.elapsed < 1.0
    assert criterion(1, ok, f"siegert(mu=0.8, sigma^2=0.025) = {r:.4f} Hz, want 18.26 +/- 0.05 "
                            f"({t.elapsed:.3f} s)")


# ----------------------------------------------------------------- 2
def test_criterion_02_collapse_curve(criterion):
    with Timer() as t:
        rates, _ = sweep("collapse-sweep", [0.1, 1.0], repeats=10)
    fine, coarse = rates[0.1], rates[1.0]
    ok = abs(fine - 18.26) <= 0.05 * 18.26 and 14.0 <= coarse <= 17.5 and t.elapsed < 120
    assert criterion(2, ok, f"uncorrected 0.1ms={fine:.2f} Hz (want 18.26 +/- 5%), 1ms={coarse:.2f} Hz "
                            f"(want 14-17.5) ({t.elapsed:.0f} s)")


# ----------------------------------------------------------------- 3
def test_criterion_03_random_walk_correction(criterion):
    with Timer() as t:
        rates, _ = sweep("rw-correct", SWEEP_DTS)
    ok = all(abs(r - 18.26) <= 0.10 * 18.26 for r in rates.values()) and t.elapsed < 180
    assert criterion(3, ok, f"random-walk corrected vs 18.26 Hz +/- 10%: {fmt_rates(rates)} ({t.elapsed:.0f} s)")


# ----------------------------------------------------------------- 4
def test_criterion_04_wiener_correction(criterion):
    with Timer() as t:
        rates, theory = sweep("wiener-correct", SWEEP_DTS)
    ok = all(abs(r - theory) <= 0.10 * theory for r in rates.values()) and t.elapsed < 180
    assert criterion(4, ok, f"wiener corrected vs {theory:.2f} Hz +/- 10%: {fmt_rates(rates)} ({t.elapsed:.0f} s)")


# ----------------------------------------------------------------- 5
def test_criterion_05_permutation_correction(criterion):
    with Timer() as t:
        rates, theory = sweep("permutation-correct", SWEEP_DTS)
    ok = all(abs(r - theory) <= 0.10 * theory for r in rates.values()) and t.elapsed < 300
    assert criterion(5, ok, f"permutation corrected vs {theory:.2f} Hz +/- 10%: {fmt_rates(rates)} "
                            f"({t.elapsed:.0f} s)")


# ----------------------------------------------------------------- 6
def enumerated_probabilities(n):
    """P(running max >= y | N ups) over all 2^n paths of length n, keyed by (N, y)."""
    codes = np.arange(2 ** n, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(np.int64) if n else np.zeros((1, 0), np.int64)
    walk = np.cumsum(2 * bits - 1, axis=1)
    run_max = np.maximum(walk.max(axis=1), 0) if n else np.zeros(1, np.int64)
    ups = bits.sum(axis=1)
    out = {}
    for big_n in range(n + 1):
        sel = run_max[ups == big_n]
        for y in range(-1, n + 2):
            out[big_n, y] = float(np.mean(sel >= y))
    return out


def test_criterion_06_random_walk_exactness(criterion):
    worst = 0.0
    checked = 0
    with Timer() as t:
        for n in range(17):
            for (big_n, y), ref in enumerated_probabilities(n).items():
                got = rw_spike_probability(RwQuery(big_n, n - big_n, y))
                worst = max(worst, abs(got - ref))
                checked += 1
    ok = worst <= 1e-12 and t.elapsed < 60
    assert criterion(6, ok, f"{checked} (n, N, M, y) cases, max |error| = {worst:.2e} ({t.elapsed:.1f} s)")


# ----------------------------------------------------------------- 7
def bridge_maxima(n_steps, k_end, samples, rng):
    ups = np.full(samples, (n_steps + k_end) // 2, dtype=np.int64)
    pos = np.zeros(samples, dtype=np.int64)
    run_max = np.zeros(samples, dtype=np.int64)
    for left in range(n_steps, 0, -1):
        up = rng.random(samples) * left < ups
        ups -= up
        pos += 2 * up - 1
        np.maximum(run_max, pos, out=run_max)
    return run_max


def test_criterion_07_wiener_formula(criterion):
    n, samples = 4096, 100_000
    rng = np.random.default_rng(2024)
    # barrier and endpoint on the lattice of the walk, so the only difference
    # between walk and Brownian bridge is the step size
    ends = [-64, -32, 0, 32, 64]
    offsets = [8, 24, 48, 80]
    dts = [1.0, 0.5, 2.0, 1.0, 4.0]
    worst = 0.0
    n_points = 0
    with Timer() as t:
        for k_end, dt in zip(ends, dts):
            mx = bridge_maxima(n, k_end, samples, rng)
            step = math.sqrt(dt / n)
            for off in offsets:
                y = max(0, k_end) + off
                p = wiener_spike_probability(WienerQuery(y * step, k_end * step, dt))
                hit = float(np.mean(mx >= y))
                se = math.sqrt(p * (1 - p) / samples)
                worst = max(worst, abs(hit - p) / se)
                n_points += 1
    ok = worst < 3.0 and n_points == 20 and t.elapsed < 120
    assert criterion(7, ok, f"{n_points} (m, w_end) points, worst deviation {worst:.2f} SE "
                            f"({t.elapsed:.0f} s)")


# ----------------------------------------------------------------- 8
def test_criterion_08_solver_cross_validation(criterion):
    p = LifParams(tau=0.01, v_th=1.0, v_r=0.0)
    with Timer() as t:
        worst = 0.0
        for mu, sigma in itertools.product(np.linspace(0.5, 1.2, 5), np.linspace(0.1, 0.5, 5)):
            m = DiffusionMoments(float(mu), float(sigma))
            worst = max(worst, abs(threshold_integration_lif(p, m)[1] / siegert_rate(p, m) - 1.0))
        # 1600 sources at 0.14 Hz split evenly, exponential amplitudes of mean +/-0.4
        theory = shot_noise_rate(p, ShotNoiseSpec(112.0, 112.0, 0.4, -0.4))
        pf = p.with_dt(1e-5)
        rates = []
        for rep in range(4):
            lay = [LayerTopology(1600, 3000, WeightSpec.exponential_pair(0.4, -0.4, balanced=True), seed=10 + rep)]
            res = run_network(lay, pf, PoissonInput(0.14, 1600, pf.dt, seed=100 + rep), 2.0, warmup=0.1, seed=rep)
            rates.append(res.rates[0])
    mc, se = float(np.mean(rates)), float(np.std(rates, ddof=1) / math.sqrt(len(rates)))
    ok = worst <= 1e-3 and abs(mc - theory) <= 3 * se and t.elapsed < 300
    assert criterion(8, ok, f"TI vs Siegert max rel diff {worst:.1e} on 5x5 grid; shot-noise {theory:.3f} Hz "
                            f"vs MC {mc:.3f} +/- {se:.3f} ({t.elapsed:.0f} s)")


# ----------------------------------------------------------------- 9
def test_criterion_09_before_reset_density(criterion, tmp_path):
    with Timer() as t:
        _, _, summary = run_distributions(resolve("distributions"), str(tmp_path))
    mass_err = abs(summary["mass"] - 1.0)
    ok = mass_err <= 1e-6 and summary["l1"] < 0.05 and t.elapsed < 180
    assert criterion(9, ok, f"mass error {mass_err:.1e}, L1(sim, FP) = {summary['l1']:.4f} over 128 bins "
                            f"({t.elapsed:.1f} s)")


# ----------------------------------------------------------------- 10
def test_criterion_10_pipeline_weights(criterion):
    with Timer() as t:
        # weights of a layer inside a chain that holds the target rate
        two_point = RateTheta(neuron_params(resolve("multilayer-rates")), 50.0, 2000, "two_point", 0.5, False)
        w50 = solve_weight_sigma(50.0, two_point)
        w20 = solve_weight_sigma(20.0, two_point.with_input_rate(20.0))
        g = resolve("gradient-variance")
        gauss = RateTheta(neuron_params(g), 30.0, 2000, "gaussian", 1.0, True)
        s30 = solve_weight_sigma(30.0, gauss)
    got = [(w50, 0.0387), (w20, 0.0299), (s30, 0.0096)]
    ok = all(abs(a / b - 1) <= 0.02 for a, b in got) and t.elapsed < 120
    assert criterion(10, ok, "w(50Hz)={:.5f} vs 0.0387, w(20Hz)={:.5f} vs 0.0299, sigma_w(30Hz)={:.5f} vs 0.0096 "
                             "({:.2f} s)".format(w50, w20, s30, t.elapsed))


# ----------------------------------------------------------------- 11
def test_criterion_11_multilayer_rate_stability(criterion, tmp_path):
    details = []
    ok = True
    with Timer() as t:
        for target in (50.0, 20.0):
            cfg = resolve("multilayer-rates", {"pipeline": {"target": target}, "repeats": 5})
            out = tmp_path / f"t{int(target)}"
            out.mkdir()
            _, rows, _ = run_multilayer(cfg, str(out))
            rates = np.array([r["rate_hz"] for r in rows])
            dev = np.abs(rates / target - 1.0)
            ok &= bool(np.all(dev <= 0.15))
            details.append(f"{target:g} Hz: layers {rates.min():.1f}-{rates.max():.1f} Hz, "
                           f"worst {100 * dev.max():.0f}% at layer {int(dev.argmax())}")
    ok = ok and t.elapsed < 600
    assert criterion(11, ok, "; ".join(details) + f" ({t.elapsed:.0f} s)")


# ----------------------------------------------------------------- 12
def test_criterion_12_gradient_flow(criterion):
    cfg = resolve("gradient-variance")
    with Timer() as t:
        plan, trace, base, corr = gradient_flow(cfg)
    v0 = base.per_layer_variance
    v1 = corr.per_layer_variance
    decay_orig = v0[-1] / v0[0] if v0[0] > 0 else math.inf
    spread = v1[0] / v1[-1]
    theta = plan.theta
    p = theta.params
    ratios = []
    for l in range(len(v1) - 1):
        pred = predicted_variance_ratio(corr.rho_a[l], theta.n, theta.var_w(plan.layers[l].sigma_w), p)
        ratios.append((v1[l] / v1[l + 1]) / pred)
    ratios = np.array(ratios)
    ok = (decay_orig > 1e3 and 0.1 <= spread <= 10.0 and np.all((ratios >= 0.5) & (ratios <= 2.0))
          and t.elapsed < 600)
    assert criterion(12, ok, f"kappa=1 decay {decay_orig:.1e}; kappa={plan.layers[0].kappa:.2f} first/last "
                             f"{spread:.3f}; measured/predicted ratio {ratios.min():.2f}-{ratios.max():.2f} "
                             f"({t.elapsed:.0f} s)")


# ----------------------------------------------------------------- 13
def test_criterion_13_gradient_correctness(criterion):
    rng = np.random.default_rng(13)
    p = LifParams(tau=0.01, dt=2e-3, i_ext=0.5)
    weights = [rng.normal(0.0, 0.6, (3, 3)) for _ in range(3)]
    source = rng.random((5, 3))
    c = rng.standard_normal(3)
    with Timer() as t:
        gt = smooth_backward(weights, p, source, c, beta=5.0)
        fd = finite_difference_ds(weights, p, source, c, beta=5.0)
    rel = max(float(np.max(np.abs(a - b)) / np.max(np.abs(b))) for a, b in zip(gt.ds, fd))
    ok = rel <= 1e-5 and t.elapsed < 60
    assert criterion(13, ok, f"max relative error vs central differences {rel:.1e} ({t.elapsed:.2f} s)")

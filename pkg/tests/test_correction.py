import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spikeinit import (ConfigError, LayerTopology, LifParams, RwQuery, WeightSpec, WienerQuery,
                       rw_spike_probability, step_population, wiener_spike_probability)
from spikeinit.correction import (ceil_snapped, make_correction, permutation_step, random_walk_endpoint_pmf,
                                  rw_barrier, rw_spike_probability_array, wiener_query_from_step)
from spikeinit.sim import SimState


def enumerate_rw(n_exc, n_inh, y):
    """Fraction of orderings of the step's +/-1 inputs whose running max reaches y."""
    n = n_exc + n_inh
    hits = total = 0
    for ups in itertools.combinations(range(n), n_exc):
        steps = -np.ones(n, dtype=int)
        steps[list(ups)] = 1
        run_max = max(0, int(np.cumsum(steps).max())) if n else 0
        hits += run_max >= y
        total += 1
    return hits / total


# ----------------------------------------------------------------- random walk
def test_endpoint_pmf_example():
    assert random_walk_endpoint_pmf(7, 1) == pytest.approx(35 / 128, rel=1e-13)
    assert random_walk_endpoint_pmf(7, 2) == 0.0
    assert random_walk_endpoint_pmf(3, 5) == 0.0
    assert sum(random_walk_endpoint_pmf(10, k) for k in range(-10, 11)) == pytest.approx(1.0)


def test_endpoint_pmf_large_n_is_finite():
    p = random_walk_endpoint_pmf(40000, 0)
    assert p == pytest.approx(math.sqrt(2 / (math.pi * 40000)), rel=1e-4)


def test_rw_worked_example():
    # 4 ups, 3 downs, barrier 2: 4!3!/(2!5!) = 0.6
    assert rw_spike_probability(RwQuery(4, 3, 2)) == pytest.approx(0.6, rel=1e-13)


def test_rw_edge_cases():
    assert rw_spike_probability(RwQuery(0, 0, 0)) == 1.0
    assert rw_spike_probability(RwQuery(0, 0, 1)) == 0.0
    assert rw_spike_probability(RwQuery(3, 0, 2)) == 1.0   # end above the barrier
    assert rw_spike_probability(RwQuery(3, 5, 4)) == 0.0   # fewer ups than the barrier
    assert rw_spike_probability(RwQuery(2, 5, -1)) == 1.0
    with pytest.raises(ConfigError):
        RwQuery(-1, 2, 1)


@pytest.mark.parametrize("n", range(0, 9))
def test_rw_matches_enumeration_small(n):
    for n_exc in range(n + 1):
        for y in range(-1, n + 2):
            got = rw_spike_probability(RwQuery(n_exc, n - n_exc, y))
            assert got == pytest.approx(enumerate_rw(n_exc, n - n_exc, y), abs=1e-12)


def test_rw_array_matches_scalar():
    rng = np.random.default_rng(3)
    n_exc = rng.integers(0, 30, 500)
    n_inh = rng.integers(0, 30, 500)
    y = rng.integers(-3, 35, 500)
    arr = rw_spike_probability_array(n_exc, n_inh, y)
    ref = [rw_spike_probability(RwQuery(int(a), int(b), int(c))) for a, b, c in zip(n_exc, n_inh, y)]
    np.testing.assert_allclose(arr, ref, rtol=1e-12, atol=0)


@given(st.integers(0, 60), st.integers(0, 60), st.integers(-5, 70))
def test_rw_probability_bounds_and_monotone(n_exc, n_inh, y):
    p = rw_spike_probability(RwQuery(n_exc, n_inh, y))
    assert 0.0 <= p <= 1.0
    # a higher barrier is never easier
    assert rw_spike_probability(RwQuery(n_exc, n_inh, y + 1)) <= p + 1e-15
    # one more up-step never lowers the chance
    assert rw_spike_probability(RwQuery(n_exc + 1, n_inh, y)) >= p - 1e-12


def test_barrier_snaps_to_integers():
    p = LifParams(i_ext=0.0)
    w = 0.1
    # det = 0.7 exactly, 0.3 / 0.1 is 2.9999999999999996 in floats
    v = 0.7 / p.alpha
    assert rw_barrier(p, v, w) == 3
    assert ceil_snapped(2.5) == 3
    assert ceil_snapped(-0.2) == 0
    with pytest.raises(ConfigError):
        rw_barrier(p, 0.0, 0.0)


def test_barrier_with_custom_update():
    y = rw_barrier(None, 0.3, 0.1, v_th_t=1.2, g=lambda v: 2 * v)
    assert y == 6
    with pytest.raises(ConfigError):
        rw_barrier(None, 0.3, 0.1)


# ----------------------------------------------------------------- Wiener
def test_wiener_worked_example():
    assert wiener_spike_probability(WienerQuery(1.0, 0.0, 1.0)) == pytest.approx(math.exp(-2), rel=1e-14)


def test_wiener_branches():
    assert wiener_spike_probability(WienerQuery(0.5, 0.7, 1.0)) == 1.0
    assert wiener_spike_probability(WienerQuery(-0.1, -0.5, 1.0)) == 1.0
    assert wiener_spike_probability(WienerQuery(0.0, -0.5, 1.0)) == 1.0
    with pytest.raises(ConfigError):
        WienerQuery(1.0, 0.0, 0.0)


@given(st.floats(0.01, 3), st.floats(-3, 3), st.floats(0.1, 5))
def test_wiener_in_unit_interval_and_scales(m, w_end, dt):
    p = wiener_spike_probability(WienerQuery(m, w_end, dt))
    assert 0.0 <= p <= 1.0
    # Brownian scaling: (m, w, dt) ~ (c m, c w, c^2 dt)
    c = 1.7
    assert wiener_spike_probability(WienerQuery(c * m, c * w_end, c * c * dt)) == pytest.approx(p, rel=1e-9, abs=1e-300)


def test_wiener_query_normalisation():
    p = LifParams(i_ext=0.2, dt=2e-3)
    q = wiener_query_from_step(p, 0.4, 0.001, 0.02, 25, 0.1)
    det = p.alpha * 0.4 + p.drive
    scale = 0.02 * math.sqrt(25 / p.dt)
    assert q.m == pytest.approx((1.0 - det - 0.001) / scale)
    assert q.w_end == pytest.approx((0.1 - 0.001) / scale)
    assert wiener_query_from_step(p, 0.4, 0.0, 0.02, 0, 0.0) is None
    with pytest.raises(ConfigError):
        wiener_query_from_step(p, 0.4, 0.0, 0.0, 3, 0.0)


def bridge_max_samples(n_steps, k_end, samples, seed):
    """Running maxima of uniformly random +/-1 bridges ending at k_end."""
    rng = np.random.default_rng(seed)
    ups = np.full(samples, (n_steps + k_end) // 2)
    pos = np.zeros(samples, dtype=np.int64)
    run_max = np.zeros(samples, dtype=np.int64)
    for left in range(n_steps, 0, -1):
        up = rng.random(samples) * left < ups
        ups -= up
        pos += 2 * up - 1
        np.maximum(run_max, pos, out=run_max)
    return run_max


def test_wiener_against_bridge_monte_carlo_small():
    n, samples = 1024, 20000
    root = math.sqrt(n)
    for w_end, m in [(0.0, 0.5), (0.5, 1.0)]:
        mx = bridge_max_samples(n, int(w_end * root), samples, seed=11)
        hit = np.mean(mx >= m * root)
        p = wiener_spike_probability(WienerQuery(m, w_end, 1.0))
        se = math.sqrt(p * (1 - p) / samples)
        assert abs(hit - p) < 4 * se


# ----------------------------------------------------------------- permutation
def test_permutation_half_example():
    hits = [permutation_step(0.0, [1.0, -1.0], 1.0, seed=s) for s in range(4000)]
    assert np.mean(hits) == pytest.approx(0.5, abs=4 * math.sqrt(0.25 / 4000))


def test_permutation_certain_cases():
    assert permutation_step(0.5, [0.6], 1.0, seed=0)
    assert not permutation_step(0.5, [], 1.0, seed=0)
    assert not permutation_step(0.0, [-0.1, -0.2], 1.0, seed=0)


def test_permutation_agrees_with_random_walk():
    w, n_exc, n_inh, y = 0.1, 5, 4, 3
    weights = [w] * n_exc + [-w] * n_inh
    v_det = 1.0 - (y - 0.5) * w
    draws = 20000
    hits = np.mean([permutation_step(v_det, weights, 1.0, seed=s) for s in range(draws)])
    p = rw_spike_probability(RwQuery(n_exc, n_inh, y))
    assert abs(hits - p) < 3 * math.sqrt(p * (1 - p) / draws)


# ----------------------------------------------------------------- hooks in the simulator
N_NEURONS = 20000


def _replicated(row, spec):
    w = np.tile(np.asarray(row, float), (N_NEURONS, 1))
    return LayerTopology(len(row), N_NEURONS, spec, weights=w)


def _fraction(correction, topo, p, v0, seed=5):
    state = SimState(np.full(N_NEURONS, v0), np.random.default_rng(seed))
    spikes, _ = step_population(state, p, topo, np.ones(topo.n_pre), correction=correction)
    return spikes.mean()


def test_random_walk_hook_rate():
    p = LifParams(i_ext=0.0)
    topo = _replicated([0.1] * 4 + [-0.1] * 3, WeightSpec.two_point(0.1))
    v0 = 0.75 / p.alpha  # y = 3, end at 0.85
    expected = rw_spike_probability(RwQuery(4, 3, 3))
    assert expected == pytest.approx(0.2)
    got = _fraction("random-walk", topo, p, v0)
    assert abs(got - expected) < 4 * math.sqrt(expected * (1 - expected) / N_NEURONS)


def test_random_walk_hook_rejects_gaussian_weights():
    topo = LayerTopology(10, 5, WeightSpec.gaussian(0.1), seed=1)
    with pytest.raises(ConfigError):
        make_correction("random-walk").bind(topo, LifParams())


def test_wiener_hook_rate():
    p = LifParams(i_ext=0.1)
    row = [0.05, -0.03, 0.02, 0.04, -0.06, 0.01]
    topo = _replicated(row, WeightSpec.gaussian(0.05))
    v0 = 0.97
    q = wiener_query_from_step(p, v0, 0.0, 0.05, len(row), sum(row))
    expected = wiener_spike_probability(q)
    assert 0.05 < expected < 0.95
    got = _fraction("wiener", topo, p, v0)
    assert abs(got - expected) < 4 * math.sqrt(expected * (1 - expected) / N_NEURONS)


def test_permutation_hook_rate():
    p = LifParams(i_ext=0.0)
    row = [0.3, -0.2, 0.15, -0.25, 0.1]
    topo = _replicated(row, WeightSpec.gaussian(0.2))
    v0 = 0.8 / p.alpha
    det = p.alpha * v0
    perms = list(itertools.permutations(row))
    expected = np.mean([np.any(det + np.cumsum(x) >= 1.0) for x in perms])
    got = _fraction("permutation", topo, p, v0)
    assert abs(got - expected) < 4 * math.sqrt(expected * (1 - expected) / N_NEURONS)


@pytest.mark.parametrize("corr", ["random-walk", "wiener", "permutation"])
def test_hooks_never_remove_plain_spikes(corr):
    p = LifParams(i_ext=0.0)
    topo = _replicated([0.2, 0.2, -0.2], WeightSpec.two_point(0.2) if corr == "random-walk" else WeightSpec.gaussian(0.2))
    v0 = 0.8 / p.alpha
    assert _fraction(corr, topo, p, v0) == 1.0


def test_unknown_correction_name():
    with pytest.raises(ConfigError):
        make_correction("sideways")

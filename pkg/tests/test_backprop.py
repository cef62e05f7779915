import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikeinit import (ConfigError, LifParams, NumericalError, PoissonInput, SurrogateSpec, WeightSpec,
                       backward_unrolled, chain, forward_unrolled, gradient_variance_per_layer)
from spikeinit.backprop import (ForwardTrace, GradientTrace, _Dense, decay_factor, finite_difference_ds,
                                predicted_variance_ratio, smooth_backward, variance_ratios)
from spikeinit import _pykernels as python_kernels
from spikeinit.sim import NetworkResult

P = LifParams(tau=0.01, dt=1e-3, i_ext=0.7)


@pytest.fixture(scope="module")
def small_run():
    layers = chain([60, 40, 40, 30], WeightSpec.gaussian(0.05, balanced=True), seed=4)
    src = PoissonInput(80.0, 60, P.dt, seed=9)
    trace = forward_unrolled(layers, P, src, 0.2, seed=2)
    return layers, trace


def _manual_trace(v_pre):
    n = len(v_pre)
    res = NetworkResult(P.dt, v_pre[0].shape[0], np.zeros(n), [], np.zeros(n), np.zeros(n))
    return ForwardTrace(P, v_pre, [], res)


def test_single_step_single_term():
    # one neuron, two steps: a spike at t = 0 reaches the membrane at t = 1 only
    w = 0.3
    trace = _manual_trace([np.zeros((2, 1))])
    gt = backward_unrolled(trace, [_Dense(np.array([[w]]))], SurrogateSpec.boxcar(0.1), readout=[1.0], keep=True)
    np.testing.assert_allclose(gt.ds[0][:, 0], [w, 0.0])


def test_leaky_sum_over_later_steps():
    w, n_t = 0.5, 4
    trace = _manual_trace([np.zeros((n_t, 1))])
    gt = backward_unrolled(trace, [_Dense(np.array([[w]]))], SurrogateSpec.boxcar(0.1), readout=[2.0], keep=True)
    a = P.alpha
    expected = [2.0 * w * sum(a ** (k - t - 1) for k in range(t + 1, n_t)) for t in range(n_t)]
    np.testing.assert_allclose(gt.ds[0][:, 0], expected, rtol=1e-14)


def test_zero_surrogate_blocks_gradient(small_run):
    layers, trace = small_run
    flat = SurrogateSpec.samples([-0.1, 0.1], [0.0, 0.0])
    gt = backward_unrolled(trace, layers, flat, seed=1, keep=True)
    assert np.any(gt.ds[-1] != 0)
    for d in gt.ds[:-1]:
        assert np.all(d == 0)


def test_kappa_scales_layers_geometrically(small_run):
    layers, trace = small_run
    s = SurrogateSpec.boxcar(0.3)
    base = backward_unrolled(trace, layers, s, seed=1)
    k = 2.5
    scaled = backward_unrolled(trace, layers, s.with_kappa(k), seed=1)
    n = len(layers)
    for l in range(n):
        assert scaled.per_layer_variance[l] == pytest.approx(base.per_layer_variance[l] * k ** (2 * (n - 1 - l)),
                                                             rel=1e-10)


def test_kappa_does_not_touch_forward_pass():
    layers = chain([30, 20], WeightSpec.gaussian(0.05, balanced=True), seed=1)
    runs = []
    for _ in range(2):
        tr = forward_unrolled(layers, P, PoissonInput(80.0, 30, P.dt, seed=3), 0.05, seed=2)
        backward_unrolled(tr, layers, SurrogateSpec.boxcar(0.3, kappa=7.0), seed=0)
        runs.append(tr.v_pre[0].copy())
    np.testing.assert_array_equal(runs[0], runs[1])


def test_backends_agree(small_run):
    layers, trace = small_run
    s = SurrogateSpec.boxcar(0.3)
    a = backward_unrolled(trace, layers, s, seed=1)
    b = backward_unrolled(trace, layers, s, seed=1, kernels=python_kernels)
    np.testing.assert_allclose(a.per_layer_variance, b.per_layer_variance, rtol=1e-12)


def test_non_finite_gradient_raises(small_run):
    layers, trace = small_run
    c = np.zeros(layers[-1].n_post)
    c[0] = np.nan
    with pytest.raises(NumericalError, match="layer"):
        backward_unrolled(trace, layers, SurrogateSpec.boxcar(0.3), readout=c)


def test_shape_checks(small_run):
    layers, trace = small_run
    with pytest.raises(ConfigError):
        backward_unrolled(trace, layers, SurrogateSpec.boxcar(0.3), readout=np.ones(3))
    with pytest.raises(ConfigError):
        backward_unrolled(trace, layers[:2], SurrogateSpec.boxcar(0.3))


def test_one_variance_per_layer(small_run):
    layers, trace = small_run
    gt = backward_unrolled(trace, layers, SurrogateSpec.boxcar(0.3), seed=1, keep=True)
    v = gradient_variance_per_layer(gt)
    assert len(v) == len(layers)
    np.testing.assert_allclose(v, gt.per_layer_variance, rtol=1e-12)
    assert [r["layer"] for r in gt.to_rows()] == list(range(len(layers)))


def test_constant_gradient_has_zero_variance():
    gt = GradientTrace(np.zeros(2), np.zeros(2), np.ones(1), ds=[np.full((5, 3), 0.7), np.full((5, 2), -1.0)])
    assert gradient_variance_per_layer(gt) == pytest.approx([0.0, 0.0], abs=1e-28)


def test_ratio_helpers():
    assert predicted_variance_ratio(0.01, 100, 1e-3, P) == pytest.approx(1e-3 / (1 - P.alpha ** 2))
    np.testing.assert_allclose(variance_ratios([8.0, 4.0, 1.0]), [2.0, 4.0])
    assert decay_factor([8.0, 4.0, 2.0]) == 4.0
    assert decay_factor([1.0, 0.0]) == float("inf")


@settings(max_examples=8)
@given(st.floats(2.0, 10.0), st.integers(0, 1000))
def test_smooth_network_matches_finite_differences(beta, seed):
    rng = np.random.default_rng(seed)
    p = LifParams(tau=0.01, dt=2e-3, i_ext=0.5)
    weights = [rng.normal(0, 0.6, (3, 3)) for _ in range(3)]
    source = rng.random((5, 3))
    c = rng.standard_normal(3)
    gt = smooth_backward(weights, p, source, c, beta)
    fd = finite_difference_ds(weights, p, source, c, beta)
    for got, ref in zip(gt.ds, fd):
        np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-7 * max(1.0, np.abs(ref).max()))

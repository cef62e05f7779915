"""Unrolled backward pass through a feed-forward LIF chain.

With the one-step delay between layers, layer ``l`` at step ``k`` integrates
the spikes that reach it at step ``k - 1``, and the leak carries that input
forward with weight ``alpha**j``.  Writing ``dv`` for the loss derivative
with respect to a membrane value and ``ds`` for the derivative with respect
to an input spike, the unrolled form gives

    ds_in[l][t] = sum_{k > t} alpha**(k - t - 1) * (dv[l][k] @ W[l])
    dv[l][k]    = ds_in[l + 1][k] * kappa * H'(v_pre[l][k] - v_th)

The loss is ``sum_i c_i sum_t v_top[i, t]``, so the top layer has
``dv = c`` at every step.  The reset is not differentiated.

``ds_in[0]`` is the derivative with respect to the external source spikes,
so an ``L``-layer chain yields ``L`` gradient tensors.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as _kernels_mod
from .errors import ConfigError, NumericalError
from .fokker_planck import SurrogateSpec
from .params import LifParams
from .sim import NetworkResult, run_network

log = logging.getLogger(__name__)


@dataclass
class ForwardTrace:
    """Membrane and spike record of a forward pass (measured window)."""

    params: LifParams
    v_pre: list
    rasters: list
    result: NetworkResult


@dataclass
class GradientTrace:
    """Backward-pass output.

    Attributes
    ----------
    per_layer_variance : ndarray
        ``Var[ds_in[l]]`` pooled over neurons and steps.
    rho_a : ndarray
        Mean of ``(kappa H')**2`` over each layer's pre-reset membrane.
    ds, dv : list of ndarray or None
        Full tensors (steps x neurons), kept only when requested.
    """

    per_layer_variance: np.ndarray
    rho_a: np.ndarray
    readout: np.ndarray
    ds: list | None = None
    dv: list | None = None
    second_moment: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_rows(self):
        return [{"layer": l, "var_ds": float(v), "rho_a": float(r)}
                for l, (v, r) in enumerate(zip(self.per_layer_variance, self.rho_a))]


def forward_unrolled(layers, params: LifParams, source, duration: float, correction=None, seed=0,
                     warmup: float = 0.0, kernels=None) -> ForwardTrace:
    """Run :func:`run_network` keeping rasters and every layer's pre-reset membrane."""
    res = run_network(layers, params, source, duration, correction=correction, seed=seed, warmup=warmup,
                      record_spikes=True, record_vpre=range(len(layers)), kernels=kernels)
    return ForwardTrace(params, [res.v_pre[l] for l in range(len(layers))], res.rasters, res)


def _check_finite(arr, what, layer):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite {what} at layer {layer}")


def backward_unrolled(trace: ForwardTrace, layers, surrogate: SurrogateSpec, readout=None, seed=0,
                      keep=False, kernels=None) -> GradientTrace:
    """Propagate the sum-of-membrane loss from the top layer to the source.

    Parameters
    ----------
    readout : array_like, optional
        Loss weights ``c`` of the top-layer neurons; drawn from N(0, 1) with
        ``seed`` when omitted.
    keep : bool
        Keep the full ``ds``/``dv`` tensors (memory heavy for big runs).
    """
    kern = kernels or _kernels_mod
    params = trace.params
    alpha = params.alpha
    n_layers = len(layers)
    if len(trace.v_pre) != n_layers:
        raise ConfigError(f"trace has {len(trace.v_pre)} layers, chain has {n_layers}")
    top = layers[-1].n_post
    if readout is None:
        readout = np.random.default_rng(seed).standard_normal(top)
    c = np.asarray(readout, dtype=float)
    if c.shape != (top,):
        raise ConfigError(f"readout must have shape ({top},), got {c.shape}")
    n_t = trace.v_pre[-1].shape[0]

    var = np.zeros(n_layers)
    m2 = np.zeros(n_layers)
    rho = np.zeros(n_layers)
    ds_all = [None] * n_layers if keep else None
    dv_all = [None] * n_layers if keep else None
    ds_out = None     # gradient w.r.t. the current layer's own spikes
    for l in range(n_layers - 1, -1, -1):
        vp = np.asarray(trace.v_pre[l], dtype=np.float64)
        sg = surrogate(vp)
        rho[l] = float(np.mean(sg * sg))
        if l == n_layers - 1:
            dv = np.broadcast_to(c, (n_t, top))
        else:
            dv = ds_out * sg
        _check_finite(dv, "membrane gradient", l)
        x = np.ascontiguousarray(dv @ layers[l].weights)
        ds_in = np.empty_like(x)
        kern.reverse_leaky_sum(x, alpha, ds_in)
        _check_finite(ds_in, "spike gradient", l)
        var[l] = float(ds_in.var())
        m2[l] = float(np.mean(ds_in * ds_in))
        if keep:
            ds_all[l] = ds_in
            dv_all[l] = np.array(dv)
        ds_out = ds_in
    return GradientTrace(var, rho, c, ds_all, dv_all, m2)


def gradient_variance_per_layer(gt: GradientTrace):
    """Per-layer ``Var[ds]`` as a list (index 0 is the source)."""
    if gt.ds is not None:
        return [float(np.var(d)) for d in gt.ds]
    return [float(v) for v in gt.per_layer_variance]


def predicted_variance_ratio(rho_a: float, n: int, var_w: float, params: LifParams) -> float:
    """Expected ``Var[ds_in[l]] / Var[ds_in[l+1]]`` for layer ``l`` of width ``n``.

    Assumes zero-mean weights and membrane gradients that are uncorrelated
    across steps, so the leaky sum multiplies the variance by
    ``1 / (1 - alpha**2)``.
    """
    a = params.alpha
    return rho_a * n * var_w / (1.0 - a * a)


# --------------------------------------------------------------------------- smooth network
def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def smooth_forward(weights, params: LifParams, source, beta=10.0, perturb=None):
    """Reset-free network with ``s = sigmoid(beta (v - v_th))``.

    ``source`` is a (T, n0) array of real-valued inputs.  ``perturb`` maps
    ``l`` to an array added to the spikes entering layer ``l`` (``l = 0`` is
    the source), which is how finite differences probe ``ds_in``.

    Returns the list of pre-activation membranes, one (T, n) array per layer.
    """
    alpha = params.alpha
    drive = params.drive
    s_in = np.asarray(source, dtype=float)
    vs = []
    for l, w in enumerate(weights):
        if perturb and l in perturb:
            s_in = s_in + perturb[l]
        n_t = s_in.shape[0]
        v = np.full(w.shape[0], params.v_r, dtype=float)
        v_hist = np.empty((n_t, w.shape[0]))
        for t in range(n_t):
            inp = s_in[t - 1] @ w.T if t > 0 else 0.0
            v = alpha * v + drive + inp
            v_hist[t] = v
        vs.append(v_hist)
        s_in = _sigmoid(beta * (v_hist - params.v_th))
    return vs


def smooth_loss(weights, params, source, readout, beta=10.0, perturb=None):
    vs = smooth_forward(weights, params, source, beta, perturb)
    return float(vs[-1].sum(axis=0) @ readout)


def smooth_backward(weights, params: LifParams, source, readout, beta=10.0):
    """Exact ``ds_in`` for :func:`smooth_forward` via the unrolled recursion."""
    vs = smooth_forward(weights, params, source, beta)
    layers = [_Dense(w) for w in weights]
    trace = ForwardTrace(params, vs, [], NetworkResult(params.dt, vs[0].shape[0], np.zeros(len(vs)), [],
                                                       np.zeros(len(vs)), np.zeros(len(vs))))
    return backward_unrolled(trace, layers, SurrogateSpec.sigmoid(beta, 1.0, params.v_th), readout=readout,
                             keep=True, kernels=_kernels_mod)


@dataclass
class _Dense:
    weights: np.ndarray

    @property
    def n_post(self):
        return self.weights.shape[0]


def finite_difference_ds(weights, params, source, readout, beta=10.0, eps=1e-6):
    """Central-difference ``d loss / d s_in[l][t, j]`` for every layer."""
    out = []
    shapes = [np.asarray(source).shape] + [(np.asarray(source).shape[0], w.shape[0]) for w in weights[:-1]]
    for l, shape in enumerate(shapes):
        g = np.zeros(shape)
        for idx in np.ndindex(*shape):
            d = np.zeros(shape)
            d[idx] = eps
            up = smooth_loss(weights, params, source, readout, beta, {l: d})
            dn = smooth_loss(weights, params, source, readout, beta, {l: -d})
            g[idx] = (up - dn) / (2.0 * eps)
        out.append(g)
    return out


def variance_ratios(gt_variances):
    """Ratio of consecutive layer variances, ``Var[l] / Var[l+1]``."""
    v = np.asarray(gt_variances, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return v[:-1] / v[1:]


def decay_factor(variances) -> float:
    """``Var[first] / Var[last]``; infinite when the last layer is exactly zero."""
    v = np.asarray(variances, dtype=float)
    return math.inf if v[-1] == 0 else float(v[0] / v[-1])

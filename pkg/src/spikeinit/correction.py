"""Within-step threshold-crossing corrections.

A plain discrete-time update only sees the membrane at the end of a step.  The
inputs of a step actually arrive in some order, and a neuron may cross
threshold mid-step even though the summed input leaves it below.  Three
corrections recover those spikes:

* random walk: exact crossing probability for +/-w weights with the
  up/down counts of the step;
* Wiener: Brownian-bridge limit for many inputs with arbitrary weights;
* permutation: sample one ordering of the step's weights and check every
  running sum.

Each correction exists as a pure probability function and as a hook that the
simulator applies to non-spiking neurons before reset.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError
from .params import LayerTopology, LifParams

log = logging.getLogger(__name__)

_SNAP = 1e-9
CORRECTIONS = ("none", "random-walk", "wiener", "permutation")


# --------------------------------------------------------------------------- random walk
def random_walk_endpoint_pmf(n: int, k: int) -> float:
    """P(X_n = k) for a symmetric +/-1 walk of ``n`` steps.

    Computed in log space, so ``n`` in the tens of thousands is fine.
    """
    if n < 0:
        raise ConfigError(f"number of steps must be >= 0, got {n}")
    if abs(k) > n or (n + k) % 2:
        return 0.0
    up = (n + k) // 2
    return math.exp(gammaln(n + 1) - gammaln(up + 1) - gammaln(n - up + 1) - n * math.log(2.0))


@dataclass(frozen=True)
class RwQuery:
    """Counts of one step: ``n_exc`` up-steps, ``n_inh`` down-steps, barrier ``steps_needed``."""

    n_exc: int
    n_inh: int
    steps_needed: int

    def __post_init__(self):
        if self.n_exc < 0 or self.n_inh < 0:
            raise ConfigError(f"spike counts must be >= 0, got N={self.n_exc}, M={self.n_inh}")

    @property
    def n(self) -> int:
        return self.n_exc + self.n_inh

    @property
    def k(self) -> int:
        return self.n_exc - self.n_inh


def log_factorials(n_max: int) -> np.ndarray:
    """Table of log(j!) for j = 0..n_max."""
    return gammaln(np.arange(n_max + 1, dtype=np.float64) + 1.0)


def rw_spike_probability(q: RwQuery) -> float:
    """Probability that the walk reaches ``steps_needed`` given its endpoint.

    With ``y = steps_needed``, ``N`` ups and ``M`` downs: 1 if ``y <= 0``
    (already at threshold) or ``y < N - M``; 0 if ``y > N``; otherwise the
    reflection ratio ``P(X_n = 2y - k) / P(X_n = k) = N! M! / ((N-y)! (M+y)!)``.
    """
    big_n, big_m, y = int(q.n_exc), int(q.n_inh), int(q.steps_needed)
    if y <= 0 or y < big_n - big_m:
        return 1.0
    if y > big_n:
        return 0.0
    return math.exp(gammaln(big_n + 1) + gammaln(big_m + 1) - gammaln(big_n - y + 1) - gammaln(big_m + y + 1))


def rw_spike_probability_array(n_exc, n_inh, y, log_fact=None) -> np.ndarray:
    """Vectorised :func:`rw_spike_probability`."""
    big_n = np.asarray(n_exc, dtype=np.int64)
    big_m = np.asarray(n_inh, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    big_n, big_m, y = np.broadcast_arrays(big_n, big_m, y)
    if log_fact is None:
        log_fact = log_factorials(int((big_n + big_m).max(initial=0)))
    p = np.zeros(big_n.shape)
    certain = (y <= 0) | (y < big_n - big_m)
    mid = ~certain & (y <= big_n)
    nm, mm, ym = big_n[mid], big_m[mid], y[mid]
    p[mid] = np.exp(log_fact[nm] + log_fact[mm] - log_fact[nm - ym] - log_fact[mm + ym])
    p[certain] = 1.0
    return p


def deterministic_part(params: LifParams, v_prev, use_alpha_bar=False):
    """Membrane the step would reach without inputs, ``a v + (1 - a) I``."""
    a = params.alpha_bar if use_alpha_bar else params.alpha
    return a * np.asarray(v_prev, dtype=float) + (1.0 - a) * params.i_ext


def ceil_snapped(q):
    """Ceiling that treats values within 1e-9 (relative) of an integer as that integer."""
    q = np.asarray(q, dtype=float)
    r = np.floor(q + 0.5)
    return np.where(np.abs(q - r) <= _SNAP * np.maximum(1.0, np.abs(q)), r, np.ceil(q))


def rw_barrier(params: LifParams | None, v_prev, w: float, v_th_t: float | None = None,
               g: Callable | None = None, use_alpha_bar: bool = False):
    """Number of net up-steps needed to reach threshold within the step.

    ``y = ceil((V_th(t) - g(v)) / w)``.  The deterministic part ``g``
    defaults to ``alpha v + (1 - alpha) I``; pass ``g`` (and a
    time-varying ``v_th_t``) for other membrane models.  A non-positive
    result means the deterministic part alone is at or above threshold.
    """
    if w <= 0:
        raise ConfigError(f"random-walk step must be > 0, got {w}")
    if v_th_t is None:
        if params is None:
            raise ConfigError("need params or an explicit threshold")
        v_th_t = params.v_th
    if g is not None:
        det = g(v_prev)
    else:
        if params is None:
            raise ConfigError("need params or a deterministic update g")
        det = deterministic_part(params, v_prev, use_alpha_bar)
    y = ceil_snapped((v_th_t - det) / w)
    return int(y) if np.ndim(y) == 0 else y.astype(np.int64)


# --------------------------------------------------------------------------- Wiener
@dataclass(frozen=True)
class WienerQuery:
    """Normalised barrier ``m`` and endpoint ``w_end`` of a Brownian path over ``dt``."""

    m: float
    w_end: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"WienerQuery.dt must be > 0, got {self.dt}")


def wiener_spike_probability(q: WienerQuery) -> float:
    """P(max of a Brownian path on [0, dt] >= m | path ends at w_end).

    ``exp(-2 m (m - w_end) / dt)`` for ``m > max(0, w_end)``, otherwise 1.
    The branch ``w_end < m <= 0`` (barrier at or below the start) is
    certain crossing and is logged.
    """
    if q.m <= q.w_end:
        return 1.0
    if q.m <= 0.0:
        log.debug("non-positive barrier m=%g with w_end=%g treated as certain crossing", q.m, q.w_end)
        return 1.0
    return math.exp(-2.0 * q.m * (q.m - q.w_end) / q.dt)


def wiener_query_from_step(params: LifParams, v_prev: float, mu_w: float, sigma_w: float,
                           n_spikes: int, net_input: float, v_th_t: float | None = None,
                           g: Callable | None = None):
    """Normalise one step's quantities onto a Brownian path of duration dt.

    ``m = (V_th - det - mu_w) / (sigma_w sqrt(n / dt))`` and
    ``w_end = (W - mu_w) / (sigma_w sqrt(n / dt))``.  Returns None when no
    input arrived (``n_spikes == 0``): nothing to correct.
    """
    if n_spikes == 0:
        return None
    if n_spikes < 0:
        raise ConfigError(f"n_spikes must be >= 0, got {n_spikes}")
    if not sigma_w > 0:
        raise ConfigError(f"sigma_w must be > 0, got {sigma_w}")
    v_th = params.v_th if v_th_t is None else v_th_t
    det = g(v_prev) if g is not None else float(deterministic_part(params, v_prev))
    scale = sigma_w * math.sqrt(n_spikes / params.dt)
    return WienerQuery((v_th - det - mu_w) / scale, (net_input - mu_w) / scale, params.dt)


# --------------------------------------------------------------------------- permutation
def permutation_step(v_det: float, weights, v_th: float, seed=None) -> bool:
    """Single-neuron step with one sampled ordering of the step's inputs.

    Spikes if the full sum reaches threshold, otherwise if any running sum
    of a uniformly permuted copy of ``weights`` does.
    """
    w = np.asarray(weights, dtype=float)
    if v_det + w.sum() >= v_th:
        return True
    if w.size == 0:
        return False
    perm = np.random.default_rng(seed).permutation(w)
    return bool(np.any(v_det + np.cumsum(perm) >= v_th))


# --------------------------------------------------------------------------- hooks
class _Bound:
    needs_uniforms = True
    flag_name = None

    def __init__(self, topology: LayerTopology, params: LifParams):
        self.topology = topology
        self.params = params


class _BoundPlain(_Bound):
    needs_uniforms = False

    def __init__(self, topology, params, end_of_interval=False):
        super().__init__(topology, params)
        self.end_of_interval = end_of_interval

    def scan(self, kern, v, syn, active, uniforms, spikes, v_pre):
        p = self.params
        kern.scan_plain(v, syn, p.drive, p.alpha, p.v_th, p.v_r, self.end_of_interval, spikes, v_pre)
        return 0, 0


class NoCorrection:
    """Plain update; ``end_of_interval`` decays the inputs with the membrane."""

    name = "none"

    def __init__(self, end_of_interval: bool = False):
        self.end_of_interval = end_of_interval

    def bind(self, topology, params):
        return _BoundPlain(topology, params, self.end_of_interval)


def _det_coefficients(params, use_alpha_bar):
    a = params.alpha_bar if use_alpha_bar else params.alpha
    return a, (1.0 - a) * params.i_ext


def _as_int32(x):
    return np.ascontiguousarray(np.rint(x), dtype=np.int32)


class _BoundRandomWalk(_Bound):
    def __init__(self, topology, params, w, use_alpha_bar):
        super().__init__(topology, params)
        weights = topology.weights
        self.w = w
        self.exc_t = np.ascontiguousarray((weights > 0).T, dtype=np.float64)
        self.inh_t = np.ascontiguousarray((weights < 0).T, dtype=np.float64)
        self.det_alpha, self.det_drive = _det_coefficients(params, use_alpha_bar)
        self.log_fact = log_factorials(topology.n_pre)

    def counts(self, active):
        return _as_int32(active @ self.exc_t), _as_int32(active @ self.inh_t)

    def scan(self, kern, v, syn, active, uniforms, spikes, v_pre):
        p = self.params
        n_exc, n_inh = self.counts(active)
        return kern.scan_random_walk(v, syn, n_exc, n_inh, p.drive, p.alpha, p.v_th, p.v_r, self.w,
                                     self.det_alpha, self.det_drive, uniforms, self.log_fact,
                                     spikes, v_pre)


class RandomWalkCorrection:
    """Exact crossing probability for two-point weights +/-w.

    Parameters
    ----------
    use_alpha_bar : bool
        Use the arrival-averaged decay for the deterministic part of the
        barrier.  Kept as a negative control: it corrects less well.
    """

    name = "random-walk"

    def __init__(self, use_alpha_bar: bool = False):
        self.use_alpha_bar = use_alpha_bar

    def bind(self, topology: LayerTopology, params: LifParams):
        mags = np.unique(np.abs(topology.weights[topology.weights != 0]))
        if mags.size > 1 and not np.allclose(mags, mags[0], rtol=1e-12, atol=0):
            raise ConfigError("random-walk correction needs two-point weights +/-w; "
                              f"found {mags.size} distinct magnitudes")
        w = float(mags[0]) if mags.size else (topology.weight_spec.w or 1.0)
        return _BoundRandomWalk(topology, params, w, self.use_alpha_bar)


class _BoundWiener(_Bound):
    flag_name = "nonpositive_barrier"

    def __init__(self, topology, params, mu_w, sigma_w, use_alpha_bar):
        super().__init__(topology, params)
        self.mu_w, self.sigma_w = mu_w, sigma_w
        self.det_alpha, self.det_drive = _det_coefficients(params, use_alpha_bar)
        self.full = topology.connected_fraction == 1.0
        if not self.full:
            self.mask_t = np.ascontiguousarray((topology.weights != 0).T, dtype=np.float64)

    def counts(self, active):
        if self.full:
            per_step = np.diff(active.indptr).astype(np.int32)
            return np.ascontiguousarray(np.broadcast_to(per_step[:, None], (active.shape[0], self.topology.n_post)))
        return _as_int32(active @ self.mask_t)

    def scan(self, kern, v, syn, active, uniforms, spikes, v_pre):
        p = self.params
        n_in = self.counts(active)
        added, flagged = kern.scan_wiener(v, syn, n_in, p.drive, p.alpha, p.v_th, p.v_r, self.mu_w,
                                          self.sigma_w, self.det_alpha, self.det_drive, uniforms,
                                          spikes, v_pre)
        if flagged:
            log.debug("wiener correction: %d candidates with non-positive barrier set to certain crossing", flagged)
        return added, flagged


class WienerCorrection:
    """Brownian-bridge crossing probability for many inputs per step.

    ``mu_w`` and ``sigma_w`` default to the mean and standard deviation of
    the layer's weight distribution.
    """

    name = "wiener"

    def __init__(self, mu_w=None, sigma_w=None, use_alpha_bar=False):
        self.mu_w, self.sigma_w, self.use_alpha_bar = mu_w, sigma_w, use_alpha_bar

    def bind(self, topology: LayerTopology, params: LifParams):
        spec = topology.weight_spec
        m1, m2 = spec.moments()
        mu_w = m1 if self.mu_w is None else self.mu_w
        sigma_w = math.sqrt(max(m2 - m1 * m1, 0.0)) if self.sigma_w is None else self.sigma_w
        if not sigma_w > 0:
            raise ConfigError("wiener correction needs a weight distribution with sigma_w > 0")
        return _BoundWiener(topology, params, mu_w, sigma_w, self.use_alpha_bar)


class _BoundPermutation(_Bound):
    def scan(self, kern, v, syn, active, uniforms, spikes, v_pre):
        p = self.params
        indptr = active.indptr.astype(np.int64)
        indices = active.indices.astype(np.int32)
        return kern.scan_permutation(v, syn, self.topology.weights, indptr, indices, p.drive,
                                     p.alpha, p.v_th, p.v_r, uniforms, spikes, v_pre)


class PermutationCorrection:
    """Sampled ordering of each step's inputs, any weight distribution."""

    name = "permutation"

    def bind(self, topology: LayerTopology, params: LifParams):
        return _BoundPermutation(topology, params)


def make_correction(spec=None):
    """Resolve ``None``, a name from :data:`CORRECTIONS` or a hook object."""
    if spec is None or spec == "none":
        return NoCorrection()
    if hasattr(spec, "bind"):
        return spec
    table = {"random-walk": RandomWalkCorrection, "wiener": WienerCorrection,
             "permutation": PermutationCorrection,
             "random-walk-alpha-bar": lambda: RandomWalkCorrection(use_alpha_bar=True)}
    try:
        return table[spec]()
    except (KeyError, TypeError):
        raise ConfigError(f"unknown correction {spec!r}; expected one of {CORRECTIONS}") from None

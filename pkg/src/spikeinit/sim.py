"""Discrete-time simulation of feed-forward LIF populations.

Time is gridded with step ``dt``.  All input spikes of a step are integrated
at the start of the step, without decay::

    v <- alpha * v + (1 - alpha) * I_ext + W @ s_in

A neuron whose membrane reaches ``v_th`` spikes and is reset to ``v_r``.
Consecutive layers are coupled with a one-step delay: layer ``l`` integrates
at step ``t`` the spikes emitted by layer ``l - 1`` at step ``t - 1`` (the
external source counts as layer ``-1``).  This matches the unrolled form used
by the backward pass in :mod:`spikeinit.backprop`.
"""
from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels as _kernels_mod
from .errors import ConfigError
from .params import LayerTopology, LifParams

log = logging.getLogger(__name__)

DENSE_THRESHOLD = 0.1  # bin probability above which inputs are drawn densely
CHUNK_CELLS = 2_000_000


class SaturatedInputWarning(UserWarning):
    """A Poisson source emits a spike in every bin (rate * dt >= 1, clipped)."""


# --------------------------------------------------------------------------- rasters
@dataclass
class SpikeRaster:
    """Binary spike record of one population, time-major.

    Attributes
    ----------
    spikes : ndarray of uint8, shape (steps, neurons)
    dt : float
        Bin width in seconds.
    exc_count, inh_count : ndarray of int32, optional
        Excitatory and inhibitory input spikes received per bin.
    net_input : ndarray, optional
        Summed synaptic input per bin.
    """

    spikes: np.ndarray
    dt: float
    exc_count: np.ndarray | None = None
    inh_count: np.ndarray | None = None
    net_input: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.spikes.shape[0]

    @property
    def n_neurons(self) -> int:
        return self.spikes.shape[1]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def spike_counts(self) -> np.ndarray:
        """Spikes per neuron over the whole record."""
        return self.spikes.sum(axis=0, dtype=np.int64)

    def population_rate(self) -> float:
        """Mean firing rate in Hz, total spikes / (neurons * steps * dt)."""
        return float(self.spikes.sum(dtype=np.int64)) / (self.n_neurons * self.n_steps * self.dt)

    def activity(self) -> np.ndarray:
        """Fraction of neurons spiking per bin divided by dt (Hz)."""
        return self.spikes.mean(axis=1) / self.dt

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.spikes, dtype=np.float64)


def _empty_csr(n_rows, n_cols):
    return sp.csr_matrix((n_rows, n_cols), dtype=np.float64)


class PoissonInput:
    """Independent Bernoulli-per-bin sources, generated chunk by chunk.

    Each (source, bin) pair spikes with probability ``rate * dt``; a source
    emits at most one spike per bin.  The draws are independent of how the
    run is chunked: sparse streams sample geometric gaps over the time-major
    flattened raster, dense streams draw one uniform per cell.

    Parameters
    ----------
    rate : float
        Rate of every source in Hz.
    n_sources : int
    dt : float
    seed : int or SeedSequence
    """

    def __init__(self, rate, n_sources, dt, seed=0):
        if rate < 0 or not math.isfinite(rate):
            raise ConfigError(f"input rate must be finite and >= 0, got {rate}")
        if n_sources < 1:
            raise ConfigError(f"need at least one source, got {n_sources}")
        p = rate * dt
        self.p = min(p, 1.0)
        if p >= 1.0 and rate > 0:
            # a Bernoulli bin holds at most one spike, so the source cannot go faster
            warnings.warn(f"input saturated: rate*dt = {p:.4g} at rate {rate} Hz, dt {dt} s; clipped to one spike "
                          "per bin, so the delivered rate is 1/dt",
                          SaturatedInputWarning, stacklevel=2)
        self.rate = float(rate)
        self.n_sources = int(n_sources)
        self.dt = float(dt)
        self.seed = seed
        self.reset()

    def reset(self):
        self._rng = np.random.default_rng(self.seed)
        self._cell = 0                      # flattened index of the next bin
        self._last = -1                     # last emitted spike position (sparse mode)
        self._buf = np.zeros(0, np.int64)   # drawn but unused gaps

    def _next_gaps(self, n):
        u = self._rng.random(n)
        return np.floor(np.log1p(-u) / math.log1p(-self.p)).astype(np.int64) + 1

    def chunk(self, n_steps: int) -> sp.csr_matrix:
        """Next ``n_steps`` bins as a CSR matrix of shape (n_steps, n_sources)."""
        n = self.n_sources
        start, stop = self._cell, self._cell + n_steps * n
        self._cell = stop
        if self.p == 0.0:
            return _empty_csr(n_steps, n)
        if self.p == 1.0:
            return sp.csr_matrix(np.ones((n_steps, n)))
        if self.p >= DENSE_THRESHOLD:
            return sp.csr_matrix((self._rng.random((n_steps, n)) < self.p).astype(np.float64))
        # gaps are consumed strictly in order, so the raster does not depend
        # on the chunk size
        batch = max(64, int(1.1 * (stop - self._last) * self.p) + 64)
        out = []
        while True:
            if self._buf.size == 0:
                self._buf = self._next_gaps(batch)
            cs = self._last + np.cumsum(self._buf)
            k = int(np.searchsorted(cs, stop))
            out.append(cs[:k])
            if k < cs.size:
                if k:
                    self._last = int(cs[k - 1])
                self._buf = self._buf[k:]
                break
            self._last = int(cs[-1])
            self._buf = np.zeros(0, np.int64)
        rel = np.concatenate(out) - start
        rows, cols = np.divmod(rel, n)
        return sp.csr_matrix((np.ones(rel.size), (rows, cols)), shape=(n_steps, n))


class RasterInput:
    """Replays a precomputed :class:`SpikeRaster` (or 0/1 array) as a source."""

    def __init__(self, raster):
        spikes = raster.spikes if isinstance(raster, SpikeRaster) else np.asarray(raster)
        self._csr = sp.csr_matrix(spikes, dtype=np.float64)
        self.n_sources = self._csr.shape[1]
        self.reset()

    def reset(self):
        self._pos = 0

    def chunk(self, n_steps):
        lo, hi = self._pos, self._pos + n_steps
        if hi > self._csr.shape[0]:
            raise ConfigError(f"input raster has {self._csr.shape[0]} steps, run needs {hi}")
        self._pos = hi
        return self._csr[lo:hi]


def poisson_spikes(rate, n_sources, steps, dt, seed=0) -> SpikeRaster:
    """Bernoulli-per-bin Poisson raster with ``p = min(rate * dt, 1)``.

    Warns with :class:`SaturatedInputWarning` when ``rate * dt >= 1``.
    """
    src = PoissonInput(rate, n_sources, dt, seed)
    return SpikeRaster(src.chunk(steps).toarray().astype(np.uint8), dt)


# --------------------------------------------------------------------------- single step
@dataclass
class SimState:
    """Membrane vector of a population and the generator feeding its correction."""

    v: np.ndarray
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @classmethod
    def at_reset(cls, n, params: LifParams, seed=0):
        return cls(np.full(n, params.v_r, dtype=np.float64), np.random.default_rng(seed))


def step_population(state: SimState, params: LifParams, topology: LayerTopology, input_bin,
                    correction=None, kernels=None):
    """Advance one population by one step.

    Parameters
    ----------
    state : SimState
        Updated in place and returned.
    input_bin : array_like, shape (n_pre,)
        Presynaptic spikes integrated in this step.
    correction : str, hook or None
        Crossing correction applied to neurons that did not reach threshold.

    Returns
    -------
    spikes : ndarray of uint8, shape (n_post,)
    state : SimState
    """
    from .correction import make_correction

    kern = kernels or _kernels_mod
    x = np.asarray(input_bin, dtype=np.float64).reshape(-1)
    if x.shape[0] != topology.n_pre:
        raise ConfigError(f"input has {x.shape[0]} entries, layer expects {topology.n_pre}")
    if state.v.shape != (topology.n_post,):
        raise ConfigError(f"state has {state.v.shape[0]} neurons, layer has {topology.n_post}")
    bound = make_correction(correction).bind(topology, params)
    active = sp.csr_matrix(x[None, :])
    syn = np.ascontiguousarray((active @ topology.weights.T).reshape(1, -1))
    spikes = np.zeros((1, topology.n_post), dtype=np.uint8)
    uniforms = state.rng.random((1, topology.n_post)) if bound.needs_uniforms else None
    bound.scan(kern, state.v, syn, active, uniforms, spikes, None)
    return spikes[0], state


# --------------------------------------------------------------------------- networks
@dataclass
class NetworkResult:
    """Outcome of :func:`run_network`.

    ``rates`` and ``spike_counts`` cover the measured window only (warm-up
    excluded).  ``added`` counts spikes contributed by the correction.
    """

    dt: float
    n_steps: int
    rates: np.ndarray
    neuron_counts: list
    added: np.ndarray
    flagged: np.ndarray
    rasters: list | None = None
    v_pre: dict = field(default_factory=dict)
    final_v: list = field(default_factory=list)

    @property
    def duration(self):
        return self.n_steps * self.dt

    def rate_se(self):
        """Standard error of each layer's rate across neurons (Hz)."""
        return np.array([c.std(ddof=1) / math.sqrt(c.size) / self.duration if c.size > 1 else 0.0
                         for c in self.neuron_counts])


def _shift(prev_last, chunk):
    """Prepend the last row of the previous chunk and drop this chunk's last row."""
    if chunk.shape[0] == 1:
        return prev_last
    return sp.vstack([prev_last, chunk[:-1]], format="csr")


def run_network(layers, params: LifParams, source, duration: float, correction=None, seed=0,
                warmup: float = 0.0, record_spikes=False, record_vpre=(), record_counts=False,
                kernels=None, chunk_cells: int = CHUNK_CELLS) -> NetworkResult:
    """Simulate a feed-forward chain of LIF layers.

    Parameters
    ----------
    layers : list of LayerTopology
        ``layers[0].n_pre`` must equal the number of sources and each
        ``n_post`` the next layer's ``n_pre``.
    source : PoissonInput, RasterInput or SpikeRaster
        External spikes.  A SpikeRaster must cover warm-up plus duration.
    duration, warmup : float
        Seconds measured, and seconds simulated beforehand and discarded.
    correction : str, hook, or list of those (one per layer)
    seed : int
        Master seed of the per-layer correction streams.
    record_spikes : bool
        Keep every layer's raster of the measured window.
    record_vpre : iterable of int
        Layers whose pre-reset membrane is kept (float32, measured window).
    record_counts : bool
        With ``record_spikes``, also keep per-bin input statistics.
    """
    from .correction import make_correction

    kern = kernels or _kernels_mod
    if not layers:
        raise ConfigError("need at least one layer")
    if isinstance(source, SpikeRaster):
        source = RasterInput(source)
    if layers[0].n_pre != source.n_sources:
        raise ConfigError(f"layer 0 expects {layers[0].n_pre} inputs, source has {source.n_sources}")
    for i in range(1, len(layers)):
        if layers[i].n_pre != layers[i - 1].n_post:
            raise ConfigError(f"layer {i} expects {layers[i].n_pre} inputs, layer {i - 1} has "
                              f"{layers[i - 1].n_post} neurons")
    n_layers = len(layers)
    hooks = correction if isinstance(correction, (list, tuple)) else [correction] * n_layers
    if len(hooks) != n_layers:
        raise ConfigError(f"got {len(hooks)} corrections for {n_layers} layers")
    bound = [make_correction(h).bind(layer, params) for h, layer in zip(hooks, layers)]
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_layers)]
    w_t = [np.ascontiguousarray(layer.weights.T) for layer in layers]

    n_warm = int(round(warmup / params.dt))
    n_meas = int(round(duration / params.dt))
    if n_meas < 1:
        raise ConfigError(f"duration {duration} s is shorter than one step of {params.dt} s")
    total = n_warm + n_meas
    widest = max(layer.n_post for layer in layers)
    step_chunk = max(1, min(total, chunk_cells // widest))
    record_vpre = set(record_vpre)

    v = [np.full(layer.n_post, params.v_r, dtype=np.float64) for layer in layers]
    prev_last = [_empty_csr(1, layer.n_pre) for layer in layers]
    counts = [np.zeros(layer.n_post, dtype=np.int64) for layer in layers]
    added = np.zeros(n_layers, dtype=np.int64)
    flagged = np.zeros(n_layers, dtype=np.int64)
    kept = [[] for _ in layers] if record_spikes else None
    kept_counts = [[] for _ in layers] if record_spikes and record_counts else None
    kept_v = {l: [] for l in record_vpre}

    t0 = 0
    while t0 < total:
        # chunks never straddle the end of the warm-up
        limit = n_warm - t0 if t0 < n_warm else total - t0
        n_t = min(step_chunk, limit)
        measured = t0 >= n_warm
        pre = source.chunk(n_t)
        for l, layer in enumerate(layers):
            active = _shift(prev_last[l], pre)
            prev_last[l] = pre[n_t - 1:n_t]
            syn = np.ascontiguousarray(active @ w_t[l])
            spikes = np.zeros((n_t, layer.n_post), dtype=np.uint8)
            uniforms = streams[l].random((n_t, layer.n_post)) if bound[l].needs_uniforms else None
            vp = np.empty((n_t, layer.n_post)) if measured and l in record_vpre else None
            a, f = bound[l].scan(kern, v[l], syn, active, uniforms, spikes, vp)
            if measured:
                added[l] += a
                flagged[l] += f
                counts[l] += spikes.sum(axis=0, dtype=np.int64)
                if kept is not None:
                    kept[l].append(spikes)
                    if kept_counts is not None:
                        kept_counts[l].append(_input_stats(bound[l], active, syn))
                if vp is not None:
                    kept_v[l].append(vp.astype(np.float32))
            pre = sp.csr_matrix(spikes, dtype=np.float64)
        t0 += n_t

    dur = n_meas * params.dt
    rates = np.array([c.sum() / (c.size * dur) for c in counts])
    rasters = None
    if kept is not None:
        rasters = []
        for l in range(n_layers):
            r = SpikeRaster(np.concatenate(kept[l]), params.dt)
            if kept_counts is not None:
                ex, inh, net = zip(*kept_counts[l])
                r.exc_count, r.inh_count, r.net_input = (np.concatenate(ex), np.concatenate(inh),
                                                         np.concatenate(net))
            rasters.append(r)
    return NetworkResult(params.dt, n_meas, rates, counts, added, flagged, rasters,
                         {l: np.concatenate(x) for l, x in kept_v.items() if x}, v)


def _input_stats(bound, active, syn):
    w = bound.topology.weights
    exc = np.ascontiguousarray((w > 0).T, dtype=np.float64)
    inh = np.ascontiguousarray((w < 0).T, dtype=np.float64)
    return (np.rint(active @ exc).astype(np.int32), np.rint(active @ inh).astype(np.int32), syn.copy())


def default_threads() -> int:
    """Worker count for repeats, from ``SPIKEINIT_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("SPIKEINIT_THREADS", "1")))
    except ValueError:
        raise ConfigError("SPIKEINIT_THREADS must be an integer") from None


def map_repeats(fn, seeds, threads=None):
    """Apply ``fn(seed)`` to every seed, optionally on a thread pool; order is kept."""
    threads = threads or default_threads()
    if threads == 1 or len(seeds) == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seeds))


def repeat_seeds(seed, repeats):
    """Independent integer seeds for ``repeats`` runs derived from ``seed``."""
    return [int(x) for x in np.random.SeedSequence(seed).generate_state(repeats, dtype=np.uint32)]

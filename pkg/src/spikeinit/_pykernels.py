"""Pure numpy implementations of the membrane scan kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Both versions perform the floating point operations in the same order, so the
two backends produce bit-identical rasters for identical inputs.

Arrays are time-major: ``syn[t, i]`` is the synaptic input integrated by
neuron ``i`` at step ``t``.  The membrane vector ``v`` is updated in place.
"""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 9007199254740992.0
_SNAP = 1e-9


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _barrier_steps(q):
    # ceil that tolerates round-off when q sits on an integer
    r = np.floor(q + 0.5)
    return np.where(np.abs(q - r) <= _SNAP * np.maximum(1.0, np.abs(q)), r, np.ceil(q))


def _integrate(v, syn_t, alpha, drive, end_of_interval):
    if end_of_interval:
        return alpha * (v + syn_t) + drive
    return alpha * v + drive + syn_t


def scan_plain(v, syn, drive, alpha, v_th, v_r, end_of_interval, spikes, v_pre):
    """Integrate, threshold and reset for every step of a chunk.

    Parameters
    ----------
    v : ndarray, shape (n,)
        Membrane potentials, updated in place.
    syn : ndarray, shape (T, n)
        Summed synaptic input per step.
    drive : float
        Bias term ``(1 - alpha) * I_ext``.
    alpha, v_th, v_r : float
    end_of_interval : bool
        Decay the inputs together with the membrane (inputs placed at the end
        of the step) instead of adding them undecayed.
    spikes : ndarray of uint8, shape (T, n)
        Output raster.
    v_pre : ndarray, shape (T, n), or None
        If given, receives the membrane before reset.
    """
    for t in range(syn.shape[0]):
        x = _integrate(v, syn[t], alpha, drive, end_of_interval)
        if v_pre is not None:
            v_pre[t] = x
        fired = x >= v_th
        spikes[t] = fired
        v[:] = np.where(fired, v_r, x)


def scan_random_walk(v, syn, n_exc, n_inh, drive, alpha, v_th, v_r, w,
                     det_alpha, det_drive, uniforms, log_fact, spikes, v_pre):
    """Scan with the symmetric random-walk crossing correction.

    Non-spiking neurons spike with the exact probability that a +/-w walk
    with ``n_exc`` up and ``n_inh`` down steps reached the threshold.

    Returns
    -------
    added : int
        Spikes contributed by the correction.
    flagged : int
        Always zero; kept for a uniform return signature.
    """
    added = 0
    for t in range(syn.shape[0]):
        x = alpha * v + drive + syn[t]
        if v_pre is not None:
            v_pre[t] = x
        fired = x >= v_th
        cand = ~fired
        if cand.any():
            vd = det_alpha * v + det_drive
            y = _barrier_steps((v_th - vd) / w)
            big_n = n_exc[t].astype(np.int64)
            big_m = n_inh[t].astype(np.int64)
            k = big_n - big_m
            p = np.zeros_like(x)
            certain = (y <= 0) | (y < k)
            mid = cand & ~certain & (y <= big_n)
            if mid.any():
                yi = y[mid].astype(np.int64)
                nm, mm = big_n[mid], big_m[mid]
                p[mid] = np.exp(log_fact[nm] + log_fact[mm] - log_fact[nm - yi] - log_fact[mm + yi])
            p[certain] = 1.0
            extra = cand & (uniforms[t] < p)
            added += int(extra.sum())
            fired = fired | extra
        spikes[t] = fired
        v[:] = np.where(fired, v_r, x)
    return added, 0


def scan_wiener(v, syn, n_in, drive, alpha, v_th, v_r, mu_w, sigma_w,
                det_alpha, det_drive, uniforms, spikes, v_pre):
    """Scan with the Brownian-bridge crossing correction.

    Returns
    -------
    added : int
        Spikes contributed by the correction.
    flagged : int
        Candidates whose normalised barrier was not positive.
    """
    added = 0
    flagged = 0
    for t in range(syn.shape[0]):
        x = alpha * v + drive + syn[t]
        if v_pre is not None:
            v_pre[t] = x
        fired = x >= v_th
        cand = (~fired) & (n_in[t] > 0)
        if cand.any():
            vd = det_alpha * v + det_drive
            scale = sigma_w * np.sqrt(n_in[t].astype(np.float64))
            scale = np.where(cand, scale, 1.0)
            m = (v_th - vd - mu_w) / scale
            we = (syn[t] - mu_w) / scale
            sure = (m <= we) | (m <= 0.0)
            flagged += int((cand & (m <= 0.0) & ~(m <= we)).sum())
            p = np.where(sure, 1.0, np.exp(-2.0 * m * (m - we)))
            extra = cand & (uniforms[t] < p)
            added += int(extra.sum())
            fired = fired | extra
        spikes[t] = fired
        v[:] = np.where(fired, v_r, x)
    return added, flagged


def scan_permutation(v, syn, weights, indptr, indices, drive, alpha, v_th, v_r,
                     uniforms, spikes, v_pre):
    """Scan with sampled input orderings for non-spiking neurons.

    The active sources of step ``t`` are ``indices[indptr[t]:indptr[t + 1]]``.
    For each candidate neuron their weights (zero where unconnected) are
    shuffled with a Fisher-Yates pass driven by a splitmix64 stream seeded
    from the candidate's uniform; the neuron spikes if any running sum
    reaches threshold.

    Returns
    -------
    added : int
    flagged : int
        Always zero.
    """
    added = 0
    for t in range(syn.shape[0]):
        x = alpha * v + drive + syn[t]
        if v_pre is not None:
            v_pre[t] = x
        fired = x >= v_th
        act = indices[indptr[t]:indptr[t + 1]]
        n_act = act.shape[0]
        if n_act > 0:
            vd = alpha * v + drive
            rows = np.flatnonzero(~fired)
            a = weights[rows][:, act]
            # sequential sum, matching the compiled loop
            reach = vd[rows] + np.cumsum(np.maximum(a, 0.0), axis=1)[:, -1]
            keep = reach >= v_th
            rows, a, vdr = rows[keep], a[keep], vd[rows][keep]
            if rows.size:
                state = (uniforms[t, rows] * _TWO53).astype(np.uint64)
                acc = np.zeros(rows.size)
                hit = np.zeros(rows.size, dtype=bool)
                ridx = np.arange(rows.size)
                for pos in range(n_act):
                    state = state + _GOLDEN
                    r = (_mix64(state) >> np.uint64(11)).astype(np.float64) * (1.0 / _TWO53)
                    j = pos + (r * float(n_act - pos)).astype(np.int64)
                    picked = a[ridx, j]
                    a[ridx, j] = a[:, pos]
                    a[:, pos] = picked
                    acc = acc + picked
                    hit |= vdr + acc >= v_th
                extra = rows[hit]
                added += extra.size
                fired[extra] = True
        spikes[t] = fired
        v[:] = np.where(fired, v_r, x)
    return added, 0


def reverse_leaky_sum(x, alpha, out):
    """``out[t] = x[t+1] + alpha * out[t+1]`` with ``out[T-1] = 0``."""
    n_t = x.shape[0]
    out[n_t - 1] = 0.0
    for t in range(n_t - 2, -1, -1):
        out[t] = x[t + 1] + alpha * out[t + 1]

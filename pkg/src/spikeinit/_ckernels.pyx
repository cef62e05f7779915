# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled membrane scan kernels.

Same signatures and operation order as ``_pykernels``; see that module for
the parameter documentation.
"""
from libc.math cimport exp, ceil, floor, sqrt, fabs
from libc.stdint cimport uint64_t, int32_t, int64_t

cdef double _SNAP = 1e-9
cdef double _TWO53 = 9007199254740992.0


cdef inline uint64_t _mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _barrier_steps(double q) noexcept nogil:
    cdef double r = floor(q + 0.5)
    cdef double scale = fabs(q)
    if scale < 1.0:
        scale = 1.0
    if fabs(q - r) <= _SNAP * scale:
        return r
    return ceil(q)


def scan_plain(double[::1] v, const double[:, ::1] syn, double drive, double alpha,
               double v_th, double v_r, bint end_of_interval,
               unsigned char[:, ::1] spikes, v_pre):
    cdef Py_ssize_t n_t = syn.shape[0], n = syn.shape[1], t, i
    cdef double x
    cdef double[:, ::1] vp
    cdef bint rec = v_pre is not None
    if rec:
        vp = v_pre
    with nogil:
        for t in range(n_t):
            for i in range(n):
                if end_of_interval:
                    x = alpha * (v[i] + syn[t, i]) + drive
                else:
                    x = alpha * v[i] + drive + syn[t, i]
                if rec:
                    vp[t, i] = x
                if x >= v_th:
                    spikes[t, i] = 1
                    v[i] = v_r
                else:
                    spikes[t, i] = 0
                    v[i] = x


def scan_random_walk(double[::1] v, const double[:, ::1] syn, const int32_t[:, ::1] n_exc,
                     const int32_t[:, ::1] n_inh, double drive, double alpha, double v_th,
                     double v_r, double w, double det_alpha, double det_drive,
                     const double[:, ::1] uniforms, const double[::1] log_fact,
                     unsigned char[:, ::1] spikes, v_pre):
    cdef Py_ssize_t n_t = syn.shape[0], n = syn.shape[1], t, i
    cdef double x, vd, y, p
    cdef int64_t big_n, big_m, k, yi
    cdef long added = 0
    cdef double[:, ::1] vp
    cdef bint rec = v_pre is not None
    if rec:
        vp = v_pre
    with nogil:
        for t in range(n_t):
            for i in range(n):
                x = alpha * v[i] + drive + syn[t, i]
                if rec:
                    vp[t, i] = x
                if x >= v_th:
                    spikes[t, i] = 1
                    v[i] = v_r
                    continue
                vd = det_alpha * v[i] + det_drive
                y = _barrier_steps((v_th - vd) / w)
                big_n = n_exc[t, i]
                big_m = n_inh[t, i]
                k = big_n - big_m
                if y <= 0 or y < k:
                    p = 1.0
                elif y <= big_n:
                    yi = <int64_t>y
                    p = exp(log_fact[big_n] + log_fact[big_m] - log_fact[big_n - yi] - log_fact[big_m + yi])
                else:
                    p = 0.0
                if uniforms[t, i] < p:
                    added += 1
                    spikes[t, i] = 1
                    v[i] = v_r
                else:
                    spikes[t, i] = 0
                    v[i] = x
    return added, 0


def scan_wiener(double[::1] v, const double[:, ::1] syn, const int32_t[:, ::1] n_in,
                double drive, double alpha, double v_th, double v_r, double mu_w,
                double sigma_w, double det_alpha, double det_drive,
                const double[:, ::1] uniforms, unsigned char[:, ::1] spikes, v_pre):
    cdef Py_ssize_t n_t = syn.shape[0], n = syn.shape[1], t, i
    cdef double x, vd, scale, m, we, p
    cdef long added = 0, flagged = 0
    cdef double[:, ::1] vp
    cdef bint rec = v_pre is not None
    if rec:
        vp = v_pre
    with nogil:
        for t in range(n_t):
            for i in range(n):
                x = alpha * v[i] + drive + syn[t, i]
                if rec:
                    vp[t, i] = x
                if x >= v_th:
                    spikes[t, i] = 1
                    v[i] = v_r
                    continue
                if n_in[t, i] > 0:
                    vd = det_alpha * v[i] + det_drive
                    scale = sigma_w * sqrt(<double>n_in[t, i])
                    m = (v_th - vd - mu_w) / scale
                    we = (syn[t, i] - mu_w) / scale
                    if m <= we:
                        p = 1.0
                    elif m <= 0.0:
                        p = 1.0
                        flagged += 1
                    else:
                        p = exp(-2.0 * m * (m - we))
                    if uniforms[t, i] < p:
                        added += 1
                        spikes[t, i] = 1
                        v[i] = v_r
                        continue
                spikes[t, i] = 0
                v[i] = x
    return added, flagged


def scan_permutation(double[::1] v, const double[:, ::1] syn, const double[:, ::1] weights,
                     const int64_t[::1] indptr, const int32_t[::1] indices, double drive,
                     double alpha, double v_th, double v_r, const double[:, ::1] uniforms,
                     unsigned char[:, ::1] spikes, v_pre):
    import numpy as np
    cdef Py_ssize_t n_t = syn.shape[0], n = syn.shape[1], t, i, pos, j, lo, n_act
    cdef double x, vd, reach, acc, r, picked
    cdef uint64_t state
    cdef long added = 0
    cdef bint hit
    cdef Py_ssize_t max_act = 0
    for t in range(n_t):
        if indptr[t + 1] - indptr[t] > max_act:
            max_act = indptr[t + 1] - indptr[t]
    cdef double[::1] buf = np.empty(max(max_act, 1), dtype=np.float64)
    cdef double[:, ::1] vp
    cdef bint rec = v_pre is not None
    if rec:
        vp = v_pre
    with nogil:
        for t in range(n_t):
            lo = indptr[t]
            n_act = indptr[t + 1] - lo
            for i in range(n):
                x = alpha * v[i] + drive + syn[t, i]
                if rec:
                    vp[t, i] = x
                if x >= v_th:
                    spikes[t, i] = 1
                    v[i] = v_r
                    continue
                hit = False
                if n_act > 0:
                    vd = alpha * v[i] + drive
                    reach = 0.0
                    for pos in range(n_act):
                        buf[pos] = weights[i, indices[lo + pos]]
                        if buf[pos] > 0.0:
                            reach = reach + buf[pos]
                        else:
                            reach = reach + 0.0
                    if vd + reach >= v_th:
                        state = <uint64_t>(uniforms[t, i] * _TWO53)
                        acc = 0.0
                        for pos in range(n_act):
                            state = state + <uint64_t>0x9E3779B97F4A7C15ULL
                            r = <double>(_mix64(state) >> 11) * (1.0 / _TWO53)
                            j = pos + <Py_ssize_t>(r * <double>(n_act - pos))
                            picked = buf[j]
                            buf[j] = buf[pos]
                            buf[pos] = picked
                            acc = acc + picked
                            if vd + acc >= v_th:
                                hit = True
                                break
                if hit:
                    added += 1
                    spikes[t, i] = 1
                    v[i] = v_r
                else:
                    spikes[t, i] = 0
                    v[i] = x
    return added, 0


def reverse_leaky_sum(const double[:, ::1] x, double alpha, double[:, ::1] out):
    cdef Py_ssize_t n_t = x.shape[0], n = x.shape[1], t, i
    with nogil:
        for i in range(n):
            out[n_t - 1, i] = 0.0
        for t in range(n_t - 2, -1, -1):
            for i in range(n):
                out[t, i] = x[t + 1, i] + alpha * out[t + 1, i]

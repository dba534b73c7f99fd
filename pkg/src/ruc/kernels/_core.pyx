# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rolling and cross-sectional kernels.

All functions take C-contiguous float64 (time x entity) arrays, treat NaN as
missing and return a new array. A rolling output cell is NaN unless the full
trailing window is present.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, NAN, isnan
from libc.stdlib cimport malloc, free
from libc.string cimport memmove

cnp.import_array()


cdef inline void _moments(const double[:, ::1] x, Py_ssize_t t, Py_ssize_t j, Py_ssize_t w,
                          double* mean, double* m2, bint* constant) noexcept nogil:
    # two-pass mean and centred sum of squares over rows t-w+1..t
    cdef Py_ssize_t k
    cdef double s = 0.0, d, acc = 0.0
    cdef double lo = x[t - w + 1, j], hi = lo, v
    for k in range(t - w + 1, t + 1):
        v = x[k, j]
        s += v
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    mean[0] = s / w
    for k in range(t - w + 1, t + 1):
        d = x[k, j] - mean[0]
        acc += d * d
    m2[0] = acc
    constant[0] = lo == hi


def _check(x, w):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a (time x entity) array")
    if w < 1:
        raise ValueError("window must be >= 1")
    return x


cdef enum Stat:
    MEAN, SUM, STD, SKEW, ZSCORE, IR, MIN, MAX, ARGMAX, ARGMIN, RANK, DECAY


cdef void _rolling_stat(const double[:, ::1] x, double[:, ::1] out, Py_ssize_t w,
                        int stat) noexcept nogil:
    cdef Py_ssize_t T = x.shape[0], N = x.shape[1], t, j, k
    cdef Py_ssize_t last_nan, best
    cdef double mean, m2, m3, d, v, cur, less, ties, r, norm, sd, g1
    cdef bint constant
    for j in range(N):
        last_nan = -1
        for t in range(T):
            if isnan(x[t, j]):
                last_nan = t
            if t < w - 1 or last_nan > t - w:
                out[t, j] = NAN
                continue
            if stat == MEAN or stat == SUM:
                d = 0.0
                for k in range(t - w + 1, t + 1):
                    d += x[k, j]
                out[t, j] = d / w if stat == MEAN else d
            elif stat == STD or stat == ZSCORE or stat == IR:
                if w < 2:
                    out[t, j] = NAN
                    continue
                _moments(x, t, j, w, &mean, &m2, &constant)
                if constant:
                    out[t, j] = 0.0 if stat == STD else NAN
                    continue
                sd = sqrt(m2 / (w - 1))
                if stat == STD:
                    out[t, j] = sd
                elif stat == ZSCORE:
                    out[t, j] = (x[t, j] - mean) / sd
                else:
                    out[t, j] = mean / sd
            elif stat == SKEW:
                if w < 3:
                    out[t, j] = NAN
                    continue
                _moments(x, t, j, w, &mean, &m2, &constant)
                if constant:
                    out[t, j] = NAN
                    continue
                m3 = 0.0
                for k in range(t - w + 1, t + 1):
                    d = x[k, j] - mean
                    m3 += d * d * d
                m2 = m2 / w
                m3 = m3 / w
                g1 = m3 / (m2 * sqrt(m2))
                out[t, j] = g1 * sqrt(<double>w * (w - 1)) / (w - 2)
            elif stat == MIN or stat == MAX or stat == ARGMAX or stat == ARGMIN:
                best = t
                cur = x[t, j]
                # scan newest to oldest so ties resolve to the most recent row
                k = t - 1
                while k >= t - w + 1:
                    v = x[k, j]
                    if ((stat == MAX or stat == ARGMAX) and v > cur) or \
                       ((stat == MIN or stat == ARGMIN) and v < cur):
                        cur = v
                        best = k
                    k -= 1
                if stat == MIN or stat == MAX:
                    out[t, j] = cur
                else:
                    out[t, j] = <double>(t - best)
            elif stat == RANK:
                cur = x[t, j]
                less = 0.0
                ties = 0.0
                for k in range(t - w + 1, t):
                    v = x[k, j]
                    if v < cur:
                        less += 1.0
                    elif v == cur:
                        ties += 1.0
                out[t, j] = (less + 0.5 * ties) / w
            elif stat == DECAY:
                d = 0.0
                for k in range(w):
                    d += (w - k) * x[t - k, j]
                norm = w * (w + 1) / 2.0
                out[t, j] = d / norm


def _rolling(x, Py_ssize_t w, int stat):
    x = _check(x, w)
    out = np.empty_like(x)
    cdef const double[:, ::1] xv = x
    cdef double[:, ::1] ov = out
    with nogil:
        _rolling_stat(xv, ov, w, stat)
    return out


def rolling_mean(x, w):
    return _rolling(x, w, MEAN)


def rolling_sum(x, w):
    return _rolling(x, w, SUM)


def rolling_std(x, w):
    return _rolling(x, w, STD)


def rolling_skew(x, w):
    return _rolling(x, w, SKEW)


def rolling_zscore(x, w):
    return _rolling(x, w, ZSCORE)


def rolling_ir(x, w):
    return _rolling(x, w, IR)


def rolling_min(x, w):
    return _rolling(x, w, MIN)


def rolling_max(x, w):
    return _rolling(x, w, MAX)


def rolling_argmax(x, w):
    return _rolling(x, w, ARGMAX)


def rolling_argmin(x, w):
    return _rolling(x, w, ARGMIN)


def rolling_rank(x, w):
    return _rolling(x, w, RANK)


def rolling_decay_linear(x, w):
    return _rolling(x, w, DECAY)


def rolling_delta(x, Py_ssize_t w):
    x = _check(x, w)
    out = np.empty_like(x)
    cdef const double[:, ::1] xv = x
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t T = x.shape[0], N = x.shape[1], t, j
    with nogil:
        for j in range(N):
            for t in range(T):
                if t < w:
                    ov[t, j] = NAN
                else:
                    ov[t, j] = xv[t, j] - xv[t - w, j]
    return out


cdef inline Py_ssize_t _lower_bound(double* buf, Py_ssize_t n, double v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if buf[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def rolling_median(x, Py_ssize_t w):
    x = _check(x, w)
    out = np.empty_like(x)
    cdef const double[:, ::1] xv = x
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t T = x.shape[0], N = x.shape[1], t, j, n, pos, last_nan
    cdef double v
    cdef double* buf = <double*> malloc(w * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for j in range(N):
                n = 0
                last_nan = -1
                for t in range(T):
                    if t >= w:
                        v = xv[t - w, j]
                        if not isnan(v):
                            pos = _lower_bound(buf, n, v)
                            memmove(buf + pos, buf + pos + 1, (n - pos - 1) * sizeof(double))
                            n -= 1
                    v = xv[t, j]
                    if isnan(v):
                        last_nan = t
                    else:
                        pos = _lower_bound(buf, n, v)
                        memmove(buf + pos + 1, buf + pos, (n - pos) * sizeof(double))
                        buf[pos] = v
                        n += 1
                    if t < w - 1 or last_nan > t - w:
                        ov[t, j] = NAN
                    elif w % 2 == 1:
                        ov[t, j] = buf[w // 2]
                    else:
                        ov[t, j] = 0.5 * (buf[w // 2 - 1] + buf[w // 2])
    finally:
        free(buf)
    return out


cdef enum Pair:
    CORR, COV, REGRESSION


cdef void _rolling_pair(const double[:, ::1] y, const double[:, ::1] x, double[:, ::1] out,
                        Py_ssize_t w, int kind) noexcept nogil:
    cdef Py_ssize_t T = x.shape[0], N = x.shape[1], t, j, k, last_nan
    cdef double mx, my, sxx, syy, sxy, dx, dy, r
    cdef double xlo, xhi, ylo, yhi
    for j in range(N):
        last_nan = -1
        for t in range(T):
            if isnan(x[t, j]) or isnan(y[t, j]):
                last_nan = t
            if t < w - 1 or last_nan > t - w or w < 2:
                out[t, j] = NAN
                continue
            mx = 0.0
            my = 0.0
            xlo = x[t, j]
            xhi = xlo
            ylo = y[t, j]
            yhi = ylo
            for k in range(t - w + 1, t + 1):
                mx += x[k, j]
                my += y[k, j]
                if x[k, j] < xlo:
                    xlo = x[k, j]
                if x[k, j] > xhi:
                    xhi = x[k, j]
                if y[k, j] < ylo:
                    ylo = y[k, j]
                if y[k, j] > yhi:
                    yhi = y[k, j]
            mx /= w
            my /= w
            sxx = 0.0
            syy = 0.0
            sxy = 0.0
            for k in range(t - w + 1, t + 1):
                dx = x[k, j] - mx
                dy = y[k, j] - my
                sxx += dx * dx
                syy += dy * dy
                sxy += dx * dy
            if kind == COV:
                out[t, j] = sxy / (w - 1)
            elif kind == CORR:
                if xlo == xhi or ylo == yhi:
                    out[t, j] = NAN
                else:
                    r = sxy / sqrt(sxx * syy)
                    if r > 1.0:
                        r = 1.0
                    elif r < -1.0:
                        r = -1.0
                    out[t, j] = r
            else:
                if xlo == xhi:
                    out[t, j] = NAN
                else:
                    out[t, j] = my + (sxy / sxx) * (x[t, j] - mx)


def _pair(a, b, Py_ssize_t w, int kind):
    a = _check(a, w)
    b = _check(b, w)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    out = np.empty_like(a)
    cdef const double[:, ::1] av = a
    cdef const double[:, ::1] bv = b
    cdef double[:, ::1] ov = out
    with nogil:
        _rolling_pair(av, bv, ov, w, kind)
    return out


def rolling_corr(x, y, w):
    return _pair(y, x, w, CORR)


def rolling_cov(x, y, w):
    return _pair(y, x, w, COV)


def rolling_regression(y, x, w):
    """Fitted value at the last row of a trailing-window OLS of y on x."""
    return _pair(y, x, w, REGRESSION)


def cs_rank(x):
    x = _check(x, 1)
    out = np.empty_like(x)
    cdef const double[:, ::1] xv = x
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t T = x.shape[0], N = x.shape[1], t, i, k, nv
    cdef double less, ties, v
    with nogil:
        for t in range(T):
            nv = 0
            for i in range(N):
                if not isnan(xv[t, i]):
                    nv += 1
            for i in range(N):
                v = xv[t, i]
                if isnan(v) or nv < 2:
                    ov[t, i] = NAN
                    continue
                less = 0.0
                ties = 0.0
                for k in range(N):
                    if k == i or isnan(xv[t, k]):
                        continue
                    if xv[t, k] < v:
                        less += 1.0
                    elif xv[t, k] == v:
                        ties += 1.0
                # average rank minus one is less + ties / 2
                ov[t, i] = (less + 0.5 * ties) / (nv - 1)
    return out


cdef void _cs_center(const double[:, ::1] x, double[:, ::1] out, bint scale) noexcept nogil:
    cdef Py_ssize_t T = x.shape[0], N = x.shape[1], t, i, nv
    cdef double s, m, acc, d, sd, lo, hi
    cdef bint first
    for t in range(T):
        nv = 0
        s = 0.0
        first = True
        lo = 0.0
        hi = 0.0
        for i in range(N):
            if not isnan(x[t, i]):
                nv += 1
                s += x[t, i]
                if first or x[t, i] < lo:
                    lo = x[t, i]
                if first or x[t, i] > hi:
                    hi = x[t, i]
                first = False
        if nv < 2 or (scale and lo == hi):
            for i in range(N):
                out[t, i] = NAN
            continue
        m = s / nv
        sd = 1.0
        if scale:
            acc = 0.0
            for i in range(N):
                if not isnan(x[t, i]):
                    d = x[t, i] - m
                    acc += d * d
            sd = sqrt(acc / (nv - 1))
        for i in range(N):
            out[t, i] = (x[t, i] - m) / sd


def cs_zscore(x):
    x = _check(x, 1)
    out = np.empty_like(x)
    cdef const double[:, ::1] xv = x
    cdef double[:, ::1] ov = out
    with nogil:
        _cs_center(xv, ov, True)
    return out


def cs_demean(x):
    x = _check(x, 1)
    out = np.empty_like(x)
    cdef const double[:, ::1] xv = x
    cdef double[:, ::1] ov = out
    with nogil:
        _cs_center(xv, ov, False)
    return out

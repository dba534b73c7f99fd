"""Pure numpy implementation of the kernel API.

Used when the compiled extension is unavailable or ``RUC_PURE_PYTHON=1``.
Results agree with the compiled kernels to floating-point rounding.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _check(x, w):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a (time x entity) array")
    if w < 1:
        raise ValueError("window must be >= 1")
    return x


def _windows(x, w):
    """(T-w+1, N, w) view plus a mask of windows that contain no NaN."""
    win = sliding_window_view(x, w, axis=0)
    full = ~np.isnan(win).any(axis=-1)
    return win, full


def _place(x, w, body, full):
    out = np.full_like(x, np.nan)
    if x.shape[0] >= w:
        out[w - 1:] = np.where(full, body, np.nan)
    return out


def _apply(x, w, fn):
    x = _check(x, w)
    if x.shape[0] < w:
        return np.full_like(x, np.nan)
    win, full = _windows(x, w)
    with np.errstate(all="ignore"):
        body = fn(win, x[w - 1:])
    return _place(x, w, body, full)


def _constant(win):
    return win.min(axis=-1) == win.max(axis=-1)


def _centred(win):
    mean = win.sum(axis=-1) / win.shape[-1]
    dev = win - mean[..., None]
    return mean, dev


def rolling_mean(x, w):
    return _apply(x, w, lambda win, cur: win.sum(axis=-1) / w)


def rolling_sum(x, w):
    return _apply(x, w, lambda win, cur: win.sum(axis=-1))


def _std_family(x, w, kind):
    def fn(win, cur):
        if w < 2:
            return np.full(win.shape[:-1], np.nan)
        mean, dev = _centred(win)
        sd = np.sqrt((dev * dev).sum(axis=-1) / (w - 1))
        const = _constant(win)
        if kind == "std":
            return np.where(const, 0.0, sd)
        val = (cur - mean) / sd if kind == "zscore" else mean / sd
        return np.where(const, np.nan, val)
    return _apply(x, w, fn)


def rolling_std(x, w):
    return _std_family(x, w, "std")


def rolling_zscore(x, w):
    return _std_family(x, w, "zscore")


def rolling_ir(x, w):
    return _std_family(x, w, "ir")


def rolling_skew(x, w):
    def fn(win, cur):
        if w < 3:
            return np.full(win.shape[:-1], np.nan)
        _, dev = _centred(win)
        m2 = (dev * dev).sum(axis=-1) / w
        m3 = (dev * dev * dev).sum(axis=-1) / w
        g1 = m3 / (m2 * np.sqrt(m2))
        return np.where(_constant(win), np.nan, g1 * np.sqrt(w * (w - 1.0)) / (w - 2))
    return _apply(x, w, fn)


def rolling_min(x, w):
    return _apply(x, w, lambda win, cur: win.min(axis=-1))


def rolling_max(x, w):
    return _apply(x, w, lambda win, cur: win.max(axis=-1))


def _steps_since(win, pick):
    # reversed so argmax/argmin (first hit) resolves ties to the most recent row
    return pick(win[..., ::-1], axis=-1).astype(np.float64)


def rolling_argmax(x, w):
    return _apply(x, w, lambda win, cur: _steps_since(win, np.argmax))


def rolling_argmin(x, w):
    return _apply(x, w, lambda win, cur: _steps_since(win, np.argmin))


def rolling_median(x, w):
    return _apply(x, w, lambda win, cur: np.median(win, axis=-1))


def rolling_rank(x, w):
    def fn(win, cur):
        past = win[..., :-1]
        less = (past < cur[..., None]).sum(axis=-1)
        ties = (past == cur[..., None]).sum(axis=-1)
        return (less + 0.5 * ties) / w
    return _apply(x, w, fn)


def rolling_decay_linear(x, w):
    weights = np.arange(1, w + 1, dtype=np.float64)
    return _apply(x, w, lambda win, cur: (win * weights).sum(axis=-1) / (w * (w + 1) / 2.0))


def rolling_delta(x, w):
    x = _check(x, w)
    out = np.full_like(x, np.nan)
    out[w:] = x[w:] - x[:-w]
    return out


def _pair(y, x, w, kind):
    x = _check(x, w)
    y = _check(y, w)
    if x.shape != y.shape:
        raise ValueError("shape mismatch")
    if x.shape[0] < w or w < 2:
        return np.full_like(x, np.nan)
    wx, fx = _windows(x, w)
    wy, fy = _windows(y, w)
    with np.errstate(all="ignore"):
        mx, dx = _centred(wx)
        my, dy = _centred(wy)
        sxx = (dx * dx).sum(axis=-1)
        syy = (dy * dy).sum(axis=-1)
        sxy = (dx * dy).sum(axis=-1)
        cx, cy = _constant(wx), _constant(wy)
        if kind == "cov":
            body = sxy / (w - 1)
        elif kind == "corr":
            body = np.where(cx | cy, np.nan, np.clip(sxy / np.sqrt(sxx * syy), -1.0, 1.0))
        else:
            body = np.where(cx, np.nan, my + (sxy / sxx) * (x[w - 1:] - mx))
    return _place(x, w, body, fx & fy)


def rolling_corr(x, y, w):
    return _pair(y, x, w, "corr")


def rolling_cov(x, y, w):
    return _pair(y, x, w, "cov")


def rolling_regression(y, x, w):
    """Fitted value at the last row of a trailing-window OLS of y on x."""
    return _pair(y, x, w, "regression")


def cs_rank(x):
    x = _check(x, 1)
    valid = ~np.isnan(x)
    nv = valid.sum(axis=1, keepdims=True)
    a = x[:, :, None]
    b = x[:, None, :]
    less = (b < a).sum(axis=2)
    ties = (b == a).sum(axis=2) - 1
    with np.errstate(all="ignore"):
        out = (less + 0.5 * ties) / (nv - 1)
    return np.where(valid & (nv >= 2), out, np.nan)


def _cs_center(x, scale):
    x = _check(x, 1)
    valid = ~np.isnan(x)
    nv = valid.sum(axis=1, keepdims=True)
    with np.errstate(all="ignore"):
        mean = np.where(valid, x, 0.0).sum(axis=1, keepdims=True) / nv
        out = x - mean
        bad = nv < 2
        if scale:
            dev = np.where(valid, out, 0.0)
            sd = np.sqrt((dev * dev).sum(axis=1, keepdims=True) / (nv - 1))
            lo = np.where(valid, x, np.inf).min(axis=1, keepdims=True)
            hi = np.where(valid, x, -np.inf).max(axis=1, keepdims=True)
            out = out / sd
            bad = bad | (lo == hi)
    return np.where(bad, np.nan, out)


def cs_zscore(x):
    return _cs_center(x, True)


def cs_demean(x):
    return _cs_center(x, False)

"""Gaussian kernel (Nadaraya-Watson) smoothing of irregularly sampled series."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import LengthMismatch, NonFinite, NonMonotoneTime
from .validation import check_positive

_BLOCK_ELEMENTS = 1 << 22


def kernel_regression(support_t: np.ndarray, support_y: np.ndarray, query_t: np.ndarray,
                      bandwidth: float, truncation: float | None) -> np.ndarray:
    """Nadaraya-Watson estimate at ``query_t`` from sorted ``support_t``.

    Only support points with ``|q - t| <= truncation * bandwidth`` contribute.
    Queries with no support inside the window return NaN.
    """
    n = support_t.shape[0]
    out = np.full(query_t.shape[0], np.nan)
    if n == 0 or query_t.shape[0] == 0:
        return out
    if truncation is None:
        radius = np.inf
        lo = np.zeros(query_t.shape[0], dtype=np.intp)
        hi = np.full(query_t.shape[0], n, dtype=np.intp)
    else:
        radius = truncation * bandwidth
        slack = radius * 1e-9 + 1e-12
        lo = np.searchsorted(support_t, query_t - radius - slack, side="left")
        hi = np.searchsorted(support_t, query_t + radius + slack, side="right")
    width = int((hi - lo).max())
    if width == 0:
        return out
    inv = 1.0 / (2.0 * bandwidth * bandwidth)
    offsets = np.arange(width)
    rows = max(1, _BLOCK_ELEMENTS // width)
    for start in range(0, query_t.shape[0], rows):
        sl = slice(start, start + rows)
        idx = lo[sl, None] + offsets
        valid = idx < hi[sl, None]
        np.minimum(idx, n - 1, out=idx)
        d = query_t[sl, None] - support_t[idx]
        valid &= np.abs(d) <= radius
        w = np.where(valid, np.exp(-(d * d) * inv), 0.0)
        den = w.sum(axis=1)
        num = (w * support_y[idx]).sum(axis=1)
        ok = den > 0
        out[sl][ok] = num[ok] / den[ok]
    return out


def gaussian_smooth(timestamps, values, bandwidth: float = 1.0, truncation: float | None = 4.0) -> np.ndarray:
    """Smooth ``values`` observed at strictly increasing ``timestamps``.

    Each output is a Gaussian-weighted average of the inputs within
    ``truncation * bandwidth`` seconds, so it always stays inside the range
    of the raw values.

    >>> gaussian_smooth([0.0, 1.0, 2.0], [0.0, 1.0, 0.0], bandwidth=1.0).round(5)
    array([0.34821, 0.45186, 0.34821])
    """
    t = np.asarray(timestamps, dtype=np.float64).ravel()
    y = np.asarray(values, dtype=np.float64).ravel()
    if t.shape != y.shape:
        raise LengthMismatch(f"{t.size} timestamps but {y.size} values")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise NonFinite("timestamps and values must be finite")
    check_positive(bandwidth, "bandwidth")
    if truncation is not None:
        check_positive(truncation, "truncation")
    if t.size > 1 and not np.all(np.diff(t) > 0):
        bad = int(np.flatnonzero(np.diff(t) <= 0)[0]) + 1
        raise NonMonotoneTime(f"timestamps must be strictly increasing (index {bad})")
    return kernel_regression(t, y, t, float(bandwidth), truncation)


class GaussianKernelSmoother(RegressorMixin, BaseEstimator):
    """Nadaraya-Watson regressor of a value on time.

    ``fit(t, y)`` stores the observations; ``predict(t_new)`` evaluates the
    Gaussian-weighted average at arbitrary times. Predicting at the fitted
    timestamps reproduces :func:`gaussian_smooth`.
    """

    def __init__(self, bandwidth=1.0, truncation=4.0):
        self.bandwidth = bandwidth
        self.truncation = truncation

    def fit(self, X, y):
        t = np.asarray(X, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        if t.shape != y.shape:
            raise LengthMismatch(f"{t.size} timestamps but {y.size} values")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise NonFinite("timestamps and values must be finite")
        check_positive(self.bandwidth, "bandwidth")
        order = np.argsort(t, kind="stable")
        self.t_, self.y_ = t[order], y[order]
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "t_")
        q = np.asarray(X, dtype=np.float64).ravel()
        return kernel_regression(self.t_, self.y_, q, float(self.bandwidth), self.truncation)

"""Trimmed l1 penalty and the operators used by the block-coordinate solver.

The trimmed l1 penalty of a vector ``theta`` with trim count ``h`` is the sum
of its ``p - h`` smallest absolute entries.  Writing it as a minimum over
weights ``w`` in the capped simplex

    S = {w in [0, 1]^p : sum(w) = p - h}

gives the joint objective ``L(theta) + lam * <w, |theta|>`` minimized by the
solvers in :mod:`trimreg.bcd`.

Ordering ties between equal magnitudes are broken by index: the lower index
is ranked larger, so it is trimmed first.

The ``_``-prefixed functions are numba kernels shared with the compiled
solver loops; the public functions validate their inputs and call them.
"""

import numpy as np
from numba import njit

__all__ = [
    "trimmed_l1",
    "top_h_sum",
    "optimal_weights",
    "project_capped_simplex",
    "prox_weighted_l1",
    "min_norm_theta_subgradient",
    "min_norm_weight_subgradient",
    "check_weights",
]

# Feasibility tolerance for weight vectors.
WEIGHT_TOL = 1e-9


def _as_vector(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


def _check_h(h, p):
    if int(h) != h or not 0 <= h <= p:
        raise ValueError(f"trim count h={h} outside [0, {p}]")
    return int(h)


@njit(cache=True)
def _descending_order(a):
    # stable sort of -a keeps lower indices first among ties
    return np.argsort(-a, kind="mergesort")


@njit(cache=True)
def _trimmed_l1(a, h):
    m = a.size - h
    if m <= 0:
        return 0.0
    if h == 0:
        return a.sum()
    # ties do not change the sum, so a selection suffices
    return np.partition(a, m - 1)[:m].sum()


@njit(cache=True)
def _optimal_weights(a, h):
    w = np.ones(a.size)
    order = _descending_order(a)
    for j in range(h):
        w[order[j]] = 0.0
    return w


@njit(cache=True)
def _top_h_signs(theta, h):
    s = np.zeros(theta.size)
    order = _descending_order(np.abs(theta))
    for j in range(h):
        s[order[j]] = np.sign(theta[order[j]])
    return s


@njit(cache=True)
def _project_capped_simplex(z, total):
    p = z.size
    if total >= p:
        return np.ones(p)
    if total <= 0.0:
        return np.zeros(p)
    # f(mu) = sum clip(z - mu, 0, 1) is non-increasing and piecewise linear,
    # with f(lo) = p > total and f(hi) = 0 < total.  Newton steps on the free
    # set, safeguarded by bisection, land on the exact root in a few passes.
    lo = z.min() - 1.0
    hi = z.max()
    mu = (z.sum() - total) / p
    if not lo < mu < hi:
        mu = 0.5 * (lo + hi)
    for _ in range(200):
        n_free = 0
        free_sum = 0.0
        n_ones = 0
        for i in range(p):
            v = z[i] - mu
            if v >= 1.0:
                n_ones += 1
            elif v > 0.0:
                n_free += 1
                free_sum += z[i]
        f = n_ones + free_sum - n_free * mu
        if f == total:
            break
        if f > total:
            lo = mu
        else:
            hi = mu
        if n_free > 0:
            nxt = (free_sum - (total - n_ones)) / n_free
            if nxt == mu:
                break
        else:
            nxt = 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
            if nxt <= lo or nxt >= hi:
                break
        mu = nxt
    w = np.empty(p)
    for i in range(p):
        w[i] = min(max(z[i] - mu, 0.0), 1.0)
    return w


@njit(cache=True)
def _soft_threshold(z, thresh):
    out = np.empty(z.size)
    for j in range(z.size):
        m = abs(z[j]) - thresh[j]
        out[j] = np.sign(z[j]) * m if m > 0.0 else 0.0
    return out


@njit(cache=True)
def _min_norm_theta_subgradient(grad, theta, w, lam):
    u = np.empty(grad.size)
    for j in range(grad.size):
        t = lam * w[j]
        if theta[j] != 0.0:
            u[j] = grad[j] + t * np.sign(theta[j])
        else:
            m = abs(grad[j]) - t
            u[j] = np.sign(grad[j]) * m if m > 0.0 else 0.0
    return u


@njit(cache=True)
def _weight_residual(a, w, mu):
    # min-norm element of a + mu*1 + N_[0,1]^p(w), coordinatewise
    v = np.empty(a.size)
    for i in range(a.size):
        s = a[i] + mu
        if w[i] <= 0.0:
            v[i] = min(0.0, s)
        elif w[i] >= 1.0:
            v[i] = max(0.0, s)
        else:
            v[i] = s
    return v


@njit(cache=True)
def _weight_multiplier(a, w):
    """Minimizer over mu of sum_i phi_i(a_i + mu), for ``a >= 0``.

    The derivative D(mu) is piecewise linear and non-decreasing.  Interior
    coordinates are always active; a coordinate with w_i = 0 is active while
    a_i + mu < 0, one with w_i = 1 while a_i + mu > 0.  Where D has zero
    slope every coordinate is inactive and the residual vanishes, so any
    root will do.
    """
    p = a.size
    lo = -a.max() - 1.0  # D(lo) <= 0
    hi = -a.min() + 1.0  # D(hi) >= 0
    mu = 0.5 * (lo + hi)
    for _ in range(200):
        slope = 0
        offset = 0.0
        for i in range(p):
            s = a[i] + mu
            if (0.0 < w[i] < 1.0) or (w[i] <= 0.0 and s < 0.0) or (w[i] >= 1.0 and s > 0.0):
                slope += 1
                offset += a[i]
        D = offset + slope * mu
        if D == 0.0:
            break
        if D < 0.0:
            lo = mu
        else:
            hi = mu
        if slope > 0:
            nxt = -offset / slope
            if nxt == mu:
                break
        else:
            nxt = 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
            if nxt <= lo or nxt >= hi:
                break
        mu = nxt
    return mu


@njit(cache=True)
def _min_norm_weight_subgradient(a, w):
    mu = _weight_multiplier(a, w)
    return _weight_residual(a, w, mu)


@njit(cache=True)
def _stationarity(grad, theta, w_full, lam, r, w):
    """Squared norm of the min-norm joint subgradient.

    ``w_full`` weights each entry of ``theta``; ``r`` and ``w`` are the
    per-group magnitudes and weights of the trimming block.
    """
    u = _min_norm_theta_subgradient(grad, theta, w_full, lam)
    v = _min_norm_weight_subgradient(lam * r, w)
    return np.dot(u, u) + np.dot(v, v)


def check_weights(w, h, tol=WEIGHT_TOL):
    """Raise ``ValueError`` unless ``w`` lies in the capped simplex for ``h``."""
    w = _as_vector(w, "w")
    p = w.size
    if not 0 <= h <= p:
        raise ValueError(f"trim count h={h} outside [0, {p}]")
    if w.min() < -tol or w.max() > 1 + tol:
        raise ValueError("weights must lie in [0, 1]")
    if abs(w.sum() - (p - h)) > tol * max(1.0, p):
        raise ValueError(f"weights sum to {w.sum():.12g}, expected p - h = {p - h}")
    return w


def trimmed_l1(theta, h):
    """Sum of the ``p - h`` smallest absolute entries of ``theta``.

    Examples
    --------
    >>> trimmed_l1([3.0, -1.0, 2.0], 1)
    3.0
    """
    theta = _as_vector(theta, "theta")
    h = _check_h(h, theta.size)
    return float(_trimmed_l1(np.abs(theta), h))


def top_h_sum(theta, h):
    """Sum of the ``h`` largest absolute entries (the concave part, negated)."""
    theta = _as_vector(theta, "theta")
    h = _check_h(h, theta.size)
    return float(np.abs(theta).sum() - _trimmed_l1(np.abs(theta), h))


def optimal_weights(theta, h):
    """Binary minimizer of ``<w, |theta|>`` over the capped simplex.

    Zeros sit on the ``h`` largest-magnitude entries (lower index first on
    ties) and ones elsewhere.
    """
    theta = _as_vector(theta, "theta")
    h = _check_h(h, theta.size)
    return _optimal_weights(np.abs(theta), h)


def project_capped_simplex(z, h):
    """Euclidean projection of ``z`` onto ``{w in [0,1]^p : sum(w) = p - h}``.

    The solution has the form ``clip(z - mu, 0, 1)``; ``mu`` is found by
    bisection-safeguarded Newton steps on ``[min(z) - 1, max(z)]``, each of
    which solves exactly on the current free set.
    """
    z = _as_vector(z, "z")
    p = z.size
    if not 0 <= h <= p:
        raise ValueError(f"trim count h={h} outside [0, {p}]")
    return _project_capped_simplex(z, float(p - h))


def prox_weighted_l1(z, w, t):
    """Weighted soft thresholding, the prox of ``t * sum_j w_j |theta_j|``."""
    z = _as_vector(z, "z")
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), z.shape)
    if t <= 0:
        raise ValueError("step t must be positive")
    if w.min() < 0:
        raise ValueError("weights must be non-negative")
    return _soft_threshold(z, t * np.ascontiguousarray(w))


def min_norm_theta_subgradient(grad, theta, w, lam):
    """Minimum-norm element of ``grad + lam * sum_j w_j * d|theta_j|``."""
    grad = _as_vector(grad, "grad")
    theta = _as_vector(theta, "theta")
    w = _as_vector(w, "w")
    if not grad.size == theta.size == w.size:
        raise ValueError("grad, theta and w must have the same length")
    return _min_norm_theta_subgradient(grad, theta, w, float(lam))


def min_norm_weight_subgradient(a, w):
    """Minimum-norm element of ``a + N_S(w)`` for a feasible weight vector.

    ``a`` is the partial gradient in ``w`` (``lam * |theta|`` for the trimmed
    l1 penalty).  The multiplier of the sum constraint is found exactly by
    sweeping the sorted breakpoints of a convex piecewise quadratic.
    """
    a = _as_vector(a, "a")
    w = _as_vector(w, "w")
    if a.size != w.size:
        raise ValueError("a and w must have the same length")
    return _min_norm_weight_subgradient(a, w)

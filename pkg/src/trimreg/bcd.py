"""Block coordinate descent over the parameter and the trimming weights.

Each iteration takes a projected gradient step in the weights followed by
a proximal gradient step in the parameter::

    w     <- proj_S(w - tau * r(theta))
    theta <- prox_{eta * lam * <w, |.|>}(theta - eta * grad L(theta))

with ``r(theta) = |theta|`` and ``S`` the capped simplex.  With
``eta = 1/L_f`` the joint objective decreases by at least

    G_k = (L_f / 2) ||theta_{k+1} - theta_k||^2 + (lam / tau) ||w_{k+1} - w_k||^2

per iteration, which :func:`descent_certificate` checks on a finished trace.
"""

import numpy as np
from numba import njit

from .losses import LeastSquaresLoss, _gram_product
from .penalty import (
    _min_norm_theta_subgradient,
    _min_norm_weight_subgradient,
    _optimal_weights,
    _project_capped_simplex,
    _soft_threshold,
    _trimmed_l1,
)
from .problem import (
    BcdConfig,
    DivergenceError,
    SolverTrace,
    TrimmedProblem,
    _check_group_weights,
    _Recorder,
    prox_gradient_step,
    weighted_prox,
)

__all__ = [
    "solve_bcd",
    "stationarity_T",
    "descent_certificate",
    "rate_bound",
    "initial_weights",
]

STATUS_CODES = {0: "Stationary", 1: "MaxIters", 2: "ObjectivePlateau"}


def initial_weights(problem, theta):
    """Binary weights trimming the ``h`` largest groups of ``theta``."""
    return _optimal_weights(problem.layout.magnitudes(theta), problem.group_trim)


def stationarity_T(problem, theta, w):
    """Squared distance of the joint subdifferential from zero at ``(theta, w)``.

    Raises ``ValueError`` if ``w`` is not feasible for the problem's trim count.
    """
    return problem.stationarity(np.asarray(theta, dtype=np.float64), w)


@njit(cache=True)
def _stationarity_ls(grad, theta, w, lam):
    u = _min_norm_theta_subgradient(grad, theta, w, lam)
    v = _min_norm_weight_subgradient(lam * np.abs(theta), w)
    return np.dot(u, u) + np.dot(v, v)


@njit(cache=True)
def _bcd_least_squares(G, b, c, lam, h, theta0, w0, L, eta, tau, exact_w,
                       max_iters, tol_T, tol_obj, patience):
    p = theta0.size
    total = float(p - h)
    theta = theta0.copy()
    w = w0.copy()
    F = np.empty(max_iters + 1)
    Ftrim = np.empty(max_iters + 1)
    T = np.empty(max_iters + 1)
    Gk = np.empty(max_iters)
    dth = np.empty(max_iters)
    dws = np.empty(max_iters)

    g = _gram_product(G, theta)
    val = theta @ g - 2.0 * (b @ theta) + c
    grad = 2.0 * (g - b)
    a = np.abs(theta)
    F[0] = val + lam * (w @ a)
    Ftrim[0] = val + lam * _trimmed_l1(a, h)
    T[0] = _stationarity_ls(grad, theta, w, lam)
    status = 1
    flat = 0
    k = 0
    thresh = np.empty(p)
    while k < max_iters:
        if exact_w:
            w_new = _optimal_weights(a, h)
        else:
            w_new = _project_capped_simplex(w - tau * a, total)
        for j in range(p):
            thresh[j] = eta * lam * w_new[j]
        theta_new = _soft_threshold(theta - eta * grad, thresh)

        g = _gram_product(G, theta_new)
        val = theta_new @ g - 2.0 * (b @ theta_new) + c
        grad = 2.0 * (g - b)
        a = np.abs(theta_new)
        F[k + 1] = val + lam * (w_new @ a)
        Ftrim[k + 1] = val + lam * _trimmed_l1(a, h)
        d = theta_new - theta
        e = w_new - w
        dth[k] = np.sqrt(d @ d)
        dws[k] = np.sqrt(e @ e)
        Gk[k] = 0.5 * L * (d @ d) + (lam / tau) * (e @ e)
        T[k + 1] = _stationarity_ls(grad, theta_new, w_new, lam)
        theta = theta_new
        w = w_new
        k += 1
        if not np.isfinite(F[k]):
            status = -1
            break
        if T[k] <= tol_T:
            status = 0
            break
        if abs(F[k - 1] - F[k]) < tol_obj:
            flat += 1
            if flat >= patience:
                status = 2
                break
        else:
            flat = 0
    return theta, w, F[: k + 1], Ftrim[: k + 1], T[: k + 1], Gk[:k], dth[:k], dws[:k], status


def _step_size(config, L):
    return 1.0 / L if config.eta == "auto" else float(config.eta)


def _solve_bcd_compiled(problem, theta0, w0, config):
    loss = problem.loss
    L = loss.lipschitz_estimate(config.seed)
    eta = _step_size(config, L)
    tau = config.tau_for(problem.lam)
    theta, w, F, Ftrim, T, Gk, dth, dws, status = _bcd_least_squares(
        loss.gram, loss.xty, loss.yty, problem.lam, problem.h,
        np.ascontiguousarray(theta0), np.ascontiguousarray(w0), L, eta, tau,
        config.w_update == "exact_minimize", config.max_iters,
        config.tol_stationarity, config.tol_objective, config.patience,
    )
    K = Gk.size
    trace = SolverTrace(
        method="trimmed-bcd", lam=problem.lam, h=problem.h, tau=tau,
        objective=F, trimmed_objective=Ftrim, T=T, G=Gk,
        step=np.full(K, eta), lipschitz=np.full(K, L), dtheta=dth, dw=dws,
    )
    if status < 0:
        trace.status = "Diverged"
        raise DivergenceError("non-finite objective in block coordinate descent", trace)
    trace.status = STATUS_CODES[status]
    return theta, w, trace


def _solve_bcd_generic(problem, theta0, w0, config):
    loss, lay, lam = problem.loss, problem.layout, problem.lam
    tau = config.tau_for(lam)
    fixed_L = isinstance(loss, LeastSquaresLoss)
    theta, w = theta0.copy(), w0.copy()
    val, grad = loss.value_grad(theta)
    a = lay.magnitudes(theta)
    rec = _Recorder()
    rec.start(val + lam * float(w @ a), val + lam * _trimmed_l1(a, problem.group_trim),
              problem.stationarity(theta, w, grad))
    trace = SolverTrace(method="trimmed-bcd", lam=lam, h=problem.h, tau=tau)
    flat = 0
    status = "MaxIters"
    for _ in range(config.max_iters):
        if config.w_update == "exact_minimize":
            w_new = _optimal_weights(a, problem.group_trim)
        else:
            w_new = _project_capped_simplex(w - tau * a, problem.weight_total)
        L = loss.lipschitz_estimate(config.seed) if fixed_L else loss.local_lipschitz(theta)
        eta0 = _step_size(config, L)
        theta_new, val, grad_new, eta = prox_gradient_step(
            loss, lay, theta, val, grad, weighted_prox(lay, w_new, lam), eta0,
            backtrack=not fixed_L,
        )
        # with backtracking the accepted step defines the curvature used in G_k
        L_used = L if fixed_L else 1.0 / eta
        a = lay.magnitudes(theta_new)
        F = val + lam * float(w_new @ a)
        d = lay.flat(theta_new - theta)
        e = w_new - w
        T = problem.stationarity(theta_new, w_new, grad_new)
        rec.step(F, val + lam * _trimmed_l1(a, problem.group_trim), T,
                 0.5 * L_used * float(d @ d) + lam / tau * float(e @ e),
                 eta, L_used, float(np.sqrt(d @ d)), float(np.sqrt(e @ e)))
        F_prev = rec.cols["objective"][-2]
        theta, w, grad = theta_new, w_new, grad_new
        if not np.isfinite(F):
            rec.fill(trace).status = "Diverged"
            raise DivergenceError("non-finite objective in block coordinate descent", trace)
        if T <= config.tol_stationarity:
            status = "Stationary"
            break
        if abs(F_prev - F) < config.tol_objective:
            flat += 1
            if flat >= config.patience:
                status = "ObjectivePlateau"
                break
        else:
            flat = 0
    rec.fill(trace)
    trace.status = status
    return theta, w, trace


def solve_bcd(problem, init_theta=None, config=None, init_w=None):
    """Minimize ``L(theta) + lam * <w, |theta|>`` over ``theta`` and ``w in S``.

    Parameters
    ----------
    problem : TrimmedProblem
    init_theta : ndarray, optional
        Starting parameter.  Defaults to zeros for regression and to
        ``diag(1 / diag(S_hat))`` for the graphical loss.
    config : BcdConfig, optional
    init_w : ndarray, optional
        Starting weights.  Defaults to the binary minimizer for
        ``init_theta`` (:func:`initial_weights`).

    Returns
    -------
    theta, w : ndarray
        Final iterates.
    trace : SolverTrace
        ``trace.objective`` holds the joint objective, which is monotone when
        ``eta = 1/L_f``.

    Raises
    ------
    DivergenceError
        If the objective becomes non-finite; the partial trace is attached.
    """
    config = config or BcdConfig()
    if not isinstance(problem, TrimmedProblem):
        raise TypeError("problem must be a TrimmedProblem")
    theta0 = default_init(problem.loss) if init_theta is None else np.array(init_theta, dtype=np.float64)
    if theta0.shape != problem.loss.shape or not np.all(np.isfinite(theta0)):
        raise ValueError(f"init_theta must be finite with shape {problem.loss.shape}")
    theta0 = problem.layout.tidy(theta0)
    w0 = initial_weights(problem, theta0) if init_w is None else np.array(init_w, dtype=np.float64)
    _check_group_weights(w0, problem)
    compiled = isinstance(problem.loss, LeastSquaresLoss) and config.engine != "python"
    if compiled:
        return _solve_bcd_compiled(problem, theta0, w0, config)
    return _solve_bcd_generic(problem, theta0, w0, config)


def default_init(loss):
    if isinstance(loss, LeastSquaresLoss):
        return np.zeros(loss.p)
    return np.diag(1.0 / np.diag(loss.S))


def descent_certificate(trace, tol_step=1e-8, tol_total=1e-6):
    """Check the per-iteration and telescoped sufficient-decrease inequalities.

    Recomputes ``G_k`` from the recorded step norms and verifies
    ``G_k <= F_k - F_{k+1} + tol_step`` for every iteration and
    ``sum_k G_k <= F_0 - F_K + tol_total``.
    """
    K = trace.iters
    if K == 0:
        return True
    lam_over_tau = trace.lam / trace.tau if np.isfinite(trace.tau) else 0.0
    G = 0.5 * trace.lipschitz * trace.dtheta**2 + lam_over_tau * trace.dw**2
    F = trace.objective
    per_step = np.all(G <= F[:-1] - F[1:] + tol_step)
    total = G.sum() <= F[0] - F[-1] + tol_total
    return bool(per_step and total)


def rate_bound(trace, lipschitz_r=1.0):
    """``(min_k T_k, bound)`` for the sublinear stationarity rate.

    ``bound = (4 + 2 lam L_r / L_f) (F_0 - F_K) / K`` with ``F_K`` the final
    objective standing in for the optimal value.
    """
    K = trace.iters
    if K == 0:
        return float(trace.T[0]), float("inf")
    L = float(np.max(trace.lipschitz))
    const = 4.0 + 2.0 * trace.lam * lipschitz_r / L
    bound = const * (trace.objective[0] - trace.objective[-1]) / K
    return float(np.min(trace.T[1:])), float(bound)

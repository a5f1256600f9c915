"""Comparison solvers: l1, SCAD, MCP proximal gradient and a DC scheme.

All solvers take plain proximal-gradient steps with ``t = 1/L_f`` (no
acceleration).  For the graphical loss the penalties act entrywise on the
off-diagonal and the step is backtracked to stay positive definite.

The DC solver treats the trimmed penalty as ``||theta||_1 - top_h(theta)``
and linearizes the concave part at every iterate; one prox step is taken
per linearization.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .losses import LeastSquaresLoss, _gram_product
from .penalty import _top_h_signs, _trimmed_l1
from .problem import (
    BcdConfig,
    DivergenceError,
    SolverTrace,
    _Recorder,
    layout_for,
    prox_gradient_step,
)

__all__ = [
    "PenaltySpec",
    "prox_scalar",
    "penalty_value",
    "solve_prox_gradient",
    "solve_dc_trimmed",
]

KINDS = {"L1": 0, "SCAD": 1, "MCP": 2, "TrimmedDC": 3}


@dataclass(frozen=True)
class PenaltySpec:
    """A coordinate-separable penalty (or the trimmed penalty for the DC solver).

    ``extra`` is SCAD's ``a``, MCP's ``gamma`` or the DC trim count ``h``.
    """

    kind: str
    lam: float
    extra: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}; expected one of {sorted(KINDS)}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.kind == "SCAD" and not self.extra > 2:
            raise ValueError("SCAD requires a > 2")
        if self.kind == "MCP" and not self.extra > 1:
            raise ValueError("MCP requires gamma > 1")
        if self.kind == "TrimmedDC" and (self.extra < 0 or int(self.extra) != self.extra):
            raise ValueError("TrimmedDC requires an integer h >= 0")

    @classmethod
    def l1(cls, lam):
        return cls("L1", lam)

    @classmethod
    def scad(cls, lam, a=3.0):
        return cls("SCAD", lam, a)

    @classmethod
    def mcp(cls, lam, gamma=2.5):
        return cls("MCP", lam, gamma)

    @property
    def code(self):
        return KINDS[self.kind]


@njit(cache=True)
def _scalar_penalty(kind, x, lam, param):
    x = abs(x)
    if kind == 1:
        if x <= lam:
            return lam * x
        if x <= param * lam:
            return (2.0 * param * lam * x - x * x - lam * lam) / (2.0 * (param - 1.0))
        return 0.5 * lam * lam * (param + 1.0)
    if kind == 2:
        if x <= param * lam:
            return lam * x - x * x / (2.0 * param)
        return 0.5 * param * lam * lam
    return lam * x


@njit(cache=True)
def _scalar_derivative(kind, x, lam, param):
    # derivative of the penalty in |x| for x > 0
    if kind == 1:
        if x <= lam:
            return lam
        if x <= param * lam:
            return (param * lam - x) / (param - 1.0)
        return 0.0
    if kind == 2:
        if x <= param * lam:
            return lam - x / param
        return 0.0
    return lam


@njit(cache=True)
def _prox_objective(kind, x, z, t, lam, param):
    return 0.5 * (x - z) ** 2 + t * _scalar_penalty(kind, x, lam, param)


@njit(cache=True)
def _best(kind, cands, n, z, t, lam, param):
    # smallest objective wins; earlier (smaller magnitude) candidates win ties
    best = cands[0]
    fbest = _prox_objective(kind, best, z, t, lam, param)
    for i in range(1, n):
        f = _prox_objective(kind, cands[i], z, t, lam, param)
        if f < fbest:
            best = cands[i]
            fbest = f
    return best


@njit(cache=True)
def _prox_scalar(kind, z, t, lam, param):
    """Exact prox of ``t * penalty`` at ``z``.

    For SCAD and MCP the minimizer on each piece of the penalty is computed
    in closed form and clipped to that piece; the best piece wins.  Pieces
    on which the objective is concave contribute only their endpoints.
    """
    s = 1.0 if z >= 0 else -1.0
    u = abs(z)
    tl = t * lam
    if kind == 0 or kind == 3:
        return s * max(u - tl, 0.0)
    cands = np.empty(6)
    n = 0
    if kind == 1:
        a = param
        cands[n] = min(max(u - tl, 0.0), lam)
        n += 1
        if a - 1.0 - t > 0.0:
            x = ((a - 1.0) * u - t * a * lam) / (a - 1.0 - t)
            cands[n] = min(max(x, lam), a * lam)
            n += 1
        else:
            cands[n] = lam
            cands[n + 1] = a * lam
            n += 2
        cands[n] = max(u, a * lam)
        n += 1
    else:
        g = param
        if t < g:
            x = (u - tl) / (1.0 - t / g)
            cands[n] = min(max(x, 0.0), g * lam)
            n += 1
        else:
            cands[n] = 0.0
            cands[n + 1] = g * lam
            n += 2
        cands[n] = max(u, g * lam)
        n += 1
    return s * _best(kind, cands, n, u, t, lam, param)


@njit(cache=True)
def _prox_vector(kind, z, t, lam, param, mask):
    out = np.empty(z.size)
    for j in range(z.size):
        out[j] = _prox_scalar(kind, z[j], t, lam, param) if mask[j] else z[j]
    return out


@njit(cache=True)
def _penalty_sum(kind, theta, lam, param, mask):
    total = 0.0
    for j in range(theta.size):
        if mask[j]:
            total += _scalar_penalty(kind, theta[j], lam, param)
    return total


@njit(cache=True)
def _criticality(kind, grad, theta, lam, param, mask):
    """Squared norm of the min-norm element of ``grad + d penalty``."""
    total = 0.0
    for j in range(grad.size):
        g = grad[j]
        if not mask[j]:
            total += g * g
        elif theta[j] != 0.0:
            v = g + np.sign(theta[j]) * _scalar_derivative(kind, abs(theta[j]), lam, param)
            total += v * v
        else:
            m = abs(g) - lam
            if m > 0.0:
                total += m * m
    return total


@njit(cache=True)
def _prox_grad_least_squares(G, b, c, kind, lam, param, h, theta0, L,
                             max_iters, tol_T, tol_obj, patience):
    p = theta0.size
    mask = np.ones(p, dtype=np.bool_)
    t = 1.0 / L
    theta = theta0.copy()
    F = np.empty(max_iters + 1)
    T = np.empty(max_iters + 1)
    dth = np.empty(max_iters)

    g = _gram_product(G, theta)
    val = theta @ g - 2.0 * (b @ theta) + c
    grad = 2.0 * (g - b)
    if kind == 3:
        s = _top_h_signs(theta, h)
        F[0] = val + lam * _trimmed_l1(np.abs(theta), h)
        T[0] = _criticality(0, grad - lam * s, theta, lam, param, mask)
    else:
        F[0] = val + _penalty_sum(kind, theta, lam, param, mask)
        T[0] = _criticality(kind, grad, theta, lam, param, mask)
    status = 1
    flat = 0
    k = 0
    while k < max_iters:
        if kind == 3:
            # linearize -lam * top_h at the current iterate
            theta_new = _prox_vector(0, theta - t * (grad - lam * s), t, lam, param, mask)
        else:
            theta_new = _prox_vector(kind, theta - t * grad, t, lam, param, mask)
        g = _gram_product(G, theta_new)
        val = theta_new @ g - 2.0 * (b @ theta_new) + c
        grad = 2.0 * (g - b)
        d = theta_new - theta
        dth[k] = np.sqrt(d @ d)
        theta = theta_new
        k += 1
        if kind == 3:
            s = _top_h_signs(theta, h)
            F[k] = val + lam * _trimmed_l1(np.abs(theta), h)
            T[k] = _criticality(0, grad - lam * s, theta, lam, param, mask)
        else:
            F[k] = val + _penalty_sum(kind, theta, lam, param, mask)
            T[k] = _criticality(kind, grad, theta, lam, param, mask)
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
    return theta, F[: k + 1], T[: k + 1], dth[:k], status


STATUS_CODES = {0: "Stationary", 1: "MaxIters", 2: "ObjectivePlateau"}
METHOD_NAMES = {"L1": "l1-prox", "SCAD": "scad-prox", "MCP": "mcp-prox", "TrimmedDC": "DC-prox"}


def prox_scalar(spec, z, t):
    """Proximal map of ``t`` times the penalty described by ``spec`` at ``z``."""
    if not t > 0:
        raise ValueError("t must be positive")
    return float(_prox_scalar(spec.code, float(z), float(t), spec.lam, float(spec.extra)))


def _mask(layout):
    if layout.name == "offdiag":
        return ~np.eye(layout.p, dtype=bool).ravel()
    return np.ones(layout.p, dtype=bool)


def penalty_value(spec, theta):
    """Total penalty of ``theta`` (off-diagonal entries only for a matrix)."""
    theta = np.asarray(theta, dtype=np.float64)
    if spec.kind == "TrimmedDC":
        return spec.lam * float(_trimmed_l1(np.abs(theta.ravel()), int(spec.extra)))
    mask = ~np.eye(theta.shape[0], dtype=bool).ravel() if theta.ndim == 2 else np.ones(theta.size, dtype=bool)
    return float(_penalty_sum(spec.code, np.ascontiguousarray(theta).ravel(), spec.lam, float(spec.extra), mask))


def _default_init(loss):
    if isinstance(loss, LeastSquaresLoss):
        return np.zeros(loss.p)
    return np.diag(1.0 / np.diag(loss.S))


def _finish(trace, status):
    if status == "Diverged":
        trace.status = status
        raise DivergenceError(f"non-finite objective in {trace.method}", trace)
    trace.status = status
    return trace


def _solve_compiled(loss, spec, theta0, config):
    L = loss.lipschitz_estimate(config.seed)
    h = int(spec.extra) if spec.kind == "TrimmedDC" else 0
    theta, F, T, dth, status = _prox_grad_least_squares(
        loss.gram, loss.xty, loss.yty, spec.code, spec.lam, float(spec.extra), h,
        np.ascontiguousarray(theta0), L, config.max_iters,
        config.tol_stationarity, config.tol_objective, config.patience,
    )
    K = dth.size
    trace = SolverTrace(
        method=METHOD_NAMES[spec.kind], lam=spec.lam, h=h,
        objective=F, trimmed_objective=F, T=T, G=0.5 * L * dth**2,
        step=np.full(K, 1.0 / L), lipschitz=np.full(K, L), dtheta=dth, dw=np.zeros(K),
    )
    return theta, _finish(trace, STATUS_CODES.get(status, "Diverged"))


def _solve_generic(loss, spec, theta0, config):
    lay = layout_for(loss)
    if spec.kind == "TrimmedDC" and lay.name != "vector":
        raise ValueError("the DC solver supports regression problems only")
    mask = _mask(lay)
    code, lam, param = spec.code, spec.lam, float(spec.extra)
    h = int(spec.extra) if spec.kind == "TrimmedDC" else 0
    fixed_L = isinstance(loss, LeastSquaresLoss)
    flat = lay.flat

    def objective(theta, val):
        if code == 3:
            return val + lam * float(_trimmed_l1(np.abs(theta), h))
        return val + float(_penalty_sum(code, flat(theta), lam, param, mask))

    def crit(theta, grad):
        if code == 3:
            s = _top_h_signs(theta, h)
            return float(_criticality(0, grad - lam * s, theta, lam, param, mask))
        return float(_criticality(code, flat(grad), flat(theta), lam, param, mask))

    prox_code = 0 if code == 3 else code

    def prox(z, eta):
        return _prox_vector(prox_code, flat(np.asarray(z, dtype=np.float64)), eta, lam, param, mask).reshape(np.shape(z))

    theta = lay.tidy(theta0.copy())
    val, grad = loss.value_grad(theta)
    rec = _Recorder()
    F0 = objective(theta, val)
    rec.start(F0, F0, crit(theta, grad))
    trace = SolverTrace(method=METHOD_NAMES[spec.kind], lam=lam, h=h)
    status = "MaxIters"
    n_flat = 0
    for _ in range(config.max_iters):
        L = loss.lipschitz_estimate(config.seed) if fixed_L else loss.local_lipschitz(theta)
        g_eff = grad - lam * _top_h_signs(theta, h) if code == 3 else grad
        theta_new, val, grad_new, eta = prox_gradient_step(
            loss, lay, theta, val, g_eff, prox, 1.0 / L, backtrack=not fixed_L
        )
        L_used = L if fixed_L else 1.0 / eta
        d = flat(theta_new - theta)
        F = objective(theta_new, val)
        T = crit(theta_new, grad_new)
        rec.step(F, F, T, 0.5 * L_used * float(d @ d), eta, L_used, float(np.sqrt(d @ d)), 0.0)
        F_prev = rec.cols["objective"][-2]
        theta, grad = theta_new, grad_new
        if not np.isfinite(F):
            rec.fill(trace)
            return theta, _finish(trace, "Diverged")
        if T <= config.tol_stationarity:
            status = "Stationary"
            break
        if abs(F_prev - F) < config.tol_objective:
            n_flat += 1
            if n_flat >= config.patience:
                status = "ObjectivePlateau"
                break
        else:
            n_flat = 0
    rec.fill(trace)
    return theta, _finish(trace, status)


def solve_prox_gradient(loss, penalty, init=None, config=None):
    """Proximal gradient for ``L(theta) + penalty(theta)`` with step ``1/L_f``.

    Parameters
    ----------
    loss : LeastSquaresLoss or GaussianGraphicalLoss
    penalty : PenaltySpec
        ``L1``, ``SCAD`` or ``MCP``.
    init : ndarray, optional
    config : BcdConfig, optional
        Only the step, iteration and tolerance fields are used.

    Returns
    -------
    theta : ndarray
    trace : SolverTrace
    """
    config = config or BcdConfig()
    if penalty.kind == "TrimmedDC":
        return solve_dc_trimmed(loss, int(penalty.extra), penalty.lam, init, config)
    return _dispatch(loss, penalty, init, config)


def solve_dc_trimmed(loss, h, lam, init=None, config=None):
    """DC-prox solver for ``L(theta) + lam * R(theta; h)``.

    At each iterate ``s`` is the sign vector of the ``h`` largest-magnitude
    entries (lower index first on ties); one prox-gradient step is then taken
    on ``L(theta) + lam ||theta||_1 - lam <s, theta>``.  The trace records the
    trimmed objective, which this majorization keeps non-increasing.
    """
    config = config or BcdConfig()
    return _dispatch(loss, PenaltySpec("TrimmedDC", lam, h), init, config)


def _dispatch(loss, spec, init, config):
    theta0 = _default_init(loss) if init is None else np.array(init, dtype=np.float64)
    if theta0.shape != loss.shape or not np.all(np.isfinite(theta0)):
        raise ValueError(f"init must be finite with shape {loss.shape}")
    if spec.kind == "TrimmedDC" and int(spec.extra) > loss.shape[0]:
        raise ValueError(f"trim count h={int(spec.extra)} exceeds p={loss.shape[0]}")
    if isinstance(loss, LeastSquaresLoss) and config.engine != "python":
        return _solve_compiled(loss, spec, theta0, config)
    return _solve_generic(loss, spec, theta0, config)

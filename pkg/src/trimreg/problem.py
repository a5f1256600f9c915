"""Problem containers, solver configuration and iteration traces.

A :class:`TrimmedProblem` couples a smooth loss with the trimmed penalty
``lam * R(theta; h)``.  Two parameter layouts are supported:

``vector``
    regression coefficients; every entry is penalized and is its own
    trimming group.
``offdiag``
    a symmetric precision matrix; the diagonal is unpenalized and each
    off-diagonal pair ``(i, j), (j, i)`` forms one trimming group with a
    shared weight.  ``h`` counts ordered entries, so it must be even.
"""

from dataclasses import dataclass, field

import numpy as np

from .losses import GaussianGraphicalLoss, LeastSquaresLoss, NotPositiveDefinite
from .penalty import _soft_threshold, _stationarity, _trimmed_l1

__all__ = ["TrimmedProblem", "BcdConfig", "SolverTrace", "DivergenceError"]


class DivergenceError(ArithmeticError):
    """A solver produced a non-finite objective.  Carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class _VectorLayout:
    name = "vector"

    def __init__(self, p):
        self.p = p
        self.n_groups = p

    def magnitudes(self, theta):
        return np.abs(theta)

    def expand(self, w):
        return w

    def flat(self, x):
        return x

    def tidy(self, theta):
        return theta


class _OffDiagLayout:
    name = "offdiag"

    def __init__(self, p):
        self.p = p
        self.rows, self.cols = np.triu_indices(p, k=1)
        self.n_groups = self.rows.size

    def magnitudes(self, Theta):
        # a pair contributes |Theta_ij| + |Theta_ji|
        return 2.0 * np.abs(Theta[self.rows, self.cols])

    def expand(self, w):
        W = np.zeros((self.p, self.p))
        W[self.rows, self.cols] = w
        W[self.cols, self.rows] = w
        return W

    def flat(self, X):
        return np.ascontiguousarray(X).ravel()

    def tidy(self, Theta):
        return 0.5 * (Theta + Theta.T)


def layout_for(loss):
    if isinstance(loss, GaussianGraphicalLoss):
        return _OffDiagLayout(loss.p)
    return _VectorLayout(loss.shape[0])


@dataclass(frozen=True)
class TrimmedProblem:
    """Smooth loss plus ``lam`` times the trimmed l1 penalty with trim count ``h``."""

    loss: object
    lam: float
    h: int

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lam must be a non-negative finite number, got {self.lam}")
        if int(self.h) != self.h:
            raise ValueError(f"h must be an integer, got {self.h}")
        object.__setattr__(self, "h", int(self.h))
        object.__setattr__(self, "lam", float(self.lam))
        layout = layout_for(self.loss)
        object.__setattr__(self, "layout", layout)
        if layout.name == "offdiag":
            limit = layout.p * (layout.p - 1)
            if not 0 <= self.h < limit or self.h % 2:
                raise ValueError(
                    f"graphical trim count must be even and in [0, {limit}), got {self.h}"
                )
        elif not 0 <= self.h <= layout.p:
            raise ValueError(f"trim count h={self.h} outside [0, {layout.p}]")

    @classmethod
    def least_squares(cls, X, y, lam, h):
        return cls(LeastSquaresLoss(X, y), lam, h)

    @classmethod
    def graphical(cls, S_hat, lam, h):
        return cls(GaussianGraphicalLoss(S_hat), lam, h)

    @property
    def group_trim(self):
        """Trim count in units of trimming groups."""
        return self.h // 2 if self.layout.name == "offdiag" else self.h

    @property
    def weight_total(self):
        return float(self.layout.n_groups - self.group_trim)

    def penalty(self, theta):
        return float(_trimmed_l1(self.layout.magnitudes(theta), self.group_trim))

    def objective(self, theta):
        """Reduced objective ``L(theta) + lam * R(theta; h)``."""
        return self.loss.value(theta) + self.lam * self.penalty(theta)

    def joint_objective(self, theta, w):
        """``L(theta) + lam * <w, r(theta)>`` for weights in the capped simplex."""
        return self.loss.value(theta) + self.lam * float(w @ self.layout.magnitudes(theta))

    def stationarity(self, theta, w, grad=None):
        """Squared norm of the minimum-norm element of the joint subdifferential."""
        w = _check_group_weights(w, self)
        if grad is None:
            _, grad = self.loss.value_grad(theta)
        lay = self.layout
        return float(
            _stationarity(
                lay.flat(np.asarray(grad, dtype=np.float64)),
                lay.flat(np.asarray(theta, dtype=np.float64)),
                lay.flat(lay.expand(w)),
                self.lam,
                lay.magnitudes(theta),
                w,
            )
        )


def _check_group_weights(w, problem, tol=1e-9):
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (problem.layout.n_groups,):
        raise ValueError(f"weights must have shape ({problem.layout.n_groups},)")
    if w.min() < -tol or w.max() > 1 + tol or abs(w.sum() - problem.weight_total) > tol * w.size:
        raise ValueError("weights are not feasible for the trim count")
    return w


@dataclass
class BcdConfig:
    """Solver settings shared by the trimmed solver and the baselines.

    ``eta="auto"`` uses ``1/L_f``.  ``tau=None`` uses ``1/lam`` (or 1 when
    ``lam`` is zero).  ``engine`` selects the compiled least-squares loop
    (``"auto"``/``"numba"``) or the generic loop (``"python"``).
    """

    eta: object = "auto"
    tau: float | None = None
    max_iters: int = 5000
    tol_stationarity: float = 1e-6
    tol_objective: float = 1e-12
    patience: int = 10
    w_update: str = "gradient_step"
    seed: int = 0
    engine: str = "auto"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tol_stationarity <= 0 or self.tol_objective <= 0:
            raise ValueError("tolerances must be positive")
        if self.eta != "auto" and not float(self.eta) > 0:
            raise ValueError("eta must be positive or 'auto'")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.w_update not in ("gradient_step", "exact_minimize"):
            raise ValueError(f"unknown w_update {self.w_update!r}")
        if self.engine not in ("auto", "numba", "python"):
            raise ValueError(f"unknown engine {self.engine!r}")

    def tau_for(self, lam):
        if self.tau is not None:
            return float(self.tau)
        return 1.0 / lam if lam > 0 else 1.0


STATUSES = ("Stationary", "MaxIters", "ObjectivePlateau")


@dataclass
class SolverTrace:
    """Per-iteration record of a solver run.

    ``objective`` and ``T`` have one entry per iterate including the start;
    the step quantities (``G``, ``step``, ``lipschitz``, ``dtheta``, ``dw``)
    one per iteration.  For the trimmed solver ``objective`` is the joint
    objective ``F(theta, w)`` and ``trimmed_objective`` the reduced one.
    """

    method: str
    lam: float
    h: int
    tau: float = float("nan")
    objective: np.ndarray = field(default_factory=lambda: np.empty(0))
    trimmed_objective: np.ndarray = field(default_factory=lambda: np.empty(0))
    T: np.ndarray = field(default_factory=lambda: np.empty(0))
    G: np.ndarray = field(default_factory=lambda: np.empty(0))
    step: np.ndarray = field(default_factory=lambda: np.empty(0))
    lipschitz: np.ndarray = field(default_factory=lambda: np.empty(0))
    dtheta: np.ndarray = field(default_factory=lambda: np.empty(0))
    dw: np.ndarray = field(default_factory=lambda: np.empty(0))
    status: str = "MaxIters"

    @property
    def iters(self):
        return int(self.G.size)

    @property
    def final_objective(self):
        return float(self.trimmed_objective[-1])

    @property
    def final_T(self):
        return float(self.T[-1])

    def rows(self):
        """``(iter, objective, G_k, T)`` tuples; ``G_k`` is empty at the start."""
        out = [(0, float(self.objective[0]), None, float(self.T[0]))]
        for k in range(self.iters):
            out.append((k + 1, float(self.objective[k + 1]), float(self.G[k]), float(self.T[k + 1])))
        return out


class _Recorder:
    """Growable trace buffers for the generic loops."""

    def __init__(self):
        self.cols = {k: [] for k in ("objective", "trimmed_objective", "T", "G", "step", "lipschitz", "dtheta", "dw")}

    def start(self, F, Ftrim, T):
        self.cols["objective"].append(F)
        self.cols["trimmed_objective"].append(Ftrim)
        self.cols["T"].append(T)

    def step(self, F, Ftrim, T, G, eta, L, dtheta, dw):
        for k, v in zip(("objective", "trimmed_objective", "T", "G", "step", "lipschitz", "dtheta", "dw"),
                        (F, Ftrim, T, G, eta, L, dtheta, dw)):
            self.cols[k].append(v)

    def fill(self, trace):
        for k, v in self.cols.items():
            setattr(trace, k, np.asarray(v, dtype=np.float64))
        return trace


def prox_gradient_step(loss, layout, theta, val, grad, prox, eta0, backtrack, max_halvings=60):
    """One proximal-gradient step from ``theta`` with step ``eta0``.

    ``prox(z, eta)`` applies the proximal map of ``eta`` times the penalty.
    With ``backtrack`` the step is halved until the iterate is admissible
    (positive definite for the graphical loss) and the quadratic upper model
    of the loss holds; this keeps the composite objective non-increasing when
    the gradient is only locally Lipschitz.
    """
    eta = eta0
    for _ in range(max_halvings):
        cand = layout.tidy(prox(theta - eta * grad, eta))
        try:
            new_val, new_grad = loss.value_grad(cand)
        except NotPositiveDefinite:
            if not backtrack:
                raise
            eta *= 0.5
            continue
        if backtrack:
            d = layout.flat(cand - theta)
            model = val + float(layout.flat(grad) @ d) + float(d @ d) / (2.0 * eta)
            if new_val > model + 1e-12 * max(1.0, abs(val)):
                eta *= 0.5
                continue
        return cand, new_val, new_grad, eta
    raise NotPositiveDefinite("step size underflow while backtracking")


def weighted_prox(layout, weights, lam):
    """Prox of ``eta * lam * sum w_j |theta_j|`` in the layout's entry space."""
    W = layout.flat(layout.expand(weights))

    def prox(z, eta):
        shape = np.shape(z)
        out = _soft_threshold(layout.flat(np.asarray(z, dtype=np.float64)), eta * lam * W)
        return out.reshape(shape)

    return prox

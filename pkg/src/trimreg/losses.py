"""Smooth losses: least squares and the Gaussian graphical log-likelihood."""

from functools import cached_property

import numpy as np
import scipy.linalg
from numba import njit

__all__ = [
    "NotPositiveDefinite",
    "LeastSquaresLoss",
    "GaussianGraphicalLoss",
    "power_iteration",
]

LIPSCHITZ_SAFETY = 1.01


@njit(cache=True)
def _gram_product(G, theta):
    """``G @ theta`` for symmetric ``G``, touching only rows where theta is nonzero."""
    p = theta.size
    out = np.zeros(p)
    for j in range(p):
        t = theta[j]
        if t != 0.0:
            for i in range(p):
                out[i] += t * G[j, i]
    return out


class NotPositiveDefinite(ValueError):
    """Raised when a precision-matrix iterate leaves the positive definite cone."""


def power_iteration(A, rtol=1e-6, max_iter=10_000, seed=0):
    """Largest eigenvalue of a symmetric positive semidefinite matrix.

    Iterates until the Rayleigh quotient changes by less than ``rtol``
    relative.  The start vector is drawn from a fixed seed so the estimate
    is reproducible.
    """
    A = np.asarray(A, dtype=np.float64)
    v = np.random.default_rng(seed).standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        Av = A @ v
        new = float(v @ Av)
        nrm = np.linalg.norm(Av)
        if nrm == 0.0:
            return 0.0
        v = Av / nrm
        if abs(new - est) <= rtol * abs(new):
            return new
        est = new
    return est


class LeastSquaresLoss:
    """``(1/n) ||X theta - y||^2`` with gradient ``(2/n) X^T (X theta - y)``.

    The Gram quantities ``X^T X / n`` and ``X^T y / n`` are computed lazily
    and shared by the compiled solver loops.
    """

    def __init__(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"X must be a non-empty 2-d array, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")
        self.X = X
        self.y = y
        self.X.flags.writeable = False
        self.y.flags.writeable = False
        self._lipschitz = {}

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def shape(self):
        return (self.p,)

    @cached_property
    def gram(self):
        G = self.X.T @ self.X / self.n
        return np.ascontiguousarray(0.5 * (G + G.T))

    @cached_property
    def xty(self):
        return self.X.T @ self.y / self.n

    @cached_property
    def yty(self):
        return float(self.y @ self.y) / self.n

    def _check(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.p,):
            raise ValueError(f"theta must have shape ({self.p},), got {theta.shape}")
        return theta

    def value(self, theta):
        theta = self._check(theta)
        resid = self.X @ theta - self.y
        return float(resid @ resid) / self.n

    def value_grad(self, theta):
        theta = self._check(theta)
        resid = self.X @ theta - self.y
        return float(resid @ resid) / self.n, 2.0 / self.n * (self.X.T @ resid)

    def lipschitz_estimate(self, seed=0):
        """Gradient Lipschitz constant ``(2/n) lambda_max(X^T X)``, inflated 1%."""
        if seed not in self._lipschitz:
            self._lipschitz[seed] = LIPSCHITZ_SAFETY * 2.0 * power_iteration(self.gram, seed=seed)
        return self._lipschitz[seed]

    @property
    def lipschitz(self):
        return self.lipschitz_estimate()

    def local_lipschitz(self, theta):
        return self.lipschitz

    def restrict(self, rows):
        """Loss on a subset of the observations (for cross-validation)."""
        return LeastSquaresLoss(self.X[rows], self.y[rows])


class GaussianGraphicalLoss:
    """``trace(S Theta) - logdet(Theta)`` over symmetric positive definite ``Theta``."""

    def __init__(self, S_hat):
        S = np.asarray(S_hat, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 1:
            raise ValueError(f"S_hat must be square, got shape {S.shape}")
        if not np.all(np.isfinite(S)):
            raise ValueError("S_hat must be finite")
        if np.max(np.abs(S - S.T)) > 1e-10:
            raise ValueError("S_hat must be symmetric")
        if np.any(np.diag(S) <= 0):
            raise ValueError("S_hat must have a positive diagonal")
        self.S = 0.5 * (S + S.T)
        self.S.flags.writeable = False

    @property
    def p(self):
        return self.S.shape[0]

    @property
    def shape(self):
        return self.S.shape

    def _factor(self, Theta):
        Theta = np.asarray(Theta, dtype=np.float64)
        if Theta.shape != self.S.shape:
            raise ValueError(f"Theta must have shape {self.S.shape}, got {Theta.shape}")
        if not np.all(np.isfinite(Theta)):
            raise NotPositiveDefinite("Theta has non-finite entries")
        try:
            return Theta, scipy.linalg.cho_factor(Theta, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from None

    def value(self, Theta):
        Theta, (c, _) = self._factor(Theta)
        logdet = 2.0 * np.sum(np.log(np.diag(c)))
        return float(np.sum(self.S * Theta)) - logdet

    def value_grad(self, Theta):
        Theta, cf = self._factor(Theta)
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        inv = scipy.linalg.cho_solve(cf, np.eye(self.p))
        inv = 0.5 * (inv + inv.T)
        return float(np.sum(self.S * Theta)) - logdet, self.S - inv

    def local_lipschitz(self, Theta):
        """Hessian bound ``1 / lambda_min(Theta)^2`` at the current iterate."""
        lmin = np.linalg.eigvalsh(Theta)[0]
        if lmin <= 0:
            raise NotPositiveDefinite("Theta is not positive definite")
        return 1.0 / lmin**2

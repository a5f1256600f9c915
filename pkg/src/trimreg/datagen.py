"""Seeded synthetic datasets for the regression and graphical-model studies.

Every generator is a pure function of its arguments: the same parameters
and seed give bit-identical arrays.  Draw order within a dataset is fixed
(support positions, coefficients, design, noise) on a single
:class:`~trimreg.rng.Stream`.
"""

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from .rng import Stream

__all__ = [
    "SyntheticDataset",
    "m1_covariance",
    "m2_covariance",
    "diamond_covariance",
    "gen_linear_m2",
    "gen_linear_m1",
    "gen_diamond_ggm",
    "incoherence_diagnostics",
    "incoherence_terms",
    "write_dataset_csv",
    "read_dataset_csv",
]

DESIGN_KINDS = ("M2", "M1", "DiamondGGM")


@dataclass
class SyntheticDataset:
    """A generated dataset with its ground truth.

    For regression designs ``X`` is the ``n x p`` design and ``y`` the
    response.  For the graphical design ``X`` holds the ``n x p`` samples,
    ``y`` is ``None``, ``theta_star`` is the true precision matrix and
    ``support`` lists the upper-triangle pairs ``(i, j)`` of its nonzero
    off-diagonal entries.
    """

    X: np.ndarray
    y: np.ndarray | None
    theta_star: np.ndarray
    support: tuple
    seed: int
    design_kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.design_kind not in DESIGN_KINDS:
            raise ValueError(f"unknown design kind {self.design_kind!r}")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def k(self):
        return len(self.support)

    @property
    def sample_covariance(self):
        """Maximum-likelihood covariance ``X^T X / n`` (samples are mean zero)."""
        return self.X.T @ self.X / self.n


def _check_dims(n, p, k):
    for name, v in (("n", n), ("p", p), ("k", k)):
        if int(v) != v:
            raise ValueError(f"{name} must be an integer, got {v}")
    if n < 1 or p < 1:
        raise ValueError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
    if not 0 <= k <= p:
        raise ValueError(f"need 0 <= k <= p, got k={k}, p={p}")


def m2_covariance(p, theta):
    """Equicorrelated covariance ``theta * 11^T + (1 - theta) I``."""
    return theta * np.ones((p, p)) + (1.0 - theta) * np.eye(p)


def m1_covariance(p, k, theta):
    """Identity with ``theta`` in the first ``k`` entries of row and column ``k``.

    Indices are zero-based, so coordinate ``k`` is the single non-support
    variable correlated with the support ``{0, ..., k-1}``.
    """
    if not k < p:
        raise ValueError(f"M1 needs k < p, got k={k}, p={p}")
    M = np.eye(p)
    M[k, :k] = theta
    M[:k, k] = theta
    return M


def _cholesky(M, what, bound=""):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} covariance is not positive definite{bound}") from None


def _linear(stream, n, p, k, cov_factor, beta_sd, noise_sd, support):
    beta = np.zeros(p)
    beta[support] = beta_sd * stream.normal(k)
    Z = stream.normal(n * p).reshape(n, p)
    X = Z @ cov_factor.T
    y = X @ beta + noise_sd * stream.normal(n)
    return X, y, beta


def gen_linear_m2(n, p, k, theta_cov=0.7, beta_sd=5.0, seed=0, noise_sd=1.0):
    """Sparse linear model with equicorrelated Gaussian design.

    The support is a uniformly random ``k``-subset; nonzero coefficients are
    ``N(0, beta_sd^2)``; noise is ``N(0, noise_sd^2)``.
    """
    _check_dims(n, p, k)
    if not 0 <= theta_cov < 1:
        raise ValueError(f"theta_cov must lie in [0, 1), got {theta_cov}")
    if beta_sd < 0 or noise_sd < 0:
        raise ValueError("beta_sd and noise_sd must be non-negative")
    stream = Stream(seed)
    support = stream.subset(p, k)
    L = _cholesky(m2_covariance(p, theta_cov), "M2")
    X, y, beta = _linear(stream, n, p, k, L, beta_sd, noise_sd, support)
    return SyntheticDataset(
        X, y, beta, tuple(int(j) for j in support), int(seed), "M2",
        dict(n=n, p=p, k=k, theta_cov=theta_cov, beta_sd=beta_sd, noise_sd=noise_sd),
    )


def gen_linear_m1(n, p, k, theta_cov=0.3, beta_sd=5.0, seed=0, noise_sd=1.0):
    """Sparse linear model whose design breaks the incoherence condition.

    The support is fixed to the first ``k`` coordinates and coordinate ``k``
    is correlated with each of them at level ``theta_cov``.  The covariance
    is positive definite iff ``|theta_cov| < 1/sqrt(k)``.
    """
    _check_dims(n, p, k)
    if beta_sd < 0 or noise_sd < 0:
        raise ValueError("beta_sd and noise_sd must be non-negative")
    M = m1_covariance(p, k, theta_cov)
    bound = f" (need |theta_cov| < 1/sqrt(k) = {1 / np.sqrt(max(k, 1)):.6g})"
    L = _cholesky(M, "M1", bound)
    stream = Stream(seed)
    support = np.arange(k)
    X, y, beta = _linear(stream, n, p, k, L, beta_sd, noise_sd, support)
    return SyntheticDataset(
        X, y, beta, tuple(range(k)), int(seed), "M1",
        dict(n=n, p=p, k=k, theta_cov=theta_cov, beta_sd=beta_sd, noise_sd=noise_sd),
    )


def diamond_covariance(rho):
    """Covariance of the four-node diamond graph (zero-based node labels).

    Edges are all pairs except ``(0, 3)``.  ``Sigma[1, 2] = 0`` and
    ``Sigma[0, 3] = 2 rho^2``, which makes the precision entry ``(0, 3)``
    vanish exactly.
    """
    S = np.eye(4)
    for i, j in ((0, 1), (0, 2), (1, 3), (2, 3)):
        S[i, j] = S[j, i] = rho
    S[0, 3] = S[3, 0] = 2.0 * rho**2
    return S


def gen_diamond_ggm(n, rho, seed=0, zero_tol=1e-10):
    """``n`` Gaussian samples from the diamond-graph covariance.

    ``theta_star`` is the exact precision matrix; ``support`` lists the
    upper-triangle pairs with ``|theta_star[i, j]| > zero_tol``.
    """
    _check_dims(n, 4, 0)
    Sigma = diamond_covariance(rho)
    L = _cholesky(Sigma, "diamond", f" at rho={rho}")
    precision = np.linalg.inv(Sigma)
    precision = 0.5 * (precision + precision.T)
    stream = Stream(seed)
    X = stream.normal(n * 4).reshape(n, 4) @ L.T
    support = tuple((i, j) for i, j in itertools.combinations(range(4), 2)
                    if abs(precision[i, j]) > zero_tol)
    return SyntheticDataset(X, None, precision, support, int(seed), "DiamondGGM",
                            dict(n=n, p=4, rho=rho))


def _inf_norm(M):
    return float(np.max(np.sum(np.abs(M), axis=1))) if M.size else 0.0


def incoherence_terms(Gamma, A):
    """Incoherence quantities of ``Gamma`` over the index set ``A``.

    Returns ``(inverse_norm, cross_norm, max_eig_AA, max_eig)`` where
    ``inverse_norm = ||Gamma_AA^{-1}||_inf`` and
    ``cross_norm = ||Gamma_{A^c A} Gamma_AA^{-1}||_inf`` (max row sums).
    Raises ``numpy.linalg.LinAlgError`` when ``Gamma_AA`` is singular.
    """
    Gamma = np.asarray(Gamma, dtype=np.float64)
    A = np.asarray(sorted(set(int(a) for a in A)), dtype=np.intp)
    Ac = np.setdiff1d(np.arange(Gamma.shape[0]), A)
    G_AA = Gamma[np.ix_(A, A)]
    if A.size and np.linalg.cond(G_AA) > 1e12:
        raise np.linalg.LinAlgError("Gamma_AA is singular")
    inv = np.linalg.inv(G_AA) if A.size else np.zeros((0, 0))
    cross = Gamma[np.ix_(Ac, A)] @ inv
    eig_AA = float(np.linalg.eigvalsh(G_AA)[-1]) if A.size else 0.0
    return _inf_norm(inv), _inf_norm(cross), eig_AA, float(np.linalg.eigvalsh(Gamma)[-1])


def incoherence_diagnostics(X, support, h, num_samples=100, seed=0, gram=False):
    """Worst-case incoherence quantities over random trim sets.

    For each of ``num_samples`` random sets ``T`` of ``h`` non-support
    indices, evaluates :func:`incoherence_terms` of ``Gamma = X^T X / n``
    on ``A = support | T``.  Pass ``gram=True`` to supply ``Gamma``
    directly (e.g. a population covariance).  Singular blocks are counted
    in ``singular`` rather than raised.
    """
    X = np.asarray(X, dtype=np.float64)
    Gamma = X if gram else X.T @ X / X.shape[0]
    p = Gamma.shape[0]
    support = sorted(set(int(s) for s in support))
    if any(not 0 <= s < p for s in support):
        raise ValueError("support indices out of range")
    rest = np.setdiff1d(np.arange(p), support)
    if not 0 <= h <= rest.size:
        raise ValueError(f"h must lie in [0, {rest.size}], got {h}")
    stream = Stream(seed)
    worst = dict(inverse_norm=0.0, cross_norm=0.0, max_eig_AA=0.0)
    singular = 0
    samples = max(1, int(num_samples)) if h > 0 else 1
    for _ in range(samples):
        T = rest[stream.subset(rest.size, h)] if h else rest[:0]
        try:
            inv, cross, eig_AA, eig = incoherence_terms(Gamma, np.concatenate([support, T]))
        except np.linalg.LinAlgError:
            singular += 1
            continue
        worst["inverse_norm"] = max(worst["inverse_norm"], inv)
        worst["cross_norm"] = max(worst["cross_norm"], cross)
        worst["max_eig_AA"] = max(worst["max_eig_AA"], eig_AA)
    worst["max_eig"] = float(np.linalg.eigvalsh(Gamma)[-1])
    worst.update(samples=samples, singular=singular, h=int(h))
    return worst


def write_dataset_csv(ds, path_or_buf):
    """Write a dataset as CSV.

    Regression layout: header ``y,x0,...,x{p-1}`` then one row per
    observation, followed by a ``theta_star`` row (empty ``y`` cell) and a
    ``support`` row listing indices.  Graphical datasets use the same layout
    without the ``y`` column and store the precision matrix row by row.
    """
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["#design", ds.design_kind, "seed", ds.seed])
        p = ds.p
        if ds.y is not None:
            w.writerow(["y"] + [f"x{j}" for j in range(p)])
            for yi, row in zip(ds.y, ds.X):
                w.writerow([repr(float(yi))] + [repr(float(v)) for v in row])
            w.writerow(["#theta_star"] + [repr(float(v)) for v in ds.theta_star])
            w.writerow(["#support"] + [int(s) for s in ds.support])
        else:
            w.writerow([f"x{j}" for j in range(p)])
            for row in ds.X:
                w.writerow([repr(float(v)) for v in row])
            for row in ds.theta_star:
                w.writerow(["#theta_star"] + [repr(float(v)) for v in row])
            w.writerow(["#support"] + [f"{i}-{j}" for i, j in ds.support])
    finally:
        if own:
            fh.close()


def read_dataset_csv(path_or_buf):
    """Inverse of :func:`write_dataset_csv` (parameters other than seed are not stored)."""
    if isinstance(path_or_buf, str) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, newline="", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = path_or_buf.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "#design":
        raise ValueError("not a dataset CSV: missing #design header")
    kind, seed = rows[0][1], int(rows[0][3])
    header = rows[1]
    body = [r for r in rows[2:] if r and not r[0].startswith("#")]
    theta_rows = [r[1:] for r in rows if r and r[0] == "#theta_star"]
    sup_row = next((r[1:] for r in rows if r and r[0] == "#support"), [])
    data = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    if header[0] == "y":
        y, X = data[:, 0].copy(), np.ascontiguousarray(data[:, 1:])
        theta = np.array(theta_rows[0], dtype=np.float64)
        support = tuple(int(s) for s in sup_row)
    else:
        y, X = None, data
        theta = np.array(theta_rows, dtype=np.float64)
        support = tuple(tuple(int(v) for v in s.split("-")) for s in sup_row)
    return SyntheticDataset(X, y, theta, support, seed, kind)

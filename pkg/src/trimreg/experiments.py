"""Replicated simulation studies and their CSV outputs.

Regression studies (support recovery, error curves) share one harness:
every ``(p, k, n, replicate)`` cell draws a dataset, each method is fit
along a decreasing lambda path with warm starts, lambda is picked by K-fold
cross-validation on held-out squared error, and the refit on all
observations is scored.  Replicates are independent tasks, so ``jobs > 1``
farms them out to worker processes; rows are always emitted in plan order.
"""

import csv
import dataclasses
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import PenaltySpec, solve_dc_trimmed, solve_prox_gradient
from .bcd import solve_bcd
from .datagen import gen_diamond_ggm, gen_linear_m1, gen_linear_m2
from .losses import GaussianGraphicalLoss, LeastSquaresLoss, NotPositiveDefinite
from .problem import BcdConfig, DivergenceError, TrimmedProblem
from .rng import Stream, derive_seed

__all__ = [
    "ExperimentPlan",
    "GgmPlan",
    "ConvergencePlan",
    "InitStudyPlan",
    "ExperimentReport",
    "PRESETS",
    "RAW_COLUMNS",
    "AGG_COLUMNS",
    "TRACE_COLUMNS",
    "support_recovered",
    "aggregate",
    "run_support_recovery",
    "run_error_curves",
    "run_convergence_comparison",
    "run_ggm_diamond",
    "run_initialization_study",
    "write_csv",
    "read_csv",
]

LOG10_LAMBDA_GRID = [round(-3.0 + 0.2 * i, 1) for i in range(21)]
REGRESSION_METHODS = ("trimmed", "lasso", "scad", "mcp", "dc")
GGM_METHODS = ("trimmed-glasso", "glasso", "graphical-scad", "graphical-mcp")
# methods scored by ordering by default; the rest by exact zeros
TOPK_METHODS = {"trimmed", "scad", "mcp", "dc", "trimmed-glasso", "graphical-scad", "graphical-mcp"}
FAILURES = (DivergenceError, NotPositiveDefinite, FloatingPointError)

RAW_COLUMNS = (
    "experiment_id", "method", "design", "p", "k", "n", "h", "lambda", "replicate", "seed",
    "success_topk", "success_exact", "l2_err", "linf_err", "iters", "final_T", "runtime_ms",
)
GROUP_COLUMNS = ("experiment_id", "method", "design", "p", "k", "n", "h")
AGG_COLUMNS = GROUP_COLUMNS + (
    "replicates", "failures",
    "success_topk_mean", "success_topk_sd", "success_exact_mean", "success_exact_sd",
    "l2_err_mean", "l2_err_sd", "linf_err_mean", "linf_err_sd",
    "iters_mean", "runtime_ms_mean",
)
TRACE_COLUMNS = ("method", "lambda", "iter", "objective", "G_k", "T")


# ---------------------------------------------------------------- plans


class _Plan:
    """JSON round-trip and validation shared by the plan dataclasses."""

    @classmethod
    def keys(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, data):
        unknown = sorted(set(data) - set(cls.keys()))
        if unknown:
            raise KeyError(f"unknown config key(s) {unknown}; valid keys: {cls.keys()}")
        return cls(**data)

    def to_dict(self):
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class ExperimentPlan(_Plan):
    """Regression study settings.

    ``n_grid`` lists sample sizes explicitly; when empty, sizes are
    ``ceil(f * k * ln p)`` for ``f`` in ``n_factors``.  ``h_policy`` is
    ``"k"``, an integer, a float fraction of ``p`` (rounded up), or a list
    of those for an h sweep; it applies to the trimmed methods only.
    """

    experiment_id: str = "support-recovery"
    design_kind: str = "M2"
    theta_cov: float = 0.7
    beta_sd: float = 5.0
    noise_sd: float = 1.0
    dims: list = field(default_factory=lambda: [[128, 8]])
    n_grid: list = field(default_factory=list)
    n_factors: list = field(default_factory=lambda: [5, 10, 20, 40])
    h_policy: object = "k"
    log10_lambdas: list = field(default_factory=lambda: list(LOG10_LAMBDA_GRID))
    methods: list = field(default_factory=lambda: ["trimmed", "lasso", "scad", "mcp"])
    replicates: int = 50
    base_seed: int = 0
    cv_folds: int = 5
    scad_a: float = 3.0
    mcp_gamma: float = 2.5
    max_iters: int = 5000
    tol_stationarity: float = 1e-6
    tau: float | None = None
    zero_tol: float = 1e-6

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not self.log10_lambdas:
            raise ValueError("the lambda grid must be non-empty")
        bad = [m for m in self.methods if m not in REGRESSION_METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown method(s) {bad}; valid: {list(REGRESSION_METHODS)}")
        if self.design_kind not in ("M1", "M2"):
            raise ValueError(f"design_kind must be 'M1' or 'M2', got {self.design_kind!r}")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        self.dims = [[int(p), int(k)] for p, k in self.dims]
        for p, k in self.dims:
            self.h_values(p, k)

    @property
    def design_label(self):
        return f"{self.design_kind}(theta={self.theta_cov:g})"

    def n_values(self, p, k):
        if self.n_grid:
            return [int(n) for n in self.n_grid]
        return [int(math.ceil(f * k * math.log(p))) for f in self.n_factors]

    def h_values(self, p, k):
        policies = self.h_policy if isinstance(self.h_policy, list) else [self.h_policy]
        out = []
        for pol in policies:
            if pol == "k":
                h = k
            elif isinstance(pol, bool):
                raise ValueError(f"invalid h policy {pol!r}")
            elif isinstance(pol, int):
                h = pol
            elif isinstance(pol, float) and 0 <= pol <= 1:
                h = int(math.ceil(pol * p))
            else:
                raise ValueError(f"invalid h policy {pol!r}: use 'k', an integer, or a fraction of p")
            if not 0 <= h <= p:
                raise ValueError(f"h={h} outside [0, {p}]")
            out.append(h)
        return out

    def lambdas(self):
        return [10.0**v for v in self.log10_lambdas]

    def solver_config(self):
        return BcdConfig(max_iters=self.max_iters, tol_stationarity=self.tol_stationarity, tau=self.tau)


@dataclass
class GgmPlan(_Plan):
    """Diamond-graph study.  ``h_fractions`` are values of ``(p^2 - h) / p^2``."""

    experiment_id: str = "ggm-diamond"
    rhos: list = field(default_factory=lambda: [0.1, 0.3])
    n: int = 100
    h_fractions: list = field(default_factory=lambda: [0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    log10_lambdas: list = field(default_factory=lambda: [round(-3.0 + 0.1 * i, 1) for i in range(31)])
    methods: list = field(default_factory=lambda: list(GGM_METHODS))
    replicates: int = 50
    base_seed: int = 0
    scad_a: float = 3.0
    mcp_gamma: float = 2.5
    max_iters: int = 2000
    tol_stationarity: float = 1e-8
    zero_tol: float = 1e-6

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not self.log10_lambdas:
            raise ValueError("the lambda grid must be non-empty")
        bad = [m for m in self.methods if m not in GGM_METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown method(s) {bad}; valid: {list(GGM_METHODS)}")
        self.h_values()

    def h_values(self):
        """Ordered off-diagonal trim counts, rounded to whole symmetric pairs."""
        p = 4
        out = []
        for f in self.h_fractions:
            if not 0 <= f <= 1:
                raise ValueError(f"h fraction {f} outside [0, 1]")
            h = 2 * int(round((1.0 - f) * p * p / 2.0))
            if h >= p * (p - 1):
                raise ValueError(f"h fraction {f} trims every off-diagonal pair")
            out.append(h)
        return out


@dataclass
class ConvergencePlan(_Plan):
    """Trimmed BCD against DC-prox on one regression instance.

    Both solvers start from ``init``: ``"minnorm"`` (minimum-norm least
    squares), ``"zero"``, or ``"random"`` (standard normal).
    """

    experiment_id: str = "convergence"
    lambdas: list = field(default_factory=lambda: [0.5, 5.0, 20.0])
    n: int = 100
    p: int = 500
    k: int = 10
    h: int = 25
    theta_cov: float = 0.0
    beta_sd: float = 5.0
    init: str = "minnorm"
    base_seed: int = 0
    max_iters: int = 20000
    tol_stationarity: float = 1e-6
    tau: float | None = None

    def __post_init__(self):
        if not self.lambdas or any(lam < 0 for lam in self.lambdas):
            raise ValueError("lambdas must be a non-empty list of non-negative values")
        if self.init not in ("minnorm", "zero", "random"):
            raise ValueError(f"init must be 'minnorm', 'zero' or 'random', got {self.init!r}")


@dataclass
class InitStudyPlan(_Plan):
    """Random restarts of the trimmed solver on one instance.

    ``log10_lambda=None`` picks lambda by cross-validation on the grid.
    Starts are ``N(0, init_scale^2)`` entrywise.
    """

    experiment_id: str = "init-study"
    n: int = 160
    p: int = 256
    k: int = 16
    h: int | None = None
    design_kind: str = "M2"
    theta_cov: float = 0.7
    beta_sd: float = 5.0
    num_inits: int = 50
    init_scale: float = 1.0
    log10_lambda: float | None = None
    log10_lambdas: list = field(default_factory=lambda: list(LOG10_LAMBDA_GRID))
    cv_folds: int = 5
    base_seed: int = 0
    max_iters: int = 50000
    tol_stationarity: float = 1e-6

    def __post_init__(self):
        if self.num_inits < 1:
            raise ValueError("num_inits must be at least 1")
        if self.design_kind not in ("M1", "M2"):
            raise ValueError(f"design_kind must be 'M1' or 'M2', got {self.design_kind!r}")


# ---------------------------------------------------------------- scoring


def support_recovered(theta_hat, support, mode="top_k", tol=1e-6):
    """Whether ``theta_hat`` identifies ``support``.

    ``exact_zero``: the entries with ``|theta| > tol`` are exactly the
    support.  ``top_k``: the ``k`` largest magnitudes sit on the support and
    strictly dominate every off-support magnitude.
    """
    a = np.abs(np.asarray(theta_hat, dtype=np.float64)).ravel()
    sup = np.zeros(a.size, dtype=bool)
    sup[np.asarray(list(support), dtype=np.intp)] = True
    if mode == "exact_zero":
        return bool(np.array_equal(a > tol, sup))
    if mode != "top_k":
        raise ValueError(f"unknown mode {mode!r}")
    if not sup.any():
        return bool(np.all(a <= tol))
    if sup.all():
        return True
    return bool(a[sup].min() > a[~sup].max())


# ---------------------------------------------------------------- CSV


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    return path


def _parse(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return None if v == "" else v


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv`, with numbers parsed back."""
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------- aggregation


def _mean_sd(values):
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return float("nan"), float("nan")
    mean = float(np.sum(x) / x.size)
    sd = float(np.sqrt(np.sum((x - mean) ** 2) / (x.size - 1))) if x.size > 1 else float("nan")
    return mean, sd


def aggregate(raw_rows):
    """Collapse per-replicate rows into one row per cell, in first-seen order.

    Failed fits (``iters < 0``) count as unsuccessful and are excluded from
    the error and iteration means.
    """
    groups = {}
    for row in raw_rows:
        groups.setdefault(tuple(row[c] for c in GROUP_COLUMNS), []).append(row)
    out = []
    for key, rows in groups.items():
        ok = [r for r in rows if r["iters"] >= 0]
        agg = dict(zip(GROUP_COLUMNS, key))
        agg["replicates"] = len(rows)
        agg["failures"] = len(rows) - len(ok)
        for col in ("success_topk", "success_exact"):
            agg[f"{col}_mean"], agg[f"{col}_sd"] = _mean_sd([r[col] for r in rows])
        for col in ("l2_err", "linf_err"):
            agg[f"{col}_mean"], agg[f"{col}_sd"] = _mean_sd([r[col] for r in ok])
        agg["iters_mean"] = _mean_sd([r["iters"] for r in ok])[0]
        agg["runtime_ms_mean"] = _mean_sd([r["runtime_ms"] for r in rows])[0]
        out.append(agg)
    return out


@dataclass
class ExperimentReport:
    """Raw per-replicate rows, aggregated cells, and study-specific extras."""

    experiment_id: str
    raw: list
    aggregate: list
    extras: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    def cells(self, **match):
        return [r for r in self.aggregate if all(r[k] == v for k, v in match.items())]

    def cell(self, **match):
        found = self.cells(**match)
        if len(found) != 1:
            raise KeyError(f"{len(found)} cells match {match}")
        return found[0]

    def success(self, method, mode=None, **match):
        """Success probability of ``method`` in its default (or given) mode."""
        mode = mode or ("top_k" if method in TOPK_METHODS else "exact_zero")
        col = "success_topk_mean" if mode == "top_k" else "success_exact_mean"
        return self.cell(method=method, **match)[col]

    def write(self, out_dir):
        """Write ``<id>_raw.csv``, ``<id>_aggregate.csv`` and any traces; return the paths."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        if self.raw:
            paths.append(write_csv(os.path.join(out_dir, f"{self.experiment_id}_raw.csv"), RAW_COLUMNS, self.raw))
            paths.append(write_csv(os.path.join(out_dir, f"{self.experiment_id}_aggregate.csv"),
                                   AGG_COLUMNS, self.aggregate))
        for name, (columns, rows) in self.traces.items():
            paths.append(write_csv(os.path.join(out_dir, name), columns, rows))
        return paths


# ---------------------------------------------------------------- fitting


def _penalty(method, lam, plan):
    if method in ("lasso", "glasso"):
        return PenaltySpec.l1(lam)
    if method in ("scad", "graphical-scad"):
        return PenaltySpec.scad(lam, plan.scad_a)
    return PenaltySpec.mcp(lam, plan.mcp_gamma)


def _fit_path(method, loss, lambdas_desc, h, plan, config, stop_at=None):
    """Warm-started fits along decreasing lambdas.

    The trimmed path starts from zero with uniform weights, so no trim set
    is favored before the data speak.  Returns ``[(theta, trace), ...]``
    with ``None`` entries for failed fits (the next fit restarts cold).
    """
    p = loss.p
    theta, w = np.zeros(p), None
    out = []
    for lam in lambdas_desc:
        try:
            if method == "trimmed":
                if w is None:
                    w = np.full(p, (p - h) / p)
                theta, w, tr = solve_bcd(TrimmedProblem(loss, lam, h), theta, config, init_w=w)
            elif method == "dc":
                theta, tr = solve_dc_trimmed(loss, h, lam, theta, config)
            else:
                theta, tr = solve_prox_gradient(loss, _penalty(method, lam, plan), theta, config)
            out.append((theta, tr))
        except FAILURES:
            theta, w = np.zeros(p), None
            out.append(None)
        if stop_at is not None and lam == stop_at:
            break
    return out


def _folds(n, k_folds, seed):
    order = np.argsort(Stream(derive_seed(seed, 0xC5)).uniform(n), kind="stable")
    fold = np.empty(n, dtype=np.intp)
    fold[order] = np.arange(n) % k_folds
    return fold


def _cross_validate(method, X, y, lambdas_desc, h, plan, config, seed):
    """Index into ``lambdas_desc`` minimizing mean held-out squared error."""
    fold = _folds(X.shape[0], plan.cv_folds, seed)
    err = np.zeros(len(lambdas_desc))
    for f in range(plan.cv_folds):
        train, test = fold != f, fold == f
        path = _fit_path(method, LeastSquaresLoss(X[train], y[train]), lambdas_desc, h, plan, config)
        for i, fit in enumerate(path):
            if fit is None:
                err[i] = np.inf
            else:
                r = X[test] @ fit[0] - y[test]
                err[i] += float(r @ r) / test.sum()
    return int(np.argmin(err))  # first minimizer, i.e. the largest lambda on ties


def _dataset(plan, p, k, n, rep):
    seed = derive_seed(plan.base_seed, p, k, n, rep)
    gen = gen_linear_m2 if plan.design_kind == "M2" else gen_linear_m1
    return gen(n, p, k, plan.theta_cov, plan.beta_sd, seed, plan.noise_sd)


def _regression_task(args):
    plan_dict, p, k, n, rep = args
    plan = ExperimentPlan.from_dict(plan_dict)
    ds = _dataset(plan, p, k, n, rep)
    config = plan.solver_config()
    lambdas_desc = sorted(plan.lambdas(), reverse=True)
    loss = LeastSquaresLoss(ds.X, ds.y)
    rows = []
    for method in plan.methods:
        hs = plan.h_values(p, k) if method in ("trimmed", "dc") else [0]
        for h in hs:
            start = time.perf_counter()
            row = dict(experiment_id=plan.experiment_id, method=method, design=plan.design_label,
                       p=p, k=k, n=n, h=h, replicate=rep, seed=ds.seed)
            idx = _cross_validate(method, ds.X, ds.y, lambdas_desc, h, plan, config, ds.seed)
            lam = lambdas_desc[idx]
            fit = _fit_path(method, loss, lambdas_desc, h, plan, config, stop_at=lam)[-1]
            if fit is None:
                row.update(success_topk=0, success_exact=0, l2_err=float("nan"),
                           linf_err=float("nan"), iters=-1, final_T=float("nan"))
            else:
                theta, tr = fit
                diff = theta - ds.theta_star
                row.update(
                    success_topk=int(support_recovered(theta, ds.support, "top_k", plan.zero_tol)),
                    success_exact=int(support_recovered(theta, ds.support, "exact_zero", plan.zero_tol)),
                    l2_err=float(np.linalg.norm(diff)), linf_err=float(np.max(np.abs(diff))),
                    iters=tr.iters, final_T=tr.final_T,
                )
            row["lambda"] = lam
            row["runtime_ms"] = 1000.0 * (time.perf_counter() - start)
            rows.append(row)
    return rows


def _run_tasks(fn, tasks, jobs):
    """Map ``fn`` over ``tasks`` and concatenate results in task order."""
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        results = [fn(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fn, tasks))
    return [row for res in results for row in res]


def _regression_rows(plan, jobs):
    tasks = [
        (plan.to_dict(), p, k, n, rep)
        for p, k in plan.dims
        for n in plan.n_values(p, k)
        for rep in range(plan.replicates)
    ]
    return _run_tasks(_regression_task, tasks, jobs)


def _ordered(raw, plan):
    # group rows by cell so aggregation and CSVs follow method-major order
    method_rank = {m: i for i, m in enumerate(plan.methods)}
    return sorted(raw, key=lambda r: (r["p"], r["k"], method_rank[r["method"]], r["h"], r["n"], r["replicate"]))


def run_support_recovery(plan, jobs=1):
    """Support-recovery probabilities per (method, p, k, n, h) cell."""
    raw = _ordered(_regression_rows(plan, jobs), plan)
    return ExperimentReport(plan.experiment_id, raw, aggregate(raw))


def loglog_slope(ns, errors):
    """Least-squares slope of ``log(error)`` against ``log(n)``."""
    x, y = np.log(np.asarray(ns, dtype=float)), np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def run_error_curves(plan, jobs=1):
    """Error curves plus the log-log slope of mean l2 error on the largest-n half.

    ``report.extras["slopes"]`` maps ``"method|p|k|h"`` to the fitted slope.
    """
    report = run_support_recovery(plan, jobs)
    slopes = {}
    for p, k in plan.dims:
        ns = plan.n_values(p, k)
        tail = sorted(ns)[len(ns) // 2:]
        for method in plan.methods:
            for h in (plan.h_values(p, k) if method in ("trimmed", "dc") else [0]):
                if len(tail) < 2:
                    continue
                errs = [report.cell(method=method, p=p, k=k, n=n, h=h)["l2_err_mean"] for n in tail]
                slopes[f"{method}|{p}|{k}|{h}"] = loglog_slope(tail, errs)
    report.extras["slopes"] = slopes
    report.extras["slope_n"] = {f"{p}|{k}": sorted(plan.n_values(p, k))[len(plan.n_values(p, k)) // 2:]
                                for p, k in plan.dims}
    return report


# ---------------------------------------------------------------- convergence


def _convergence_instance(plan):
    seed = derive_seed(plan.base_seed, plan.n, plan.p, plan.k)
    ds = gen_linear_m2(plan.n, plan.p, plan.k, plan.theta_cov, plan.beta_sd, seed)
    if plan.init == "minnorm":
        theta0 = np.linalg.lstsq(ds.X, ds.y, rcond=None)[0]
    elif plan.init == "random":
        theta0 = Stream(derive_seed(seed, 0x1A)).normal(plan.p)
    else:
        theta0 = np.zeros(plan.p)
    return ds, theta0


def run_convergence_comparison(plan=None, jobs=1):
    """Objective traces of trimmed BCD and DC-prox from a shared start.

    ``report.extras["final"]`` maps each lambda to the final trimmed
    objectives ``{"trimmed-bcd": ..., "DC-prox": ...}``; one trace CSV per
    lambda is attached.  The BCD trace column is the joint objective, which
    the step-size rule makes monotone.
    """
    plan = plan or ConvergencePlan()
    ds, theta0 = _convergence_instance(plan)
    loss = LeastSquaresLoss(ds.X, ds.y)
    config = BcdConfig(max_iters=plan.max_iters, tol_stationarity=plan.tol_stationarity, tau=plan.tau)
    final, traces, raw = {}, {}, []
    for lam in plan.lambdas:
        runs = []
        start = time.perf_counter()
        theta_b, _, tr_b = solve_bcd(TrimmedProblem(loss, lam, plan.h), theta0, config)
        t_b = 1000.0 * (time.perf_counter() - start)
        start = time.perf_counter()
        theta_d, tr_d = solve_dc_trimmed(loss, plan.h, lam, theta0, config)
        t_d = 1000.0 * (time.perf_counter() - start)
        for theta, tr, ms in ((theta_b, tr_b, t_b), (theta_d, tr_d, t_d)):
            runs.append(tr)
            diff = theta - ds.theta_star
            raw.append(dict(
                experiment_id=plan.experiment_id, method=tr.method, design=f"M2(theta={plan.theta_cov:g})",
                p=plan.p, k=plan.k, n=plan.n, h=plan.h, replicate=0, seed=ds.seed, **{"lambda": lam},
                success_topk=int(support_recovered(theta, ds.support, "top_k")),
                success_exact=int(support_recovered(theta, ds.support, "exact_zero")),
                l2_err=float(np.linalg.norm(diff)), linf_err=float(np.max(np.abs(diff))),
                iters=tr.iters, final_T=tr.final_T, runtime_ms=ms,
            ))
        final[lam] = {tr.method: tr.final_objective for tr in runs}
        rows = []
        for tr in runs:
            for it, obj, g, T in tr.rows():
                rows.append({"method": tr.method, "lambda": lam, "iter": it, "objective": obj,
                             "G_k": "" if g is None else g, "T": T})
        traces[f"{plan.experiment_id}_trace_lambda{lam:g}.csv"] = (TRACE_COLUMNS, rows)
    report = ExperimentReport(plan.experiment_id, raw, [], traces=traces)
    report.extras["final"] = final
    return report


# ---------------------------------------------------------------- graphical study


def _pair_support(Theta, tol):
    rows, cols = np.triu_indices(Theta.shape[0], k=1)
    return {(int(i), int(j)) for i, j in zip(rows, cols) if abs(Theta[i, j]) > tol}


def _pair_topk(Theta, support):
    rows, cols = np.triu_indices(Theta.shape[0], k=1)
    mags = np.abs(Theta[rows, cols])
    idx = [i for i, (r, c) in enumerate(zip(rows, cols)) if (int(r), int(c)) in set(support)]
    return support_recovered(mags, idx, "top_k")


def _ggm_start(S):
    try:
        if np.linalg.cond(S) < 1e10:
            inv = np.linalg.inv(S)
            return 0.5 * (inv + inv.T)
    except np.linalg.LinAlgError:
        pass
    return np.diag(1.0 / np.diag(S))


def _ggm_task(args):
    plan_dict, rho, rep = args
    plan = GgmPlan.from_dict(plan_dict)
    seed = derive_seed(plan.base_seed, int(round(rho * 1e6)), rep)
    ds = gen_diamond_ggm(plan.n, rho, seed)
    S = ds.sample_covariance
    loss = GaussianGraphicalLoss(S)
    start_theta = _ggm_start(S)
    truth = set(ds.support)
    config = BcdConfig(max_iters=plan.max_iters, tol_stationarity=plan.tol_stationarity)
    lambdas = sorted((10.0**v for v in plan.log10_lambdas), reverse=True)
    rows = []
    for method in plan.methods:
        for h in (plan.h_values() if method == "trimmed-glasso" else [0]):
            t0 = time.perf_counter()
            found_exact, found_topk, best, iters, final_T, failures = None, False, None, 0, float("nan"), 0
            for lam in lambdas:
                try:
                    if method == "trimmed-glasso":
                        Theta, _, tr = solve_bcd(TrimmedProblem(loss, lam, h), start_theta, config)
                    else:
                        Theta, tr = solve_prox_gradient(loss, _penalty(method, lam, plan), start_theta, config)
                except FAILURES:
                    failures += 1
                    continue
                err = float(np.linalg.norm(Theta - ds.theta_star))
                if _pair_support(Theta, plan.zero_tol) == truth and found_exact is None:
                    found_exact = (lam, Theta, tr)
                found_topk = found_topk or _pair_topk(Theta, ds.support)
                if best is None or err < best[0]:
                    best = (err, lam, Theta, tr)
            row = dict(experiment_id=plan.experiment_id, method=method, design=f"DiamondGGM(rho={rho:g})",
                       p=4, k=len(truth), n=plan.n, h=h, replicate=rep, seed=seed)
            if found_exact is None and best is None:
                row.update(success_topk=0, success_exact=0, l2_err=float("nan"), linf_err=float("nan"),
                           iters=-1, final_T=float("nan"), **{"lambda": float("nan")})
            else:
                lam, Theta, tr = found_exact if found_exact is not None else best[1:]
                diff = Theta - ds.theta_star
                row.update(success_topk=int(found_topk), success_exact=int(found_exact is not None),
                           l2_err=float(np.linalg.norm(diff)), linf_err=float(np.max(np.abs(diff))),
                           iters=tr.iters, final_T=tr.final_T, **{"lambda": lam})
            row["runtime_ms"] = 1000.0 * (time.perf_counter() - t0)
            rows.append(row)
    return rows


def run_ggm_diamond(plan=None, jobs=1):
    """Support recovery on the diamond graph, best along each lambda path.

    A replicate succeeds (``success_exact``) if some lambda on the path
    yields exactly the true off-diagonal support.  The reported lambda and
    errors belong to the first such lambda, or to the lambda with the
    smallest Frobenius error when none succeeds.
    """
    plan = plan or GgmPlan()
    tasks = [(plan.to_dict(), rho, rep) for rho in plan.rhos for rep in range(plan.replicates)]
    raw = _run_tasks(_ggm_task, tasks, jobs)
    method_rank = {m: i for i, m in enumerate(plan.methods)}
    rho_rank = {f"DiamondGGM(rho={rho:g})": i for i, rho in enumerate(plan.rhos)}
    raw.sort(key=lambda r: (rho_rank[r["design"]], method_rank[r["method"]], -r["h"], r["replicate"]))
    return ExperimentReport(plan.experiment_id, raw, aggregate(raw))


# ---------------------------------------------------------------- initialization study


def _init_task(args):
    plan_dict, lam, h, i = args
    plan = InitStudyPlan.from_dict(plan_dict)
    ds = _init_dataset(plan)
    loss = LeastSquaresLoss(ds.X, ds.y)
    theta0 = plan.init_scale * Stream(derive_seed(ds.seed, 0x1417, i)).normal(plan.p)
    config = BcdConfig(max_iters=plan.max_iters, tol_stationarity=plan.tol_stationarity)
    start = time.perf_counter()
    problem = TrimmedProblem(loss, lam, h)
    theta, _, tr = solve_bcd(problem, theta0, config)
    diff = theta - ds.theta_star
    return [dict(
        experiment_id=plan.experiment_id, method="trimmed", design=f"{plan.design_kind}(theta={plan.theta_cov:g})",
        p=plan.p, k=plan.k, n=plan.n, h=h, replicate=i, seed=ds.seed, **{"lambda": lam},
        success_topk=int(support_recovered(theta, ds.support, "top_k")),
        success_exact=int(support_recovered(theta, ds.support, "exact_zero")),
        l2_err=float(np.linalg.norm(diff)), linf_err=float(np.max(np.abs(diff))),
        iters=tr.iters, final_T=tr.final_T, runtime_ms=1000.0 * (time.perf_counter() - start),
        objective=problem.objective(theta), status=tr.status,
    )]


def _init_dataset(plan):
    seed = derive_seed(plan.base_seed, plan.n, plan.p, plan.k)
    gen = gen_linear_m2 if plan.design_kind == "M2" else gen_linear_m1
    return gen(plan.n, plan.p, plan.k, plan.theta_cov, plan.beta_sd, seed)


def run_initialization_study(plan=None, jobs=1):
    """Solve one instance from ``num_inits`` random starts and summarize the spread.

    ``report.extras["summary"]`` holds the objective range relative to its
    mean, the l2 error spread (absolute and relative to ``||theta*||``), and
    the largest final stationarity value.
    """
    plan = plan or InitStudyPlan()
    ds = _init_dataset(plan)
    h = plan.k if plan.h is None else int(plan.h)
    if plan.log10_lambda is None:
        eplan = ExperimentPlan(methods=["trimmed"], log10_lambdas=plan.log10_lambdas, cv_folds=plan.cv_folds,
                               max_iters=plan.max_iters, tol_stationarity=plan.tol_stationarity)
        lambdas_desc = sorted(eplan.lambdas(), reverse=True)
        lam = lambdas_desc[_cross_validate("trimmed", ds.X, ds.y, lambdas_desc, h, eplan,
                                           eplan.solver_config(), ds.seed)]
    else:
        lam = 10.0**plan.log10_lambda
    rows = _run_tasks(_init_task, [(plan.to_dict(), lam, h, i) for i in range(plan.num_inits)], jobs)
    objs = np.array([r["objective"] for r in rows])
    l2 = np.array([r["l2_err"] for r in rows])
    summary = dict(
        lam=lam, h=h,
        objective_min=float(objs.min()), objective_max=float(objs.max()), objective_mean=float(objs.mean()),
        objective_spread_rel=float((objs.max() - objs.min()) / abs(objs.mean())),
        l2_mean=float(l2.mean()), l2_sd=float(l2.std(ddof=1)) if l2.size > 1 else 0.0,
        l2_spread=float(l2.max() - l2.min()),
        l2_spread_rel=float((l2.max() - l2.min()) / np.linalg.norm(ds.theta_star)),
        max_final_T=float(max(r["final_T"] for r in rows)),
        stationary=int(sum(r["status"] == "Stationary" for r in rows)),
        success_topk=float(np.mean([r["success_topk"] for r in rows])),
    )
    detail = [dict(r) for r in rows]
    raw = [{c: r[c] for c in RAW_COLUMNS} for r in rows]
    report = ExperimentReport(plan.experiment_id, raw, aggregate(raw))
    report.extras["summary"] = summary
    report.extras["detail"] = detail
    return report


# ---------------------------------------------------------------- presets


PRESETS = {
    # desk-scale equicorrelated design (incoherence holds)
    "equicorrelated": ("support-recovery", dict(experiment_id="equicorrelated", design_kind="M2", theta_cov=0.7,
                                      dims=[[64, 4], [128, 8], [256, 16]])),
    # design violating incoherence
    "incoherence-violated": ("support-recovery", dict(experiment_id="incoherence-violated", design_kind="M1", theta_cov=0.3,
                                      dims=[[64, 4], [128, 8], [256, 16]])),
    # small-lambda regime with weak signals and h = ceil(0.05 p)
    "small-lambda": ("support-recovery", dict(experiment_id="small-lambda", design_kind="M2", theta_cov=0.7, beta_sd=0.8,
                                       h_policy=0.05, dims=[[128, 8]],
                                       log10_lambdas=[round(-3.0 + 0.2 * i, 1) for i in range(11)])),
    "error-curves": ("error-curves", dict(experiment_id="error-curves", dims=[[128, 8]],
                                          n_grid=[100, 200, 400, 800, 1600], h_policy=[0, "k"],
                                          methods=["trimmed"])),
    "large": ("support-recovery", dict(experiment_id="large", dims=[[512, 32]])),
}


def preset_plan(name):
    kind, kwargs = PRESETS[name]
    return kind, ExperimentPlan(**kwargs)


__all__ += ["preset_plan", "loglog_slope"]

import itertools

import numpy as np
import pytest

from oracles import min_norm_weight_subgradient_grid, trimmed_global_minimum
from trimreg.bcd import descent_certificate, initial_weights, rate_bound, solve_bcd, stationarity_T
from trimreg.penalty import project_capped_simplex
from trimreg.problem import BcdConfig, DivergenceError, TrimmedProblem


def regression(seed, n=30, p=10, k=3, noise=0.5):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[rng.choice(p, k, replace=False)] = rng.normal(0, 3, k)
    return X, X @ beta + noise * rng.standard_normal(n)


def test_lambda_zero_reaches_least_squares_solution():
    X, y = regression(0, n=40, p=6)
    prob = TrimmedProblem.least_squares(X, y, 0.0, 2)
    theta, _, trace = solve_bcd(prob, config=BcdConfig(max_iters=100_000, tol_stationarity=1e-14))
    _, grad = prob.loss.value_grad(theta)
    assert np.linalg.norm(grad) <= 1e-6
    np.testing.assert_allclose(theta, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-6)


def test_full_trim_reaches_unregularized_minimizer():
    X, y = regression(1, n=40, p=6)
    prob = TrimmedProblem.least_squares(X, y, 5.0, 6)
    theta, w, _ = solve_bcd(prob, config=BcdConfig(max_iters=100_000, tol_stationarity=1e-14))
    assert w.sum() == pytest.approx(0.0)
    np.testing.assert_allclose(theta, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-6)


def test_stationarity_zero_at_origin_for_zero_gradient():
    X = np.random.default_rng(2).standard_normal((10, 4))
    prob = TrimmedProblem.least_squares(X, np.zeros(10), 1.0, 1)
    assert stationarity_T(prob, np.zeros(4), np.array([0.25, 0.75, 1.0, 1.0])) == 0.0


def test_stationarity_rejects_infeasible_weights():
    X, y = regression(3)
    prob = TrimmedProblem.least_squares(X, y, 1.0, 2)
    with pytest.raises(ValueError):
        stationarity_T(prob, np.zeros(10), np.ones(10))


def test_stationarity_matches_grid_oracle():
    rng = np.random.default_rng(4)
    for _ in range(30):
        p = int(rng.integers(2, 7))
        h = int(rng.integers(0, p + 1))
        X = rng.standard_normal((8, p))
        y = rng.standard_normal(8)
        lam = rng.uniform(0.1, 2)
        prob = TrimmedProblem.least_squares(X, y, lam, h)
        theta = rng.standard_normal(p) * (rng.uniform(size=p) < 0.6)
        w = project_capped_simplex(rng.uniform(-0.5, 1.5, p), h)
        _, g = prob.loss.value_grad(theta)
        # theta block: coordinatewise distance of the subgradient interval from zero
        lo = g + lam * w * np.where(theta != 0, np.sign(theta), -1.0)
        hi = g + lam * w * np.where(theta != 0, np.sign(theta), 1.0)
        u2 = np.sum(np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(lo**2, hi**2)))
        v2 = min_norm_weight_subgradient_grid(lam * np.abs(theta), w)
        assert stationarity_T(prob, theta, w) == pytest.approx(u2 + v2, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_converged_run_satisfies_stopping_rule(seed):
    X, y = regression(seed)
    prob = TrimmedProblem.least_squares(X, y, 0.5, 3)
    theta, w, trace = solve_bcd(prob, config=BcdConfig(max_iters=50_000))
    if trace.status == "Stationary":
        assert stationarity_T(prob, theta, w) <= 1e-6
        assert trace.final_T <= 1e-6
    assert descent_certificate(trace)


@pytest.mark.parametrize("seed", range(10))
def test_joint_objective_monotone_and_certificate(seed):
    X, y = regression(seed + 100, n=25, p=15)
    lam = [0.1, 1.0, 5.0][seed % 3]
    prob = TrimmedProblem.least_squares(X, y, lam, 3)
    _, _, trace = solve_bcd(prob, config=BcdConfig(max_iters=3000))
    assert np.all(np.diff(trace.objective) <= 1e-10)
    assert descent_certificate(trace)
    best_T, bound = rate_bound(trace)
    assert best_T <= bound + 1e-6


def test_single_iteration_at_stationary_point_has_zero_G():
    X = np.random.default_rng(5).standard_normal((10, 4))
    prob = TrimmedProblem.least_squares(X, np.zeros(10), 1.0, 2)
    _, _, trace = solve_bcd(prob, config=BcdConfig(max_iters=1))
    assert trace.iters <= 1
    assert np.all(trace.G == 0.0)
    assert descent_certificate(trace)


def test_fixed_point_consistency():
    X, y = regression(6)
    prob = TrimmedProblem.least_squares(X, y, 0.3, 3)
    theta, w, trace = solve_bcd(prob, config=BcdConfig(max_iters=200_000, tol_stationarity=1e-12))
    assert stationarity_T(prob, theta, w) <= 1e-10
    theta2, _, _ = solve_bcd(prob, init_theta=theta, init_w=w, config=BcdConfig(max_iters=1))
    assert np.linalg.norm(theta2 - theta) <= 1e-6


def test_global_minimum_from_all_trim_set_starts():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((12, 6))
    y = X[:, :2] @ np.array([2.0, -1.5]) + 0.3 * rng.standard_normal(12)
    lam, h = 0.8, 2
    prob = TrimmedProblem.least_squares(X, y, lam, h)
    best = np.inf
    for T in itertools.combinations(range(6), h):
        w0 = np.ones(6)
        w0[list(T)] = 0.0
        theta, _, _ = solve_bcd(prob, init_w=w0, config=BcdConfig(max_iters=100_000, tol_stationarity=1e-14))
        best = min(best, prob.objective(theta))
    assert best == pytest.approx(trimmed_global_minimum(X, y, lam, h)[0], abs=1e-6)


def test_engines_agree():
    X, y = regression(8, n=30, p=12)
    prob = TrimmedProblem.least_squares(X, y, 0.7, 3)
    for w_update in ("gradient_step", "exact_minimize"):
        a = solve_bcd(prob, config=BcdConfig(max_iters=400, engine="numba", w_update=w_update))
        b = solve_bcd(prob, config=BcdConfig(max_iters=400, engine="python", w_update=w_update))
        np.testing.assert_allclose(a[0], b[0], atol=1e-12)
        np.testing.assert_allclose(a[1], b[1], atol=1e-12)
        np.testing.assert_allclose(a[2].objective, b[2].objective, rtol=1e-12)
        assert a[2].status == b[2].status


def test_exact_minimize_keeps_binary_weights_and_descends():
    X, y = regression(9)
    prob = TrimmedProblem.least_squares(X, y, 1.0, 3)
    _, w, trace = solve_bcd(prob, config=BcdConfig(w_update="exact_minimize", max_iters=2000))
    assert set(np.unique(w)) <= {0.0, 1.0}
    assert np.all(np.diff(trace.objective) <= 1e-10)


def test_deterministic_repeat():
    X, y = regression(10)
    prob = TrimmedProblem.least_squares(X, y, 0.5, 2)
    a = solve_bcd(prob)
    b = solve_bcd(prob)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[2].objective, b[2].objective)


def test_large_step_diverges_with_trace():
    X, y = regression(11, n=20, p=5)
    prob = TrimmedProblem.least_squares(X, y, 0.1, 1)
    L = prob.loss.lipschitz
    with pytest.raises(DivergenceError) as info:
        solve_bcd(prob, config=BcdConfig(eta=50.0 / L, max_iters=100_000))
    assert info.value.trace is not None and info.value.trace.status == "Diverged"


def test_trace_rows_layout():
    X, y = regression(12)
    _, _, trace = solve_bcd(TrimmedProblem.least_squares(X, y, 1.0, 2), config=BcdConfig(max_iters=5))
    rows = trace.rows()
    assert rows[0][0] == 0 and rows[0][2] is None
    assert len(rows) == trace.iters + 1
    assert [r[0] for r in rows] == list(range(trace.iters + 1))


def test_initial_weights_trim_largest():
    X, y = regression(13, p=4)
    prob = TrimmedProblem.least_squares(X, y, 1.0, 2)
    np.testing.assert_array_equal(initial_weights(prob, np.array([0.1, -3.0, 2.0, 0.0])), [1, 0, 0, 1])


@pytest.mark.parametrize("kwargs", [dict(max_iters=0), dict(tol_stationarity=0.0), dict(eta=-1.0),
                                    dict(tau=0.0), dict(w_update="bogus"), dict(engine="gpu")])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        BcdConfig(**kwargs)


def test_problem_validation():
    X, y = regression(14, p=4)
    with pytest.raises(ValueError):
        TrimmedProblem.least_squares(X, y, -1.0, 1)
    with pytest.raises(ValueError):
        TrimmedProblem.least_squares(X, y, 1.0, 5)
    with pytest.raises(ValueError):
        TrimmedProblem.graphical(np.eye(3), 1.0, 3)
    with pytest.raises(ValueError):
        TrimmedProblem.graphical(np.eye(3), 1.0, 6)
    prob = TrimmedProblem.least_squares(X, y, 1.0, 1)
    with pytest.raises(ValueError):
        solve_bcd(prob, init_theta=np.zeros(3))
    with pytest.raises(ValueError):
        solve_bcd(prob, init_w=np.ones(4))


# ---- graphical problems --------------------------------------------------------

def graphical_problem(seed, lam=0.1, h=2):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((60, 4))
    return TrimmedProblem.graphical(Z.T @ Z / 60, lam, h)


@pytest.mark.parametrize("seed", range(4))
def test_graphical_bcd_monotone_symmetric_pd(seed):
    prob = graphical_problem(seed, lam=[0.05, 0.3][seed % 2], h=2 * (seed % 3))
    Theta, w, trace = solve_bcd(prob, config=BcdConfig(max_iters=2000, tol_stationarity=1e-10))
    assert w.shape == (6,)
    np.testing.assert_array_equal(Theta, Theta.T)
    assert np.linalg.eigvalsh(Theta)[0] > 0
    assert np.all(np.diff(trace.objective) <= 1e-10)
    assert descent_certificate(trace)


def test_graphical_lambda_zero_recovers_inverse():
    prob = graphical_problem(5, lam=0.0, h=0)
    Theta, _, _ = solve_bcd(prob, config=BcdConfig(max_iters=20_000, tol_stationarity=1e-16))
    np.testing.assert_allclose(Theta, np.linalg.inv(prob.loss.S), atol=1e-6)


def test_graphical_trimmed_pairs_stay_unpenalized():
    prob = graphical_problem(6, lam=5.0, h=2)
    Theta, w, _ = solve_bcd(prob, config=BcdConfig(max_iters=5000, tol_stationarity=1e-12))
    off = Theta[np.triu_indices(4, 1)]
    assert np.count_nonzero(off) <= 1
    assert w.sum() == pytest.approx(5.0)

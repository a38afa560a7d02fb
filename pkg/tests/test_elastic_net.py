import numpy as np
import pytest

from panel_ensemble import elastic_net as en
from panel_ensemble.errors import FoldError, MixingError, NumericalError


def standardize(X, y):
    Z = (X - X.mean(0)) / X.std(0)
    return Z, y - y.mean()


def objective(Z, yc, c, lam, mix):
    r = yc - Z @ c
    return 0.5 * r @ r + lam * (mix * np.abs(c).sum() + 0.5 * (1 - mix) * c @ c)


def problem(seed, n=12, p=5, noise=0.5):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, p)) * g.uniform(0.5, 3, p) + g.normal(size=p)
    beta = g.normal(size=p) * (g.random(p) < 0.6)
    return X, X @ beta + 1.5 + noise * g.normal(size=n)


# -- exact cases ----------------------------------------------------------


def test_lambda_zero_is_ols():
    X, y = problem(0, n=30, p=6)
    fit = en.fit_elastic_net(X, y, 0.0, 1.0)
    A = np.column_stack([np.ones(len(y)), X])
    oracle = np.linalg.solve(A.T @ A, A.T @ y)
    np.testing.assert_allclose(fit.intercept, oracle[0], atol=1e-8)
    np.testing.assert_allclose(fit.coefficients, oracle[1:], atol=1e-8)
    assert en.kkt_residual(fit, X, y) <= 1e-8


def test_full_shrinkage_gives_mean():
    X, y = problem(1)
    for mix in (0.05, 0.5, 1.0):
        lam = en.lambda_max(X, y, mix)
        fit = en.fit_elastic_net(X, y, lam * 1.5, mix)
        assert fit.n_nonzero == 0
        assert np.all(fit.coefficients == 0.0)
        assert fit.intercept == pytest.approx(y.mean(), abs=1e-12)
        assert en.kkt_residual(fit, X, y) <= 1e-8


def test_lambda_max_boundary():
    X, y = problem(2)
    for mix in (0.25, 1.0):
        lm = en.lambda_max(X, y, mix)
        assert en.fit_elastic_net(X, y, lm * (1 + 1e-9), mix).n_nonzero == 0
        assert en.fit_elastic_net(X, y, lm * 0.99, mix).n_nonzero >= 1


def test_lambda_max_constant_response():
    X, _ = problem(3)
    assert en.lambda_max(X, np.full(12, 4.0), 1.0) == 0.0


def test_lambda_max_single_predictor_analytic():
    z = np.array([-1.0, 1.0, -1.0, 1.0])  # already standardized
    y = 0.75 * z + 10.0  # <z, y - mean> = 3
    assert en.lambda_max(z[:, None], y, 1.0) == pytest.approx(3.0, rel=1e-14)
    assert en.lambda_max(z[:, None], y, 0.5) == pytest.approx(6.0, rel=1e-14)


def test_lambda_max_rejects_ridge():
    X, y = problem(4)
    with pytest.raises(MixingError):
        en.lambda_max(X, y, 0.0)
    with pytest.raises(MixingError):
        en.fit_elastic_net(X, y, 1.0, 1.5)


def test_two_predictor_lasso_matches_grid_search():
    g = np.random.default_rng(5)
    X = g.normal(size=(15, 2))
    X[:, 1] += 0.6 * X[:, 0]
    y = X @ [1.2, -0.7] + 0.3 * g.normal(size=15)
    Z, yc = standardize(X, y)
    lam = 0.3 * np.abs(Z.T @ yc).max()
    fit = en.fit_elastic_net(X, y, lam, 1.0)
    c = fit.coefficients * X.std(0)

    # coarse-to-fine exhaustive search over coefficient space
    lo, hi, best = np.array([-10.0, -10.0]), np.array([10.0, 10.0]), None
    for _ in range(8):
        a = np.linspace(lo[0], hi[0], 201)
        b = np.linspace(lo[1], hi[1], 201)
        A, B = np.meshgrid(a, b, indexing="ij")
        R = yc[:, None, None] - Z[:, 0, None, None] * A - Z[:, 1, None, None] * B
        F = 0.5 * (R**2).sum(0) + lam * (np.abs(A) + np.abs(B))
        k = np.unravel_index(np.argmin(F), F.shape)
        best = np.array([A[k], B[k]])
        step = (hi - lo) / 200
        lo, hi = best - 5 * step, best + 5 * step
    np.testing.assert_allclose(c, best, atol=1e-6)
    assert objective(Z, yc, c, lam, 1.0) <= objective(Z, yc, best, lam, 1.0) + 1e-12


def test_orthonormal_design_soft_thresholds():
    # columns with zero mean, unit population variance and orthogonal
    Z = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    y = np.array([3.0, 1.0, -2.0, 0.5])
    lam = 1.5
    fit = en.fit_elastic_net(Z, y, lam, 1.0)
    z = Z.T @ (y - y.mean())
    soft = np.sign(z) * np.maximum(np.abs(z) - lam, 0) / 4.0  # ||z_j||^2 = n = 4
    np.testing.assert_allclose(fit.coefficients, soft, atol=1e-12)


def test_constant_column_pinned_to_zero():
    X, y = problem(6)
    X[:, 2] = 7.0
    fit = en.fit_elastic_net(X, y, 0.01, 0.5)
    assert fit.coefficients[2] == 0.0
    assert en.kkt_residual(fit, X, y) <= 1e-6 * max(1, np.abs(y).max())


def test_empty_design_is_intercept_only():
    y = np.array([1.0, 2.0, 6.0])
    fit = en.fit_elastic_net(np.zeros((3, 0)), y, 0.5, 1.0)
    assert fit.intercept == pytest.approx(3.0)
    assert fit.coefficients.shape == (0,)


def test_non_finite_rejected():
    X, y = problem(7)
    X[0, 0] = np.inf
    with pytest.raises(NumericalError):
        en.fit_elastic_net(X, y, 0.1, 1.0)


# -- optimality -----------------------------------------------------------


@pytest.mark.parametrize("seed", range(6))
def test_perturbation_raises_objective(seed):
    g = np.random.default_rng(100 + seed)
    n, p = g.integers(6, 20), g.integers(2, 15)
    X, y = problem(seed, n=n, p=p)
    mix = [0.05, 0.5, 1.0, 0.25, 0.95, 0.75][seed]
    lam = en.lambda_max(X, y, mix) * 10 ** g.uniform(-3, -0.2)
    fit = en.fit_elastic_net(X, y, lam, mix)
    base = en.penalty_objective(fit, X, y)
    for j in range(p):
        for d in (-1e-3, 1e-3):
            coef = fit.coefficients.copy()
            coef[j] += d
            moved = en.ElasticNetFit(fit.intercept, coef, lam, mix, 0, True)
            assert en.penalty_objective(moved, X, y) > base


def test_kkt_residual_detects_suboptimal_point():
    X, y = problem(8)
    fit = en.fit_elastic_net(X, y, 0.1, 0.5)
    bad = en.ElasticNetFit(fit.intercept, fit.coefficients * 0.5, 0.1, 0.5, 0, True)
    assert en.kkt_residual(bad, X, y) > 1e-3


def test_objective_trace_non_increasing():
    for seed in range(20):
        g = np.random.default_rng(seed)
        X, y = problem(seed, n=int(g.integers(4, 20)), p=int(g.integers(1, 20)))
        mix = float(g.choice(en.MIXINGS))
        lam = en.lambda_max(X, y, mix) * 10 ** g.uniform(-4, 0)
        fit = en.fit_elastic_net(X, y, lam, mix, trace=True)
        tr = fit.objective_trace
        assert fit.converged
        assert np.all(np.diff(tr) <= 1e-12 * np.abs(tr[:-1]))


def test_p_greater_than_n_lasso_converges():
    X, y = problem(9, n=8, p=20)
    lam = en.lambda_max(X, y, 1.0) * 1e-4
    fit = en.fit_elastic_net(X, y, lam, 1.0)
    assert fit.converged
    assert fit.n_nonzero <= 7  # at most rank of the centered design
    assert en.kkt_residual(fit, X, y) <= 1e-6 * max(1, np.abs(y).max())


def test_path_signs_pass_through_zero():
    X, y = problem(10, n=15, p=10)
    for mix in en.MIXINGS:
        lams = en.lambda_max(X, y, mix) * np.geomspace(1, 1e-4, 50)
        coefs = np.array([f.coefficients for f in en.fit_path(X, y, lams, mix)])
        assert not np.any(np.sign(coefs[1:]) * np.sign(coefs[:-1]) < 0)


def test_path_matches_cold_fits():
    X, y = problem(11, n=14, p=8)
    lams = en.lambda_max(X, y, 0.5) * np.geomspace(1, 1e-3, 12)
    for f in en.fit_path(X, y, lams, 0.5):
        cold = en.fit_elastic_net(X, y, f.lam, 0.5)
        np.testing.assert_allclose(f.coefficients, cold.coefficients, atol=1e-6)
        assert en.kkt_residual(f, X, y) <= 1e-6 * max(1, np.abs(y).max())


def test_scaling_equivariance():
    X, y = problem(12, n=20, p=4)
    c = 3.7
    ols = en.fit_elastic_net(X, y, 0.0, 1.0)
    ols_c = en.fit_elastic_net(X, c * y, 0.0, 1.0)
    np.testing.assert_allclose(ols_c.coefficients, c * ols.coefficients, atol=1e-8)
    # a single lambda scales exactly only without the quadratic penalty
    f = en.fit_elastic_net(X, y, 0.8, 1.0)
    fc = en.fit_elastic_net(X, c * y, c * 0.8, 1.0)
    np.testing.assert_allclose(fc.coefficients, c * f.coefficients, atol=1e-8)
    assert fc.intercept == pytest.approx(c * f.intercept, abs=1e-8)
    # with mixing the l1 weight scales by c and the l2 weight stays put
    lam, mix = 0.8, 0.25
    lam_c = c * lam * mix + lam * (1 - mix)
    f = en.fit_elastic_net(X, y, lam, mix)
    fc = en.fit_elastic_net(X, c * y, lam_c, c * lam * mix / lam_c)
    np.testing.assert_allclose(fc.coefficients, c * f.coefficients, atol=1e-8)


# -- grid and cross-validation -------------------------------------------


def test_grid_shape_and_endpoints():
    X, y = problem(13)
    grid = en.make_grid(X, y)
    assert grid.mixings == en.MIXINGS
    assert grid.lambdas.shape == (6, 50)
    for k, mix in enumerate(grid.mixings):
        path = grid.path(k)
        assert path[0] == pytest.approx(en.lambda_max(X, y, mix), rel=1e-14)
        assert path[-1] == pytest.approx(1e-4 * path[0], rel=1e-12)
        assert np.all(np.diff(path) < 0)


def hand_rolled_cv(X, y, folds, grid):
    """Independent CV loop: cold-start fits at every grid point."""
    err = np.zeros(grid.lambdas.shape)
    labels = np.unique(folds)
    for k, mix in enumerate(grid.mixings):
        for j, lam in enumerate(grid.lambdas[k]):
            total = 0.0
            for f in labels:
                tr, te = folds != f, folds == f
                fit = en.fit_elastic_net(X[tr], y[tr], lam, mix)
                total += np.mean((fit.predict(X[te]) - y[te]) ** 2)
            err[k, j] = total / len(labels)
    best = err.min()
    pairs = [
        (grid.lambdas[k, j], grid.mixings[k])
        for k, j in np.argwhere(err <= best + 1e-12 * abs(best))
    ]
    return err, max(pairs)


def test_cv_matches_hand_rolled_four_samples():
    g = np.random.default_rng(14)
    X = g.normal(size=(4, 1))
    y = 2 * X[:, 0] + g.normal(size=4)
    folds = np.array([0, 1, 0, 1])
    grid = en.make_grid(X, y)
    err, pick = hand_rolled_cv(X, y, folds, grid)
    np.testing.assert_allclose(en.cv_errors(X, y, folds, grid), err, rtol=1e-9, atol=1e-12)
    assert en.select_penalties_cv(X, y, folds, grid) == pytest.approx(pick, rel=1e-12)


def test_cv_matches_hand_rolled_larger():
    X, y = problem(15, n=10, p=3)
    folds = np.arange(10) % 3
    grid = en.make_grid(X, y, n_lambda=12)
    err, pick = hand_rolled_cv(X, y, folds, grid)
    np.testing.assert_allclose(en.cv_errors(X, y, folds, grid), err, rtol=1e-7, atol=1e-10)
    assert en.select_penalties_cv(X, y, folds, grid) == pytest.approx(pick, rel=1e-12)


def test_cv_recovers_single_signal():
    g = np.random.default_rng(16)
    X = g.normal(size=(20, 6))
    y = 2.5 * X[:, 3] + 1.0
    folds = np.arange(20) % 5
    lam, mix = en.select_penalties_cv(X, y, folds)
    fit = en.fit_elastic_net(X, y, lam, mix)
    assert fit.coefficients[3] != 0.0
    err = en.cv_errors(X, y, folds, en.make_grid(X, y))
    assert err.min() < err[:, 0].min()  # column 0 is the all-zero fit


def test_cv_pure_noise_shrinks_fully():
    g = np.random.default_rng(17)
    X = g.normal(size=(20, 5))
    y = g.normal(size=20)
    folds = np.arange(20) % 5
    grid = en.make_grid(X, y)
    lam, mix = en.select_penalties_cv(X, y, folds, grid)
    path = grid.path(grid.mixings.index(mix))
    assert np.flatnonzero(path == lam)[0] < 5  # top decile of 50
    err, pick = hand_rolled_cv(X, y, folds, grid)
    assert (lam, mix) == pytest.approx(pick, rel=1e-12)


def test_cv_tie_prefers_more_regularization():
    grid = en.PenaltyGrid((0.5, 1.0), np.array([[4.0, 2.0, 1.0], [3.0, 1.5, 0.75]]))
    err = np.array([[1.0, 0.5, 0.5], [0.5, 0.7, 0.9]])
    assert en.select_from_errors(err, grid) == (3.0, 1.0)
    err = np.array([[1.0, 0.5, 0.5], [0.6, 0.5, 0.9]])
    assert en.select_from_errors(err, grid) == (2.0, 0.5)


def test_cv_fold_errors():
    X, y = problem(18)
    with pytest.raises(FoldError):
        en.cv_errors(X, y, np.zeros(12, dtype=int), en.make_grid(X, y))


def test_fit_at_uses_path():
    X, y = problem(19)
    grid = en.make_grid(X, y)
    lam = grid.lambdas[2, 30]
    a = en.fit_at(X, y, lam, grid.mixings[2], grid)
    b = en.fit_elastic_net(X, y, lam, grid.mixings[2])
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-7)

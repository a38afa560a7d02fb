"""Elastic-net least squares by cyclic coordinate descent.

The objective, in internally standardized coordinates, is::

    0.5 * ||y - b0 - Z c||^2 + lam * (mix * ||c||_1 + (1 - mix) / 2 * ||c||^2)

Columns of ``Z`` have zero mean and unit (population) variance. Constant
columns carry no information after centering and get a coefficient of
exactly zero. Coefficients are reported on the original scale of ``X``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import FoldError, MixingError, NumericalError

logger = logging.getLogger(__name__)

N_LAMBDA = 50
LAMBDA_RATIO = 1e-4
MIXINGS = (0.05, 0.25, 0.5, 0.75, 0.95, 1.0)
TOL = 1e-7
MAX_ITER = 10_000
KKT_RTOL = 1e-6
_CONST_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ElasticNetFit:
    intercept: float
    coefficients: np.ndarray
    lam: float
    mixing: float
    n_nonzero: int
    converged: bool
    n_iter: int = 0
    objective_trace: np.ndarray | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.intercept + X @ self.coefficients


@dataclass(frozen=True, eq=False)
class PenaltyGrid:
    """Descending geometric lambda path for each mixing value.

    ``lambdas[k]`` runs from ``lambda_max`` for ``mixings[k]`` down to
    ``LAMBDA_RATIO`` times that value.
    """

    mixings: tuple[float, ...]
    lambdas: np.ndarray

    def path(self, k: int) -> np.ndarray:
        return self.lambdas[k]


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _soft(z, g):
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


@njit(cache=True)
def _dot(a, b):
    acc = 0.0
    for i in range(a.shape[0]):
        acc += a[i] * b[i]
    return acc


@njit(cache=True)
def _objective(r, c, l1, l2):
    return 0.5 * np.dot(r, r) + l1 * np.sum(np.abs(c)) + 0.5 * l2 * np.dot(c, c)


@njit(cache=True)
def _kkt(Zt, r, c, l1, l2):
    worst = 0.0
    for j in range(Zt.shape[0]):
        g = -_dot(Zt[j], r) + l2 * c[j]
        if c[j] > 0.0:
            v = abs(g + l1)
        elif c[j] < 0.0:
            v = abs(g - l1)
        else:
            v = max(abs(g) - l1, 0.0)
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _chol_solve(G, b):
    """Solve ``G x = b`` for symmetric positive definite ``G``; flag failure."""
    k = G.shape[0]
    L = np.zeros((k, k))
    top = 0.0
    for a in range(k):
        top = max(top, G[a, a])
    for a in range(k):
        acc = G[a, a]
        for m in range(a):
            acc -= L[a, m] * L[a, m]
        if acc <= 1e-12 * top:
            return b, False
        L[a, a] = np.sqrt(acc)
        for i in range(a + 1, k):
            acc = G[i, a]
            for m in range(a):
                acc -= L[i, m] * L[a, m]
            L[i, a] = acc / L[a, a]
    x = b.copy()
    for a in range(k):
        for m in range(a):
            x[a] -= L[a, m] * x[m]
        x[a] /= L[a, a]
    for a in range(k - 1, -1, -1):
        for m in range(a + 1, k):
            x[a] -= L[m, a] * x[m]
        x[a] /= L[a, a]
    return x, True


@njit(cache=True)
def _support_solve(G, Zy, c, l1, l2, n):
    idx = np.flatnonzero(c)
    k = idx.shape[0]
    if k == 0 or (l2 == 0.0 and k >= n):
        # centered columns span at most n - 1 dimensions
        return np.zeros(k), False
    A = np.empty((k, k))
    rhs = np.empty(k)
    for a in range(k):
        rhs[a] = Zy[idx[a]] - l1 * np.sign(c[idx[a]])
        for b in range(a + 1):
            A[a, b] = G[idx[a], idx[b]]
            A[b, a] = A[a, b]
        A[a, a] += l2
    return _chol_solve(A, rhs)


@njit(cache=True)
def _polish(Zt, y, G, Zy, r, c, l1, l2, kkt_tol):
    """Exact solve on the current support with its signs fixed.

    When some sign would flip, ``c`` moves along the segment to the first
    zero crossing (the objective cannot increase there), that coordinate
    leaves the support and the solve is repeated. Returns True once the
    result satisfies the KKT conditions, i.e. is the minimizer.
    """
    n = Zt.shape[1]
    for _ in range(Zt.shape[0] + 1):
        sol, ok = _support_solve(G, Zy, c, l1, l2, n)
        if not ok and l2 == 0.0:
            # singular support Gram: shrink the support first
            while _null_step(Zt, r, c, l1):
                pass
            sol, ok = _support_solve(G, Zy, c, l1, l2, n)
        if not ok:
            return False
        idx = np.flatnonzero(c)
        k = idx.shape[0]
        step = 1.0
        drop = -1
        for a in range(k):
            ca = c[idx[a]]
            if sol[a] == 0.0 or np.sign(sol[a]) != np.sign(ca):
                t = ca / (ca - sol[a])
                if t < step:
                    step = t
                    drop = a
        cand = c.copy()
        for a in range(k):
            cand[idx[a]] = c[idx[a]] + step * (sol[a] - c[idx[a]])
        if drop >= 0:
            cand[idx[drop]] = 0.0
        r_new = y - Zt.T @ cand
        if _objective(r_new, cand, l1, l2) > _objective(r, c, l1, l2):
            return False
        c[:] = cand
        r[:] = r_new
        if drop < 0:
            break
    return _kkt(Zt, r, c, l1, l2) <= kkt_tol


@njit(cache=True)
def _null_step(Zt, r, c, l1):
    """Lasso only: slide along a null direction of the support columns.

    The fit is unchanged along such a direction and the l1 term does not
    increase, so the support shrinks by one without raising the objective.
    Returns True if a coordinate was dropped.
    """
    idx = np.flatnonzero(c)
    k = idx.shape[0]
    if k < 2:
        return False
    ZA = np.empty((k, Zt.shape[1]))
    for a in range(k):
        ZA[a] = Zt[idx[a]]
    _, sv, vt = np.linalg.svd(ZA.T)
    rank = 0
    for v in sv:
        if v > 1e-10 * sv[0]:
            rank += 1
    if rank >= k:
        return False
    d = vt[k - 1]
    slope = 0.0
    for a in range(k):
        slope += np.sign(c[idx[a]]) * d[a]
    if slope > 0.0:
        d = -d
    step = np.inf
    drop = -1
    for a in range(k):
        ca = c[idx[a]]
        if d[a] != 0.0 and np.sign(d[a]) != np.sign(ca):
            t = -ca / d[a]
            if t < step:
                step = t
                drop = a
    if drop < 0:
        return False
    before = _objective(r, c, l1, 0.0)
    cand = c.copy()
    for a in range(k):
        cand[idx[a]] += step * d[a]
    cand[idx[drop]] = 0.0
    delta = np.zeros(r.shape[0])
    for a in range(k):
        delta += (cand[idx[a]] - c[idx[a]]) * ZA[a]
    r_new = r - delta
    if _objective(r_new, cand, l1, 0.0) > before:
        return False
    c[:] = cand
    r[:] = r_new
    return True


@njit(cache=True)
def _cd_solve(Zt, y, G, Zy, r, c, norms, l1, l2, tol, max_iter, kkt_tol, trace):
    """Sweeps in place on ``c`` and residual ``r``; returns (sweeps, converged).

    ``Zt`` is the transposed standardized design (one contiguous row per
    predictor). Every few sweeps a support solve is tried, see ``_polish``.
    """
    p, n = Zt.shape
    record = trace.shape[0] > 0
    if record:
        trace[0] = _objective(r, c, l1, l2)
    stable = 0
    for it in range(max_iter):
        max_delta = 0.0
        moved = False
        for j in range(p):
            cj = c[j]
            zj = Zt[j]
            rho = _dot(zj, r) + norms[j] * cj
            new = _soft(rho, l1) / (norms[j] + l2)
            d = new - cj
            if d != 0.0:
                if (cj == 0.0) != (new == 0.0):
                    moved = True
                for i in range(n):
                    r[i] -= d * zj[i]
                c[j] = new
                if abs(d) > max_delta:
                    max_delta = abs(d)
        stable = 0 if moved else stable + 1
        done = max_delta < tol and _kkt(Zt, r, c, l1, l2) <= kkt_tol
        if not done and (stable == 2 or it % 8 == 7):
            done = _polish(Zt, y, G, Zy, r, c, l1, l2, kkt_tol)
        if record and it + 1 < trace.shape[0]:
            trace[it + 1] = _objective(r, c, l1, l2)
        if done:
            return it + 1, True
    return max_iter, False


@njit(cache=True)
def _cd_path(Zt, y, lambdas, mixing, tol, max_iter, kkt_tol, coefs, n_iter, conv):
    p = Zt.shape[0]
    c = np.zeros(p)
    r = y.copy()
    G = Zt @ Zt.T
    Zy = Zt @ y
    norms = np.diag(G).copy()
    empty = np.empty(0)
    for k in range(lambdas.shape[0]):
        lam = lambdas[k]
        it, ok = _cd_solve(
            Zt, y, G, Zy, r, c, norms, lam * mixing, lam * (1.0 - mixing), tol, max_iter, kkt_tol, empty
        )
        coefs[k, :] = c
        n_iter[k] = it
        conv[k] = ok


# --------------------------------------------------------------------------
# standardization


@dataclass(frozen=True, eq=False)
class _Standardized:
    Z: np.ndarray  # active columns only
    Zt: np.ndarray  # contiguous transpose for the kernels
    y: np.ndarray  # centered response
    x_mean: np.ndarray
    x_scale: np.ndarray
    active: np.ndarray
    y_mean: float
    kkt_tol: float

    def zeroing_lambda(self, mixing: float) -> float:
        """``lambda_max`` in the exact arithmetic used for screening."""
        if self.Z.shape[1] == 0 or mixing == 0.0:
            return np.inf
        return float(np.max(np.abs(self.Zt @ self.y)) / mixing)

    def destandardize(self, c: np.ndarray) -> tuple[float, np.ndarray]:
        coef = np.zeros(self.active.shape[0])
        coef[self.active] = c / self.x_scale[self.active]
        return float(self.y_mean - self.x_mean @ coef), coef


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite value in elastic-net input")


def _standardize(X: np.ndarray, y: np.ndarray) -> _Standardized:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"incompatible shapes X{X.shape}, y{y.shape}")
    if X.shape[0] < 1:
        raise ValueError("need at least one sample")
    _check_finite(X, y)
    mean = X.mean(axis=0) if X.shape[1] else np.zeros(0)
    scale = X.std(axis=0) if X.shape[1] else np.zeros(0)
    active = scale > _CONST_TOL * (1.0 + np.abs(mean))
    Z = (X[:, active] - mean[active]) / scale[active]
    y_mean = float(y.mean())
    # margin below the public tolerance absorbs re-evaluation rounding
    kkt_tol = 0.5 * KKT_RTOL * max(1.0, float(np.max(np.abs(y))))
    return _Standardized(
        Z, np.ascontiguousarray(Z.T), y - y_mean, mean, scale, active, y_mean, kkt_tol
    )


def _check_mixing(mixing: float):
    if not 0.0 <= mixing <= 1.0:
        raise MixingError(f"mixing must lie in [0, 1], got {mixing}")


# --------------------------------------------------------------------------
# public API


def lambda_max(X: np.ndarray, y: np.ndarray, mixing: float) -> float:
    """Smallest penalty at which every coefficient is zero."""
    _check_mixing(mixing)
    if mixing == 0.0:
        raise MixingError("pure ridge (mixing=0) has no finite zeroing lambda")
    s = _standardize(X, y)
    if s.Z.shape[1] == 0:
        return 0.0
    return s.zeroing_lambda(mixing)


def fit_elastic_net(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    mixing: float,
    *,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
    trace: bool = False,
) -> ElasticNetFit:
    """Fit one (lambda, mixing) pair from a cold start.

    With ``trace=True`` the objective after every sweep is kept on the
    result for monotonicity checks.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    _check_mixing(mixing)
    s = _standardize(X, y)
    p = s.Z.shape[1]
    c = np.zeros(p)
    r = s.y.copy()
    G = s.Zt @ s.Z
    buf = np.full(max_iter + 1, np.nan) if trace else np.empty(0)
    l1, l2 = lam * mixing, lam * (1.0 - mixing)
    n_iter, ok = _cd_solve(
        s.Zt, s.y, G, s.Zt @ s.y, r, c, np.diag(G).copy(), l1, l2, tol, max_iter, s.kkt_tol, buf
    )
    if lam >= s.zeroing_lambda(mixing):
        c[:] = 0.0
    if not ok:
        logger.warning("elastic net did not converge in %d sweeps (lam=%g)", max_iter, lam)
    b0, coef = s.destandardize(c)
    return ElasticNetFit(
        intercept=b0,
        coefficients=coef,
        lam=float(lam),
        mixing=float(mixing),
        n_nonzero=int(np.count_nonzero(coef)),
        converged=bool(ok),
        n_iter=int(n_iter),
        objective_trace=buf[: n_iter + 1] if trace else None,
    )


def fit_path(
    X: np.ndarray,
    y: np.ndarray,
    lambdas: np.ndarray,
    mixing: float,
    *,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
) -> list[ElasticNetFit]:
    """Warm-started fits along a descending lambda path."""
    _check_mixing(mixing)
    lambdas = np.asarray(lambdas, dtype=float)
    s = _standardize(X, y)
    raw, n_iter, conv = _run_path(s, lambdas, mixing, tol, max_iter)
    fits = []
    for k, lam in enumerate(lambdas):
        b0, coef = s.destandardize(raw[k])
        fits.append(
            ElasticNetFit(
                b0, coef, float(lam), float(mixing), int(np.count_nonzero(coef)),
                bool(conv[k]), int(n_iter[k]),
            )
        )
    return fits


def _run_path(s: _Standardized, lambdas, mixing, tol=TOL, max_iter=MAX_ITER):
    p = s.Z.shape[1]
    coefs = np.zeros((lambdas.shape[0], p))
    n_iter = np.zeros(lambdas.shape[0], dtype=np.int64)
    conv = np.ones(lambdas.shape[0], dtype=np.bool_)
    if p:
        _cd_path(s.Zt, s.y, lambdas, float(mixing), tol, max_iter, s.kkt_tol, coefs, n_iter, conv)
        # rounding in lam * mixing can leave dust at exactly lambda_max
        coefs[lambdas >= s.zeroing_lambda(mixing)] = 0.0
    return coefs, n_iter, conv


def _path_predictions(X, y, X_new, lambdas, mixing) -> np.ndarray:
    """Predictions at ``X_new`` for every lambda on the path, shape (L, m)."""
    s = _standardize(X, y)
    raw, _, _ = _run_path(s, lambdas, mixing)
    Z_new = (X_new[:, s.active] - s.x_mean[s.active]) / s.x_scale[s.active]
    return s.y_mean + raw @ Z_new.T


def kkt_residual(fit: ElasticNetFit, X: np.ndarray, y: np.ndarray) -> float:
    """Largest violation of the subgradient optimality conditions.

    Evaluated in the standardized coordinates the solver works in, plus the
    stationarity of the unpenalized intercept.
    """
    s = _standardize(X, y)
    c = fit.coefficients[s.active] * s.x_scale[s.active]
    resid = np.asarray(y, dtype=float) - fit.predict(X)
    r = s.y - s.Z @ c
    l1 = fit.lam * fit.mixing
    l2 = fit.lam * (1.0 - fit.mixing)
    g = -(s.Z.T @ r) + l2 * c
    viol = np.where(
        c > 0, np.abs(g + l1), np.where(c < 0, np.abs(g - l1), np.maximum(np.abs(g) - l1, 0.0))
    )
    inactive = fit.coefficients[~s.active]
    worst = max(float(viol.max(initial=0.0)), abs(float(resid.sum())))
    # constant columns are pinned at zero
    if inactive.size and np.any(inactive != 0):
        worst = max(worst, float(np.abs(inactive).max()))
    return worst


def penalty_objective(fit: ElasticNetFit, X: np.ndarray, y: np.ndarray) -> float:
    """Objective value in standardized coordinates (what the solver minimizes)."""
    s = _standardize(X, y)
    c = fit.coefficients[s.active] * s.x_scale[s.active]
    b0 = fit.intercept + float(fit.coefficients @ s.x_mean) - s.y_mean
    r = s.y - b0 - s.Z @ c
    return float(
        0.5 * r @ r
        + fit.lam * (fit.mixing * np.abs(c).sum() + 0.5 * (1 - fit.mixing) * c @ c)
    )


def make_grid(
    X: np.ndarray,
    y: np.ndarray,
    mixings=MIXINGS,
    n_lambda: int = N_LAMBDA,
    ratio: float = LAMBDA_RATIO,
) -> PenaltyGrid:
    mixings = tuple(float(m) for m in mixings)
    rows = []
    for m in mixings:
        # ridge has no zeroing lambda; borrow the path of mixing=0.05
        top = lambda_max(X, y, m if m > 0 else 0.05)
        rows.append(top)
    if max(rows) == 0.0:
        return PenaltyGrid(mixings, np.zeros((len(mixings), 1)))
    lambdas = np.array([top * np.geomspace(1.0, ratio, n_lambda) for top in rows])
    return PenaltyGrid(mixings, lambdas)


def cv_errors(
    X: np.ndarray, y: np.ndarray, folds: np.ndarray, grid: PenaltyGrid
) -> np.ndarray:
    """Mean over folds of held-out MSE, shape ``(len(mixings), n_lambda)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    folds = np.asarray(folds)
    labels = np.unique(folds)
    if labels.size < 2:
        raise FoldError("cross-validation needs at least two folds")
    err = np.zeros(grid.lambdas.shape)
    for f in labels:
        test = folds == f
        train = ~test
        if train.sum() < 1:
            raise FoldError(f"fold {f} leaves no training samples")
        for k, m in enumerate(grid.mixings):
            pred = _path_predictions(X[train], y[train], X[test], grid.path(k), m)
            err[k] += np.mean((pred - y[test]) ** 2, axis=1)
    return err / labels.size


def select_from_errors(err: np.ndarray, grid: PenaltyGrid) -> tuple[float, float]:
    """Argmin of the CV surface; ties go to larger lambda, then larger mixing."""
    best = err.min()
    ties = np.argwhere(err <= best + 1e-12 * abs(best))
    lam, mix = max(
        (float(grid.lambdas[k, j]), float(grid.mixings[k])) for k, j in ties
    )
    return lam, mix


def select_penalties_cv(
    X: np.ndarray, y: np.ndarray, folds: np.ndarray, grid: PenaltyGrid | None = None
) -> tuple[float, float]:
    """Pick (lambda, mixing) by K-fold cross-validation over ``grid``."""
    if grid is None:
        grid = make_grid(X, y)
    return select_from_errors(cv_errors(X, y, folds, grid), grid)


def fit_at(X, y, lam: float, mixing: float, grid: PenaltyGrid | None = None) -> ElasticNetFit:
    """Fit at (lam, mixing), warm-starting down the grid path when it contains lam."""
    if grid is not None and mixing in grid.mixings:
        path = grid.path(grid.mixings.index(mixing))
        hit = np.flatnonzero(path == lam)
        if hit.size:
            return fit_path(X, y, path[: hit[0] + 1], mixing)[-1]
    return fit_elastic_net(X, y, lam, mixing)

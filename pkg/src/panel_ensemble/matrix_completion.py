"""Nuclear-norm matrix completion with unpenalized two-way fixed effects.

Minimizes, over the visible cells only::

    0.5 * sum (Y_it - a_i - b_t - L_it)^2 + lam * ||L||_*

by alternating an exact least-squares update of the fixed effects with a
fill-and-threshold step on ``L``: hidden cells are filled with the current
model, then the singular values of the residual are soft-thresholded. Both
steps are non-increasing in the objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, DegenerateMask
from .imputers import ImputationResult
from .panel import MaskedPanel

MAX_ITER = 500
REL_TOL = 1e-6
RANK_TOL = 1e-10
N_LAMBDA = 30
LAMBDA_RATIO = 1e-4
CV_FOLDS = 5
CV_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class MCFit:
    low_rank: np.ndarray
    unit_effects: np.ndarray
    time_effects: np.ndarray
    rank: int
    lam: float
    objective_trace: list[float]
    singular_values: np.ndarray
    converged: bool

    def predict(self) -> np.ndarray:
        return self.low_rank + self.unit_effects[:, None] + self.time_effects[None, :]


def _svt_parts(M: np.ndarray, threshold: float):
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - threshold, 0.0)
    keep = s > 0
    Z = (U[:, keep] * s[keep]) @ Vt[keep]
    return Z, s


def svt(M: np.ndarray, threshold: float) -> np.ndarray:
    """Singular value soft-thresholding, the proximal map of the nuclear norm."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    return _svt_parts(np.asarray(M, dtype=float), threshold)[0]


class TwoWayEffects:
    """Exact least-squares unit and time effects on a fixed visibility pattern.

    The normal equations are singular along ``a + c, b - c``; the minimum
    norm solution is taken and then recentred so unit effects average zero.
    """

    def __init__(self, visible: np.ndarray):
        W = np.asarray(visible, dtype=float)
        n, T = W.shape
        rows = W.sum(axis=1)
        cols = W.sum(axis=0)
        if np.any(rows == 0) or np.any(cols == 0):
            raise DegenerateMask("every row and column needs a visible cell")
        K = np.zeros((n + T, n + T))
        K[:n, :n] = np.diag(rows)
        K[n:, n:] = np.diag(cols)
        K[:n, n:] = W
        K[n:, :n] = W.T
        self.pinv = np.linalg.pinv(K)
        self.weights = W
        self.n = n

    def solve(self, resid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Effects fitting ``resid`` on visible cells (hidden entries ignored)."""
        vis = self.weights > 0
        # centring first makes a constant residual come out exactly
        mu = float(resid[vis].mean())
        R = np.where(vis, resid - mu, 0.0)
        theta = self.pinv @ np.concatenate([R.sum(axis=1), R.sum(axis=0)])
        a, b = theta[: self.n], theta[self.n :]
        shift = a.mean()
        return a - shift, b + shift + mu


def _objective(Y, W, a, b, L, lam, nuc):
    r = np.where(W, Y - a[:, None] - b[None, :] - L, 0.0)
    return 0.5 * float(np.sum(r * r)) + lam * nuc


@njit(cache=True)
def _fe_solve(Yv, Wf, L, P, a, b):
    n, T = Yv.shape
    mu = 0.0
    count = 0
    for i in range(n):
        for t in range(T):
            if Wf[i, t] > 0:
                mu += Yv[i, t] - L[i, t]
                count += 1
    mu /= count
    rhs = np.zeros(n + T)
    for i in range(n):
        for t in range(T):
            if Wf[i, t] > 0:
                v = Yv[i, t] - L[i, t] - mu
                rhs[i] += v
                rhs[n + t] += v
    theta = P @ rhs
    shift = theta[:n].mean()
    for i in range(n):
        a[i] = theta[i] - shift
    for t in range(T):
        b[t] = theta[n + t] + shift + mu


@njit(cache=True)
def _loss(Yv, Wf, L, a, b):
    n, T = Yv.shape
    acc = 0.0
    for i in range(n):
        for t in range(T):
            if Wf[i, t] > 0:
                r = Yv[i, t] - a[i] - b[t] - L[i, t]
                acc += r * r
    return 0.5 * acc


@njit(cache=True)
def _iterate(Yv, Wf, P, L, lam, max_iter, tol, trace):
    n, T = Yv.shape
    a = np.zeros(n)
    b = np.zeros(T)
    _fe_solve(Yv, Wf, L, P, a, b)
    k = min(n, T)
    s = np.zeros(k)
    nuc = 0.0
    if np.any(L != 0.0):
        s0 = np.linalg.svd(L, full_matrices=False)[1]
        nuc = s0.sum()
        s[: s0.size] = s0
    obj = _loss(Yv, Wf, L, a, b) + lam * nuc
    trace[0] = obj
    filled = np.empty((n, T))
    it = 0
    converged = False
    while it < max_iter:
        for i in range(n):
            for t in range(T):
                if Wf[i, t] > 0:
                    filled[i, t] = Yv[i, t] - a[i] - b[t]
                else:
                    filled[i, t] = L[i, t]
        U, sv, Vt = np.linalg.svd(filled, full_matrices=False)
        nuc = 0.0
        L[:, :] = 0.0
        for r in range(k):
            d = sv[r] - lam
            if d > 0.0:
                s[r] = d
                nuc += d
                for i in range(n):
                    f = U[i, r] * d
                    for t in range(T):
                        L[i, t] += f * Vt[r, t]
            else:
                s[r] = 0.0
        _fe_solve(Yv, Wf, L, P, a, b)
        new = _loss(Yv, Wf, L, a, b) + lam * nuc
        it += 1
        trace[it] = new
        if abs(obj - new) <= tol * abs(obj):
            converged = True
            break
        obj = new
    return a, b, s, it, converged


def _fit(
    Y: np.ndarray,
    W: np.ndarray,
    fe: TwoWayEffects,
    lam: float,
    L0: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
    tol: float = REL_TOL,
) -> MCFit:
    L = np.zeros(Y.shape) if L0 is None else np.array(L0, dtype=float, order="C")
    Yv = np.ascontiguousarray(np.where(W, Y, 0.0))
    trace = np.empty(max_iter + 1)
    a, b, s, it, converged = _iterate(
        Yv, fe.weights, fe.pinv, L, float(lam), int(max_iter), float(tol), trace
    )
    return MCFit(
        low_rank=L,
        unit_effects=a,
        time_effects=b,
        rank=int(np.count_nonzero(s > RANK_TOL)),
        lam=float(lam),
        objective_trace=trace[: it + 1].tolist(),
        singular_values=s[s > 0],
        converged=bool(converged),
    )


def fit_mc(
    mp: MaskedPanel,
    lam: float,
    *,
    init: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
    tol: float = REL_TOL,
) -> MCFit:
    """Fit the low-rank plus fixed-effects model at a given penalty.

    Without ``init`` the fit is reached by continuation: warm starts down a
    geometric sequence from the penalty that zeroes ``L``. Only the final
    penalty's iterations are kept in ``objective_trace``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    W = mp.visible
    fe = TwoWayEffects(W)
    Yv = np.where(W, mp.observed, 0.0)
    if init is None:
        L = None
        for step in _continuation(Yv, W, fe, lam):
            L = _fit(Yv, W, fe, step, L, max_iter, tol).low_rank
        init = L
    return _fit(Yv, W, fe, lam, init, max_iter, tol)


def _continuation(Yv, W, fe, lam, ratio=LAMBDA_RATIO ** (1 / (N_LAMBDA - 1))):
    a, b = fe.solve(Yv)
    top = float(np.linalg.svd(np.where(W, Yv - a[:, None] - b[None, :], 0.0), compute_uv=False)[0])
    # lam may be 0; stop the sequence somewhere finite
    floor = max(lam, top * 1e-12)
    steps = []
    cur = top * ratio
    while cur > floor:
        steps.append(cur)
        cur *= ratio
    return steps


def lambda_grid(mp: MaskedPanel, n: int = N_LAMBDA, ratio: float = LAMBDA_RATIO) -> np.ndarray:
    """Geometric grid from the top singular value of the fixed-effects residual.

    At the top value the low-rank part is exactly zero.
    """
    W = mp.visible
    Yv = np.where(W, mp.observed, 0.0)
    a, b = TwoWayEffects(W).solve(Yv)
    resid = np.where(W, Yv - a[:, None] - b[None, :], 0.0)
    top = float(np.linalg.svd(resid, compute_uv=False)[0])
    if top <= 0:
        return np.zeros(1)
    return top * np.geomspace(1.0, ratio, n)


def cv_folds(mp: MaskedPanel, seed: int = 0, k: int = CV_FOLDS, frac: float = CV_FRACTION):
    """Disjoint random sets of visible cells to hold out.

    Cells whose removal would empty a row or column are skipped.
    """
    cells = np.argwhere(mp.visible)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(cells))
    size = max(1, int(round(frac * len(cells))))
    folds = []
    for f in range(k):
        chosen = cells[order[f * size : (f + 1) * size]]
        vis = mp.visible.copy()
        rows = vis.sum(axis=1)
        cols = vis.sum(axis=0)
        kept = []
        for i, t in chosen:
            if rows[i] > 1 and cols[t] > 1:
                vis[i, t] = False
                rows[i] -= 1
                cols[t] -= 1
                kept.append((i, t))
        if kept:
            folds.append((vis, np.array(kept)))
    return folds


def cv_errors(mp: MaskedPanel, grid: np.ndarray, seed: int = 0) -> np.ndarray:
    """Mean held-out squared error for each grid value, warm-starting down the grid."""
    Yv = np.where(mp.visible, mp.observed, 0.0)
    folds = cv_folds(mp, seed)
    if not folds:
        raise ConfigError("no usable cross-validation folds")
    err = np.zeros(len(grid))
    for vis, held in folds:
        fe = TwoWayEffects(vis)
        L = None
        hi, ht = held[:, 0], held[:, 1]
        for j, lam in enumerate(grid):
            fit = _fit(Yv, vis, fe, lam, L)
            L = fit.low_rank
            pred = fit.predict()[hi, ht]
            err[j] += np.mean((pred - Yv[hi, ht]) ** 2)
    return err / len(folds)


def select_lambda_mc(mp: MaskedPanel, grid: np.ndarray | None = None, *, seed: int = 0) -> float:
    """Cross-validated penalty; ties go to the larger value."""
    if grid is None:
        grid = lambda_grid(mp)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("lambda grid is empty")
    if grid.size == 1:
        return float(grid[0])
    if mp.visible.sum() < 20:
        raise ConfigError("matrix-completion CV needs at least 20 visible cells")
    err = cv_errors(mp, grid, seed)
    best = err.min()
    ties = np.flatnonzero(err <= best + 1e-12 * abs(best))
    return float(grid[ties].max())


def impute_mc(
    mp: MaskedPanel,
    *,
    lam: float | None = None,
    seed: int = 0,
    grid: np.ndarray | None = None,
    init: np.ndarray | None = None,
) -> ImputationResult:
    """Impute the target as ``L + a + b`` at a cross-validated (or given) penalty.

    ``init`` warm-starts the low-rank component.
    """
    i, t = mp.target
    source = "fixed"
    if lam is None:
        lam = select_lambda_mc(mp, grid, seed=seed)
        source = "cv"
    fit = fit_mc(mp, lam, init=init)
    value = float(fit.low_rank[i, t] + fit.unit_effects[i] + fit.time_effects[t])
    return ImputationResult(
        value=value,
        method="MC",
        complexity=float(fit.rank),
        diagnostics=fit.singular_values,
        penalty=(fit.lam,),
        metadata={
            "penalty_source": source,
            "converged": fit.converged,
            "n_iter": len(fit.objective_trace) - 1,
            "cv_seed": seed,
        },
    )

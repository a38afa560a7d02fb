"""Vertical and horizontal regression imputers.

Both fit an elastic net with an unpenalized intercept. The vertical
regression uses time periods as samples and the other units as predictors;
the horizontal regression uses the control units as samples and the lagged
periods as predictors, which is the same problem on the transposed panel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import elastic_net as en
from .errors import ConfigError, InsufficientHistory, InsufficientUnits
from .panel import MaskedPanel, Panel, restrict

METHODS = ("VR", "HZ", "MC", "ENS_VC", "ENS_HC")
BASE_METHODS = ("VR", "HZ", "MC")

VR_MAX_FOLDS = 5
HZ_MAX_FOLDS = 10


@dataclass(frozen=True, eq=False)
class ImputationResult:
    """One method's imputation of the target cell.

    ``complexity`` is the number of non-zero regression coefficients for VR
    and HZ, the rank of the low-rank component for MC, and None for the
    ensembles. ``diagnostics`` holds the coefficients (VR/HZ), the singular
    values (MC) or the ensemble weights.
    """

    value: float
    method: str
    complexity: float | None
    diagnostics: np.ndarray
    penalty: tuple[float, ...] | None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"{self.method} produced a non-finite imputation")
        if self.complexity is not None and self.complexity < 0:
            raise ValueError("complexity must be non-negative")


def blocked_folds(n: int, k: int) -> np.ndarray:
    """Contiguous blocks of (nearly) equal size."""
    out = np.empty(n, dtype=np.int64)
    for f, block in enumerate(np.array_split(np.arange(n), k)):
        out[block] = f
    return out


def random_folds(n: int, k: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.arange(n) % k
    return out


def _n_folds(n_samples: int, cap: int) -> int:
    return max(2, min(cap, n_samples - 1))


def _single_hidden(mp: MaskedPanel) -> tuple[int, int, np.ndarray]:
    if mp.n_hidden != 1:
        raise ConfigError("regression imputers need every cell but the target visible")
    i, t = mp.target
    return i, t, mp.observed


def _regress(
    X: np.ndarray,
    y: np.ndarray,
    x_new: np.ndarray,
    folds: np.ndarray,
    penalty: tuple[float, float] | None,
    method: str,
    meta: dict,
) -> ImputationResult:
    grid = en.make_grid(X, y)
    if penalty is None:
        lam, mix = en.select_penalties_cv(X, y, folds, grid)
        meta["penalty_source"] = "cv"
    else:
        lam, mix = penalty
        meta["penalty_source"] = "fixed"
    fit = en.fit_at(X, y, lam, mix, grid)
    meta["converged"] = fit.converged
    value = float(fit.intercept + x_new @ fit.coefficients)
    return ImputationResult(
        value=value,
        method=method,
        complexity=float(fit.n_nonzero),
        diagnostics=np.concatenate([[fit.intercept], fit.coefficients]),
        penalty=(fit.lam, fit.mixing),
        metadata=meta,
    )


def impute_vertical(
    mp: MaskedPanel,
    *,
    folds: np.ndarray | None = None,
    penalty: tuple[float, float] | None = None,
) -> ImputationResult:
    """Regress the target unit on the other units across the other periods.

    Penalties are chosen by cross-validation over contiguous blocks of
    periods unless ``penalty`` is given. ``diagnostics`` is
    ``[intercept, weights...]`` with weights in unit order, target unit
    omitted.
    """
    i, t, Y = _single_hidden(mp)
    others = np.arange(Y.shape[1]) != t
    n_samples = int(others.sum())
    if n_samples < 2:
        raise InsufficientHistory("vertical regression needs at least 2 pre-periods")
    controls = np.arange(Y.shape[0]) != i
    X = Y[controls][:, others].T
    y = Y[i, others]
    k = _n_folds(n_samples, VR_MAX_FOLDS)
    if folds is None:
        folds = blocked_folds(n_samples, k)
    meta = {"folds": "blocked", "n_folds": int(np.unique(folds).size)}
    return _regress(X, y, Y[controls, t], folds, penalty, "VR", meta)


def impute_horizontal(
    mp: MaskedPanel,
    *,
    folds: np.ndarray | None = None,
    penalty: tuple[float, float] | None = None,
    seed: int = 0,
) -> ImputationResult:
    """Regress the target period on the lagged periods across control units.

    Penalties are chosen by cross-validation over random unit folds drawn
    with ``seed``.
    """
    i, t, Y = _single_hidden(mp)
    controls = np.arange(Y.shape[0]) != i
    n_samples = int(controls.sum())
    if n_samples < 2:
        raise InsufficientUnits("horizontal regression needs at least 2 control units")
    others = np.arange(Y.shape[1]) != t
    if others.sum() < 1:
        raise InsufficientHistory("horizontal regression needs at least one lag")
    X = Y[controls][:, others]
    y = Y[controls, t]
    k = _n_folds(n_samples, HZ_MAX_FOLDS)
    if folds is None:
        folds = random_folds(n_samples, k, seed)
    meta = {"folds": "random", "n_folds": int(np.unique(folds).size), "fold_seed": seed}
    return _regress(X, y, Y[i, others], folds, penalty, "HZ", meta)


def impute(mp: MaskedPanel, method: str, *, seed: int = 0, **kw) -> ImputationResult:
    """Dispatch on a method tag."""
    from . import ensemble, matrix_completion

    if method == "VR":
        return impute_vertical(mp, **kw)
    if method == "HZ":
        return impute_horizontal(mp, seed=seed, **kw)
    if method == "MC":
        return matrix_completion.impute_mc(mp, seed=seed, **kw)
    if method == "ENS_VC":
        return ensemble.ensemble_vc(mp, seed=seed, **kw)
    if method == "ENS_HC":
        return ensemble.ensemble_hc(mp, seed=seed, **kw)
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


def estimate_effect(
    panel: Panel, treated: tuple[int, int], method: str, *, seed: int = 0, **kw
) -> float:
    """Observed treated outcome minus its imputed untreated counterpart.

    Only periods up to the treated one are used.
    """
    i, t = treated
    mp = restrict(panel, i, t)
    res = impute(mp, method, seed=seed, **kw)
    return float(panel.values[i, t] - res.value)

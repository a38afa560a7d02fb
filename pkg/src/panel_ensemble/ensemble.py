"""Stacked combination of the three base imputers with simplex weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import matrix_completion as mc
from .errors import EnsembleError, InsufficientHistory, NumericalError, PanelEnsembleError
from .imputers import BASE_METHODS, ImputationResult, impute_horizontal, impute_vertical
from .panel import MaskedPanel

logger = logging.getLogger(__name__)

HC_MAX_S = 10
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class EnsembleWeights:
    theta_vt: float
    theta_hz: float
    theta_mc: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_vt, self.theta_hz, self.theta_mc])

    def combine(self, vr: float, hz: float, mc_value: float) -> float:
        return self.theta_vt * vr + self.theta_hz * hz + self.theta_mc * mc_value


@dataclass(frozen=True, eq=False)
class StackingProblem:
    """Held-out predictions (columns VR, HZ, MC) against the true outcomes."""

    predictions: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.predictions, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        if P.ndim != 2 or P.shape[1] != 3 or y.shape != (P.shape[0],):
            raise ValueError("predictions must be m x 3 with m targets")
        if P.shape[0] < 1:
            raise ValueError("stacking needs at least one held-out cell")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(y))):
            raise NumericalError("non-finite value in stacking problem")
        object.__setattr__(self, "predictions", P)
        object.__setattr__(self, "targets", y)


def stacking_loss(sp: StackingProblem, theta: np.ndarray) -> float:
    r = sp.targets - sp.predictions @ np.asarray(theta, dtype=float)
    return float(r @ r)


def _face_candidates(P: np.ndarray, y: np.ndarray):
    """Equality-constrained least-squares minimizer on each face of the simplex."""
    eye = np.eye(3)
    for k in range(3):
        yield eye[k]
    for k, l in ((0, 1), (0, 2), (1, 2)):
        d = P[:, k] - P[:, l]
        dd = float(d @ d)
        if dd == 0.0:
            continue
        w = float((y - P[:, l]) @ d) / dd
        if 0.0 < w < 1.0:
            theta = np.zeros(3)
            theta[k] = w
            theta[l] = 1.0 - w
            yield theta
    # interior: KKT system of min ||y - P theta||^2 s.t. sum(theta) = 1
    A = np.zeros((4, 4))
    A[:3, :3] = P.T @ P
    A[:3, 3] = A[3, :3] = 1.0
    rhs = np.concatenate([P.T @ y, [1.0]])
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return
    if np.linalg.cond(A) < 1e12 and np.all(sol[:3] > 0.0):
        yield sol[:3] / sol[:3].sum()


def solve_simplex_ls(sp: StackingProblem) -> EnsembleWeights:
    """Exact least-squares weights on the probability simplex.

    Every face (3 vertices, 3 edges, interior) is solved in closed form and
    the best feasible candidate is kept. Near-ties prefer more weight on VR,
    then HZ, but never a candidate worse than the best pure vertex.
    """
    P, y = sp.predictions, sp.targets
    cands = [(stacking_loss(sp, th), th) for th in _face_candidates(P, y)]
    best = min(c[0] for c in cands)
    best_vertex = min(c[0] for c in cands[:3])
    slack = _TIE_RTOL * max(1.0, best)
    ties = [th for loss, th in cands if loss <= best + slack and loss <= best_vertex]
    theta = max(ties, key=lambda th: (th[0], th[1]))
    theta = np.where(theta < 0, 0.0, theta)
    theta = theta / theta.sum()
    return EnsembleWeights(*(float(v) for v in theta))


def _base_fits(
    mp: MaskedPanel,
    seed: int,
    reuse: Mapping[str, ImputationResult] | None,
    mc_init: np.ndarray | None = None,
) -> np.ndarray:
    """VR, HZ, MC imputations of ``mp``'s target, optionally at fixed penalties."""
    if reuse is None:
        vr = impute_vertical(mp)
        hz = impute_horizontal(mp, seed=seed)
        m = mc.impute_mc(mp, seed=seed)
    else:
        vr = impute_vertical(mp, penalty=reuse["VR"].penalty)
        hz = impute_horizontal(mp, penalty=reuse["HZ"].penalty, seed=seed)
        m = mc.impute_mc(mp, lam=reuse["MC"].penalty[0], seed=seed, init=mc_init)
    return np.array([vr.value, hz.value, m.value])


def _main_results(mp, seed, base):
    base = dict(base or {})
    if "VR" not in base:
        base["VR"] = impute_vertical(mp)
    if "HZ" not in base:
        base["HZ"] = impute_horizontal(mp, seed=seed)
    if "MC" not in base:
        base["MC"] = mc.impute_mc(mp, seed=seed)
    return base


def _finish(method, rows, targets, dropped, base, meta) -> ImputationResult:
    if len(rows) < 2:
        raise EnsembleError(f"{method}: only {len(rows)} stacking folds survived")
    sp = StackingProblem(np.array(rows), np.array(targets))
    w = solve_simplex_ls(sp)
    value = w.combine(base["VR"].value, base["HZ"].value, base["MC"].value)
    meta = {
        **meta,
        "n_folds": len(rows),
        "dropped_folds": dropped,
        "stacking_loss": stacking_loss(sp, w.as_array()),
        "base_values": [base[m].value for m in BASE_METHODS],
    }
    return ImputationResult(value, method, None, w.as_array(), None, meta)


def ensemble_vc(
    mp: MaskedPanel,
    *,
    fast: bool = False,
    base: Mapping[str, ImputationResult] | None = None,
    seed: int = 0,
) -> ImputationResult:
    """Weights from hiding each control unit's target-period outcome in turn.

    The target unit is dropped from every inner problem. ``base`` may carry
    the three main-problem imputations to avoid recomputing them; in
    ``fast`` mode their penalties are reused for every inner fit.
    """
    i, t = mp.target
    if mp.n_hidden != 1:
        raise EnsembleError("ensemble needs every cell but the target visible")
    n = mp.shape[0]
    if n < 4:
        raise EnsembleError("vertical cross-validation needs at least 3 control units")
    base = _main_results(mp, seed, base)
    keep = np.arange(n) != i
    Y = mp.observed[keep]
    main_L = None
    if fast:
        main_L = mc.fit_mc(mp, base["MC"].penalty[0]).low_rank[keep]
    rows, targets, dropped = [], [], []
    for j in range(n - 1):
        inner = MaskedPanel.single(Y, (j, t))
        try:
            rows.append(_base_fits(inner, seed, base if fast else None, main_L))
        except (PanelEnsembleError, np.linalg.LinAlgError) as exc:
            logger.debug("VC fold %d dropped: %s", j, exc)
            dropped.append(j)
            continue
        targets.append(Y[j, t])
    return _finish("ENS_VC", rows, targets, dropped, base, {"fast": fast})


def default_S(target_period: int) -> int:
    """``min(10, t - 3)`` in one-based periods, i.e. ``min(10, t - 2)`` zero-based."""
    return min(HC_MAX_S, target_period - 2)


def ensemble_hc(
    mp: MaskedPanel,
    S: int | None = None,
    *,
    fast: bool = False,
    base: Mapping[str, ImputationResult] | None = None,
    seed: int = 0,
) -> ImputationResult:
    """Weights from hiding the target unit's last ``S`` pre-treatment outcomes.

    Inner problem ``s`` sees only the periods up to ``t - s``.
    """
    i, t = mp.target
    if mp.n_hidden != 1:
        raise EnsembleError("ensemble needs every cell but the target visible")
    if S is None:
        S = default_S(t)
    if S < 2:
        raise InsufficientHistory(f"horizontal cross-validation needs S >= 2, got {S}")
    if t - S < 2:
        raise InsufficientHistory(f"S={S} leaves fewer than 3 periods in the last inner problem")
    base = _main_results(mp, seed, base)
    main_L = None
    if fast:
        main_L = mc.fit_mc(mp, base["MC"].penalty[0]).low_rank
    rows, targets, dropped = [], [], []
    for s in range(1, S + 1):
        Y = mp.observed[:, : t - s + 1]
        inner = MaskedPanel.single(Y, (i, t - s))
        init = None if main_L is None else main_L[:, : t - s + 1]
        try:
            rows.append(_base_fits(inner, seed, base if fast else None, init))
        except (PanelEnsembleError, np.linalg.LinAlgError) as exc:
            logger.debug("HC fold %d dropped: %s", s, exc)
            dropped.append(s)
            continue
        targets.append(Y[i, t - s])
    return _finish("ENS_HC", rows, targets, dropped, base, {"fast": fast, "S": S})

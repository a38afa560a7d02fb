"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line that is echoed in the terminal
summary, then asserts. Tolerances are the criteria's own.
"""

import itertools
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, noise_panel, rank_one
from panel_ensemble import elastic_net as en
from panel_ensemble import matrix_completion as mc
from panel_ensemble.bench import (
    BenchmarkConfig,
    SyntheticSpec,
    _aggregate,
    emit_report,
    evaluate_cell,
    generate_synthetic_panel,
    pseudo_treatment_eval,
)
from panel_ensemble.ensemble import StackingProblem, solve_simplex_ls, stacking_loss
from panel_ensemble.imputers import impute_horizontal, impute_vertical, random_folds
from panel_ensemble.panel import MaskedPanel, Panel, load_panel, restrict

SEEDS = range(20)
SENTINEL = 1e12


def record(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- elastic net ------------------------------------------------------------


def _kkt_instance(g):
    n = int(g.integers(2, 21))
    p = int(g.integers(1, 21))
    X = g.standard_normal((n, p)) * g.uniform(0.1, 10.0, p)
    beta = g.standard_normal(p) * (g.random(p) < 0.4)
    y = X @ beta + g.standard_normal(n) * g.uniform(0.01, 2.0)
    mix = float(g.choice([0.05, 0.25, 0.5, 0.75, 0.95, 1.0, g.uniform(0.01, 1.0)]))
    return X, y, mix


def test_elastic_net_kkt_suite():
    en.fit_elastic_net(np.eye(3), np.arange(3.0), 0.1, 0.5)  # compile outside the clock
    g = np.random.default_rng(2024)
    worst, nonzero_above = 0.0, 0
    start = time.perf_counter()
    for _ in range(200):
        X, y, mix = _kkt_instance(g)
        top = en.lambda_max(X, y, mix)
        lam = top * float(np.exp(g.uniform(np.log(1e-4), 0.0)))
        fit = en.fit_elastic_net(X, y, lam, mix)
        worst = max(worst, en.kkt_residual(fit, X, y))
        above = en.fit_elastic_net(X, y, top * float(g.uniform(1.0, 3.0)), mix)
        nonzero_above += int(np.any(above.coefficients != 0))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and nonzero_above == 0 and elapsed < 10.0
    record(
        "elastic-net KKT suite",
        ok,
        f"max KKT residual {worst:.2e} (<= 1e-6), {nonzero_above} non-zero fits above "
        f"lambda_max, {elapsed:.2f}s (< 10s)",
    )


def test_transpose_duality():
    worst = 0.0
    for seed in SEEDS:
        g = np.random.default_rng(seed)
        Y = g.standard_normal((8, 8)) + rank_one(8, 8, seed)
        target = (int(g.integers(8)), int(g.integers(8)))
        mp = MaskedPanel.single(Y, target)
        folds = random_folds(7, 4, seed)
        hz = impute_horizontal(mp, folds=folds)
        vr = impute_vertical(mp.transpose(), folds=folds)
        worst = max(worst, abs(hz.value - vr.value))
    record("transpose duality", worst <= 1e-10, f"max |HZ - VR(transpose)| {worst:.2e} (<= 1e-10)")


# -- matrix completion ------------------------------------------------------


def test_svt_oracle():
    g = np.random.default_rng(77)
    worst_map, worst_nuc = 0.0, 0.0
    for _ in range(100):
        n, T = int(g.integers(1, 11)), int(g.integers(1, 13))
        M = g.standard_normal((n, T)) * g.uniform(0.1, 5.0)
        s_full = np.linalg.svd(M, compute_uv=False)
        tau = float(g.uniform(0.0, 1.2) * s_full[0])
        out = mc.svt(M, tau)
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        ref = (U * np.maximum(s - tau, 0.0)) @ Vt
        worst_map = max(worst_map, float(np.abs(out - ref).max()))
        nuc = float(np.linalg.svd(out, compute_uv=False).sum()) if out.size else 0.0
        worst_nuc = max(worst_nuc, abs(nuc - float(np.maximum(s - tau, 0.0).sum())))
    ok = worst_map <= 1e-8 and worst_nuc <= 1e-8
    record("SVT oracle", ok, f"max entry error {worst_map:.2e}, nuclear-norm error {worst_nuc:.2e} (<= 1e-8)")


def test_mc_descent_recovery_monotone():
    worst_rise, rank_violations, fits = 0.0, 0, 0
    for seed in range(5):
        Y = 2.0 * rank_one(10, 10, seed) + 0.3 * noise_panel(10, 10, seed).values
        mp = restrict(Panel(Y), seed % 10, 9)
        ranks = []
        for lam in mc.lambda_grid(mp):
            fit = mc.fit_mc(mp, lam)
            fits += 1
            tr = np.array(fit.objective_trace)
            worst_rise = max(worst_rise, float(np.max(np.diff(tr) / np.abs(tr[:-1]), initial=0.0)))
            ranks.append(fit.rank)
        rank_violations += sum(a > b for a, b in zip(ranks, ranks[1:]))
    rel = []
    for seed in range(5):
        Y = rank_one(8, 10, seed)
        mp = restrict(Panel(Y), seed, 9)
        fit = mc.fit_mc(mp, 1e-6)
        rel.append(abs(fit.predict()[seed, 9] - Y[seed, 9]) / abs(Y[seed, 9]))
    # round-off in the objective is allowed; anything larger is an ascent step
    ok = worst_rise <= 1e-12 and max(rel) <= 1e-4 and rank_violations == 0
    record(
        "MC descent + recovery",
        ok,
        f"{fits} fits, max relative objective rise {worst_rise:.1e}; rank-1 recovery rel error "
        f"{max(rel):.1e} (<= 1e-4); {rank_violations} rank increases along lambda",
    )


# -- ensemble ---------------------------------------------------------------


def _grid_search(sp: StackingProblem, step: float = 1e-3) -> float:
    k = int(round(1 / step))
    a = np.arange(k + 1)[:, None] * step
    b = np.arange(k + 1)[None, :] * step
    c = 1.0 - a - b
    ok = c >= -1e-12
    P, y = sp.predictions, sp.targets
    pred = a[..., None] * P[:, 0] + b[..., None] * P[:, 1] + np.clip(c, 0, None)[..., None] * P[:, 2]
    loss = np.sum((y - pred) ** 2, axis=-1)
    return float(loss[ok].min())


def test_simplex_oracle():
    g = np.random.default_rng(5)
    worst_gap, worst_sum, vertex_viol = -np.inf, 0.0, 0
    for _ in range(100):
        m = int(g.integers(2, 21))
        y = g.standard_normal(m)
        P = y[:, None] + g.standard_normal((m, 3)) * g.uniform(0.1, 2.0, 3)
        if g.random() < 0.2:
            P[:, 2] = P[:, 1]  # duplicated base method
        sp = StackingProblem(P, y)
        theta = solve_simplex_ls(sp).as_array()
        loss = stacking_loss(sp, theta)
        worst_gap = max(worst_gap, loss - _grid_search(sp))
        worst_sum = max(worst_sum, abs(theta.sum() - 1.0))
        vertex_viol += sum(loss > stacking_loss(sp, e) for e in np.eye(3))
        vertex_viol += int(np.any(theta < 0))
    ok = worst_gap <= 1e-6 and worst_sum <= 1e-9 and vertex_viol == 0
    record(
        "simplex solver oracle",
        ok,
        f"max gap to 1e-3 grid {worst_gap:.2e} (<= 1e-6), max |sum - 1| {worst_sum:.1e}, "
        f"{vertex_viol} vertex-dominance violations",
    )


# -- benchmark --------------------------------------------------------------


def test_leakage():
    panel = generate_synthetic_panel(SyntheticSpec(N=8, T=10, seed=3))
    cfg = BenchmarkConfig(fast_mode=True)
    clean = pseudo_treatment_eval(panel, cfg)
    T0 = clean.config["T0"]
    outcomes = []
    # same cell order as the harness so the aggregation sums match
    for i, t in itertools.product(range(panel.n_units), range(T0, panel.n_periods)):
        Y = panel.values.copy()
        Y[:, t + 1 :] = SENTINEL
        Y[i, t] = SENTINEL
        o = evaluate_cell(panel.with_values(Y), i, t, cfg)
        o.truth = float(panel.values[i, t])
        outcomes.append(o)
    poisoned = _aggregate(outcomes, panel, cfg, T0)
    same = emit_report(poisoned) == emit_report(clean)
    record(
        "leakage",
        same,
        f"{len(outcomes)} cells re-run with future periods and the target set to {SENTINEL:g}; "
        f"report {'bit-identical' if same else 'differs'}",
    )


@pytest.fixture(scope="module")
def twenty_seeds():
    cfg = BenchmarkConfig(methods=("VR", "HZ", "MC", "ENS_VC"), fast_mode=True)
    start = time.perf_counter()
    rmse = [
        pseudo_treatment_eval(generate_synthetic_panel(SyntheticSpec(noise_scale=0.3, seed=s)), cfg).rmse
        for s in SEEDS
    ]
    return rmse, time.perf_counter() - start


def test_ensemble_tendency(twenty_seeds):
    rmse, elapsed = twenty_seeds
    ens = float(np.median([r["ENS_VC"] for r in rmse]))
    best = {m: float(np.median([r[m] for r in rmse])) for m in ("VR", "HZ", "MC")}
    bound = 1.05 * min(best.values())
    ok = ens <= bound and elapsed < 600
    detail = ", ".join(f"{m} {v:.4f}" for m, v in best.items())
    record(
        "ensemble tendency",
        ok,
        f"median ENS_VC {ens:.4f} <= {bound:.4f} (medians {detail}); 20 seeds in {elapsed:.0f}s (< 600s)",
    )


def test_regime_check(twenty_seeds):
    rmse, _ = twenty_seeds
    wins = sum(r["MC"] < min(r["VR"], r["HZ"]) for r in rmse)
    record("regime check", wins >= 14, f"MC beats VR and HZ in {wins}/20 seeds (>= 14)")


def test_determinism_across_jobs():
    panel = generate_synthetic_panel(SyntheticSpec(N=8, T=10, seed=11))
    cfg = BenchmarkConfig(fast_mode=True)
    a = emit_report(pseudo_treatment_eval(panel, cfg, jobs=1))
    b = emit_report(pseudo_treatment_eval(panel, cfg, jobs=8))
    record("determinism", a == b, f"jobs=1 vs jobs=8 reports {'byte-identical' if a == b else 'differ'}")


# -- real data --------------------------------------------------------------

GDP_ENV = "PANEL_ENSEMBLE_GDP_CSV"


@pytest.mark.skipif(GDP_ENV not in os.environ, reason=f"set {GDP_ENV} to a long-format GDP panel")
def test_gdp_levels_ordering():
    with open(os.environ[GDP_ENV], encoding="utf-8") as fh:
        full = load_panel(fh)
    cfg = BenchmarkConfig(methods=("VR", "HZ", "MC", "ENS_VC"), fast_mode=True)
    notes, ok = [], True
    for T in (10, 25):
        r = pseudo_treatment_eval(full.head(T), cfg, jobs=os.cpu_count() or 1).rmse
        best = min(r["VR"], r["HZ"], r["MC"])
        ok &= r["ENS_VC"] <= best + 0.05
        if T == 10:
            ok &= r["VR"] < r["MC"] < r["HZ"]
        notes.append(f"T={T}: " + ", ".join(f"{m} {v:.3f}" for m, v in r.items()))
    record("GDP levels (optional)", ok, "; ".join(notes))

"""Pseudo-treatment benchmark harness and synthetic factor-model panels.

Every unit is pretended to be treated in turn at each period after ``T0``;
each method imputes the hidden cell from the history up to that period and
is scored against the known outcome.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import matrix_completion as mc
from .ensemble import HC_MAX_S, EnsembleWeights, ensemble_hc, ensemble_vc
from .errors import ConfigError, PanelEnsembleError
from .imputers import (
    BASE_METHODS,
    HZ_MAX_FOLDS,
    METHODS,
    VR_MAX_FOLDS,
    impute_horizontal,
    impute_vertical,
)
from .panel import Panel, restrict, transform

logger = logging.getLogger(__name__)

SCHEMA = "panel-ensemble/benchmark-report/1"
TABLE_COLUMNS = ("Periods", "VR", "HZ", "MC", "Ens-VC", "Ens-HC", "W-VR", "W-HZ", "W-MC")
CSV_METRICS = ("rmse", "avg_complexity", "avg_vc_weight", "n_failed")


@dataclass(frozen=True)
class BenchmarkConfig:
    methods: tuple[str, ...] = METHODS
    T0: int | None = None
    transform: str = "level"
    S: int | None = None
    seed: int = 0
    fast_mode: bool = False

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        # canonical order keeps reports independent of flag order
        object.__setattr__(self, "methods", tuple(m for m in METHODS if m in self.methods))

    def resolve_T0(self, T: int) -> int:
        T0 = math.ceil(0.8 * T) if self.T0 is None else self.T0
        if not 2 <= T0 < T:
            raise ConfigError(f"T0 must satisfy 2 <= T0 < T={T}, got {T0}")
        return T0


@dataclass(frozen=True)
class SyntheticSpec:
    N: int = 20
    T: int = 20
    rank: int = 2
    factor_scale: float = 1.0
    noise_scale: float = 0.3
    fe_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.N < 2 or self.T < 2:
            raise ConfigError("synthetic panel needs N >= 2 and T >= 2")
        if self.rank < 0:
            raise ConfigError("rank must be non-negative")
        if min(self.factor_scale, self.noise_scale, self.fe_scale) < 0:
            raise ConfigError("scales must be non-negative")


def generate_synthetic_panel(spec: SyntheticSpec) -> Panel:
    """``Y = a_i + b_t + factor_scale * U V' + noise_scale * eps`` with seeded normals."""
    rng = np.random.default_rng(spec.seed)
    a = spec.fe_scale * rng.standard_normal(spec.N)
    b = spec.fe_scale * rng.standard_normal(spec.T)
    u = rng.standard_normal((spec.N, spec.rank))
    v = rng.standard_normal((spec.T, spec.rank))
    eps = rng.standard_normal((spec.N, spec.T))
    Y = a[:, None] + b[None, :] + spec.factor_scale * (u @ v.T) + spec.noise_scale * eps
    width = len(str(spec.N))
    units = tuple(f"u{i + 1:0{width}d}" for i in range(spec.N))
    return Panel(Y + 0.0, units, tuple(range(1, spec.T + 1)))


# --------------------------------------------------------------------------
# evaluation


@dataclass
class CellOutcome:
    unit: int
    period: int
    truth: float
    values: dict[str, float] = field(default_factory=dict)
    complexity: dict[str, float] = field(default_factory=dict)
    vc_weights: tuple[float, float, float] | None = None
    errors: dict[str, str] = field(default_factory=dict)


def evaluate_cell(panel: Panel, unit: int, period: int, cfg: BenchmarkConfig) -> CellOutcome:
    """Run every configured method on one pseudo-treated cell.

    Only periods ``<= period`` are handed to the estimators.
    """
    mp = restrict(panel, unit, period)
    out = CellOutcome(unit, period, float(panel.values[unit, period]))
    need_base = set(cfg.methods) | (
        set(BASE_METHODS) if {"ENS_VC", "ENS_HC"} & set(cfg.methods) else set()
    )
    base = {}
    runners = {
        "VR": lambda: impute_vertical(mp),
        "HZ": lambda: impute_horizontal(mp, seed=cfg.seed),
        "MC": lambda: mc.impute_mc(mp, seed=cfg.seed),
    }
    for m in BASE_METHODS:
        if m not in need_base:
            continue
        try:
            base[m] = runners[m]()
        except (PanelEnsembleError, np.linalg.LinAlgError) as exc:
            out.errors[m] = f"{type(exc).__name__}: {exc}"
            continue
        if m in cfg.methods:
            out.values[m] = base[m].value
            out.complexity[m] = base[m].complexity
    for m in ("ENS_VC", "ENS_HC"):
        if m not in cfg.methods:
            continue
        missing = [b for b in BASE_METHODS if b not in base]
        if missing:
            out.errors[m] = f"EnsembleError: base methods failed: {missing}"
            continue
        try:
            if m == "ENS_VC":
                res = ensemble_vc(mp, fast=cfg.fast_mode, base=base, seed=cfg.seed)
                out.vc_weights = tuple(float(w) for w in res.diagnostics)
            else:
                res = ensemble_hc(mp, cfg.S, fast=cfg.fast_mode, base=base, seed=cfg.seed)
        except (PanelEnsembleError, np.linalg.LinAlgError) as exc:
            out.errors[m] = f"{type(exc).__name__}: {exc}"
            continue
        out.values[m] = res.value
    return out


def _evaluate_args(args) -> CellOutcome:
    return evaluate_cell(*args)


@dataclass
class BenchmarkReport:
    rmse: dict[str, float | None]
    avg_weights_vc: EnsembleWeights | None
    avg_complexity: dict[str, float | None]
    n_cells: int
    n_failed: dict[str, int]
    n_units: int
    n_periods: int
    config: dict[str, Any]
    failures: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["avg_weights_vc"] = (
            None
            if self.avg_weights_vc is None
            else dict(zip(BASE_METHODS, self.avg_weights_vc.as_array().tolist()))
        )
        return {"schema": SCHEMA, **d}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BenchmarkReport":
        d = dict(d)
        if d.pop("schema", SCHEMA) != SCHEMA:
            raise ConfigError("unrecognized report schema")
        w = d["avg_weights_vc"]
        d["avg_weights_vc"] = None if w is None else EnsembleWeights(w["VR"], w["HZ"], w["MC"])
        return cls(**d)


def pseudo_treatment_eval(panel: Panel, cfg: BenchmarkConfig, *, jobs: int = 1) -> BenchmarkReport:
    """Score every configured method over all units and periods after ``T0``.

    ``panel`` is transformed first when it is still in levels and the config
    asks for another scale; errors are measured on the transformed scale.
    """
    if panel.transform != cfg.transform:
        panel = transform(panel, cfg.transform)
    N, T = panel.shape
    T0 = cfg.resolve_T0(T)
    cells = [(panel, i, t, cfg) for i in range(N) for t in range(T0, T)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_evaluate_args, cells, chunksize=max(1, len(cells) // (4 * jobs))))
    else:
        outcomes = [_evaluate_args(c) for c in cells]
    return _aggregate(outcomes, panel, cfg, T0)


def _aggregate(outcomes: list[CellOutcome], panel: Panel, cfg: BenchmarkConfig, T0: int):
    rmse, cx, n_failed = {}, {}, {}
    for m in cfg.methods:
        errs = [o.values[m] - o.truth for o in outcomes if m in o.values]
        n_failed[m] = len(outcomes) - len(errs)
        rmse[m] = float(np.sqrt(np.mean(np.square(errs)))) if errs else None
        if m in BASE_METHODS:
            vals = [o.complexity[m] for o in outcomes if m in o.complexity]
            cx[m] = float(np.mean(vals)) if vals else None
    weights = [o.vc_weights for o in outcomes if o.vc_weights is not None]
    avg_w = None
    if weights:
        w = np.mean(np.array(weights), axis=0)
        avg_w = EnsembleWeights(*(float(v) for v in w))
    failures = [
        {
            "unit": str(panel.unit_labels[o.unit]),
            "period": str(panel.period_labels[o.period]),
            "method": m,
            "error": msg,
        }
        for o in outcomes
        for m, msg in sorted(o.errors.items())
        if m in cfg.methods
    ]
    n_bad = sum(1 for o in outcomes if any(m in o.errors for m in cfg.methods))
    config = {
        "methods": list(cfg.methods),
        "T0": T0,
        "transform": cfg.transform,
        "S": cfg.S if cfg.S is not None else f"auto: min({HC_MAX_S}, t-3)",
        "seed": cfg.seed,
        "fast_mode": cfg.fast_mode,
        "vr_folds": f"blocked, K=min({VR_MAX_FOLDS}, t-2)",
        "hz_folds": f"random, K=min({HZ_MAX_FOLDS}, N-2), seed={cfg.seed}",
        "mc_folds": f"{mc.CV_FOLDS} random cell folds of {mc.CV_FRACTION:.0%}, seed={cfg.seed}",
    }
    return BenchmarkReport(
        rmse=rmse,
        avg_weights_vc=avg_w,
        avg_complexity=cx,
        n_cells=len(outcomes) - n_bad,
        n_failed=n_failed,
        n_units=panel.n_units,
        n_periods=panel.n_periods,
        config=config,
        failures=failures,
    )


# --------------------------------------------------------------------------
# emission


def _num(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def emit_report(report: BenchmarkReport, format: str = "json") -> bytes:
    """Serialize a report as ``json`` (lossless), ``csv`` or ``table``."""
    if format == "json":
        return (json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n").encode()
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "metric", "value"])
        weights = dict(zip(BASE_METHODS, report.avg_weights_vc.as_array())) if report.avg_weights_vc else {}
        for m in report.config["methods"]:
            row = {
                "rmse": report.rmse.get(m),
                "avg_complexity": report.avg_complexity.get(m),
                "avg_vc_weight": weights.get(m),
                "n_failed": report.n_failed.get(m),
            }
            for metric in CSV_METRICS:
                v = row[metric]
                w.writerow([m, metric, "" if v is None else repr(v if isinstance(v, int) else float(v))])
        return buf.getvalue().encode()
    if format in ("table", "text-table"):
        weights = report.avg_weights_vc.as_array() if report.avg_weights_vc else [None] * 3
        cells = [str(report.n_periods)]
        for m in METHODS:
            cells.append(_num(report.rmse.get(m)) if m in report.rmse else "-")
        cells += [_num(v) for v in weights]
        widths = [max(len(h), len(c)) for h, c in zip(TABLE_COLUMNS, cells)]
        lines = [
            "Average RMSE and average weight in the VC ensemble",
            "  ".join(h.rjust(wd) for h, wd in zip(TABLE_COLUMNS, widths)),
            "  ".join(c.rjust(wd) for c, wd in zip(cells, widths)),
            "",
            "Average complexity (non-zero coefficients for VR/HZ, rank for MC)",
            "  ".join(h.rjust(7) for h in ("Periods", "VR", "HZ", "MC")),
            "  ".join(
                c.rjust(7)
                for c in [str(report.n_periods)]
                + [_num(report.avg_complexity.get(m)) for m in BASE_METHODS]
            ),
            "",
            f"cells: {report.n_cells}  failed: "
            + ", ".join(f"{m}={n}" for m, n in report.n_failed.items()),
        ]
        return ("\n".join(lines) + "\n").encode()
    raise ConfigError(f"unknown report format {format!r}")


def load_report(data: bytes | str) -> BenchmarkReport:
    return BenchmarkReport.from_dict(json.loads(data))

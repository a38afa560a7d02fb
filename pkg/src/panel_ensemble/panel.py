"""Panel data model, outcome transforms, masking and CSV I/O.

Indices are zero-based throughout: ``values[i, t]`` is unit ``i`` in the
``t``-th period. Panels are immutable; their arrays are flagged read-only.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import math
from dataclasses import dataclass, field
from typing import Hashable, Literal, TextIO

import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    DuplicateCell,
    IncompletePanel,
    InsufficientHistory,
    ParseError,
)

OutcomeTransform = Literal["level", "log", "growth"]
TRANSFORMS: tuple[str, ...] = ("level", "log", "growth")


def _readonly(a: np.ndarray, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def period_key(label: Hashable) -> tuple:
    """Chronological sort key for a period label (integer or ISO date)."""
    if isinstance(label, (bool, np.bool_)):
        raise ParseError(f"invalid period label {label!r}")
    if isinstance(label, (int, np.integer)):
        return (0, int(label))
    if isinstance(label, _dt.date):
        return (1, label.toordinal())
    text = str(label).strip()
    try:
        return (0, int(text))
    except ValueError:
        pass
    try:
        return (1, _dt.date.fromisoformat(text).toordinal())
    except ValueError:
        raise ParseError(
            f"period label {label!r} is neither an integer nor an ISO date"
        ) from None


@dataclass(frozen=True, eq=False)
class Panel:
    """Dense ``N x T`` outcome matrix with unit and period labels."""

    values: np.ndarray
    unit_labels: tuple = ()
    period_labels: tuple = ()
    transform: str = "level"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ConfigError("panel values must be a 2-d array")
        n, t = values.shape
        if n < 2 or t < 2:
            raise ConfigError(f"panel must be at least 2x2, got {n}x{t}")
        if not np.all(np.isfinite(values)):
            raise IncompletePanel("panel values must all be finite")
        units = tuple(self.unit_labels) or tuple(range(n))
        periods = tuple(self.period_labels) or tuple(range(1, t + 1))
        if len(units) != n or len(periods) != t:
            raise ConfigError("label counts do not match the value matrix")
        if len(set(units)) != n:
            raise DuplicateCell("duplicate unit labels")
        keys = [period_key(p) for p in periods]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            raise ConfigError("period labels must be strictly increasing")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "unit_labels", units)
        object.__setattr__(self, "period_labels", periods)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    @property
    def n_periods(self) -> int:
        return self.values.shape[1]

    def unit_index(self, label) -> int:
        for i, u in enumerate(self.unit_labels):
            if u == label or str(u) == str(label):
                return i
        raise ConfigError(f"unknown unit {label!r}")

    def period_index(self, label) -> int:
        key = period_key(label)
        for t, p in enumerate(self.period_labels):
            if period_key(p) == key:
                return t
        raise ConfigError(f"unknown period {label!r}")

    def head(self, n_periods: int) -> "Panel":
        """Panel restricted to the first ``n_periods`` columns."""
        return Panel(
            self.values[:, :n_periods],
            self.unit_labels,
            self.period_labels[:n_periods],
            self.transform,
        )

    def with_values(self, values: np.ndarray) -> "Panel":
        return Panel(values, self.unit_labels, self.period_labels, self.transform)

    def equals(self, other: "Panel") -> bool:
        return (
            self.shape == other.shape
            and bool(np.array_equal(self.values, other.values))
            and [str(u) for u in self.unit_labels] == [str(u) for u in other.unit_labels]
            and [period_key(p) for p in self.period_labels]
            == [period_key(p) for p in other.period_labels]
            and self.transform == other.transform
        )


@dataclass(frozen=True, eq=False)
class MaskedPanel:
    """A panel together with the pattern of cells an estimator may read.

    ``target`` is the ``(unit, period)`` cell to impute and is never visible.
    Estimators must go through :attr:`observed`, in which every hidden cell
    is NaN, so that reading a hidden value poisons the result.
    """

    panel: Panel
    visible: np.ndarray
    target: tuple[int, int]
    _observed: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vis = np.asarray(self.visible, dtype=bool)
        if vis.shape != self.panel.shape:
            raise ConfigError("visibility pattern does not match panel shape")
        i, t = (int(x) for x in self.target)
        n, T = self.panel.shape
        if not (0 <= i < n and 0 <= t < T):
            raise ConfigError(f"target {self.target} outside a {n}x{T} panel")
        if vis[i, t]:
            raise ConfigError("target cell must not be visible")
        observed = np.where(vis, self.panel.values, np.nan)
        object.__setattr__(self, "visible", _readonly(vis, dtype=bool))
        object.__setattr__(self, "target", (i, t))
        object.__setattr__(self, "_observed", _readonly(observed))

    @classmethod
    def single(cls, values: np.ndarray, target: tuple[int, int], **labels) -> "MaskedPanel":
        """Fully visible panel except for the single ``target`` cell."""
        values = np.asarray(values, dtype=float)
        # hidden cells may hold NaN in the caller's copy; the panel needs finite values
        values = np.where(np.isfinite(values), values, 0.0)
        panel = Panel(values, **labels)
        vis = np.ones(values.shape, dtype=bool)
        vis[target] = False
        return cls(panel, vis, target)

    @property
    def observed(self) -> np.ndarray:
        return self._observed

    @property
    def shape(self) -> tuple[int, int]:
        return self.panel.shape

    @property
    def n_hidden(self) -> int:
        return int((~self.visible).sum())

    def transpose(self) -> "MaskedPanel":
        p = self.panel
        tp = Panel(
            p.values.T,
            unit_labels=tuple(range(p.n_periods)),
            period_labels=tuple(range(1, p.n_units + 1)),
            transform=p.transform,
        )
        return MaskedPanel(tp, self.visible.T, (self.target[1], self.target[0]))


def transform(panel: Panel, kind: str) -> Panel:
    """Apply an outcome transform.

    ``growth`` is the period-over-period percent change and drops the first
    period.
    """
    if kind not in TRANSFORMS:
        raise ConfigError(f"unknown transform {kind!r}")
    if kind == "level":
        return panel
    if panel.transform != "level":
        raise DomainError(f"cannot apply {kind} to a {panel.transform} panel")
    y = panel.values
    if kind == "log":
        if np.any(y <= 0):
            raise DomainError("log transform requires strictly positive values")
        return Panel(np.log(y), panel.unit_labels, panel.period_labels, "log")
    if panel.n_periods < 3:
        raise DomainError("growth transform requires at least 3 periods")
    prev = y[:, :-1]
    if np.any(prev == 0):
        raise DomainError("growth transform hit a zero denominator")
    g = 100.0 * (y[:, 1:] - prev) / prev
    return Panel(g, panel.unit_labels, panel.period_labels[1:], "growth")


def restrict(panel: Panel, unit: int, period: int) -> MaskedPanel:
    """Evaluation view for pretending ``unit`` was first treated in ``period``.

    Keeps columns ``0..period`` and hides only ``(unit, period)``.
    """
    n, T = panel.shape
    if not 0 <= unit < n:
        raise ConfigError(f"unit index {unit} out of range for {n} units")
    if period < 1:
        raise InsufficientHistory("need at least one period before the target")
    if period >= T:
        raise ConfigError(f"period index {period} out of range for {T} periods")
    sub = panel.head(period + 1)
    vis = np.ones(sub.shape, dtype=bool)
    vis[unit, period] = False
    return MaskedPanel(sub, vis, (unit, period))


# --------------------------------------------------------------------------
# CSV I/O


def _parse_float(text: str, where: str) -> float:
    text = text.strip()
    if text == "":
        raise IncompletePanel(f"missing value at {where}")
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r} at {where}") from None
    if math.isnan(v):
        raise IncompletePanel(f"missing value at {where}")
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {text!r} at {where}")
    return v


def _rows(stream: TextIO | str) -> list[list[str]]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = [r for r in csv.reader(stream) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty input")
    return rows


def _assemble(units: list, periods: list, cells: dict) -> Panel:
    order = sorted(range(len(periods)), key=lambda k: period_key(periods[k]))
    periods = [periods[k] for k in order]
    values = np.empty((len(units), len(periods)))
    for i, u in enumerate(units):
        for t, p in enumerate(periods):
            try:
                values[i, t] = cells[u, p]
            except KeyError:
                raise IncompletePanel(f"missing cell (unit={u}, period={p})") from None
    return Panel(values, tuple(units), tuple(periods))


def load_panel(stream: TextIO | str, format: str = "long") -> Panel:
    """Read a balanced panel from CSV text.

    Long format has header ``unit,period,value``; wide format has header
    ``unit,<p1>,<p2>,...`` and one row per unit. Units keep their order of
    first appearance, periods are sorted chronologically.
    """
    rows = _rows(stream)
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if format == "long":
        if [h.lower() for h in header] != ["unit", "period", "value"]:
            raise ParseError(f"long format needs header unit,period,value; got {header}")
        units: dict[str, None] = {}
        periods: dict[str, tuple] = {}
        cells: dict[tuple[str, str], float] = {}
        for lineno, row in enumerate(body, start=2):
            if len(row) != 3:
                raise IncompletePanel(f"line {lineno}: expected 3 fields, got {len(row)}")
            u, p, v = (c.strip() for c in row)
            key = period_key(p)
            # "2" and "02" are the same period
            p = periods.setdefault(key, (p,))[0]
            if (u, p) in cells:
                raise DuplicateCell(f"duplicate cell (unit={u}, period={p})")
            cells[u, p] = _parse_float(v, f"line {lineno}")
            units.setdefault(u, None)
        return _assemble(list(units), [v[0] for v in periods.values()], cells)
    if format == "wide":
        if len(header) < 3 or header[0].lower() != "unit":
            raise ParseError("wide format needs header unit,<p1>,<p2>,...")
        periods = header[1:]
        keys = [period_key(p) for p in periods]
        if len(set(keys)) != len(keys):
            raise DuplicateCell("duplicate period column")
        units: list[str] = []
        cells = {}
        for lineno, row in enumerate(body, start=2):
            if len(row) != len(header):
                raise IncompletePanel(
                    f"line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            u = row[0].strip()
            if u in units:
                raise DuplicateCell(f"duplicate unit row {u!r}")
            units.append(u)
            for p, v in zip(periods, row[1:]):
                cells[u, p] = _parse_float(v, f"line {lineno}, period {p}")
        return _assemble(units, periods, cells)
    raise ConfigError(f"unknown panel format {format!r}")


def _fmt(v: float) -> str:
    # +0.0 turns -0.0 into 0.0
    return repr(float(v) + 0.0)


def write_panel(panel: Panel, stream: TextIO, format: str = "long") -> None:
    w = csv.writer(stream, lineterminator="\n")
    if format == "long":
        w.writerow(["unit", "period", "value"])
        for i, u in enumerate(panel.unit_labels):
            for t, p in enumerate(panel.period_labels):
                w.writerow([u, p, _fmt(panel.values[i, t])])
    elif format == "wide":
        w.writerow(["unit", *panel.period_labels])
        for i, u in enumerate(panel.unit_labels):
            w.writerow([u, *(_fmt(v) for v in panel.values[i])])
    else:
        raise ConfigError(f"unknown panel format {format!r}")


def dumps_panel(panel: Panel, format: str = "long") -> str:
    buf = io.StringIO()
    write_panel(panel, buf, format)
    return buf.getvalue()

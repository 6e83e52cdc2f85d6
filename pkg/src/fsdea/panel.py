"""Bank-year panel container, CSV ingestion, validation and positivity shifts."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .exceptions import (
    DegenerateColumnError,
    DuplicateKeyError,
    ParseError,
    SchemaError,
)

UNIT, PERIOD = "unit", "period"

DEA_ROLES = ("initial-input", "final-output", "intermediate-output", "external-input")
REGRESSION_ROLES = ("regression-dependent", "regression-explanatory", "regression-control")
# "instrument" and "auxiliary" extend the closed role set so that instrument
# and subsample-criterion columns still carry exactly one role.
ROLES = DEA_ROLES + REGRESSION_ROLES + ("instrument", "auxiliary", "identifier")
TRANSFORMS = ("none", "log", "divide-by-100", "ratio")

_MISSING_TOKENS = {"", "na", "nan", "null", "none", "."}


@dataclass(frozen=True)
class VariableEntry:
    role: str
    description: str = ""
    transform: str = "none"
    numerator: str | None = None
    denominator: str | None = None
    required: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"unknown role {self.role!r}")
        if self.transform not in TRANSFORMS:
            raise SchemaError(f"unknown transform {self.transform!r}")
        if (self.numerator is None) != (self.denominator is None):
            raise SchemaError("ratio transform needs both numerator and denominator")


class VariableDictionary(dict):
    """Mapping column name -> :class:`VariableEntry`."""

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "VariableDictionary":
        out = cls()
        for name, entry in mapping.items():
            out[name] = entry if isinstance(entry, VariableEntry) else VariableEntry(**entry)
        return out

    @classmethod
    def from_json(cls, path) -> "VariableDictionary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))

    def to_json(self, path) -> None:
        payload = {
            name: {k: v for k, v in vars(e).items() if v is not None}
            for name, e in self.items()
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def role(self, column: str) -> str:
        return self[column].role if column in self else "auxiliary"


def default_dictionary() -> VariableDictionary:
    """Regression variables of the bank study plus the default DEA columns.

    ``FTI`` arrives as the raw digital-inclusion index and is divided by 100;
    ``TAS`` and ``OEX`` arrive in levels and are logged. The stage-3
    external input has no default column.
    """
    reg = {
        "FSI": ("regression-dependent", "Financial sustainability index (network DEA Malmquist)", "none"),
        "FTI": ("regression-explanatory", "Digital financial inclusion index divided by 100", "divide-by-100"),
        "GDP_g": ("regression-control", "Prefecture GDP growth rate", "ratio"),
        "FDL": ("regression-control", "Deposits plus loans over local GDP", "ratio"),
        "LDR": ("regression-control", "Total loans / total deposits", "ratio"),
        "NIIR": ("regression-control", "Non-interest income / operating income", "ratio"),
        "ROA": ("regression-control", "Net profit / total assets", "ratio"),
        "DAR": ("regression-control", "Total liabilities / total assets", "ratio"),
        "TAS": ("regression-control", "Log of total assets at year-end", "log"),
        "OEX": ("regression-control", "Log of operating expenses at year-end", "log"),
        "CAR": ("regression-control", "Eligible capital / risk-weighted assets", "ratio"),
    }
    dea = {
        "salary_per_employee": ("initial-input", "Salary per employee"),
        "capex": ("initial-input", "Capital expenditures"),
        "equity": ("initial-input", "Shareholders' equity"),
        "deposits": ("intermediate-output", "Total deposits"),
        "operating_cash": ("intermediate-output", "Cash from operations"),
        "roe": ("final-output", "Return on equity"),
        "total_assets": ("external-input", "Total assets (loan-stage external input)"),
        "net_loans": ("intermediate-output", "Net loan amount"),
        "net_interest_income": ("intermediate-output", "Net interest income"),
        "roa": ("final-output", "Return on assets (DEA output)"),
        "revenue_per_employee": ("final-output", "Revenue per employee"),
        "total_revenue": ("final-output", "Total revenue"),
        "net_profit_margin": ("final-output", "Net profit margin"),
    }
    out = VariableDictionary()
    for name, (role, desc, tr) in reg.items():
        out[name] = VariableEntry(role, desc, tr)
    for name, (role, desc) in dea.items():
        out[name] = VariableEntry(role, desc)
    return out


@dataclass(frozen=True, eq=False)
class Panel:
    """Rectangular unit x period grid; NaN marks a missing cell.

    Treat instances as immutable: every transformation returns a new panel.
    """

    _data: pd.DataFrame
    roles: Mapping[str, str] = field(default_factory=dict)
    provenance: Mapping = field(default_factory=dict)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, roles: Mapping[str, str] | None = None,
                   provenance: Mapping | None = None) -> "Panel":
        """Build from a long frame with ``unit`` and ``period`` columns or a
        (unit, period) MultiIndex."""
        if not isinstance(df.index, pd.MultiIndex):
            missing = [c for c in (UNIT, PERIOD) if c not in df.columns]
            if missing:
                raise SchemaError(f"missing mandatory column {missing[0]!r}")
            df = df.set_index([UNIT, PERIOD])
        df = df.copy()
        df.index = df.index.set_names([UNIT, PERIOD])
        if df.index.duplicated().any():
            u, p = df.index[df.index.duplicated()][0]
            raise DuplicateKeyError(f"duplicate key (unit={u!r}, period={p!r})")
        periods = df.index.get_level_values(PERIOD)
        if not all(float(p).is_integer() for p in periods):
            raise ParseError("period labels must be integers", column=PERIOD)
        df.index = pd.MultiIndex.from_arrays(
            [df.index.get_level_values(UNIT).astype(str), periods.astype(np.int64)], names=[UNIT, PERIOD])
        units = sorted(df.index.get_level_values(UNIT).unique())
        pers = sorted(df.index.get_level_values(PERIOD).unique())
        grid = pd.MultiIndex.from_product([units, pers], names=[UNIT, PERIOD])
        df = df.reindex(grid).astype(float)
        roles = dict(roles or {})
        roles = {c: roles.get(c, "auxiliary") for c in df.columns}
        return cls(df, roles, dict(provenance or {}))

    @property
    def units(self) -> list:
        return list(self._data.index.levels[0])

    @property
    def periods(self) -> list:
        return [int(p) for p in self._data.index.levels[1]]

    @property
    def columns(self) -> list:
        return list(self._data.columns)

    @property
    def missing(self) -> pd.DataFrame:
        return self._data.isna()

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, column) -> bool:
        return column in self._data.columns

    def frame(self) -> pd.DataFrame:
        """Copy of the underlying (unit, period)-indexed frame."""
        return self._data.copy()

    def column(self, name: str) -> pd.Series:
        if name not in self._data.columns:
            raise SchemaError(f"missing column {name!r}")
        return self._data[name].copy()

    def cross_section(self, period: int, columns: Iterable[str] | None = None) -> pd.DataFrame:
        """Rows of one period indexed by unit."""
        if period not in self.periods:
            raise KeyError(f"period {period} not in panel")
        df = self._data.xs(period, level=PERIOD)
        if columns is not None:
            cols = list(columns)
            missing = [c for c in cols if c not in df.columns]
            if missing:
                raise SchemaError(f"missing column {missing[0]!r}")
            df = df[cols]
        return df.copy()

    def select_periods(self, periods: Iterable[int]) -> "Panel":
        keep = list(periods)
        df = self._data[self._data.index.get_level_values(PERIOD).isin(keep)]
        return Panel.from_frame(df, self.roles, self.provenance)

    def select_units(self, units: Iterable) -> "Panel":
        keep = {str(u) for u in units}
        df = self._data[self._data.index.get_level_values(UNIT).isin(keep)]
        return Panel.from_frame(df, self.roles, self.provenance)

    def with_columns(self, columns: Mapping[str, pd.Series], roles: Mapping[str, str] | None = None,
                     provenance: Mapping | None = None) -> "Panel":
        """New panel with columns added or replaced (aligned on the index)."""
        df = self._data.copy()
        for name, values in columns.items():
            if isinstance(values, pd.Series):
                df[name] = values.reindex(df.index).astype(float)
            else:
                df[name] = np.asarray(values, dtype=float)
        new_roles = dict(self.roles)
        for name in columns:
            new_roles.setdefault(name, "auxiliary")
        new_roles.update(roles or {})
        prov = dict(self.provenance)
        prov.update(provenance or {})
        return Panel(df, new_roles, prov)

    def lag(self, column: str, periods: int = 1) -> pd.Series:
        """Within-unit lag over the period grid; the first periods become NaN."""
        wide = self._data[column].unstack(PERIOD)
        lagged = wide.shift(periods, axis=1)
        return lagged.stack(future_stack=True).reindex(self._data.index)

    def equals(self, other: "Panel") -> bool:
        return (self.roles == other.roles) and self._data.equals(other._data)

    def columns_with_role(self, *roles: str) -> list:
        return [c for c in self._data.columns if self.roles.get(c) in roles]


def _parse_float(token: str, row: int, column: str) -> float:
    t = token.strip()
    if t.lower() in _MISSING_TOKENS:
        return math.nan
    try:
        return float(t)
    except ValueError:
        raise ParseError(f"non-numeric value {token!r} at row {row}, column {column!r}",
                         row=row, column=column) from None


def _apply_transform(values: np.ndarray, entry: VariableEntry, name: str, raw: Mapping, keys) -> np.ndarray:
    if entry.transform == "divide-by-100":
        return values / 100.0
    if entry.transform == "log":
        bad = np.flatnonzero(values <= 0)
        if bad.size:
            u, p = keys[bad[0]]
            raise ParseError(f"cannot take log of {values[bad[0]]!r} in column {name!r} "
                             f"(unit={u}, period={p})", row=int(bad[0]) + 2, column=name)
        return np.log(values)
    if entry.transform == "ratio" and entry.numerator is not None:
        for src in (entry.numerator, entry.denominator):
            if src not in raw:
                raise SchemaError(f"missing column {src!r} required to build {name!r}")
        with np.errstate(divide="ignore", invalid="ignore"):
            out = raw[entry.numerator] / raw[entry.denominator]
        return np.where(np.isfinite(out), out, np.nan)
    return values


def load_panel(path, dictionary: VariableDictionary | None = None) -> Panel:
    """Read a comma-separated bank-year file into a :class:`Panel`.

    The header must contain ``unit`` and ``period``; every other column is
    numeric. Declared transforms of ``dictionary`` are applied and recorded
    in ``panel.provenance["transforms"]``.
    """
    path = Path(path)
    dictionary = dictionary if dictionary is not None else VariableDictionary()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty; header row required") from None
        rows = list(reader)
    for mandatory in (UNIT, PERIOD):
        if mandatory not in header:
            raise SchemaError(f"missing mandatory column {mandatory!r}")
    for name, entry in dictionary.items():
        derived = entry.transform == "ratio" and entry.numerator is not None
        if entry.required and name not in header and not derived:
            raise SchemaError(f"missing mandatory column {name!r}")
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in header")

    iu, ip = header.index(UNIT), header.index(PERIOD)
    data_cols = [h for h in header if h not in (UNIT, PERIOD)]
    col_idx = [header.index(c) for c in data_cols]
    keys, seen = [], set()
    values = np.empty((len(rows), len(data_cols)))
    for r, row in enumerate(rows):
        line = r + 2
        if len(row) != len(header):
            raise ParseError(f"row {line} has {len(row)} fields, expected {len(header)}", row=line)
        unit = row[iu].strip()
        try:
            period_f = float(row[ip])
            if not period_f.is_integer():
                raise ValueError
        except ValueError:
            raise ParseError(f"non-integer period {row[ip]!r} at row {line}", row=line, column=PERIOD) from None
        key = (unit, int(period_f))
        if key in seen:
            raise DuplicateKeyError(f"duplicate key (unit={unit!r}, period={key[1]}) at row {line}")
        seen.add(key)
        keys.append(key)
        for k, ci in enumerate(col_idx):
            values[r, k] = _parse_float(row[ci], line, data_cols[k])

    raw = {c: values[:, k] for k, c in enumerate(data_cols)}
    out = dict(raw)
    applied = {}
    for name, entry in dictionary.items():
        if entry.transform == "ratio" and entry.numerator is not None:
            out[name] = _apply_transform(None, entry, name, raw, keys)
            applied[name] = f"ratio:{entry.numerator}/{entry.denominator}"
        elif name in raw and entry.transform != "none":
            out[name] = _apply_transform(raw[name], entry, name, raw, keys)
            applied[name] = entry.transform
    for name, arr in out.items():
        if dictionary.role(name) in DEA_ROLES:
            finite = np.isfinite(arr) | np.isnan(arr)
            if not finite.all():
                u, p = keys[int(np.argmin(finite))]
                raise ParseError(f"non-finite value in DEA column {name!r} (unit={u}, period={p})", column=name)

    index = pd.MultiIndex.from_tuples(keys, names=[UNIT, PERIOD]) if keys else \
        pd.MultiIndex.from_arrays([[], []], names=[UNIT, PERIOD])
    df = pd.DataFrame(out, index=index)
    roles = {c: dictionary.role(c) for c in df.columns}
    return Panel.from_frame(df, roles, {"source": str(path), "transforms": applied})


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    return repr(float(v))


def write_panel(panel: Panel, path, columns: Iterable[str] | None = None) -> None:
    """Write ``panel`` in the package CSV dialect (values written as stored).

    Floats use the shortest round-tripping representation, so reading the
    file back with an identity dictionary reproduces every cell exactly.
    Rows whose data cells are all missing are still written.
    """
    cols = list(columns) if columns is not None else panel.columns
    df = panel.frame()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([UNIT, PERIOD] + cols)
        arr = df[cols].to_numpy(dtype=float)
        for (u, p), row in zip(df.index, arr):
            w.writerow([u, p] + [_fmt(v) for v in row])


@dataclass
class Issue:
    kind: str
    unit: str | None
    period: int | None
    column: str | None

    def as_dict(self) -> dict:
        return {"kind": self.kind, "unit": self.unit, "period": self.period, "column": self.column}


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    DEA_KINDS = ("missing-dea", "non-positive", "non-finite", "dea-drop", "missing-column")

    @property
    def dea_issues(self) -> list:
        return [i for i in self.issues if i.kind in self.DEA_KINDS]

    @property
    def regression_missing(self) -> list:
        return [i for i in self.issues if i.kind == "missing-regression"]

    @property
    def dea_ready(self) -> bool:
        return not self.dea_issues

    def count(self, kind: str) -> int:
        return sum(1 for i in self.issues if i.kind == kind)

    def drops(self) -> dict:
        """period -> sorted units that must be dropped from DEA evaluation."""
        out: dict = {}
        for i in self.issues:
            if i.kind == "dea-drop":
                out.setdefault(i.period, []).append(i.unit)
        return {p: sorted(u) for p, u in sorted(out.items())}

    def as_dict(self) -> dict:
        counts: dict = {}
        for i in self.issues:
            counts[i.kind] = counts.get(i.kind, 0) + 1
        return {"dea_ready": self.dea_ready, "counts": dict(sorted(counts.items())),
                "issues": [i.as_dict() for i in self.issues]}

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2)
            fh.write("\n")


def validate_panel(panel: Panel, spec, shift_columns: Iterable[str] = ()) -> ValidationReport:
    """Audit ``panel`` for DEA and regression use; never raises.

    Non-positive values in ``shift_columns`` are not reported because those
    columns are shift-normalised before any DEA solve.
    """
    shift = set(shift_columns)
    report = ValidationReport()
    dea_cols = list(spec.columns()) if spec is not None else panel.columns_with_role(*DEA_ROLES)
    present = [c for c in dea_cols if c in panel]
    for c in dea_cols:
        if c not in panel:
            report.issues.append(Issue("missing-column", None, None, c))
    df = panel.frame()
    dropped = set()
    for c in present:
        col = df[c]
        for (u, p), v in col.items():
            if np.isnan(v):
                report.issues.append(Issue("missing-dea", u, int(p), c))
                dropped.add((u, int(p)))
            elif not np.isfinite(v):
                report.issues.append(Issue("non-finite", u, int(p), c))
                dropped.add((u, int(p)))
            elif v <= 0 and c not in shift:
                report.issues.append(Issue("non-positive", u, int(p), c))
    for u, p in sorted(dropped, key=lambda k: (k[1], k[0])):
        report.issues.append(Issue("dea-drop", u, p, None))
    reg_cols = [c for c in panel.columns_with_role(*REGRESSION_ROLES) if c not in dea_cols]
    for c in reg_cols:
        col = df[c]
        for (u, p) in col.index[col.isna().to_numpy()]:
            report.issues.append(Issue("missing-regression", u, int(p), c))
    return report


def shift_amount(values: np.ndarray, floor: float) -> float:
    """Shift ``s`` making ``(min + s) / (max + s) == floor``; 0 if not needed."""
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        raise DegenerateColumnError("constant column cannot be normalised")
    if lo > 0 and lo / hi >= floor:
        return 0.0
    return (floor * hi - lo) / (1.0 - floor)


def shift_normalize(panel: Panel, columns: Iterable[str], floor: float = 0.1) -> Panel:
    """Shift each listed column so its pooled min/max ratio is at least ``floor``.

    The pooled set is every non-missing cell of the column in ``panel``
    (pass a two-period sub-panel to pool over one Malmquist comparison).
    The map is a pure translation, so within-column ordering is preserved.
    """
    if not 0 < floor < 1:
        raise ValueError("floor must lie in (0, 1)")
    new_cols, record = {}, {}
    for c in columns:
        col = panel.column(c)
        vals = col.to_numpy()
        finite = vals[~np.isnan(vals)]
        if finite.size == 0:
            raise DegenerateColumnError(f"column {c!r} has no values")
        try:
            s = shift_amount(finite, floor)
        except DegenerateColumnError:
            raise DegenerateColumnError(f"column {c!r} is constant") from None
        record[c] = {"shift": s, "floor": floor, "pooled_min": float(finite.min()),
                     "pooled_max": float(finite.max())}
        if s != 0.0:
            new_cols[c] = col + s
    prov = {"shift": {**dict(panel.provenance.get("shift", {})), **record}}
    if not new_cols:
        return Panel(panel.frame(), dict(panel.roles), {**dict(panel.provenance), **prov})
    return panel.with_columns(new_cols, provenance=prov)

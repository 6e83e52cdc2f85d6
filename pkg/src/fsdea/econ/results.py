"""Regression designs, result containers and table writers."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from ..exceptions import EstimationError

CONST = "const"
STOCK_YOGO_10PCT = {(2, 1): 19.93}


def stars(p: float) -> str:
    if not math.isfinite(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


@dataclass(frozen=True)
class RegressionDesign:
    """Which columns enter a fixed-effects regression.

    ``cluster`` names the clustering column; ``"unit"`` uses the panel's
    unit identifier.
    """

    dependent: str
    explanatory: tuple
    controls: tuple = ()
    unit_effect: bool = True
    time_effect: bool = True
    cluster: str = "unit"

    def __post_init__(self):
        object.__setattr__(self, "explanatory", tuple(self.explanatory))
        object.__setattr__(self, "controls", tuple(self.controls))
        regs = self.explanatory + self.controls
        if self.dependent in regs:
            raise EstimationError(f"dependent {self.dependent!r} also appears as a regressor")
        if len(set(regs)) != len(regs):
            raise EstimationError("duplicate regressor names in design")
        if not self.explanatory:
            raise EstimationError("design needs at least one explanatory column")

    @property
    def regressors(self) -> tuple:
        return self.explanatory + self.controls

    def replace(self, **changes) -> "RegressionDesign":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return RegressionDesign(**d)


@dataclass(frozen=True)
class InstrumentSet:
    """Excluded instruments.

    ``lagged`` columns enter as their within-unit first lag (named
    ``L1.<col>``); ``external`` columns enter as stored.
    """

    lagged: tuple = ("FTI",)
    external: tuple = ("IV2",)

    def __post_init__(self):
        object.__setattr__(self, "lagged", tuple(self.lagged))
        object.__setattr__(self, "external", tuple(self.external))
        if not self.names:
            raise EstimationError("instrument set is empty")

    @property
    def names(self) -> tuple:
        return tuple(f"L1.{c}" for c in self.lagged) + self.external

    def columns(self, panel) -> dict:
        """Instrument series aligned on the panel index."""
        out = {f"L1.{c}": panel.lag(c, 1) for c in self.lagged}
        for c in self.external:
            out[c] = panel.column(c)
        return out


@dataclass
class IvDiagnostics:
    kp_rk_lm: float
    kp_rk_lm_p: float
    cragg_donald_f: float
    kp_rk_wald_f: float
    hansen_j: float
    hansen_j_p: float
    n_instruments: int
    n_endogenous: int = 1

    @property
    def stock_yogo_10pct(self) -> float | None:
        """Tabulated 10% maximal-size critical value, when one is stored."""
        return STOCK_YOGO_10PCT.get((self.n_instruments, self.n_endogenous))

    @property
    def passes_stock_yogo(self) -> bool | None:
        cv = self.stock_yogo_10pct
        return None if cv is None else self.kp_rk_wald_f > cv

    def to_dict(self) -> dict:
        return {
            "kp_rk_lm": {"stat": self.kp_rk_lm, "p": self.kp_rk_lm_p},
            "cragg_donald_f": self.cragg_donald_f,
            "kp_rk_wald_f": self.kp_rk_wald_f,
            "hansen_j": {"stat": self.hansen_j, "p": self.hansen_j_p},
            "stock_yogo_10pct": self.stock_yogo_10pct if self.stock_yogo_10pct is not None
            else "no tabulated value",
            "n_instruments": self.n_instruments,
            "n_endogenous": self.n_endogenous,
        }


@dataclass
class FitResult:
    """Coefficients with cluster-robust inference.

    ``coefficients`` includes the recovered constant term under ``"const"``;
    ``r2`` is the within R-squared. ``df`` is the t-test degrees of freedom
    (clusters minus one).
    """

    coefficients: pd.Series
    vcov: pd.DataFrame
    n_obs: int
    n_clusters: int
    r2: float
    residuals: pd.Series
    method: str = "twfe"
    dependent: str = ""
    fitted: pd.Series | None = None
    diagnostics: IvDiagnostics | None = None
    first_stage: "FitResult | None" = None
    extra: dict = field(default_factory=dict)

    @property
    def df(self) -> int:
        return self.n_clusters - 1

    @property
    def se(self) -> pd.Series:
        return pd.Series(np.sqrt(np.clip(np.diag(self.vcov.to_numpy()), 0, None)), index=self.coefficients.index)

    @property
    def tvalues(self) -> pd.Series:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coefficients / self.se

    @property
    def pvalues(self) -> pd.Series:
        t = self.tvalues.to_numpy()
        return pd.Series(2 * stats.t.sf(np.abs(t), self.df), index=self.coefficients.index)

    def conf_int(self, level: float = 0.95) -> pd.DataFrame:
        q = stats.t.ppf(0.5 + level / 2, self.df)
        lo = self.coefficients - q * self.se
        hi = self.coefficients + q * self.se
        return pd.DataFrame({"lower": lo, "upper": hi})

    def to_dict(self) -> dict:
        p = self.pvalues
        out = {
            "method": self.method,
            "dependent": self.dependent,
            "coef": {k: float(v) for k, v in self.coefficients.items()},
            "se": {k: float(v) for k, v in self.se.items()},
            "t": {k: float(v) for k, v in self.tvalues.items()},
            "p": {k: float(v) for k, v in p.items()},
            "stars": {k: stars(float(v)) for k, v in p.items()},
            "n": int(self.n_obs),
            "clusters": int(self.n_clusters),
            "r2": float(self.r2),
        }
        if self.diagnostics is not None:
            out["diagnostics"] = self.diagnostics.to_dict()
        if self.first_stage is not None:
            out["first_stage"] = self.first_stage.to_dict()
        return out

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _fmt(v: float, digits: int = 3) -> str:
    if v is None or not math.isfinite(v):
        return ""
    return f"{v:.{digits}f}"


def stacked_table(fits: dict, order=None, digits: int = 3) -> list:
    """Rows of a stacked-column table: each coefficient on one row with
    stars, its standard error in parentheses below, then N, clusters, R2
    and (for IV fits) the diagnostics block."""
    names = list(fits)
    if order is None:
        order = []
        for f in fits.values():
            for k in f.coefficients.index:
                if k not in order and k != CONST:
                    order.append(k)
        order.append(CONST)
    rows = [["variable"] + names]
    for var in order:
        coef_row, se_row = [var], [""]
        for f in fits.values():
            if var in f.coefficients.index:
                p = float(f.pvalues[var])
                coef_row.append(_fmt(float(f.coefficients[var]), digits) + stars(p))
                se_row.append(f"({_fmt(float(f.se[var]), digits)})")
            else:
                coef_row.append("")
                se_row.append("")
        rows += [coef_row, se_row]
    rows.append(["N"] + [str(f.n_obs) for f in fits.values()])
    rows.append(["clusters"] + [str(f.n_clusters) for f in fits.values()])
    rows.append(["R2"] + [_fmt(f.r2, digits) for f in fits.values()])
    diags = [f.diagnostics for f in fits.values()]
    if any(d is not None for d in diags):
        def line(label, get):
            return [label] + [_fmt(get(d), digits) if d is not None else "" for d in diags]
        rows.append(line("KP rk LM", lambda d: d.kp_rk_lm))
        rows.append(line("KP rk LM p", lambda d: d.kp_rk_lm_p))
        rows.append(line("Cragg-Donald F", lambda d: d.cragg_donald_f))
        rows.append(line("KP rk Wald F", lambda d: d.kp_rk_wald_f))
        rows.append(line("Hansen J", lambda d: d.hansen_j))
        rows.append(line("Hansen J p", lambda d: d.hansen_j_p))
        rows.append(["Stock-Yogo 10%"] + [
            (_fmt(d.stock_yogo_10pct, 2) if d.stock_yogo_10pct is not None else "n/a") if d is not None else ""
            for d in diags])
    return rows


def write_table(fits: dict, path, order=None, digits: int = 3) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(stacked_table(fits, order, digits))

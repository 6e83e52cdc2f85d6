"""Mechanism (channel) regressions and heterogeneity subsamples."""

from __future__ import annotations

from dataclasses import dataclass

import pandas as pd

from ..exceptions import SchemaError, SplitError
from ..panel import UNIT
from .estimation import _as_frame, fit_twfe
from .results import RegressionDesign

SPLIT_RULES = ("median", "period-median", "flag")


def mechanism_two_stage(panel, channel: str, design: RegressionDesign) -> dict:
    """Channel regression followed by the outcome on the predicted channel.

    Stage one regresses ``channel`` on the design's explanatory columns and
    controls with fixed effects; the predicted channel is the full fitted
    value (fixed effects included). Stage two regresses the design's
    dependent column on the predicted channel and the same controls. The
    second stage is descriptive: no instrument-validity claim is attached.
    """
    df = _as_frame(panel)
    if channel not in df.columns:
        raise SchemaError(f"missing channel column {channel!r}")
    first = fit_twfe(design.replace(dependent=channel), df)
    name = f"{channel}_hat"
    df[name] = first.fitted.reindex(df.index)
    second = fit_twfe(design.replace(explanatory=(name,)), df)
    return {"first": first, "second": second}


@dataclass(frozen=True)
class SplitCriterion:
    """How to divide the sample.

    ``median``: units whose mean of ``column`` is strictly above the median
    of unit means form group A. ``period-median``: observations strictly
    above their period's cross-sectional median form group A. ``flag``:
    observations with a non-zero flag form group A.
    """

    column: str
    rule: str = "median"

    def __post_init__(self):
        if self.rule not in SPLIT_RULES:
            raise ValueError(f"rule must be one of {SPLIT_RULES}")

    def groups(self, df: pd.DataFrame) -> pd.Series:
        """Boolean Series (True = group A) over rows where the criterion is defined."""
        if self.column not in df.columns:
            raise SchemaError(f"missing split column {self.column!r}")
        col = df[self.column]
        if self.rule == "flag":
            known = col.dropna()
            return known != 0
        if self.rule == "period-median":
            known = col.dropna()
            med = known.groupby(level=1).transform("median")
            return known > med
        unit_mean = col.groupby(level=UNIT).mean().dropna()
        above = unit_mean > unit_mean.median()
        units = df.index.get_level_values(UNIT)
        mask = pd.Series(units, index=df.index).map(above)
        return mask.dropna().astype(bool)


def heterogeneity_split(panel, design: RegressionDesign, criterion: SplitCriterion) -> dict:
    """Run the design separately on groups A and B of ``criterion``."""
    df = _as_frame(panel)
    groups = criterion.groups(df)
    out = {}
    for label, flag in (("A", True), ("B", False)):
        idx = groups.index[groups.to_numpy() == flag]
        if len(idx) == 0:
            raise SplitError(f"subsample {label} of split on {criterion.column!r} is empty")
        fit = fit_twfe(design, df.loc[idx])
        fit.extra["group"] = label
        fit.extra["units"] = sorted(set(idx.get_level_values(UNIT)))
        out[label] = fit
    return out

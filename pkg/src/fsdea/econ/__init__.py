"""Panel econometrics: fixed effects, IV, diagnostics and channel analysis."""

from .analysis import SplitCriterion, heterogeneity_split, mechanism_two_stage
from .estimation import fit_2sls, fit_control_function, fit_twfe, iv_diagnostics, within_transform
from .estimators import ControlFunction, TwoStageLeastSquares, TwoWayFixedEffects
from .results import (CONST, FitResult, InstrumentSet, IvDiagnostics, RegressionDesign, stacked_table,
                      stars, write_table)

__all__ = [
    "CONST", "ControlFunction", "FitResult", "InstrumentSet", "IvDiagnostics", "RegressionDesign",
    "SplitCriterion", "TwoStageLeastSquares", "TwoWayFixedEffects", "fit_2sls", "fit_control_function",
    "fit_twfe", "heterogeneity_split", "iv_diagnostics", "mechanism_two_stage", "stacked_table", "stars",
    "within_transform", "write_table",
]

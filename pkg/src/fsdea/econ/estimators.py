"""scikit-learn style wrappers around the fixed-effects estimators."""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..validation import check_panel_frame
from .estimation import fit_2sls, fit_control_function, fit_twfe
from .results import CONST, RegressionDesign

_Y = "__y__"
_CLUSTER = "__cluster__"


def _assemble(X, y, groups, Z=None) -> tuple:
    X = check_panel_frame(X, "X")
    frame = X.copy()
    frame[_Y] = np.asarray(y, dtype=float).reshape(-1)
    cluster = "unit"
    if groups is not None:
        frame[_CLUSTER] = np.asarray(groups)
        cluster = _CLUSTER
    zcols = []
    if Z is not None:
        Z = check_panel_frame(Z, "Z")
        if not Z.index.equals(X.index):
            raise ValueError("X and Z must share the same (unit, period) index")
        for c in Z.columns:
            name = f"__z__{c}"
            frame[name] = Z[c].to_numpy(dtype=float)
            zcols.append(name)
    return frame, cluster, zcols


class _FixedEffectsBase(RegressorMixin, BaseEstimator):
    def _store(self, result, names):
        self.result_ = result
        self.coef_ = result.coefficients[names].to_numpy()
        self.intercept_ = float(result.coefficients[CONST])
        self.feature_names_in_ = np.asarray(names, dtype=object)
        self.n_features_in_ = len(names)
        return self

    def predict(self, X):
        """Linear prediction ``intercept_ + X @ coef_`` (fixed effects excluded)."""
        check_is_fitted(self, "coef_")
        X = X[list(self.feature_names_in_)] if isinstance(X, pd.DataFrame) else np.asarray(X, dtype=float)
        return self.intercept_ + np.asarray(X, dtype=float) @ self.coef_


class TwoWayFixedEffects(_FixedEffectsBase):
    """Within estimator with unit and period effects and clustered errors.

    ``X`` is a frame indexed by (unit, period); ``groups`` optionally gives
    cluster labels (default: units).
    """

    def __init__(self, unit_effect: bool = True, time_effect: bool = True):
        self.unit_effect = unit_effect
        self.time_effect = time_effect

    def fit(self, X, y, groups=None):
        frame, cluster, _ = _assemble(X, y, groups)
        names = list(X.columns)
        design = RegressionDesign(_Y, (names[0],), tuple(names[1:]), self.unit_effect, self.time_effect, cluster)
        return self._store(fit_twfe(design, frame), names)


class _IVBase(_FixedEffectsBase):
    def __init__(self, endogenous=None, unit_effect: bool = True, time_effect: bool = True):
        self.endogenous = endogenous
        self.unit_effect = unit_effect
        self.time_effect = time_effect

    def _design(self, X, cluster):
        names = list(X.columns)
        endog = list(self.endogenous) if self.endogenous is not None else names[:1]
        missing = [c for c in endog if c not in names]
        if missing:
            raise ValueError(f"endogenous column {missing[0]!r} not in X")
        exog = [c for c in names if c not in endog]
        return RegressionDesign(_Y, tuple(endog), tuple(exog), self.unit_effect, self.time_effect, cluster)

    def fit(self, X, y, Z=None, groups=None):
        if Z is None:
            raise ValueError("instruments Z are required")
        frame, cluster, zcols = _assemble(X, y, groups, Z)
        design = self._design(X, cluster)
        result = self._estimate(design, zcols, frame)
        names = list(design.explanatory) + list(design.controls)
        self._store(result, names)
        return self


class TwoStageLeastSquares(_IVBase):
    """Fixed-effects 2SLS. ``endogenous`` lists columns of ``X`` to
    instrument (default: the first column); the rest are exogenous."""

    def _estimate(self, design, zcols, frame):
        res = fit_2sls(design, zcols, frame)
        self.diagnostics_ = res.diagnostics
        return res


class ControlFunction(_IVBase):
    """Residual-inclusion estimator; ``lambda_`` holds the coefficients on
    the first-stage residuals."""

    def _estimate(self, design, zcols, frame):
        res = fit_control_function(design, zcols, frame)
        self.lambda_ = np.array(list(res.extra["lambda"].values()))
        return res

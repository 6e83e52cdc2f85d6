"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .panel import PERIOD, UNIT


def check_panel_frame(X, name: str = "X") -> pd.DataFrame:
    """Return ``X`` as a numeric frame indexed by (unit, period).

    Accepts a frame with a two-level index or with ``unit``/``period``
    columns. Raises ``TypeError``/``ValueError`` on anything else.
    """
    if not isinstance(X, pd.DataFrame):
        raise TypeError(f"{name} must be a pandas DataFrame indexed by (unit, period)")
    if not (isinstance(X.index, pd.MultiIndex) and X.index.nlevels == 2):
        if UNIT in X.columns and PERIOD in X.columns:
            X = X.set_index([UNIT, PERIOD])
        else:
            raise ValueError(f"{name} needs a (unit, period) index")
    X = X.copy()
    X.index = X.index.set_names([UNIT, PERIOD])
    if X.index.duplicated().any():
        raise ValueError(f"{name} has duplicate (unit, period) rows")
    if X.shape[1] == 0:
        raise ValueError(f"{name} has no columns")
    try:
        vals = X.to_numpy(dtype=float)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be numeric") from None
    if np.isinf(vals).any():
        raise ValueError(f"{name} contains infinite values")
    return X.astype(float)


def check_positive_frame(X, name: str = "X") -> pd.DataFrame:
    """Numeric frame whose cells are all finite and strictly positive."""
    if not isinstance(X, pd.DataFrame):
        raise TypeError(f"{name} must be a pandas DataFrame")
    vals = X.to_numpy(dtype=float)
    if not np.isfinite(vals).all():
        raise ValueError(f"{name} contains missing or infinite values")
    if (vals <= 0).any():
        raise ValueError(f"{name} must be strictly positive")
    return X

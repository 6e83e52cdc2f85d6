"""Two-way fixed effects, 2SLS and control-function estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from ..exceptions import EstimationError, SchemaError, UnsupportedScopeError, WeakRankError
from ..panel import PERIOD, UNIT, Panel
from . import core
from .results import CONST, FitResult, InstrumentSet, IvDiagnostics, RegressionDesign


def _as_frame(data) -> pd.DataFrame:
    if isinstance(data, Panel):
        return data.frame()
    if isinstance(data, pd.DataFrame):
        if isinstance(data.index, pd.MultiIndex) and data.index.nlevels == 2:
            df = data.copy()
            df.index = df.index.set_names([UNIT, PERIOD])
            return df
        if UNIT in data.columns and PERIOD in data.columns:
            return data.set_index([UNIT, PERIOD])
    raise SchemaError("expected a Panel or a frame indexed by (unit, period)")


def within_transform(data, columns, unit_effect: bool = True, time_effect: bool = True,
                     tol: float = core.DEMEAN_TOL, max_sweeps: int = core.MAX_SWEEPS) -> pd.DataFrame:
    """Demean ``columns`` by unit and/or period means.

    Rows missing any of ``columns`` are left out of the projection and come
    back as NaN. Unbalanced panels are handled by alternating projections.
    """
    df = _as_frame(data)
    cols = list(columns)
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise SchemaError(f"missing column {missing[0]!r}")
    sub = df[cols].dropna()
    if unit_effect and time_effect:
        if sub.index.get_level_values(UNIT).nunique() < 2 or sub.index.get_level_values(PERIOD).nunique() < 2:
            raise EstimationError("two-way demeaning needs at least two units and two periods")
    ucode = core.group_codes(sub.index.get_level_values(UNIT))[0] if unit_effect else None
    tcode = core.group_codes(sub.index.get_level_values(PERIOD))[0] if time_effect else None
    out = core.demean(sub.to_numpy(dtype=float), ucode, tcode, tol, max_sweeps)
    res = pd.DataFrame(np.nan, index=df.index, columns=cols)
    res.loc[sub.index, cols] = out
    return res


@dataclass
class _Sample:
    index: pd.MultiIndex
    names: dict
    raw: dict
    dm: dict
    means: dict
    clusters: np.ndarray
    n_clusters: int
    n_absorbed: int

    @property
    def n(self) -> int:
        return len(self.index)

    def aug(self, *blocks) -> np.ndarray:
        """Constant plus the demeaned blocks with grand means restored."""
        parts = [np.ones((self.n, 1))]
        for b in blocks:
            parts.append(self.dm[b] + self.means[b])
        return np.hstack(parts)

    def within(self, *blocks) -> np.ndarray:
        return np.hstack([self.dm[b] for b in blocks]) if blocks else np.empty((self.n, 0))


def _sample(df: pd.DataFrame, blocks: dict, unit_effect: bool, time_effect: bool, cluster: str) -> _Sample:
    need = [c for cols in blocks.values() for c in cols]
    absent = [c for c in need if c not in df.columns]
    if absent:
        raise SchemaError(f"missing column {absent[0]!r}")
    extra = [] if cluster == UNIT or cluster in need else [cluster]
    if extra and cluster not in df.columns:
        raise SchemaError(f"missing cluster column {cluster!r}")
    sub = df[list(dict.fromkeys(need + extra))].dropna()
    if sub.empty:
        raise EstimationError("no complete observations for this design")
    idx = sub.index
    ucode = core.group_codes(idx.get_level_values(UNIT))[0] if unit_effect else None
    tcode = core.group_codes(idx.get_level_values(PERIOD))[0] if time_effect else None
    clabels = idx.get_level_values(UNIT) if cluster == UNIT else sub[cluster].to_numpy()
    ccode, g = core.group_codes(clabels)
    raw, dm, means = {}, {}, {}
    all_raw = sub[need].to_numpy(dtype=float) if need else np.empty((len(sub), 0))
    if unit_effect or time_effect:
        all_dm = core.demean(all_raw, ucode, tcode)
    else:
        all_dm = all_raw - all_raw.mean(axis=0)
    pos = 0
    for b, cols in blocks.items():
        k = len(cols)
        raw[b] = all_raw[:, pos:pos + k]
        dm[b] = all_dm[:, pos:pos + k]
        means[b] = all_raw[:, pos:pos + k].mean(axis=0) if k else np.empty(0)
        pos += k
    return _Sample(idx, {b: list(c) for b, c in blocks.items()}, raw, dm, means, ccode, g,
                   core.absorbed_dof(ucode, tcode))


def _within_r2(y_dm: np.ndarray, resid: np.ndarray) -> float:
    sst = float(y_dm @ y_dm)
    if sst <= 0:
        return 0.0
    return float(min(1.0, max(0.0, 1.0 - resid @ resid / sst)))


def _result(s: _Sample, beta, V, resid, r2, method, dependent, names) -> FitResult:
    coef = pd.Series(beta, index=names)
    order = [n for n in names if n != CONST] + [CONST]
    vcov = pd.DataFrame(V, index=names, columns=names).loc[order, order]
    resid_s = pd.Series(resid, index=s.index, name="residual")
    fitted = pd.Series(s.raw["y"][:, 0] - resid, index=s.index, name="fitted")
    return FitResult(coef[order], vcov, s.n, s.n_clusters, r2, resid_s, method, dependent, fitted)


def _ols(s: _Sample, y_block: str, x_blocks: tuple, method: str = "twfe", dependent: str = "") -> FitResult:
    names = [CONST] + [c for b in x_blocks for c in s.names[b]]
    Xw = s.within(*x_blocks)
    core.check_rank(Xw, names[1:], np.hstack([s.raw[b] for b in x_blocks]) if x_blocks else None)
    Xa = s.aug(*x_blocks)
    ya = (s.dm[y_block] + s.means[y_block])[:, 0]
    beta, _, resid = core.linear_iv(ya, Xa)
    V = core.sandwich(Xa, resid, s.clusters, s.n_clusters)
    return _result(_relabel(s, y_block), beta, V, resid, _within_r2(s.dm[y_block][:, 0], resid),
                   method, dependent, names)


def _relabel(s: _Sample, y_block: str) -> _Sample:
    if y_block == "y":
        return s
    raw = dict(s.raw)
    raw["y"] = s.raw[y_block]
    return _Sample(s.index, s.names, raw, s.dm, s.means, s.clusters, s.n_clusters, s.n_absorbed)


def fit_twfe(design: RegressionDesign, panel) -> FitResult:
    """OLS on within-transformed data with CR1 cluster-robust covariance.

    The constant is recovered by re-adding grand means, so it equals
    ``mean(y) - mean(X) @ beta`` over the estimation sample.
    """
    df = _as_frame(panel)
    s = _sample(df, {"y": [design.dependent], "x": list(design.regressors)},
                design.unit_effect, design.time_effect, design.cluster)
    return _ols(s, "y", ("x",), "twfe", design.dependent)


def _iv_sample(design: RegressionDesign, instruments, panel) -> tuple:
    if isinstance(instruments, InstrumentSet):
        pnl = panel if isinstance(panel, Panel) else Panel.from_frame(_as_frame(panel))
        df = pnl.frame()
        for name, col in instruments.columns(pnl).items():
            df[name] = col
        z_names = list(instruments.names)
    else:
        df = _as_frame(panel)
        z_names = list(instruments)
    overlap = set(z_names) & set(design.controls)
    if overlap:
        raise EstimationError(f"instrument {sorted(overlap)[0]!r} is also an included control")
    s = _sample(df, {"y": [design.dependent], "x": list(design.explanatory), "w": list(design.controls),
                     "z": z_names}, design.unit_effect, design.time_effect, design.cluster)
    L, k = len(z_names), len(design.explanatory)
    if L < k:
        raise WeakRankError(f"{L} instruments cannot identify {k} endogenous regressors")
    Zw = s.within("z", "w")
    try:
        core.check_rank(Zw, z_names + list(design.controls), np.hstack([s.raw["z"], s.raw["w"]]), "instruments")
    except EstimationError as exc:
        raise WeakRankError(f"instrument matrix is rank deficient: {exc}") from None
    return s


def _two_sls(s: _Sample, design: RegressionDesign) -> tuple:
    names = [CONST] + list(design.explanatory) + list(design.controls)
    Xa = s.aug("x", "w")
    Za = s.aug("z", "w")
    ya = (s.dm["y"] + s.means["y"])[:, 0]
    beta, Xhat, resid = core.linear_iv(ya, Xa, Za)
    sv = np.linalg.svd(Xhat[:, 1:] - Xhat[:, 1:].mean(axis=0), compute_uv=False)
    if sv.size and sv[-1] <= 1e-10 * max(sv[0], 1e-300):
        raise WeakRankError("first-stage fitted values are collinear; instruments do not identify the model")
    return names, beta, Xhat, resid


def fit_2sls(design: RegressionDesign, instruments, panel) -> FitResult:
    """Fixed-effects 2SLS; explanatory columns are treated as endogenous.

    Standard errors use residuals built with the original (not predicted)
    endogenous regressors. With one endogenous regressor the result carries
    :class:`IvDiagnostics` and the first-stage fit.
    """
    s = _iv_sample(design, instruments, panel)
    names, beta, Xhat, resid = _two_sls(s, design)
    V = core.sandwich(Xhat, resid, s.clusters, s.n_clusters)
    fit_w = s.within("x", "w") @ beta[1:]
    y_w = s.dm["y"][:, 0]
    denom = float(np.sqrt((fit_w @ fit_w) * (y_w @ y_w)))
    r2 = float((fit_w @ y_w) ** 2 / denom ** 2) if denom > 0 else 0.0
    res = _result(s, beta, V, resid, min(1.0, r2), "2sls", design.dependent, names)
    if len(design.explanatory) == 1:
        res.diagnostics = _diagnostics(s)
        res.first_stage = _ols(s, "x", ("z", "w"), "first-stage", design.explanatory[0])
    return res


def fit_control_function(design: RegressionDesign, instruments, panel) -> FitResult:
    """Residual-inclusion estimator.

    The first-stage within residual of each endogenous regressor enters the
    second stage as ``resid_<name>``; its coefficient (``extra["lambda"]``)
    and t-test are the endogeneity test. Second-stage standard errors are
    the plain cluster-robust ones (no generated-regressor correction).
    """
    s = _iv_sample(design, instruments, panel)
    Zw = s.within("z", "w")
    X = s.dm["x"]
    coef, *_ = np.linalg.lstsq(Zw, X, rcond=None)
    xi = X - Zw @ coef
    xi_names = [f"resid_{c}" for c in design.explanatory]
    names = dict(s.names)
    names["xi"] = xi_names
    dm, means, raw = dict(s.dm), dict(s.means), dict(s.raw)
    dm["xi"], means["xi"], raw["xi"] = xi, np.zeros(xi.shape[1]), xi
    s2 = _Sample(s.index, names, raw, dm, means, s.clusters, s.n_clusters, s.n_absorbed)
    res = _ols(s2, "y", ("x", "w", "xi"), "control-function", design.dependent)
    p = res.pvalues
    res.extra = {"lambda": {n: float(res.coefficients[n]) for n in xi_names},
                 "lambda_t": {n: float(res.tvalues[n]) for n in xi_names},
                 "lambda_p": {n: float(p[n]) for n in xi_names}}
    return res


def _diagnostics(s: _Sample) -> IvDiagnostics:
    x = s.dm["x"][:, 0]
    Z, W = s.dm["z"], s.dm["w"]
    n, L, kw = s.n, Z.shape[1], W.shape[1]
    G, cl = s.n_clusters, s.clusters
    ZW = np.hstack([Z, W])
    # unrestricted first stage
    pi, *_ = np.linalg.lstsq(ZW, x, rcond=None)
    u_full = x - ZW @ pi
    Xa = np.hstack([np.ones((n, 1)), ZW])
    V = core.sandwich(Xa, u_full, cl, G)[1:1 + L, 1:1 + L]
    pz = pi[:L]
    try:
        wald = float(pz @ np.linalg.solve(V, pz))
    except np.linalg.LinAlgError:
        raise WeakRankError("cluster covariance of the excluded instruments is singular") from None
    kp_f = max(wald, 0.0) / L
    # restricted first stage and score test
    if kw:
        gw, *_ = np.linalg.lstsq(W, x, rcond=None)
        r = x - W @ gw
        gz, *_ = np.linalg.lstsq(W, Z, rcond=None)
        Zp = Z - W @ gz
    else:
        r, Zp = x.copy(), Z.copy()
    scores = Zp * r[:, None]
    total = scores.sum(axis=0)
    meat = core.cluster_meat(scores, cl, G)
    try:
        lm = float(total @ np.linalg.solve(meat, total))
    except np.linalg.LinAlgError:
        raise WeakRankError("score covariance of the excluded instruments is singular") from None
    lm = max(lm, 0.0)
    lm_p = float(stats.chi2.sf(lm, L))
    ssr_u, ssr_r = float(u_full @ u_full), float(r @ r)
    df_u = n - L - kw - 1 - s.n_absorbed
    cd = ((ssr_r - ssr_u) / L) / (ssr_u / df_u) if df_u > 0 and ssr_u > 0 else float("inf")
    j, j_p = _hansen_j(s)
    return IvDiagnostics(lm, lm_p, max(float(cd), 0.0), kp_f, j, j_p, L, 1)


def _hansen_j(s: _Sample) -> tuple:
    """Two-step GMM over-identification statistic with a clustered weight."""
    Z = s.within("z", "w")
    X = s.within("x", "w")
    y = s.dm["y"][:, 0]
    L, k = s.dm["z"].shape[1], s.dm["x"].shape[1]
    if L == k:
        return 0.0, 1.0
    n = s.n
    beta1, _, u1 = core.linear_iv(y, X, Z)
    S = core.cluster_meat(Z * u1[:, None], s.clusters, s.n_clusters) / n
    try:
        W = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        raise WeakRankError("clustered moment covariance is singular") from None
    ZX, Zy = Z.T @ X, Z.T @ y
    beta2 = np.linalg.solve(ZX.T @ W @ ZX, ZX.T @ W @ Zy)
    g = Z.T @ (y - X @ beta2) / n
    j = max(float(n * g @ W @ g), 0.0)
    return j, float(stats.chi2.sf(j, L - k))


def iv_diagnostics(design: RegressionDesign, instruments, panel) -> IvDiagnostics:
    """Weak-identification and over-identification statistics.

    Only the single-endogenous-regressor case is supported: the KP rk Wald
    F is the cluster-robust Wald statistic of the excluded instruments over
    their count, KP rk LM the cluster-robust score test of the same null,
    Cragg-Donald the homoskedastic first-stage F and Hansen J the two-step
    GMM statistic.
    """
    if len(design.explanatory) != 1:
        raise UnsupportedScopeError("diagnostics are implemented for exactly one endogenous regressor")
    s = _iv_sample(design, instruments, panel)
    return _diagnostics(s)

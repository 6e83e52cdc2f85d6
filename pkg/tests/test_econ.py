import json

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from fsdea.econ import (ControlFunction, InstrumentSet, RegressionDesign, SplitCriterion, TwoStageLeastSquares,
                        TwoWayFixedEffects, fit_2sls, fit_control_function, fit_twfe, heterogeneity_split,
                        iv_diagnostics, mechanism_two_stage, stacked_table, within_transform, write_table)
from fsdea.econ.core import demean, group_codes
from fsdea.exceptions import ConvergenceError, EstimationError, SplitError, UnsupportedScopeError, WeakRankError
from fsdea.synth import CONTROLS, DgpConfig, generate
from oracles import dummy_ols, hc1

SEEDS = range(200)
EXTERNAL = InstrumentSet(lagged=(), external=("IV2", "IV3"))


def _random_panel(rng, n_units=8, n_periods=5, k=2, drop=0.15):
    units = np.repeat([f"u{i:02d}" for i in range(n_units)], n_periods)
    periods = np.tile(np.arange(2000, 2000 + n_periods), n_units)
    df = pd.DataFrame({"unit": units, "period": periods})
    for j in range(k):
        df[f"x{j}"] = rng.normal(size=len(df)) + rng.normal(size=n_units).repeat(n_periods)
    df["y"] = df[[f"x{j}" for j in range(k)]].to_numpy() @ rng.normal(size=k) + rng.normal(size=len(df)) \
        + rng.normal(size=n_units).repeat(n_periods) + np.tile(rng.normal(size=n_periods), n_units)
    keep = rng.uniform(size=len(df)) > drop
    return df[keep].set_index(["unit", "period"])


def _design(k=2, **kw):
    return RegressionDesign("y", ("x0",), tuple(f"x{j}" for j in range(1, k)), **kw)


# ---------------------------------------------------------------- within

def test_within_absorbs_unit_constant_column():
    df = pd.DataFrame({"unit": list("aabbcc"), "period": [1, 2] * 3, "v": [3.0, 3.0, 5.0, 5.0, -1.0, -1.0]})
    out = within_transform(df, ["v"], unit_effect=True, time_effect=False)
    np.testing.assert_allclose(out["v"], 0.0, atol=1e-15)


def test_within_additive_two_by_two():
    df = pd.DataFrame({"unit": ["a", "a", "b", "b"], "period": [1, 2, 1, 2], "v": [1.0, 2.0, 3.0, 4.0]})
    np.testing.assert_allclose(within_transform(df, ["v"])["v"], 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_within_matches_dummy_residuals(seed):
    rng = np.random.default_rng(seed)
    df = _random_panel(rng, 10, 5, k=1, drop=0.2)
    out = within_transform(df, ["x0"])["x0"].to_numpy()
    units = df.index.get_level_values(0).to_numpy()
    periods = df.index.get_level_values(1).to_numpy()
    _, resid = dummy_ols(df["x0"].to_numpy(), np.empty((len(df), 0)), units, periods)
    np.testing.assert_allclose(out, resid, atol=1e-8)
    grouped = pd.Series(out, index=df.index)
    assert grouped.groupby(level=0).mean().abs().max() < 1e-8
    assert grouped.groupby(level=1).mean().abs().max() < 1e-8


def test_within_missing_rows_stay_missing():
    df = pd.DataFrame({"unit": list("aabb"), "period": [1, 2, 1, 2], "v": [1.0, np.nan, 2.0, 5.0]})
    out = within_transform(df, ["v"], time_effect=False)
    assert np.isnan(out["v"].iloc[1])


def test_demean_convergence_error():
    rng = np.random.default_rng(0)
    codes_u, _ = group_codes(rng.integers(0, 30, 200))
    codes_t, _ = group_codes(rng.integers(0, 30, 200))
    with pytest.raises(ConvergenceError):
        demean(rng.normal(size=(200, 1)), codes_u, codes_t, tol=1e-300, max_sweeps=3)


# ---------------------------------------------------------------- TWFE

@pytest.mark.parametrize("seed", range(10))
def test_twfe_matches_dummy_ols(seed):
    rng = np.random.default_rng(100 + seed)
    df = _random_panel(rng, int(rng.integers(4, 12)), int(rng.integers(3, 7)), k=3)
    fit = fit_twfe(_design(3), df)
    units = df.index.get_level_values(0).to_numpy()
    periods = df.index.get_level_values(1).to_numpy()
    X = df[["x0", "x1", "x2"]].to_numpy()
    slopes, resid = dummy_ols(df["y"].to_numpy(), X, units, periods)
    np.testing.assert_allclose(fit.coefficients[["x0", "x1", "x2"]], slopes, atol=1e-8)
    np.testing.assert_allclose(fit.residuals.to_numpy(), resid - resid.mean() + fit.residuals.mean(), atol=1e-8)


def test_twfe_exact_dgp():
    rng = np.random.default_rng(3)
    units = np.repeat(np.arange(6), 4)
    x = rng.normal(size=24)
    df = pd.DataFrame({"unit": units, "period": np.tile(np.arange(4), 6), "x0": x,
                       "y": 2 * x + np.repeat(rng.normal(size=6), 4)})
    fit = fit_twfe(_design(1, time_effect=False), df)
    assert fit.coefficients["x0"] == pytest.approx(2.0, abs=1e-10)


def test_constant_is_grand_mean_residual():
    rng = np.random.default_rng(4)
    df = _random_panel(rng)
    fit = fit_twfe(_design(2), df)
    b = fit.coefficients
    expect = df["y"].mean() - df["x0"].mean() * b["x0"] - df["x1"].mean() * b["x1"]
    assert b["const"] == pytest.approx(expect, abs=1e-10)


def test_cr1_equals_hc1_for_singleton_clusters():
    rng = np.random.default_rng(5)
    df = _random_panel(rng, 10, 6, k=2, drop=0.0)
    df["cid"] = np.arange(len(df))
    for fe in (False, True):
        fit = fit_twfe(_design(2, unit_effect=fe, time_effect=fe, cluster="cid"), df)
        cols = ["x0", "x1"]
        if fe:
            Xw = within_transform(df, cols)[cols].to_numpy() + df[cols].mean().to_numpy()
        else:
            Xw = df[cols].to_numpy()
        Xa = np.column_stack([np.ones(len(df)), Xw])
        V = hc1(Xa, fit.residuals.to_numpy(), 3)
        got = fit.vcov.loc[["const", "x0", "x1"], ["const", "x0", "x1"]].to_numpy()
        np.testing.assert_allclose(got, V, atol=1e-10, rtol=0)


def test_fit_invariants():
    rng = np.random.default_rng(6)
    df = _random_panel(rng, 12, 6, k=3)
    fit = fit_twfe(_design(3), df)
    V = fit.vcov.to_numpy()
    assert np.abs(V - V.T).max() < 1e-10
    assert np.linalg.eigvalsh(V).min() > -1e-10
    Xw = within_transform(df, ["x0", "x1", "x2"]).to_numpy()
    assert np.abs(Xw.T @ fit.residuals.to_numpy()).max() < 1e-7
    assert 0 <= fit.r2 <= 1
    assert fit.df == fit.n_clusters - 1


def test_collinearity_and_cluster_errors():
    rng = np.random.default_rng(7)
    df = _random_panel(rng)
    df["x1"] = 2 * df["x0"]
    with pytest.raises(EstimationError, match="x0"):
        fit_twfe(_design(2), df)
    df2 = _random_panel(rng)
    df2["x1"] = df2.groupby(level=0)["x0"].transform("mean")
    with pytest.raises(EstimationError, match="x1"):
        fit_twfe(_design(2), df2)
    df3 = _random_panel(rng)
    df3["one"] = 1
    with pytest.raises(EstimationError, match="two clusters"):
        fit_twfe(_design(2, cluster="one"), df3)


def test_listwise_deletion():
    rng = np.random.default_rng(8)
    df = _random_panel(rng, drop=0.0)
    df.iloc[[1, 5, 9], df.columns.get_loc("x1")] = np.nan
    assert fit_twfe(_design(2), df).n_obs == len(df) - 3


def test_design_validation():
    with pytest.raises(EstimationError):
        RegressionDesign("y", ("y",))
    with pytest.raises(EstimationError):
        RegressionDesign("y", ("a",), ("a",))
    with pytest.raises(EstimationError):
        RegressionDesign("y", ())


def test_result_serialisation(tmp_path):
    rng = np.random.default_rng(9)
    fit = fit_twfe(_design(2), _random_panel(rng))
    fit.to_json(tmp_path / "f.json")
    d = json.loads((tmp_path / "f.json").read_text())
    assert set(d) >= {"coef", "se", "t", "p", "stars", "n", "clusters", "r2"}
    rows = stacked_table({"(1)": fit})
    assert rows[0] == ["variable", "(1)"]
    assert rows[1][0] == "x0" and rows[2][1].startswith("(")
    assert [r[0] for r in rows[-3:]] == ["N", "clusters", "R2"]
    write_table({"(1)": fit}, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("variable,(1)\n")


def test_twfe_monte_carlo_recovers_effect():
    hits = 0
    for seed in SEEDS:
        p = generate(DgpConfig(seed=seed, fintech_effect=-0.5))
        b = fit_twfe(RegressionDesign("FSI", ("FTI",), CONTROLS), p).coefficients["FTI"]
        hits += abs(b + 0.5) <= 0.1
    assert hits >= 0.95 * len(SEEDS)


def test_irrelevant_control_drift():
    diffs = []
    for seed in range(100):
        p = generate(DgpConfig(seed=seed))
        base = fit_twfe(RegressionDesign("FSI", ("FTI",), CONTROLS[:-1]), p).coefficients["FTI"]
        full = fit_twfe(RegressionDesign("FSI", ("FTI",), CONTROLS), p).coefficients["FTI"]
        diffs.append(full - base)
    diffs = np.array(diffs)
    mc_se = diffs.std(ddof=1) / np.sqrt(len(diffs))
    assert abs(diffs.mean()) < 3 * mc_se + 1e-12


# ---------------------------------------------------------------- IV

def test_2sls_with_regressor_as_instrument_is_ols():
    rng = np.random.default_rng(10)
    df = _random_panel(rng)
    df["z"] = df["x0"]
    ols = fit_twfe(_design(2), df)
    iv = fit_2sls(_design(2), ["z"], df)
    np.testing.assert_allclose(iv.coefficients, ols.coefficients, atol=1e-10)
    assert iv.diagnostics.hansen_j == 0.0 and iv.diagnostics.hansen_j_p == 1.0


def test_just_identified_j_is_zero():
    p = generate(DgpConfig(seed=1, endogeneity=0.5))
    for inst in (InstrumentSet(external=()), InstrumentSet(lagged=(), external=("IV2",))):
        assert fit_2sls(RegressionDesign("FSI", ("FTI",), CONTROLS), inst, p).diagnostics.hansen_j == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_control_function_equals_2sls(seed):
    p = generate(DgpConfig(seed=seed, endogeneity=0.6, aux_instrument_strength=0.3))
    d = RegressionDesign("FSI", ("FTI",), CONTROLS)
    for inst in (InstrumentSet(), EXTERNAL, InstrumentSet(external=("IV2", "IV3"))):
        iv = fit_2sls(d, inst, p).coefficients["FTI"]
        cf = fit_control_function(d, inst, p).coefficients["FTI"]
        assert cf == pytest.approx(iv, abs=1e-8)


def test_hansen_j_is_scale_invariant():
    p = generate(DgpConfig(seed=2, aux_instrument_strength=0.3))
    d = RegressionDesign("FSI", ("FTI",), CONTROLS)
    j = fit_2sls(d, InstrumentSet(external=("IV2", "IV3")), p).diagnostics.hansen_j
    df = p.frame()
    df["IV3"] = df["IV3"] * 37.5
    from fsdea.panel import Panel
    j2 = fit_2sls(d, InstrumentSet(external=("IV2", "IV3")), Panel(df, dict(p.roles))).diagnostics.hansen_j
    assert j > 0
    assert j2 == pytest.approx(j, abs=1e-9)


def test_diagnostics_are_finite_and_non_negative():
    p = generate(DgpConfig(seed=3, endogeneity=0.5))
    diag = fit_2sls(RegressionDesign("FSI", ("FTI",), CONTROLS), InstrumentSet(), p).diagnostics
    for v in (diag.kp_rk_lm, diag.kp_rk_lm_p, diag.cragg_donald_f, diag.kp_rk_wald_f, diag.hansen_j,
              diag.hansen_j_p):
        assert np.isfinite(v) and v >= 0
    assert diag.stock_yogo_10pct == 19.93
    assert diag.passes_stock_yogo
    assert diag.to_dict()["stock_yogo_10pct"] == 19.93
    three = fit_2sls(RegressionDesign("FSI", ("FTI",), CONTROLS), InstrumentSet(external=("IV2", "IV3")), p)
    assert three.diagnostics.to_dict()["stock_yogo_10pct"] == "no tabulated value"


def test_diagnostics_scope_and_rank_errors():
    p = generate(DgpConfig(seed=4))
    with pytest.raises(UnsupportedScopeError):
        iv_diagnostics(RegressionDesign("FSI", ("FTI", "CAR")), InstrumentSet(external=("IV2", "IV3")), p)
    with pytest.raises(WeakRankError):
        fit_2sls(RegressionDesign("FSI", ("FTI", "CAR")), ["IV2"], p)
    df = p.frame()
    df["IV2b"] = 2 * df["IV2"]
    from fsdea.panel import Panel
    with pytest.raises(WeakRankError):
        fit_2sls(RegressionDesign("FSI", ("FTI",)), ["IV2", "IV2b"], Panel(df, dict(p.roles)))


def test_first_stage_attached():
    p = generate(DgpConfig(seed=5))
    fit = fit_2sls(RegressionDesign("FSI", ("FTI",), CONTROLS), InstrumentSet(), p)
    assert fit.first_stage.dependent == "FTI"
    assert {"L1.FTI", "IV2"} <= set(fit.first_stage.coefficients.index)
    assert fit.n_obs == 104 * 8  # the lag removes the first year
    assert 0 <= fit.r2 <= 1


def test_overidentified_2sls_monte_carlo():
    est = []
    for seed in SEEDS:
        p = generate(DgpConfig(seed=seed, fintech_effect=-0.9, endogeneity=0.5, aux_instrument_strength=0.3))
        est.append(fit_2sls(RegressionDesign("FSI", ("FTI",), CONTROLS), EXTERNAL, p).coefficients["FTI"])
    est = np.array(est)
    mc_se = est.std(ddof=1) / np.sqrt(len(est))
    assert abs(est.mean() + 0.9) < 3 * mc_se


def test_ols_is_biased_under_endogeneity():
    ols, iv = [], []
    for seed in range(50):
        p = generate(DgpConfig(seed=seed, endogeneity=0.5, aux_instrument_strength=0.3))
        d = RegressionDesign("FSI", ("FTI",), CONTROLS)
        ols.append(fit_twfe(d, p).coefficients["FTI"])
        iv.append(fit_2sls(d, EXTERNAL, p).coefficients["FTI"])
    assert abs(np.mean(ols) + 0.5) > 3 * abs(np.mean(iv) + 0.5)


def test_control_function_lambda_null_and_power():
    t_null, sig = [], 0
    d = RegressionDesign("FSI", ("FTI",), CONTROLS)
    for seed in SEEDS:
        p0 = generate(DgpConfig(seed=seed, endogeneity=0.0, aux_instrument_strength=0.3))
        t_null.append(abs(fit_control_function(d, EXTERNAL, p0).extra["lambda_t"]["resid_FTI"]))
        p1 = generate(DgpConfig(seed=seed, endogeneity=0.5, aux_instrument_strength=0.3))
        sig += fit_control_function(d, EXTERNAL, p1).extra["lambda_p"]["resid_FTI"] < 0.05
    assert np.mean(t_null) < 1.5
    assert sig >= 0.8 * len(SEEDS)


def test_irrelevant_instruments_give_small_wald_f():
    f = []
    for seed in range(50):
        p = generate(DgpConfig(seed=seed, instrument_strength=0.0, aux_instrument_strength=0.0))
        f.append(iv_diagnostics(RegressionDesign("FSI", ("FTI",), CONTROLS), EXTERNAL, p).kp_rk_wald_f)
    assert np.median(f) < 2.0


# ---------------------------------------------------------------- mechanism / heterogeneity

def test_mechanism_exact_chain():
    rng = np.random.default_rng(11)
    df = _random_panel(rng, 10, 5, k=2, drop=0.0).rename(columns={"x0": "FTI", "x1": "CAR"})
    df["MI_d"] = 1.0 + 2.0 * df["FTI"] + 0.5 * df["CAR"]
    df["FSI"] = 3.0 + 1.5 * df["MI_d"] - 0.25 * df["CAR"]
    out = mechanism_two_stage(df, "MI_d", RegressionDesign("FSI", ("FTI",), ("CAR",)))
    assert out["first"].coefficients["FTI"] == pytest.approx(2.0, abs=1e-8)
    assert out["second"].coefficients["MI_d_hat"] == pytest.approx(1.5, abs=1e-8)
    assert out["second"].coefficients["CAR"] == pytest.approx(-0.25, abs=1e-8)


def test_mechanism_independent_channel():
    coefs = []
    for seed in range(60):
        p = generate(DgpConfig(seed=seed, mechanism=((0.0, 1.0), (0.5, 1.0), (0.5, 1.0))))
        coefs.append(mechanism_two_stage(p, "MI_d", RegressionDesign("FSI", ("FTI",), CONTROLS))["first"]
                     .coefficients["FTI"])
    coefs = np.array(coefs)
    assert abs(coefs.mean()) < 3 * coefs.std(ddof=1) / np.sqrt(len(coefs))


def test_mechanism_missing_channel():
    p = generate(DgpConfig(seed=0))
    with pytest.raises(Exception, match="MI_x"):
        mechanism_two_stage(p, "MI_x", RegressionDesign("FSI", ("FTI",)))


def test_split_rules():
    rng = np.random.default_rng(12)
    df = _random_panel(rng, 10, 4, k=2, drop=0.0)
    df["size"] = np.repeat(np.arange(10.0), 4)
    groups = SplitCriterion("size", "median").groups(df)
    a_units = set(groups[groups].index.get_level_values(0))
    assert len(a_units) == 5
    df["flag"] = np.repeat([1.0] * 3 + [0.0] * 7, 4)
    out = heterogeneity_split(df, _design(2), SplitCriterion("flag", "flag"))
    assert out["A"].n_obs == 12 and out["B"].n_obs == 28
    assert out["A"].n_obs + out["B"].n_obs <= len(df)
    assert out["A"].extra["units"] == ["u00", "u01", "u02"]
    pm = SplitCriterion("x0", "period-median").groups(df)
    assert pm.groupby(level=1).sum().eq(5).all()


def test_split_errors():
    rng = np.random.default_rng(13)
    df = _random_panel(rng, 6, 4, drop=0.0)
    df["flag"] = 1.0
    with pytest.raises(SplitError):
        heterogeneity_split(df, _design(2), SplitCriterion("flag", "flag"))
    with pytest.raises(ValueError):
        SplitCriterion("flag", "above")


def test_heterogeneity_monte_carlo():
    hits = 0
    for seed in SEEDS:
        p = generate(DgpConfig(seed=seed, effect_by_flag=(0.0, -0.6)))
        out = heterogeneity_split(p, RegressionDesign("FSI", ("FTI",), CONTROLS), SplitCriterion("listed", "flag"))
        hits += out["A"].coefficients["FTI"] - out["B"].coefficients["FTI"] > 0.3
    assert hits >= 0.9 * len(SEEDS)


# ---------------------------------------------------------------- estimator API

def test_sklearn_estimators_match_functions():
    p = generate(DgpConfig(seed=14, endogeneity=0.5, aux_instrument_strength=0.3))
    df = p.frame()
    X = df[["FTI", *CONTROLS]]
    y = df["FSI"]
    fe = TwoWayFixedEffects().fit(X, y)
    ref = fit_twfe(RegressionDesign("FSI", ("FTI",), CONTROLS), p)
    np.testing.assert_allclose(fe.coef_, ref.coefficients[["FTI", *CONTROLS]], atol=1e-12)
    assert fe.intercept_ == pytest.approx(ref.coefficients["const"])
    assert fe.predict(X).shape == (len(X),)
    assert np.isfinite(fe.score(X, y))

    Z = df[["IV2", "IV3"]]
    iv = TwoStageLeastSquares().fit(X, y, Z)
    ref_iv = fit_2sls(RegressionDesign("FSI", ("FTI",), CONTROLS), ["IV2", "IV3"], p)
    np.testing.assert_allclose(iv.coef_[0], ref_iv.coefficients["FTI"], atol=1e-12)
    assert iv.diagnostics_.n_instruments == 2
    cf = ControlFunction().fit(X, y, Z)
    assert cf.coef_[0] == pytest.approx(iv.coef_[0], abs=1e-8)
    assert cf.lambda_.shape == (1,)
    with pytest.raises(ValueError):
        TwoStageLeastSquares().fit(X, y)
    assert TwoStageLeastSquares(endogenous=["FTI"]).get_params()["endogenous"] == ["FTI"]


def test_estimator_rejects_flat_frames():
    with pytest.raises((ValueError, TypeError)):
        TwoWayFixedEffects().fit(np.zeros((4, 2)), np.zeros(4))


def test_pvalues_use_cluster_df():
    rng = np.random.default_rng(15)
    fit = fit_twfe(_design(2), _random_panel(rng, 6, 5))
    t = fit.tvalues["x0"]
    assert fit.pvalues["x0"] == pytest.approx(2 * stats.t.sf(abs(t), 5))

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from fsdea.exceptions import DegenerateColumnError, DuplicateKeyError, ParseError, SchemaError
from fsdea.panel import (Panel, VariableDictionary, VariableEntry, default_dictionary, load_panel,
                         shift_amount, shift_normalize, validate_panel, write_panel)
from fsdea.synth import DgpConfig, generate, synthetic_dictionary


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def _single(values, column="v"):
    df = pd.DataFrame({"unit": [f"u{i:03d}" for i in range(len(values))], "period": 2020, column: values})
    return Panel.from_frame(df, {column: "final-output"})


def test_default_dictionary_has_regression_variables():
    d = default_dictionary()
    for name in ("FSI", "FTI", "GDP_g", "FDL", "LDR", "NIIR", "ROA", "DAR", "TAS", "OEX", "CAR"):
        assert name in d
    assert d["FSI"].role == "regression-dependent"
    assert d["FTI"].transform == "divide-by-100"
    assert d["TAS"].transform == "log" and d["OEX"].transform == "log"


def test_divide_by_100(tmp_path):
    f = _write(tmp_path / "a.csv", "unit,period,FTI\nb1,2015,277.69\n")
    p = load_panel(f, default_dictionary())
    assert p.column("FTI").iloc[0] == pytest.approx(2.7769, abs=1e-12)
    assert p.provenance["transforms"]["FTI"] == "divide-by-100"


def test_log_transform(tmp_path):
    f = _write(tmp_path / "a.csv", f"unit,period,TAS\nb1,2015,{math.exp(20)!r}\n")
    p = load_panel(f, default_dictionary())
    assert p.column("TAS").iloc[0] == pytest.approx(20.0, abs=1e-12)


def test_log_of_non_positive_is_parse_error(tmp_path):
    f = _write(tmp_path / "a.csv", "unit,period,TAS\nb1,2015,0\n")
    with pytest.raises(ParseError):
        load_panel(f, default_dictionary())


def test_ratio_transform(tmp_path):
    f = _write(tmp_path / "a.csv", "unit,period,loans,deposits\nb1,2015,3,4\nb2,2015,1,0\n")
    d = VariableDictionary.from_mapping({"LDR": {"role": "regression-control", "transform": "ratio",
                                                 "numerator": "loans", "denominator": "deposits"}})
    p = load_panel(f, d)
    ldr = p.column("LDR")
    assert ldr.loc[("b1", 2015)] == 0.75
    assert np.isnan(ldr.loc[("b2", 2015)])


def test_full_grid_row_count(tmp_path):
    panel = generate(DgpConfig(n_units=104, n_periods=9, seed=1))
    f = tmp_path / "p.csv"
    write_panel(panel, f)
    back = load_panel(f, synthetic_dictionary(panel))
    assert len(back) == 936
    assert len(back.units) == 104 and back.periods == list(range(2015, 2024))


def test_missing_mandatory_column(tmp_path):
    f = _write(tmp_path / "a.csv", "unit,x\nb1,1\n")
    with pytest.raises(SchemaError, match="period"):
        load_panel(f)
    d = VariableDictionary({"roe": VariableEntry("final-output", required=True)})
    f2 = _write(tmp_path / "b.csv", "unit,period,x\nb1,2015,1\n")
    with pytest.raises(SchemaError, match="roe"):
        load_panel(f2, d)


def test_non_numeric_cell_reports_coordinates(tmp_path):
    f = _write(tmp_path / "a.csv", "unit,period,x,y\nb1,2015,1,2\nb2,2015,3,abc\n")
    with pytest.raises(ParseError) as err:
        load_panel(f)
    assert err.value.row == 3 and err.value.column == "y"


def test_duplicate_key(tmp_path):
    f = _write(tmp_path / "a.csv", "unit,period,x\nb1,2015,1\nb1,2015,2\n")
    with pytest.raises(DuplicateKeyError):
        load_panel(f)


def test_missing_cells_are_masked_not_imputed(tmp_path):
    f = _write(tmp_path / "a.csv", "unit,period,x\nb1,2015,1\nb1,2016,\nb2,2015,NA\n")
    p = load_panel(f)
    assert len(p) == 4  # rectangular grid fills b2/2016
    assert int(p.missing["x"].sum()) == 3


def test_non_increasing_periods_are_sorted():
    df = pd.DataFrame({"unit": ["a", "a"], "period": [2017, 2015], "x": [1.0, 2.0]})
    assert Panel.from_frame(df).periods == [2015, 2017]


def test_round_trip_is_cell_exact(tmp_path, small_panel):
    f1, f2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_panel(small_panel, f1)
    d = synthetic_dictionary(small_panel)
    a = load_panel(f1, d)
    write_panel(a, f2)
    b = load_panel(f2, d)
    assert a.equals(b)
    assert f1.read_bytes() == f2.read_bytes()
    np.testing.assert_array_equal(a.frame().to_numpy(), small_panel.frame()[a.columns].to_numpy())


def test_load_is_deterministic(tmp_path, small_panel):
    f = tmp_path / "a.csv"
    write_panel(small_panel, f)
    d = synthetic_dictionary(small_panel)
    assert load_panel(f, d).equals(load_panel(f, d))


def test_validate_clean_panel(small_panel, spec):
    report = validate_panel(small_panel, spec)
    assert report.issues == [] and report.dea_ready


def test_validate_negative_roe(small_panel, spec):
    df = small_panel.frame().copy()
    df.iloc[3, df.columns.get_loc("roe")] = -0.02
    report = validate_panel(Panel(df, dict(small_panel.roles)), spec)
    assert report.count("non-positive") == 1
    assert not report.dea_ready
    assert validate_panel(Panel(df, dict(small_panel.roles)), spec, shift_columns=["roe"]).dea_ready


def test_validate_missing_controls(small_panel, spec):
    df = small_panel.frame().copy()
    rng = np.random.default_rng(0)
    controls = [c for c in df.columns if small_panel.roles[c] == "regression-control"]
    picks = [(r, c) for r in range(len(df)) for c in controls]
    chosen = [picks[i] for i in rng.choice(len(picks), size=11, replace=False)]
    for r, c in chosen:
        df.iloc[r, df.columns.get_loc(c)] = np.nan
    report = validate_panel(Panel(df, dict(small_panel.roles)), spec)
    assert len(report.regression_missing) == 11
    assert len(report.dea_issues) == 0


def test_validate_lists_dea_drops(small_panel, spec):
    df = small_panel.frame().copy()
    df.loc[("B002", 2016), "deposits"] = np.nan
    df.loc[("B002", 2016), "capex"] = np.nan
    report = validate_panel(Panel(df, dict(small_panel.roles)), spec)
    assert report.count("missing-dea") == 2
    assert report.drops() == {2016: ["B002"]}


def test_shift_small_column():
    out = shift_normalize(_single([-1.0, 0.0, 1.0]), ["v"], 0.1).column("v").to_numpy()
    assert out.min() > 0
    assert out.min() / out.max() == pytest.approx(0.1, abs=1e-12)


def test_shift_noop_when_ratio_sufficient():
    p = _single([2.0, 5.0, 10.0])
    q = shift_normalize(p, ["v"], 0.1)
    np.testing.assert_array_equal(q.column("v").to_numpy(), [2.0, 5.0, 10.0])
    assert q.provenance["shift"]["v"]["shift"] == 0.0


def test_shift_solves_ratio_equation():
    p = _single([-5.0, 5.0, 15.0])
    q = shift_normalize(p, ["v"], 0.1)
    s = q.provenance["shift"]["v"]["shift"]
    assert s == pytest.approx(65 / 9, abs=1e-12)
    np.testing.assert_allclose(q.column("v").to_numpy(), [-5 + s, 5 + s, 15 + s])
    assert (-5 + s) / (15 + s) == pytest.approx(0.1, abs=1e-12)
    # original panel untouched
    np.testing.assert_array_equal(p.column("v").to_numpy(), [-5.0, 5.0, 15.0])


def test_shift_errors():
    with pytest.raises(DegenerateColumnError):
        shift_normalize(_single([3.0, 3.0]), ["v"], 0.1)
    with pytest.raises(ValueError):
        shift_normalize(_single([1.0, 3.0]), ["v"], 1.5)
    with pytest.raises(DegenerateColumnError):
        shift_amount(np.array([1.0, 1.0]), 0.1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=30, unique=True),
       st.floats(0.01, 0.9))
def test_shift_preserves_ranks(values, floor):
    q = shift_normalize(_single(values), ["v"], floor).column("v").to_numpy()
    # a translation keeps the weak order (ties may appear only through rounding)
    order = np.argsort(values, kind="stable")
    assert np.all(np.diff(q[order]) >= 0)
    assert q.min() > 0
    assert q.min() / q.max() >= floor - 1e-9

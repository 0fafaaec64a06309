import math

import numpy as np
import pandas as pd
import pytest

from intanfactor import panel as pm
from intanfactor.errors import (
    DataError, DuplicateKey, EmptyInput, FileUnreadable, GapInSeries, OrphanReturns,
    RowRejected, SchemaMismatch, ValidationError, WindowUncovered,
)
from intanfactor.panel import CalendarMonth, Window

HEADER = ",".join(pm.FUNDAMENTAL_COLUMNS)


def _fund_row(**kw):
    row = dict(firm_id="A", fiscal_year="2000", sic="2834", revenue="100", cogs="60", sga_expense="20",
               rd_expense="5", interest_expense="1", net_income="8", total_assets="200",
               total_assets_prior="180", book_equity="90", market_equity="150",
               market_equity_june="140", ltg="12", exchange="NYSE")
    row.update(kw)
    return ",".join(row[c] for c in pm.FUNDAMENTAL_COLUMNS)


def _write(tmp_path, name, lines):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


def _factor_lines(window):
    lines = [",".join(pm.FACTOR_COLUMNS)]
    for i, m in enumerate(window):
        lines.append(f"{m.year},{m.month}," + ",".join(str(0.001 * (i + j)) for j in range(7)))
    return lines


def test_default_windows_have_expected_month_counts():
    assert len(Window.parse("1963-07..1992-12")) == 354
    assert len(Window.parse("1993-01..2022-12")) == 360


def test_calendar_month_arithmetic():
    m = CalendarMonth(1999, 12)
    assert str(m + 1) == "2000-01"
    assert (m + 1) - m == 1
    assert CalendarMonth.from_index(m.index) == m
    with pytest.raises(ValueError):
        CalendarMonth(2000, 13)
    with pytest.raises(ValueError):
        Window.parse("2000-05..2000-01")


def test_window_membership_and_overlap():
    w = Window.parse("2000-01..2000-12")
    assert CalendarMonth(2000, 6) in w and CalendarMonth(2001, 1) not in w
    assert w.overlaps(Window.parse("2000-12..2001-03"))
    assert not w.overlaps(Window.parse("2001-01..2001-03"))
    assert list(w.indices()) == [m.index for m in w]


def test_blank_rd_becomes_zero(tmp_path):
    p = _write(tmp_path, "f.csv", [HEADER, _fund_row(rd_expense="")])
    loaded = pm.load_fundamentals(p)
    assert loaded.frame.loc[0, "rd_expense"] == 0.0
    assert loaded.rejected == []


def test_missing_mtb_input_dropped_with_diagnostic(tmp_path):
    p = _write(tmp_path, "f.csv", [HEADER, _fund_row(), _fund_row(firm_id="B", book_equity="")])
    loaded = pm.load_fundamentals(p, strict=True)
    assert list(loaded.frame["firm_id"]) == ["A"]
    assert loaded.rejected[0].row == 3 and "book_equity" in loaded.rejected[0].reason


def test_negative_assets_rejected_with_row_number(tmp_path):
    p = _write(tmp_path, "f.csv", [HEADER, _fund_row(), _fund_row(firm_id="B", total_assets="-5")])
    loaded = pm.load_fundamentals(p)
    assert len(loaded.frame) == 1
    assert loaded.rejected[0].row == 3 and "total_assets" in loaded.rejected[0].reason
    with pytest.raises(RowRejected) as info:
        pm.load_fundamentals(p, strict=True)
    assert info.value.exit_code == 2


@pytest.mark.parametrize("field,value", [("sic", "12345"), ("exchange", "LSE"), ("rd_expense", "-1"),
                                         ("market_equity", "0"), ("revenue", "abc")])
def test_invariants(tmp_path, field, value):
    p = _write(tmp_path, "f.csv", [HEADER, _fund_row(**{field: value})])
    loaded = pm.load_fundamentals(p)
    assert loaded.frame.empty and len(loaded.rejected) == 1


def test_duplicate_firm_year_is_fatal(tmp_path):
    p = _write(tmp_path, "f.csv", [HEADER, _fund_row(), _fund_row()])
    with pytest.raises(DuplicateKey):
        pm.load_fundamentals(p)


def test_empty_and_unreadable_files(tmp_path):
    with pytest.raises(EmptyInput):
        pm.load_fundamentals(_write(tmp_path, "e.csv", [HEADER]))
    (tmp_path / "z.csv").write_text("")
    with pytest.raises(EmptyInput):
        pm.load_fundamentals(tmp_path / "z.csv")
    with pytest.raises(FileUnreadable) as info:
        pm.load_fundamentals(tmp_path / "nope.csv")
    assert info.value.exit_code == 3


def test_schema_mismatch_names_missing_columns(tmp_path):
    p = _write(tmp_path, "f.csv", ["firm_id,fiscal_year", "A,2000"])
    with pytest.raises(SchemaMismatch) as info:
        pm.load_fundamentals(p)
    assert "sic" in str(info.value)


def test_ltg_column_optional(tmp_path):
    cols = [c for c in pm.FUNDAMENTAL_COLUMNS if c != "ltg"]
    row = _fund_row().split(",")
    line = ",".join(v for c, v in zip(pm.FUNDAMENTAL_COLUMNS, row) if c != "ltg")
    loaded = pm.load_fundamentals(_write(tmp_path, "f.csv", [",".join(cols), line]))
    assert loaded.frame.attrs["has_ltg"] is False
    assert math.isnan(loaded.frame.loc[0, "ltg"])


def test_semicolon_delimiter(tmp_path):
    p = _write(tmp_path, "f.csv", [HEADER.replace(",", ";"), _fund_row().replace(",", ";")])
    assert len(pm.load_fundamentals(p).frame) == 1


def test_return_below_minus_one_rejected(tmp_path):
    p = _write(tmp_path, "r.csv", ["firm_id,year,month,total_return", "A,2000,1,0.05", "A,2000,2,-1.5"])
    loaded = pm.load_returns(p)
    assert len(loaded.frame) == 1 and loaded.rejected[0].row == 3
    with pytest.raises(RowRejected):
        pm.load_returns(p, strict=True)


def test_duplicate_return_is_fatal(tmp_path):
    p = _write(tmp_path, "r.csv", ["firm_id,year,month,total_return", "A,2000,1,0.05", "A,2000,1,0.06"])
    with pytest.raises(DuplicateKey):
        pm.load_returns(p)


def test_factor_gap_detected(tmp_path):
    w = Window.parse("2000-01..2000-06")
    lines = _factor_lines(w)
    del lines[3]
    with pytest.raises(GapInSeries) as info:
        pm.load_factors(_write(tmp_path, "f.csv", lines), w)
    assert "2000-03" in str(info.value)


def test_factor_blank_value_and_early_window(tmp_path):
    w = Window.parse("2000-01..2000-03")
    lines = _factor_lines(w)
    lines[2] = lines[2].rsplit(",", 1)[0] + ","
    with pytest.raises(DataError):
        pm.load_factors(_write(tmp_path, "f.csv", lines), w)
    early = Window.parse("1963-01..1963-03")
    with pytest.raises(ValidationError):
        pm.load_factors(_write(tmp_path, "g.csv", _factor_lines(early)), early)


def test_factor_round_trip_is_byte_identical(tmp_path, small_synth):
    a = tmp_path / "a.csv"
    pm.write_factors(small_synth.factors, a)
    frame = pm.load_factors(a)
    b = tmp_path / "b.csv"
    pm.write_factors(frame, b)
    assert a.read_bytes() == b.read_bytes()


def test_fundamentals_round_trip_is_byte_identical(tmp_path, small_synth):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    pm.write_fundamentals(small_synth.fundamentals, a)
    pm.write_fundamentals(pm.load_fundamentals(a).frame, b)
    assert a.read_bytes() == b.read_bytes()


def test_panel_is_immutable_and_hands_out_copies(small_panel):
    with pytest.raises(AttributeError):
        small_panel.window = None
    f = small_panel.fundamentals
    f["revenue"] = 0.0
    assert (small_panel.fundamentals["revenue"] != 0).any()


def test_orphan_returns(small_synth):
    ret = pd.concat([small_synth.returns, pd.DataFrame(
        {"firm_id": ["ZZZ"], "year": [2001], "month": [1], "total_return": [0.0]})], ignore_index=True)
    w = small_synth.spec.window_range
    with pytest.raises(OrphanReturns):
        pm.build_panel(small_synth.fundamentals, ret, small_synth.panel().factors, w)
    p = pm.build_panel(small_synth.fundamentals, ret, small_synth.panel().factors, w, allow_orphans=True)
    assert p.orphans == ("ZZZ",)


def test_factors_in_rejects_uncovered_window(small_panel):
    with pytest.raises(WindowUncovered):
        small_panel.factors_in(Window.parse("1999-01..2001-12"))
    assert len(small_panel.factors_in(Window.parse("2002-01..2002-12"))) == 12


def test_records_iterate(small_panel):
    rec = next(small_panel.fundamental_records())
    assert rec.avg_assets == pytest.approx((rec.total_assets + rec.total_assets_prior) / 2)
    r = next(small_panel.return_records())
    assert isinstance(r.month, CalendarMonth)


def test_canonical_number():
    assert pm.canonical_number(0.1) == "0.1"
    assert pm.canonical_number(float("nan")) == ""
    assert pm.canonical_number(np.int64(3)) == "3"

import math

import numpy as np
import pandas as pd
import pytest

from intanfactor import fundamentals as fu
from intanfactor.errors import MalformedSic, NoUsableFit
from intanfactor.panel import FirmYearRecord, Window
from intanfactor.synth import generate_sga_group


@pytest.mark.parametrize("sic,tech", [("2834", True), ("3571", True), ("3661", True), ("3812", True),
                                      ("4813", True), ("7372", True), ("2800", False), ("7389", False),
                                      ("49", False), ("6021", False)])
def test_classify_tech(sic, tech):
    assert fu.classify_tech(sic) is tech


@pytest.mark.parametrize("sic", ["", "1", "12345", "28a4", None])
def test_classify_tech_rejects_malformed(sic):
    with pytest.raises(MalformedSic):
        fu.classify_tech(sic)


def _record(**kw):
    base = dict(firm_id="A", fiscal_year=2000, sic="2834", revenue=100.0, cogs=50.0, sga_expense=40.0,
                rd_expense=10.0, interest_expense=0.0, net_income=5.0, total_assets=200.0,
                total_assets_prior=200.0, book_equity=100.0, market_equity=150.0)
    base.update(kw)
    return FirmYearRecord(**base)


def test_compute_intan_arithmetic():
    assert fu.compute_intan(_record(), 10.0) == pytest.approx(0.10)
    assert fu.compute_intan(_record(rd_expense=0.0), 0.0) == 0.0


def test_investment_component_arithmetic():
    # actual 0.25, predicted 0.20 of average assets 200 -> 10 currency units
    assert fu.investment_component(0.25, 0.20, 200.0) == pytest.approx(10.0)


def test_sga_investment_component_from_fit():
    fit = fu.SgaModelFit("283", 2000, alpha=0.1, beta=0.05, gamma=0.0, lambda_=0.0, n_obs=20,
                         fallback_level=fu.FallbackLevel.SIC3)
    # predicted 0.1 + 0.05 * 0.5 = 0.125; actual 0.2; times 200 = 15
    assert fu.sga_investment_component(_record(), fit) == pytest.approx(15.0)


def _group_inputs(df, sic="2011", year=2000, prefix="F"):
    df = df.copy()
    df["firm_id"] = [f"{prefix}{i:04d}" for i in range(len(df))]
    df["fiscal_year"] = year
    df["sic3"] = sic[:3]
    df["sic2"] = sic[:2]
    return df


def test_noiseless_group_recovers_exactly():
    rng = np.random.default_rng(0)
    x = _group_inputs(generate_sga_group(rng, 50, 0.1, 0.2, 0.05, 0.03, 0.0))
    (fit,) = fu.fit_sga_model(x)
    np.testing.assert_allclose(fit.coefficients, (0.1, 0.2, 0.05, 0.03), atol=1e-9)


def test_noisy_group_within_three_se():
    rng = np.random.default_rng(1)
    x = _group_inputs(generate_sga_group(rng, 200, 0.1, 0.2, 0.05, 0.03, 0.02))
    (fit,) = fu.fit_sga_model(x)
    for est, se, true in zip(fit.coefficients, fit.std_errors, (0.1, 0.2, 0.05, 0.03)):
        assert abs(est - true) <= 3 * se


def test_component_sums_to_zero_within_group():
    rng = np.random.default_rng(2)
    x = _group_inputs(generate_sga_group(rng, 80, 0.1, 0.2, 0.05, 0.03, 0.02))
    (fit,) = fu.fit_sga_model(x)
    resid = x["sga_scaled"] - fit.predict(x["rev_scaled"], x["revenue_decrease"], x["loss"])
    assert abs(resid.sum()) < 1e-9
    assert abs(fit.residual_sum) < 1e-9


def test_small_group_falls_back_to_sic2():
    rng = np.random.default_rng(3)
    big = _group_inputs(generate_sga_group(rng, 30, 0.1, 0.2, 0.05, 0.03, 0.01), sic="2011", prefix="B")
    small = _group_inputs(generate_sga_group(rng, 4, 0.1, 0.2, 0.05, 0.03, 0.01), sic="2020", prefix="S")
    fits = fu.fit_sga_model(pd.concat([big, small], ignore_index=True), threshold=15)
    levels = {f.fallback_level: f for f in fits}
    assert set(levels) == {fu.FallbackLevel.SIC3, fu.FallbackLevel.SIC2}
    sic2 = levels[fu.FallbackLevel.SIC2]
    assert sic2.industry == "20" and sic2.n_obs == 34 and len(sic2.members) == 4


def test_falls_back_to_year_pooled_then_fails():
    rng = np.random.default_rng(4)
    parts = [_group_inputs(generate_sga_group(rng, 6, 0.1, 0.2, 0.05, 0.03, 0.01), sic=s, prefix=s)
             for s in ("2011", "3571", "4813")]
    fits = fu.fit_sga_model(pd.concat(parts, ignore_index=True), threshold=15)
    assert [f.fallback_level for f in fits] == [fu.FallbackLevel.YEAR_POOLED]
    assert len(fits[0].members) == 18
    with pytest.raises(NoUsableFit):
        fu.fit_sga_model(pd.concat(parts[:2], ignore_index=True), threshold=15)


def test_every_firm_year_in_exactly_one_fit(small_panel):
    der = fu.derive_all(small_panel)
    members = [m for f in der.fits for m in f.members]
    assert len(members) == len(set(members)) == len(der.frame)


def test_constant_dummy_is_dropped():
    rng = np.random.default_rng(5)
    x = _group_inputs(generate_sga_group(rng, 40, 0.1, 0.2, 0.05, 0.03, 0.01))
    x["loss"] = 0.0
    (fit,) = fu.fit_sga_model(x)
    assert fit.dropped == ("loss",) and fit.lambda_ == 0.0


def test_revenue_decrease_uses_previous_fiscal_year():
    f = pd.DataFrame({
        "firm_id": ["A", "A", "A"], "fiscal_year": [2000, 2001, 2003], "revenue": [10.0, 8.0, 5.0],
        "sga_expense": [1.0, 1.0, 1.0], "net_income": [1.0, -1.0, 1.0],
        "total_assets": [10.0, 10.0, 10.0], "total_assets_prior": [10.0, 10.0, 10.0],
        "sic": ["2011"] * 3,
    })
    x = fu.sga_model_inputs(f)
    assert list(x["revenue_decrease"]) == [0.0, 1.0, 0.0]  # 2003 has no 2002 record
    assert list(x["loss"]) == [0.0, 1.0, 0.0]


def test_derived_invariants_hold(small_panel):
    der = fu.derive_all(small_panel)
    assert fu.check_derived(der.frame, small_panel.fundamentals) == []
    assert list(der.frame.columns) == fu.DERIVED_COLUMNS


def test_nonpositive_book_equity_keeps_intan(small_synth):
    from intanfactor.panel import build_panel
    f = small_synth.fundamentals.copy()
    f.loc[0, "book_equity"] = -5.0
    p = build_panel(f, small_synth.returns, small_synth.panel().factors, small_synth.spec.window_range)
    der = fu.derive_all(p)
    row = der.frame[(der.frame.firm_id == f.loc[0, "firm_id"]) & (der.frame.fiscal_year == f.loc[0, "fiscal_year"])]
    assert math.isnan(row["mtb"].iloc[0]) and not math.isnan(row["intan"].iloc[0])
    assert "nonpositive book equity" in der.diagnostics["exclusion_reason"].iloc[0]


def test_descriptive_table_identical_periods_give_zero():
    rng = np.random.default_rng(6)
    rows = []
    for fy in (2000, 2001):
        for i in range(20):
            rows.append({"firm_id": f"F{i}", "fiscal_year": fy, "is_tech": i % 2 == 0,
                         **{c: v for c, v in zip(fu.DESCRIPTIVE_VARIABLES.values(), rng.random(5) + i)}})
    base = pd.DataFrame(rows)
    # the second period repeats the first exactly
    base.loc[base.fiscal_year == 2001, list(fu.DESCRIPTIVE_VARIABLES.values())] = \
        base.loc[base.fiscal_year == 2000, list(fu.DESCRIPTIVE_VARIABLES.values())].to_numpy()
    tab = fu.descriptive_table(base, (Window.parse("2000-01..2000-12"), Window.parse("2001-01..2001-12")))
    assert (tab["t_value"] == 0).all()
    assert (tab["z_value"].abs() < 1e-12).all()
    assert set(tab["group"]) == {"all", "tech", "nontech"}


def test_descriptive_table_sign_late_minus_early():
    rows = [{"firm_id": f"F{i}", "fiscal_year": fy, "is_tech": False,
             **{c: float(i + (5 if fy == 2001 else 0)) for c in fu.DESCRIPTIVE_VARIABLES.values()}}
            for fy in (2000, 2001) for i in range(10)]
    tab = fu.descriptive_table(pd.DataFrame(rows), (Window.parse("2000-01..2000-12"),
                                                    Window.parse("2001-01..2001-12")), groupings=("all",))
    assert (tab["t_value"] > 0).all() and (tab["z_value"] > 0).all()
    assert tab.loc[0, "p1_mean"] - tab.loc[0, "p0_mean"] == pytest.approx(5.0)

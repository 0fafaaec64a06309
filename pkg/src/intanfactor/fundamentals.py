"""Firm-level variables: MTB, ROE, RD, SGA, OP, tech classification, the
investment component of SG&A, and intangible intensity (INTAN).

SG&A is split into a maintenance part and an investment part with a
cross-sectional model fitted per 3-digit SIC industry and fiscal year::

    SGA/A = alpha + beta * REV/A + gamma * REV_DECREASE + lambda * LOSS + e

where A is average total assets.  The investment part is the residual scaled
back to currency.  Industry-years with too few firms fall back to the 2-digit
industry, then to all firms of the fiscal year.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from . import econometrics as em
from .errors import MalformedSic, NoUsableFit, RankDeficient, TooFewObservations, ZeroVariance
from .panel import Panel, Window

TECH_SIC_PREFIXES = ("283", "357", "366", "38", "48", "737")
SGA_COEFFICIENTS = ("alpha", "beta", "gamma", "lambda")
SGA_REGRESSORS = ("rev_scaled", "revenue_decrease", "loss")
DEFAULT_SGA_THRESHOLD = 15
DESCRIPTIVE_VARIABLES = {"MTB": "mtb", "ROE": "roe", "RD": "rd_intensity",
                         "SGA": "sga_intensity", "INTAN": "intan"}


class FallbackLevel(str, Enum):
    SIC3 = "SIC3"
    SIC2 = "SIC2"
    YEAR_POOLED = "YEAR_POOLED"


def classify_tech(sic) -> bool:
    """True when the SIC code starts with one of the technology prefixes."""
    sic = str(sic).strip()
    if not (sic.isdigit() and 2 <= len(sic) <= 4):
        raise MalformedSic(f"SIC must be 2-4 digits, got {sic!r}")
    return sic.startswith(TECH_SIC_PREFIXES)


@dataclass(frozen=True)
class SgaModelFit:
    industry: str  # SIC prefix of the estimation sample; "" when year-pooled
    year: int
    alpha: float
    beta: float
    gamma: float
    lambda_: float
    n_obs: int
    fallback_level: FallbackLevel
    std_errors: tuple = (math.nan,) * 4
    # dummies that were constant in the sample; their coefficient is pinned to 0
    dropped: tuple = ()
    members: tuple = field(default=(), repr=False)
    residual_sum: float = 0.0

    @property
    def coefficients(self) -> tuple:
        return (self.alpha, self.beta, self.gamma, self.lambda_)

    def predict(self, rev_scaled, revenue_decrease, loss):
        return (self.alpha + self.beta * np.asarray(rev_scaled, dtype=float)
                + self.gamma * np.asarray(revenue_decrease, dtype=float)
                + self.lambda_ * np.asarray(loss, dtype=float))

    @property
    def key(self) -> tuple:
        return (self.fallback_level.value, self.industry, self.year)


def sga_model_inputs(fundamentals: pd.DataFrame) -> pd.DataFrame:
    """Add the scaled variables and dummies the SG&A model needs.

    REV_DECREASE compares revenue with the same firm's previous fiscal year;
    a firm-year without a previous-year record gets 0.
    """
    f = fundamentals.sort_values(["firm_id", "fiscal_year"], kind="mergesort")
    avg = (f["total_assets"] + f["total_assets_prior"]) / 2.0
    prev = f[["firm_id", "fiscal_year", "revenue"]].copy()
    prev["fiscal_year"] = prev["fiscal_year"] + 1
    prev = prev.rename(columns={"revenue": "revenue_prior"})
    out = f.assign(avg_assets=avg, sga_scaled=f["sga_expense"] / avg, rev_scaled=f["revenue"] / avg)
    out = out.merge(prev, on=["firm_id", "fiscal_year"], how="left")
    out["revenue_decrease"] = (out["revenue"] < out["revenue_prior"]).astype(float)
    out["loss"] = (out["net_income"] < 0).astype(float)
    out["sic3"] = out["sic"].str[:3]
    out["sic2"] = out["sic"].str[:2]
    return out


def _fit_group(sample: pd.DataFrame, threshold: int):
    """OLS of scaled SG&A on the model regressors, or None if unusable."""
    n = len(sample)
    if n < threshold:
        return None
    y = sample["sga_scaled"].to_numpy()
    cols, names, dropped = [], [], []
    for name in SGA_REGRESSORS:
        x = sample[name].to_numpy()
        if name != "rev_scaled" and np.all(x == x[0]):
            dropped.append(name)
            continue
        cols.append(x)
        names.append(name)
    try:
        res = em.ols(y, cols, names=names)
    except RankDeficient:
        return None
    coef = dict.fromkeys(SGA_REGRESSORS, 0.0)
    se = dict.fromkeys(SGA_REGRESSORS, math.nan)
    for name in names:
        coef[name] = res.coef(name)
        se[name] = res.se(name)
    return res, coef, se, tuple(dropped)


def fit_sga_model(inputs: pd.DataFrame, threshold: int = DEFAULT_SGA_THRESHOLD) -> list[SgaModelFit]:
    """Fit the SG&A model for every industry-year in ``inputs``.

    ``inputs`` comes from :func:`sga_model_inputs`.  A 3-digit industry-year
    with at least ``threshold`` usable observations gets its own fit.  The
    rest are covered by a fit over their whole 2-digit industry-year, and if
    that is also too small, by a fit over every firm of the fiscal year.
    Each firm-year belongs to exactly one fit, listed in ``members`` as
    (firm_id, fiscal_year).

    Raises NoUsableFit when a fiscal year has fewer than ``threshold``
    firm-years overall.
    """
    fits = []
    for year, year_df in inputs.groupby("fiscal_year", sort=True):
        pending = []
        for sic3, grp in year_df.groupby("sic3", sort=True):
            got = _fit_group(grp, threshold)
            if got is None:
                pending.append(grp)
                continue
            fits.append(_make_fit(sic3, int(year), got, FallbackLevel.SIC3, grp))
        if not pending:
            continue
        leftovers = pd.concat(pending)
        still = []
        for sic2, grp in leftovers.groupby("sic2", sort=True):
            got = _fit_group(year_df[year_df["sic2"] == sic2], threshold)
            if got is None:
                still.append(grp)
                continue
            fits.append(_make_fit(sic2, int(year), got, FallbackLevel.SIC2, grp))
        if still:
            got = _fit_group(year_df, threshold)
            if got is None:
                raise NoUsableFit(int(year), len(year_df), threshold)
            fits.append(_make_fit("", int(year), got, FallbackLevel.YEAR_POOLED, pd.concat(still)))
    return fits


def _make_fit(industry, year, got, level, members):
    res, coef, se, dropped = got
    return SgaModelFit(
        industry=industry, year=year,
        alpha=res.coef("intercept"), beta=coef["rev_scaled"],
        gamma=coef["revenue_decrease"], lambda_=coef["loss"],
        n_obs=res.n_obs, fallback_level=level,
        std_errors=(res.se("intercept"), se["rev_scaled"], se["revenue_decrease"], se["loss"]),
        dropped=dropped,
        members=tuple(zip(members["firm_id"], members["fiscal_year"].astype(int))),
        residual_sum=float(res.residuals.sum()),
    )


def investment_component(actual_scaled, predicted_scaled, avg_assets):
    """(actual - predicted) scaled SG&A, restated in currency."""
    return (actual_scaled - predicted_scaled) * avg_assets


def _avg_assets(record) -> float:
    return (record.total_assets + record.total_assets_prior) / 2.0


def sga_investment_component(record, fit: SgaModelFit, revenue_decrease: bool = False) -> float:
    """Investment part of one firm-year's SG&A under ``fit``.  May be negative."""
    avg = _avg_assets(record)
    if not avg > 0:
        raise ValueError("average total assets must be positive")
    predicted = float(fit.predict(record.revenue / avg, float(revenue_decrease),
                                  float(record.net_income < 0)))
    return float(investment_component(record.sga_expense / avg, predicted, avg))


def compute_intan(record, sga_component: float) -> float:
    """INTAN = (R&D + SG&A investment) / average total assets."""
    avg = _avg_assets(record)
    if not avg > 0:
        raise ValueError("average total assets must be positive")
    return (record.rd_expense + sga_component) / avg


@dataclass
class Derivation:
    """Output of :func:`derive_all`."""

    frame: pd.DataFrame
    fits: list
    diagnostics: pd.DataFrame  # firm_id, fiscal_year, exclusion_reason


DERIVED_COLUMNS = [
    "firm_id", "fiscal_year", "sic", "exchange", "is_tech", "avg_assets",
    "mtb", "roe", "rd_intensity", "sga_intensity", "op", "intan", "sga_investment_component",
    "sga_scaled", "sga_predicted", "revenue_decrease", "loss", "fit_level",
    "market_equity", "market_equity_june", "ltg",
]
_RATIOS = ("mtb", "roe", "rd_intensity", "sga_intensity", "op", "intan")


def _winsorize(frame, pct):
    out = frame.copy()
    for col in _RATIOS:
        g = out.groupby("fiscal_year")[col]
        lo = g.transform(lambda s: s.quantile(pct / 100.0))
        hi = g.transform(lambda s: s.quantile(1 - pct / 100.0))
        out[col] = out[col].clip(lo, hi)
    return out


def derive_all(panel: Panel, threshold: int = DEFAULT_SGA_THRESHOLD,
               winsorize_pct: float | None = None) -> Derivation:
    """Compute every firm-level variable for each eligible firm-year.

    Firm-years with nonpositive total assets or missing book equity are
    excluded.  Nonpositive book equity keeps the firm-year (INTAN is still
    defined) but leaves MTB, ROE and OP missing; it is noted in diagnostics.
    """
    f = panel.fundamentals
    diag = []
    bad_assets = ~((f["total_assets"] > 0) & (f["total_assets_prior"] > 0))
    bad_be = f["book_equity"].isna()
    for row in f[bad_assets].itertuples():
        diag.append((row.firm_id, row.fiscal_year, "nonpositive total assets"))
    for row in f[~bad_assets & bad_be].itertuples():
        diag.append((row.firm_id, row.fiscal_year, "missing book equity"))
    f = f[~bad_assets & ~bad_be]

    x = sga_model_inputs(f)
    fits = fit_sga_model(x, threshold)
    pred = pd.Series(np.nan, index=x.index)
    level = pd.Series("", index=x.index, dtype=object)
    key = pd.MultiIndex.from_frame(x[["firm_id", "fiscal_year"]])
    pos = pd.Series(np.arange(len(x)), index=key)
    for fit in fits:
        rows = pos.loc[list(fit.members)].to_numpy()
        sub = x.iloc[rows]
        pred.iloc[rows] = fit.predict(sub["rev_scaled"], sub["revenue_decrease"], sub["loss"])
        level.iloc[rows] = fit.fallback_level.value

    be = x["book_equity"]
    pos_be = be > 0
    rev_pos = x["revenue"] > 0
    comp = investment_component(x["sga_scaled"], pred, x["avg_assets"])
    out = pd.DataFrame({
        "firm_id": x["firm_id"],
        "fiscal_year": x["fiscal_year"].astype("int64"),
        "sic": x["sic"],
        "exchange": x["exchange"],
        "is_tech": x["sic"].str.startswith(TECH_SIC_PREFIXES),
        "avg_assets": x["avg_assets"],
        "mtb": (x["market_equity"] / be).where(pos_be),
        "roe": (x["net_income"] / be).where(pos_be),
        "rd_intensity": (x["rd_expense"] / x["revenue"]).where(rev_pos),
        "sga_intensity": (x["sga_expense"] / x["revenue"]).where(rev_pos),
        "op": ((x["revenue"] - x["cogs"] - x["sga_expense"] - x["interest_expense"]) / be).where(pos_be),
        "intan": (x["rd_expense"] + comp) / x["avg_assets"],
        "sga_investment_component": comp,
        "sga_scaled": x["sga_scaled"],
        "sga_predicted": pred,
        "revenue_decrease": x["revenue_decrease"],
        "loss": x["loss"],
        "fit_level": level,
        "market_equity": x["market_equity"],
        "market_equity_june": x["market_equity_june"],
        "ltg": x["ltg"],
    })
    for row in out[~pos_be.to_numpy()].itertuples():
        diag.append((row.firm_id, row.fiscal_year, "nonpositive book equity: MTB/ROE/OP undefined"))
    if winsorize_pct:
        out = _winsorize(out, winsorize_pct)
    out = out.sort_values(["firm_id", "fiscal_year"], kind="mergesort").reset_index(drop=True)
    diagnostics = pd.DataFrame(diag, columns=["firm_id", "fiscal_year", "exclusion_reason"])
    diagnostics = diagnostics.sort_values(["firm_id", "fiscal_year"], kind="mergesort").reset_index(drop=True)
    return Derivation(out, fits, diagnostics)


def check_derived(frame: pd.DataFrame, fundamentals: pd.DataFrame, tol: float = 1e-12) -> list[str]:
    """Re-check the DerivedFirmYear invariants; returns violation messages."""
    m = frame.merge(fundamentals, on=["firm_id", "fiscal_year"], suffixes=("", "_src"))
    problems = []
    avg = (m["total_assets"] + m["total_assets_prior"]) / 2
    intan = (m["rd_expense"] + m["sga_investment_component"]) / avg
    if not np.allclose(intan, m["intan"], rtol=tol, atol=0, equal_nan=True):
        problems.append("intan != (rd + component) / average assets")
    be_pos = m["book_equity"] > 0
    op = (m["revenue"] - m["cogs"] - m["sga_expense"] - m["interest_expense"]) / m["book_equity"]
    if not np.allclose(op[be_pos], m.loc[be_pos, "op"], rtol=tol, atol=0, equal_nan=True):
        problems.append("op != (rev - cogs - sga - interest) / book equity")
    rev_bad = m["revenue"] <= 0
    if m.loc[rev_bad, ["rd_intensity", "sga_intensity"]].notna().any().any():
        problems.append("rd/sga intensity present with nonpositive revenue")
    if m.loc[~be_pos, ["mtb", "roe", "op"]].notna().any().any():
        problems.append("MTB/ROE/OP present with nonpositive book equity")
    return problems


def _years(window: Window) -> tuple[int, int]:
    return window.start.year, window.end.year


def descriptive_table(derived: pd.DataFrame, periods: tuple, groupings=("all", "tech", "nontech"),
                      variables=tuple(DESCRIPTIVE_VARIABLES)) -> pd.DataFrame:
    """Mean and median of each variable per group and period, with the
    Welch t and rank-sum z of the later period against the earlier.

    ``periods`` is a pair of windows; firm-years are assigned by fiscal year.
    Columns per period p (p = 0, 1): ``p{p}_first_mean`` / ``_median`` for
    the first year, ``p{p}_last_*`` for the last year, ``p{p}_mean`` and
    ``p{p}_median`` over the whole period.
    """
    early, late = periods
    rows = []
    for group in groupings:
        if group == "all":
            g = derived
        elif group == "tech":
            g = derived[derived["is_tech"]]
        elif group == "nontech":
            g = derived[~derived["is_tech"]]
        else:
            raise ValueError(f"unknown grouping {group!r}")
        for label in variables:
            col = DESCRIPTIVE_VARIABLES[label]
            row = {"group": group, "variable": label}
            samples = []
            for p, w in enumerate((early, late)):
                y0, y1 = _years(w)
                in_p = g[(g["fiscal_year"] >= y0) & (g["fiscal_year"] <= y1)]
                vals = in_p[col].dropna()
                samples.append(vals.to_numpy())
                for tag, yr in (("first", y0), ("last", y1)):
                    v = in_p.loc[in_p["fiscal_year"] == yr, col].dropna()
                    row[f"p{p}_{tag}_mean"] = float(v.mean()) if len(v) else math.nan
                    row[f"p{p}_{tag}_median"] = float(v.median()) if len(v) else math.nan
                row[f"p{p}_mean"] = float(vals.mean()) if len(vals) else math.nan
                row[f"p{p}_median"] = float(vals.median()) if len(vals) else math.nan
                row[f"p{p}_n"] = int(len(vals))
            try:
                test = em.two_sample_test(samples[1], samples[0])
                row.update(t_value=test.t_value, t_p=test.t_p_value,
                           z_value=test.z_value, z_p=test.z_p_value)
            except (ZeroVariance, TooFewObservations):
                row.update(t_value=math.nan, t_p=math.nan, z_value=math.nan, z_p=math.nan)
            rows.append(row)
    return pd.DataFrame(rows)

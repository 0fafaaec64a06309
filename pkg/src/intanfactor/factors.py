"""Portfolio formation and the intangible-intensity factor (INTANFT).

Timing conventions:

* INTANFT portfolios are formed in June of year t from INTAN of fiscal year
  t-1 and June-of-t market cap, and held July t through June t+1.
* Quantile sorts use the value at the end of calendar year t (fiscal year t)
  and are held over the twelve months of t+1.

Month indices are :attr:`CalendarMonth.index` integers throughout.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import EmptyCell, InsufficientUniverse
from .panel import CalendarMonth, Panel, Window

SORT_VARIABLES = {"MTB": "mtb", "INTAN": "intan", "OP": "op", "LTG": "ltg"}
INTANFT_CELLS = ("S/L", "S/M", "S/H", "B/L", "B/M", "B/H")
EQUAL = "equal"
VALUE = "value"


@dataclass(frozen=True)
class Breakpoints:
    size_median: float
    intan_low: float
    intan_high: float
    formation_year: int

    def __post_init__(self):
        if not self.intan_low <= self.intan_high:
            raise ValueError("intan_low must not exceed intan_high")
        if not self.size_median > 0:
            raise ValueError("size_median must be positive")


@dataclass(frozen=True)
class FactorSeries:
    name: str
    months: np.ndarray  # month indices, consecutive
    values: np.ndarray

    def __post_init__(self):
        if len(self.months) != len(self.values):
            raise ValueError("months and values differ in length")
        if len(self.months) > 1 and not np.all(np.diff(self.months) == 1):
            raise ValueError(f"{self.name}: months are not gap-free")

    @property
    def series(self) -> pd.Series:
        return pd.Series(self.values, index=pd.Index(self.months, name="ym"), name=self.name)

    @classmethod
    def from_series(cls, s: pd.Series, name: str | None = None) -> FactorSeries:
        s = s.sort_index()
        return cls(name or str(s.name), s.index.to_numpy(dtype=np.int64), s.to_numpy(dtype=float))

    def restrict(self, window: Window) -> FactorSeries:
        keep = (self.months >= window.start.index) & (self.months <= window.end.index)
        return FactorSeries(self.name, self.months[keep], self.values[keep])


@dataclass
class PortfolioSeries:
    label: str
    months: np.ndarray
    returns: np.ndarray
    excess_returns: np.ndarray
    rf: np.ndarray
    memberships: dict = field(default_factory=dict)  # formation year -> frozenset of firm ids
    weighting: str = EQUAL
    n_members: np.ndarray | None = None  # firms contributing each month

    def __post_init__(self):
        if not (len(self.months) == len(self.returns) == len(self.excess_returns)):
            raise ValueError("months, returns and excess_returns differ in length")

    @property
    def excess(self) -> pd.Series:
        return pd.Series(self.excess_returns, index=pd.Index(self.months, name="ym"), name=self.label)


# -- breakpoints and the 2x3 sort ------------------------------------------------

def _percentile(values, q):
    # linear interpolation between closest ranks
    return float(np.percentile(np.asarray(values, dtype=float), q))


def june_universe(derived: pd.DataFrame, year: int) -> pd.DataFrame:
    """Firms eligible for the June-``year`` sort: INTAN from fiscal year
    ``year - 1`` and a positive June market cap."""
    d = derived[derived["fiscal_year"] == year - 1]
    return d[d["intan"].notna() & (d["market_equity_june"] > 0)]


def june_breakpoints(derived: pd.DataFrame, year: int, low_pct: float = 30.0,
                     high_pct: float = 70.0, nyse_only: bool = True) -> Breakpoints:
    """NYSE median June market cap and INTAN tercile cut points for ``year``."""
    u = june_universe(derived, year)
    base = u[u["exchange"] == "NYSE"] if nyse_only else u
    if base.empty:
        raise InsufficientUniverse(f"June {year}: no {'NYSE ' if nyse_only else ''}firm with a June market cap")
    if len(base) < 3:
        raise InsufficientUniverse(f"June {year}: {len(base)} breakpoint firms with INTAN, need 3")
    return Breakpoints(
        size_median=float(np.median(base["market_equity_june"].to_numpy())),
        intan_low=_percentile(base["intan"], low_pct),
        intan_high=_percentile(base["intan"], high_pct),
        formation_year=year,
    )


def size_intan_assignments(derived: pd.DataFrame, year: int, low_pct: float = 30.0,
                           high_pct: float = 70.0, nyse_only: bool = True) -> pd.DataFrame:
    """Assign every eligible firm to one of the six size/INTAN cells.

    Returns firm_id, formation_year, label, weight (June market cap).
    """
    bp = june_breakpoints(derived, year, low_pct, high_pct, nyse_only)
    u = june_universe(derived, year)
    size = np.where(u["market_equity_june"].to_numpy() <= bp.size_median, "S", "B")
    x = u["intan"].to_numpy()
    grp = np.where(x <= bp.intan_low, "L", np.where(x <= bp.intan_high, "M", "H"))
    labels = np.char.add(np.char.add(size.astype(str), "/"), grp.astype(str))
    return pd.DataFrame({
        "firm_id": u["firm_id"].to_numpy(),
        "formation_year": year,
        "label": labels,
        "weight": u["market_equity_june"].to_numpy(),
    })


def june_formation_year(ym):
    year, m0 = np.divmod(np.asarray(ym), 12)
    return np.where(m0 >= 6, year, year - 1)


def calendar_formation_year(ym):
    return np.asarray(ym) // 12 - 1


def _weighted_returns(assignments, returns, months, formation_of):
    """Per (month, label) weighted mean return over members with data."""
    r = returns[(returns["ym"] >= months[0]) & (returns["ym"] <= months[-1])]
    r = r.assign(formation_year=formation_of(r["ym"].to_numpy()))
    m = r.merge(assignments, on=["firm_id", "formation_year"], how="inner")
    m["wr"] = m["weight"] * m["total_return"]
    g = m.groupby(["label", "ym"], sort=True)
    agg = g.agg(wr=("wr", "sum"), w=("weight", "sum"), n=("weight", "size"))
    agg["ret"] = agg["wr"] / agg["w"]
    return agg


def build_intanft(panel: Panel, derived: pd.DataFrame, window: Window, weighting: str = VALUE,
                  low_pct: float = 30.0, high_pct: float = 70.0, nyse_only: bool = True):
    """Monthly INTANFT over ``window``.

    Each month: mean(S/H, B/H) - mean(S/L, B/L), cell returns weighted by
    June market cap (or equally).  Returns ``(FactorSeries, assignments)``;
    the assignments frame lists every firm's cell by formation year.
    """
    months = window.indices()
    years = np.unique(june_formation_year(months))
    assignments = pd.concat(
        [size_intan_assignments(derived, int(y), low_pct, high_pct, nyse_only) for y in years],
        ignore_index=True)
    for y in years:
        present = set(assignments.loc[assignments["formation_year"] == y, "label"])
        for cell in INTANFT_CELLS:
            if cell not in present:
                raise EmptyCell(int(y), cell)
    if weighting == EQUAL:
        assignments = assignments.assign(weight=1.0)
    elif weighting != VALUE:
        raise ValueError(f"unknown weighting {weighting!r}")
    agg = _weighted_returns(assignments, panel.returns, months, june_formation_year)
    cell_ret = agg["ret"].unstack("label").reindex(index=months)
    for cell in ("S/L", "S/H", "B/L", "B/H"):
        if cell not in cell_ret.columns:
            raise EmptyCell(int(years[0]), cell, CalendarMonth.from_index(months[0]))
        missing = cell_ret[cell].isna().to_numpy()
        if missing.any():
            ym = int(months[np.argmax(missing)])
            raise EmptyCell(int(june_formation_year(ym)), cell, CalendarMonth.from_index(ym))
    values = ((cell_ret["S/H"] + cell_ret["B/H"]) / 2.0 - (cell_ret["S/L"] + cell_ret["B/L"]) / 2.0)
    return FactorSeries("INTANFT", months.astype(np.int64), values.to_numpy()), assignments


# -- quantile sorts --------------------------------------------------------------

def _bin_sizes(n: int, n_bins: int) -> np.ndarray:
    base, extra = divmod(n, n_bins)
    return np.array([base + 1 if i < extra else base for i in range(n_bins)])


def rank_bins(values, firm_ids, n_bins: int) -> np.ndarray:
    """1-based bin for each firm: near-equal counts by ascending value, ties
    broken by firm_id, any remainder going to the lowest bins."""
    values = np.asarray(values, dtype=float)
    firm_ids = np.asarray(firm_ids).astype(str)
    order = np.lexsort((firm_ids, values))
    bins = np.empty(len(values), dtype=np.int64)
    bins[order] = np.repeat(np.arange(1, n_bins + 1), _bin_sizes(len(values), n_bins))
    return bins


def quantile_sort(derived: pd.DataFrame, variable: str, n_bins: int, year: int) -> pd.DataFrame:
    """Sort firms on ``variable`` as of the end of calendar ``year``.

    Returns firm_id, formation_year, bin (1 = lowest), value, weight (year-end
    market equity), label.  The portfolios are held over calendar year+1.
    """
    col = SORT_VARIABLES.get(variable.upper(), variable)
    d = derived[(derived["fiscal_year"] == year) & derived[col].notna()]
    if len(d) < n_bins:
        raise InsufficientUniverse(f"{variable} {year}: {len(d)} firms for {n_bins} bins")
    bins = rank_bins(d[col].to_numpy(), d["firm_id"].to_numpy(), n_bins)
    out = pd.DataFrame({
        "firm_id": d["firm_id"].to_numpy(),
        "formation_year": year,
        "bin": bins,
        "value": d[col].to_numpy(),
        "weight": d["market_equity"].to_numpy(),
    })
    out["label"] = [f"{variable.upper()}{b}" for b in bins]
    return out.sort_values(["bin", "firm_id"], kind="mergesort").reset_index(drop=True)


def independent_double_sort(derived: pd.DataFrame, var_a: str, var_b: str, year: int,
                            n_a: int = 5, n_b: int = 4) -> pd.DataFrame:
    """Independent ``n_a`` x ``n_b`` sort; cell (i, j) is the intersection of
    bin i of ``var_a`` and bin j of ``var_b``.  Only firms with both
    variables take part."""
    ca = SORT_VARIABLES.get(var_a.upper(), var_a)
    cb = SORT_VARIABLES.get(var_b.upper(), var_b)
    d = derived[(derived["fiscal_year"] == year) & derived[ca].notna() & derived[cb].notna()]
    if len(d) < max(n_a, n_b):
        raise InsufficientUniverse(f"{var_a}x{var_b} {year}: {len(d)} firms")
    ba = rank_bins(d[ca].to_numpy(), d["firm_id"].to_numpy(), n_a)
    bb = rank_bins(d[cb].to_numpy(), d["firm_id"].to_numpy(), n_b)
    out = pd.DataFrame({
        "firm_id": d["firm_id"].to_numpy(),
        "formation_year": year,
        "bin_a": ba,
        "bin_b": bb,
        "weight": d["market_equity"].to_numpy(),
    })
    out["label"] = [double_label(var_a, i, var_b, j) for i, j in zip(ba, bb)]
    return out.sort_values(["bin_a", "bin_b", "firm_id"], kind="mergesort").reset_index(drop=True)


def double_label(var_a, i, var_b, j) -> str:
    return f"{var_a.upper()}{i}-{var_b.upper()}{j}"


def empty_cells(assignments: pd.DataFrame, labels) -> list[tuple[int, str]]:
    """(formation_year, label) pairs with no members."""
    out = []
    for y, grp in assignments.groupby("formation_year", sort=True):
        present = set(grp["label"])
        out.extend((int(y), lab) for lab in labels if lab not in present)
    return out


def sort_years(derived, window: Window, sorter, *args, **kwargs) -> pd.DataFrame:
    """Run a calendar-year sort for every formation year feeding ``window``."""
    years = np.unique(calendar_formation_year(window.indices()))
    return pd.concat([sorter(derived, *args, year=int(y), **kwargs) for y in years], ignore_index=True)


# -- portfolio returns -----------------------------------------------------------

def portfolio_returns(assignments: pd.DataFrame, panel: Panel, window: Window,
                      weighting: str = EQUAL, labels=None, holding: str = "calendar") -> dict:
    """Monthly return series for each portfolio label.

    A month's return is the (equal- or value-) weighted mean over member
    firms that have a return that month; with no such firm the value is NaN.
    ``holding`` is "calendar" (formed at year-end, held next calendar year)
    or "june" (formed in June, held July to June).
    """
    months = window.indices().astype(np.int64)
    formation_of = calendar_formation_year if holding == "calendar" else june_formation_year
    a = assignments
    if weighting == EQUAL:
        a = a.assign(weight=1.0)
    elif weighting != VALUE:
        raise ValueError(f"unknown weighting {weighting!r}")
    agg = _weighted_returns(a[["firm_id", "formation_year", "label", "weight"]],
                            panel.returns, months, formation_of)
    ret = agg["ret"].unstack("label").reindex(index=months)
    cnt = agg["n"].unstack("label").reindex(index=months)
    rf = panel.factors_in(window)["rf"].to_numpy()
    if labels is None:
        labels = sorted(set(a["label"]))
    members = {}
    for (lab, y), grp in a.groupby(["label", "formation_year"], sort=True):
        members.setdefault(lab, {})[int(y)] = frozenset(grp["firm_id"])
    out = {}
    for lab in labels:
        r = ret[lab].to_numpy() if lab in ret.columns else np.full(len(months), np.nan)
        n = cnt[lab].fillna(0).to_numpy(dtype=np.int64) if lab in cnt.columns else np.zeros(len(months), np.int64)
        out[lab] = PortfolioSeries(label=lab, months=months, returns=r, excess_returns=r - rf,
                                   rf=rf, memberships=members.get(lab, {}), weighting=weighting,
                                   n_members=n)
    return out


def write_memberships(assignments: pd.DataFrame, path) -> None:
    """Membership dump: formation_year, portfolio_label, firm_id."""
    rows = assignments[["formation_year", "label", "firm_id"]].astype({"formation_year": int})
    rows = rows.sort_values(["formation_year", "label", "firm_id"], kind="mergesort")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["formation_year", "portfolio_label", "firm_id"])
        w.writerows(rows.itertuples(index=False, name=None))

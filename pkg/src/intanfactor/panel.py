"""Canonical data model: calendar months, input loaders, and the immutable Panel.

Three delimiter-separated inputs feed the engine:

* fundamentals -- one row per firm and fiscal year
* returns      -- one row per firm and calendar month
* factors      -- one row per month of precomputed benchmark factors

Loaders validate every row.  Rows that violate an invariant are quarantined
(returned alongside the accepted frame with the row number and reason) unless
``strict=True``, in which case the first bad row raises :class:`RowRejected`.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    DuplicateKey,
    EmptyInput,
    FileUnreadable,
    GapInSeries,
    OrphanReturns,
    RowRejected,
    SchemaMismatch,
    ValidationError,
    WindowUncovered,
)

FUNDAMENTAL_COLUMNS = [
    "firm_id", "fiscal_year", "sic", "revenue", "cogs", "sga_expense", "rd_expense",
    "interest_expense", "net_income", "total_assets", "total_assets_prior", "book_equity",
    "market_equity", "market_equity_june", "ltg", "exchange",
]
RETURN_COLUMNS = ["firm_id", "year", "month", "total_return"]
FACTOR_NAMES = ["mktrf", "smb", "hml", "rmw", "cma", "umd", "rf"]
FACTOR_COLUMNS = ["year", "month"] + FACTOR_NAMES
EXCHANGES = ("NYSE", "AMEX", "NASDAQ")

# fields needed for MTB, ROE and SGA; a blank in any of them drops the row
_MTB_ROE_SGA_FIELDS = ("revenue", "sga_expense", "net_income", "book_equity", "market_equity")
_CURRENCY_FIELDS = (
    "revenue", "cogs", "sga_expense", "rd_expense", "interest_expense", "net_income",
    "total_assets", "total_assets_prior", "book_equity", "market_equity", "market_equity_june",
)
_OPTIONAL_HEADER = ("ltg",)

EARLIEST_SUPPORTED = None  # set below, after CalendarMonth exists


@dataclass(frozen=True, order=True)
class CalendarMonth:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")

    @property
    def index(self) -> int:
        """Months since year 0; consecutive months differ by exactly one."""
        return self.year * 12 + self.month - 1

    @classmethod
    def from_index(cls, index: int) -> CalendarMonth:
        year, m0 = divmod(int(index), 12)
        return cls(year, m0 + 1)

    @classmethod
    def parse(cls, text: str) -> CalendarMonth:
        m = re.fullmatch(r"\s*(\d{4})-(\d{1,2})\s*", text)
        if not m:
            raise ValueError(f"expected YYYY-MM, got {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def __add__(self, n: int) -> CalendarMonth:
        if not isinstance(n, (int, np.integer)):
            return NotImplemented
        return CalendarMonth.from_index(self.index + int(n))

    def __sub__(self, other):
        if isinstance(other, CalendarMonth):
            return self.index - other.index
        if isinstance(other, (int, np.integer)):
            return CalendarMonth.from_index(self.index - int(other))
        return NotImplemented

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


EARLIEST_SUPPORTED = CalendarMonth(1963, 7)


@dataclass(frozen=True)
class Window:
    """Inclusive range of calendar months."""

    start: CalendarMonth
    end: CalendarMonth

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"window end {self.end} precedes start {self.start}")

    @classmethod
    def parse(cls, text: str) -> Window:
        try:
            a, b = text.split("..")
        except ValueError:
            raise ValueError(f"expected START..END, got {text!r}") from None
        return cls(CalendarMonth.parse(a), CalendarMonth.parse(b))

    def __len__(self) -> int:
        return self.end - self.start + 1

    def __iter__(self) -> Iterator[CalendarMonth]:
        for i in range(self.start.index, self.end.index + 1):
            yield CalendarMonth.from_index(i)

    def __contains__(self, month: CalendarMonth) -> bool:
        return self.start <= month <= self.end

    def indices(self) -> np.ndarray:
        return np.arange(self.start.index, self.end.index + 1)

    def overlaps(self, other: Window) -> bool:
        return not (self.end < other.start or other.end < self.start)

    def __str__(self) -> str:
        return f"{self.start}..{self.end}"


@dataclass(frozen=True)
class FirmYearRecord:
    """One firm's fundamentals for one fiscal year (currency in source units)."""

    firm_id: str
    fiscal_year: int
    sic: str
    revenue: float
    cogs: float
    sga_expense: float
    rd_expense: float
    interest_expense: float
    net_income: float
    total_assets: float
    total_assets_prior: float
    book_equity: float
    market_equity: float
    market_equity_june: float = math.nan
    ltg: float = math.nan
    exchange: str = "NYSE"

    @property
    def avg_assets(self) -> float:
        return (self.total_assets + self.total_assets_prior) / 2.0


@dataclass(frozen=True)
class MonthlyReturnRecord:
    firm_id: str
    month: CalendarMonth
    total_return: float


@dataclass
class RejectedRow:
    row: int  # 1-based line number in the file, header is line 1
    reason: str
    firm_id: str = ""
    fiscal_year: str = ""


@dataclass
class Loaded:
    """Accepted rows plus the quarantine report of rows that were not."""

    frame: pd.DataFrame
    rejected: list[RejectedRow] = field(default_factory=list)

    def __len__(self):
        return len(self.frame)


def canonical_number(x) -> str:
    """Shortest round-tripping text for a number; blank for missing."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


# -- reading ------------------------------------------------------------------

def _read_rows(path, required, optional=()):
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"{path}: {exc.strerror or exc}") from exc
    with fh:
        first = fh.readline()
        fh.seek(0)
        delimiter = max(",;\t|", key=first.count)
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{path}: file is empty") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise FileUnreadable(f"{path}: {exc}") from exc
        header = [h.strip().lower() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaMismatch(path, missing)
        pos = {name: header.index(name) for name in list(required) + list(optional) if name in header}
        rows = []
        try:
            for line_no, raw in enumerate(reader, start=2):
                if not any(cell.strip() for cell in raw):
                    continue
                cells = {name: (raw[i].strip() if i < len(raw) else "") for name, i in pos.items()}
                rows.append((line_no, cells))
        except (csv.Error, UnicodeDecodeError) as exc:
            raise FileUnreadable(f"{path}: {exc}") from exc
    if not rows:
        raise EmptyInput(f"{path}: no data rows")
    return rows, [c for c in optional if c in pos]


def _number(text, name):
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{name}: not a number ({text!r})") from None
    if not math.isfinite(value):
        raise ValueError(f"{name}: not finite ({text!r})")
    return value


def _integer(text, name):
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"{name}: not an integer ({text!r})") from None


def _parse_fundamental(cells):
    """Return (record, None) or (None, reason)."""
    for name in ("firm_id", "fiscal_year", "sic", "exchange"):
        if not cells[name]:
            return None, f"missing {name}"
    for name in _MTB_ROE_SGA_FIELDS:
        if not cells[name]:
            return None, f"missing {name} (needed for MTB/ROE/SGA)"
    for name in ("total_assets", "total_assets_prior"):
        if not cells[name]:
            return None, f"missing {name} (needed for INTAN)"
    rec = {"firm_id": cells["firm_id"]}
    try:
        rec["fiscal_year"] = _integer(cells["fiscal_year"], "fiscal_year")
        for name in _CURRENCY_FIELDS:
            text = cells.get(name, "")
            if name == "rd_expense" and text == "":
                rec[name] = 0.0
            elif text == "":
                rec[name] = math.nan
            else:
                rec[name] = _number(text, name)
        ltg = cells.get("ltg", "")
        rec["ltg"] = _number(ltg, "ltg") if ltg else math.nan
    except ValueError as exc:
        return None, str(exc)
    sic = cells["sic"]
    if not (sic.isdigit() and 2 <= len(sic) <= 4):
        return None, f"invariant violated: sic must be 2-4 digits ({sic!r})"
    rec["sic"] = sic
    exchange = cells["exchange"].upper()
    if exchange not in EXCHANGES:
        return None, f"invariant violated: exchange must be one of {'/'.join(EXCHANGES)} ({cells['exchange']!r})"
    rec["exchange"] = exchange
    if rec["total_assets"] <= 0:
        return None, "invariant violated: total_assets > 0"
    if rec["total_assets_prior"] <= 0:
        return None, "invariant violated: total_assets_prior > 0"
    if rec["rd_expense"] < 0:
        return None, "invariant violated: rd_expense >= 0"
    if rec["market_equity"] <= 0:
        return None, "invariant violated: market_equity > 0"
    if not math.isnan(rec["market_equity_june"]) and rec["market_equity_june"] <= 0:
        return None, "invariant violated: market_equity_june > 0"
    return rec, None


def load_fundamentals(path, strict: bool = False) -> Loaded:
    """Load and validate the fundamentals file.

    Blank R&D becomes 0.  Rows missing any field needed for MTB, ROE or SGA are
    dropped and counted in the quarantine report.  A duplicate
    (firm_id, fiscal_year) raises :class:`DuplicateKey`.
    """
    required = [c for c in FUNDAMENTAL_COLUMNS if c not in _OPTIONAL_HEADER]
    rows, present_optional = _read_rows(path, required, _OPTIONAL_HEADER)
    accepted, rejected, seen = [], [], {}
    for line_no, cells in rows:
        rec, reason = _parse_fundamental(cells)
        if reason is not None:
            # blank MTB/ROE/SGA inputs are the documented drop rule, not an error
            if strict and not reason.startswith("missing"):
                raise RowRejected(path, line_no, reason)
            rejected.append(RejectedRow(line_no, reason, cells.get("firm_id", ""),
                                        cells.get("fiscal_year", "")))
            continue
        key = (rec["firm_id"], rec["fiscal_year"])
        if key in seen:
            raise DuplicateKey(path, key, (seen[key], line_no))
        seen[key] = line_no
        accepted.append(rec)
    frame = pd.DataFrame(accepted, columns=FUNDAMENTAL_COLUMNS)
    frame["fiscal_year"] = frame["fiscal_year"].astype("int64")
    frame.attrs["has_ltg"] = "ltg" in present_optional
    return Loaded(frame, rejected)


def load_returns(path, strict: bool = False) -> Loaded:
    rows, _ = _read_rows(path, RETURN_COLUMNS)
    accepted, rejected, seen = [], [], {}
    for line_no, cells in rows:
        reason = None
        try:
            if not cells["firm_id"]:
                raise ValueError("missing firm_id")
            year = _integer(cells["year"], "year")
            month = _integer(cells["month"], "month")
            if not 1 <= month <= 12:
                raise ValueError(f"invariant violated: month in 1..12 ({month})")
            if not cells["total_return"]:
                raise ValueError("missing total_return")
            ret = _number(cells["total_return"], "total_return")
            if ret <= -1:
                raise ValueError(f"invariant violated: total_return > -1 ({ret!r})")
        except ValueError as exc:
            reason = str(exc)
        if reason is not None:
            if strict:
                raise RowRejected(path, line_no, reason)
            rejected.append(RejectedRow(line_no, reason, cells.get("firm_id", "")))
            continue
        key = (cells["firm_id"], year, month)
        if key in seen:
            raise DuplicateKey(path, f"{cells['firm_id']} {year:04d}-{month:02d}", (seen[key], line_no))
        seen[key] = line_no
        accepted.append((cells["firm_id"], year, month, ret))
    frame = pd.DataFrame(accepted, columns=RETURN_COLUMNS)
    frame = frame.astype({"year": "int64", "month": "int64", "total_return": "float64"})
    return Loaded(frame, rejected)


def load_factors(path, window: Window | None = None) -> pd.DataFrame:
    """Load the benchmark factor file, restricted to ``window`` when given.

    The result is sorted by month and indexed by month index (see
    :attr:`CalendarMonth.index`).  Every month of the window must be present
    with no blank field.
    """
    rows, _ = _read_rows(path, FACTOR_COLUMNS)
    records, seen = {}, {}
    for line_no, cells in rows:
        try:
            month = CalendarMonth(_integer(cells["year"], "year"), _integer(cells["month"], "month"))
        except ValueError as exc:
            raise DataError(f"{path}:{line_no}: {exc}") from None
        if window is not None and month not in window:
            continue
        if month in seen:
            raise DuplicateKey(path, str(month), (seen[month], line_no))
        seen[month] = line_no
        values = {}
        for name in FACTOR_NAMES:
            if not cells[name]:
                raise DataError(f"{path}:{line_no}: {month} has no value for {name}")
            try:
                values[name] = _number(cells[name], name)
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
        records[month.index] = values
    if window is not None:
        if window.start < EARLIEST_SUPPORTED:
            raise ValidationError(f"window {window} starts before {EARLIEST_SUPPORTED}")
        for m in window:
            if m.index not in records:
                raise GapInSeries(m)
    elif records:
        idx = sorted(records)
        for i in range(idx[0], idx[-1] + 1):
            if i not in records:
                raise GapInSeries(CalendarMonth.from_index(i))
    if not records:
        raise EmptyInput(f"{path}: no factor observations inside {window}")
    frame = pd.DataFrame.from_dict(records, orient="index")[FACTOR_NAMES].sort_index()
    frame.index.name = "ym"
    return frame


# -- writing ------------------------------------------------------------------

def _write(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([v if isinstance(v, str) else canonical_number(v) for v in row])


def write_fundamentals(frame: pd.DataFrame, path) -> None:
    cols = [c for c in FUNDAMENTAL_COLUMNS if c in frame.columns]
    _write(path, cols, frame[cols].itertuples(index=False, name=None))


def write_returns(frame: pd.DataFrame, path) -> None:
    if "ym" in frame.columns and "year" not in frame.columns:
        y, m = np.divmod(frame["ym"].to_numpy(), 12)
        frame = frame.assign(year=y, month=m + 1)
    _write(path, RETURN_COLUMNS, frame[RETURN_COLUMNS].itertuples(index=False, name=None))


def write_factors(frame: pd.DataFrame, path) -> None:
    y, m = np.divmod(frame.index.to_numpy(), 12)
    rows = (
        (int(yy), int(mm) + 1, *vals)
        for yy, mm, vals in zip(y, m, frame[FACTOR_NAMES].itertuples(index=False, name=None))
    )
    _write(path, FACTOR_COLUMNS, rows)


def write_rejected(rejected, path, source: str = "") -> None:
    _write(path, ["source", "row", "firm_id", "fiscal_year", "reason"],
           ((source, str(r.row), r.firm_id, str(r.fiscal_year), r.reason) for r in rejected))


# -- panel ----------------------------------------------------------------------

class Panel:
    """Immutable bundle of fundamentals, returns and factors over a window.

    Frame accessors hand out copies, so nothing downstream can alter the
    panel's state.
    """

    __slots__ = ("_fundamentals", "_returns", "_factors", "_window", "_orphans", "_has_ltg")

    def __init__(self, fundamentals, returns, factors, window, orphans=(), has_ltg=True):
        object.__setattr__(self, "_fundamentals", fundamentals)
        object.__setattr__(self, "_returns", returns)
        object.__setattr__(self, "_factors", factors)
        object.__setattr__(self, "_window", window)
        object.__setattr__(self, "_orphans", tuple(orphans))
        object.__setattr__(self, "_has_ltg", bool(has_ltg))

    def __setattr__(self, name, value):
        raise AttributeError("Panel is immutable")

    def __delattr__(self, name):
        raise AttributeError("Panel is immutable")

    @property
    def fundamentals(self) -> pd.DataFrame:
        return self._fundamentals.copy()

    @property
    def returns(self) -> pd.DataFrame:
        """Columns firm_id, ym, total_return."""
        return self._returns.copy()

    @property
    def factors(self) -> pd.DataFrame:
        return self._factors.copy()

    @property
    def window(self) -> Window:
        return self._window

    @property
    def orphans(self) -> tuple:
        return self._orphans

    @property
    def has_ltg(self) -> bool:
        return self._has_ltg

    def fundamental_records(self) -> Iterator[FirmYearRecord]:
        for row in self._fundamentals[FUNDAMENTAL_COLUMNS].itertuples(index=False):
            yield FirmYearRecord(**row._asdict())

    def return_records(self) -> Iterator[MonthlyReturnRecord]:
        for firm, ym, r in self._returns.itertuples(index=False, name=None):
            yield MonthlyReturnRecord(firm, CalendarMonth.from_index(ym), r)

    def factors_in(self, window: Window) -> pd.DataFrame:
        if window.start < self._window.start or window.end > self._window.end:
            raise WindowUncovered(f"window {window} is not inside the panel window {self._window}")
        return self._factors.loc[window.start.index:window.end.index].copy()

    def __repr__(self):
        return (f"Panel(window={self._window}, firm_years={len(self._fundamentals)}, "
                f"returns={len(self._returns)})")


def _frame(x):
    return x.frame if isinstance(x, Loaded) else x


def build_panel(fundamentals, returns, factors, window: Window, allow_orphans: bool = False) -> Panel:
    """Assemble a :class:`Panel`.

    ``fundamentals`` and ``returns`` may be :class:`Loaded` results or plain
    frames in the loader layout.  Returns outside ``window`` are dropped.
    Returns for firms that have no fundamentals raise :class:`OrphanReturns`
    unless ``allow_orphans`` is set, in which case they are dropped and listed
    in :attr:`Panel.orphans`.
    """
    fund = _frame(fundamentals).copy()
    has_ltg = fund.attrs.get("has_ltg", True) and fund["ltg"].notna().any()
    ret = _frame(returns).copy()
    if "ym" not in ret.columns:
        ret["ym"] = ret["year"].to_numpy() * 12 + ret["month"].to_numpy() - 1
    ret = ret[["firm_id", "ym", "total_return"]]
    ret = ret[(ret["ym"] >= window.start.index) & (ret["ym"] <= window.end.index)]

    fac = factors
    for m in window:
        if m.index not in fac.index:
            raise GapInSeries(m)
    fac = fac.loc[window.start.index:window.end.index, FACTOR_NAMES].copy()
    if fac.isna().any().any():
        raise DataError(f"factor series has missing values inside {window}")

    known = set(fund["firm_id"])
    orphan_mask = ~ret["firm_id"].isin(known)
    orphans = sorted(set(ret.loc[orphan_mask, "firm_id"]))
    if orphans:
        if not allow_orphans:
            raise OrphanReturns(orphans)
        ret = ret[~orphan_mask]
    ret = ret.sort_values(["firm_id", "ym"], kind="mergesort").reset_index(drop=True)
    fund = fund.sort_values(["firm_id", "fiscal_year"], kind="mergesort").reset_index(drop=True)
    fund.attrs = {}
    return Panel(fund, ret, fac, window, orphans, has_ltg)

"""Table pipelines (T1..T9), run configuration, and deterministic artifact output.

Each table is a named pipeline over a read-only Panel.  Intermediate results
shared by several tables (derived variables, INTANFT, the spanning fits) are
computed once per :class:`Study` and cached, including failures, so a table
whose inputs cannot be built reports the same structured error every time.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from . import econometrics as em
from . import factors as fb
from .errors import ConfigError, IntanError, MissingVariable, WindowUncovered
from .fundamentals import derive_all, descriptive_table
from .orthogonal import SPANNING_FACTORS, decompose_rmw, orthogonalize, render_spanning_fit
from .panel import (
    CalendarMonth,
    Panel,
    Window,
    build_panel,
    canonical_number,
    load_factors,
    load_fundamentals,
    load_returns,
)

TABLE_IDS = ("T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8", "T9")
TABLE_TITLES = {
    "T1": "Descriptive statistics",
    "T2": "Pearson correlations among factors",
    "T3": "Monthly excess returns of quintile portfolios",
    "T4": "Regressions on INTANFT, MTB quintiles",
    "T5": "Regressions on INTANFT_Org, MTB quintiles",
    "T6": "Regressions on INTANFT_Org, INTAN and OP quintiles",
    "T7": "Regressions on INTANFT_Org, 5x4 MTB-INTAN and OP-INTAN portfolios",
    "T8": "Regressions on the components of RMW, OP quintiles",
    "T9": "Regressions on INTANFT_Org, LTG quintiles",
}
MODEL_FACTORS = ("mktrf", "smb", "hml", "rmw", "cma", "umd")
FACTOR_LABELS = {"mktrf": "MKTRF", "smb": "SMB", "hml": "HML", "rmw": "RMW", "cma": "CMA",
                 "umd": "UMD", "intanft": "INTANFT", "intanft_org": "INTANFT_Org",
                 "rmw_org": "RMW_Org", "rmw_intan": "RMW_INTAN", "intercept": "intercept"}


# -- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    fundamentals: Path
    returns: Path
    factors: Path
    early_window: Window | None = Window.parse("1963-07..1992-12")
    late_window: Window = Window.parse("1993-01..2022-12")
    bubble_window: Window = Window.parse("1995-01..2000-12")
    weighting: str = fb.EQUAL
    intanft_weighting: str = fb.VALUE
    breakpoint_low: float = 30.0
    breakpoint_high: float = 70.0
    breakpoint_universe: str = "nyse"
    sga_threshold: int = 15
    winsorize_pct: float | None = None
    spanning_factors: tuple = SPANNING_FACTORS
    output_dir: Path = Path("out")
    tables: tuple = TABLE_IDS
    strict: bool = False
    allow_orphans: bool = False

    @property
    def periods(self) -> dict:
        out = {}
        if self.early_window is not None:
            out["early"] = self.early_window
        out["late"] = self.late_window
        return out

    @property
    def span(self) -> Window:
        start = self.early_window.start if self.early_window is not None else self.late_window.start
        return Window(start, self.late_window.end)

    def canonical(self) -> str:
        """Settings as sorted key=value lines; paths and output dir excluded."""
        lines = []
        for f in fields(self):
            if f.name in ("fundamentals", "returns", "factors", "output_dir"):
                continue
            lines.append(f"{f.name}={_format_value(getattr(self, f.name))}")
        return "\n".join(sorted(lines)) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ",".join(map(str, v))
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return canonical_number(v)
    return str(v)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _window_or_none(text: str):
    return None if text.strip().lower() in ("", "none", "off") else Window.parse(text)


def _tables(text: str) -> tuple:
    ids = tuple(t.strip().upper() for t in text.split(",") if t.strip())
    bad = [t for t in ids if t not in TABLE_IDS]
    if bad:
        raise ValueError(f"unknown table id(s): {', '.join(bad)}")
    return tuple(t for t in TABLE_IDS if t in ids)


_PARSERS = {
    "early_window": _window_or_none,
    "late_window": Window.parse,
    "bubble_window": Window.parse,
    "weighting": str.strip,
    "intanft_weighting": str.strip,
    "breakpoint_low": float,
    "breakpoint_high": float,
    "breakpoint_universe": lambda s: s.strip().lower(),
    "sga_threshold": int,
    "winsorize_pct": lambda s: None if s.strip().lower() in ("", "none", "off") else float(s),
    "spanning_factors": lambda s: tuple(x.strip().lower() for x in s.split(",") if x.strip()),
    "tables": _tables,
    "strict": _bool,
    "allow_orphans": _bool,
}
_PATH_KEYS = ("fundamentals", "returns", "factors", "output_dir")


def parse_config(text: str, base_dir=".") -> StudyConfig:
    """Parse flat ``key = value`` text (``#`` comments) into a StudyConfig.
    Relative paths resolve against ``base_dir``."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[study]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    raw = dict(cp["study"])
    unknown = set(raw) - set(_PARSERS) - set(_PATH_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    missing = [k for k in ("fundamentals", "returns", "factors") if k not in raw]
    if missing:
        raise ConfigError(f"config is missing: {', '.join(missing)}")
    kwargs = {}
    base = Path(base_dir)
    for key in _PATH_KEYS:
        if key in raw:
            p = Path(raw[key].strip())
            kwargs[key] = p if p.is_absolute() else base / p
    for key, parse in _PARSERS.items():
        if key in raw:
            try:
                kwargs[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
    cfg = StudyConfig(**kwargs)
    check_config(cfg)
    return cfg


def load_config(path) -> StudyConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    return parse_config(text, path.parent)


def check_config(cfg: StudyConfig, check_paths: bool = False) -> None:
    if cfg.weighting not in (fb.EQUAL, fb.VALUE) or cfg.intanft_weighting not in (fb.EQUAL, fb.VALUE):
        raise ConfigError("weighting must be 'equal' or 'value'")
    if cfg.breakpoint_universe not in ("nyse", "all"):
        raise ConfigError("breakpoint_universe must be 'nyse' or 'all'")
    if not 0 < cfg.breakpoint_low <= cfg.breakpoint_high < 100:
        raise ConfigError("need 0 < breakpoint_low <= breakpoint_high < 100")
    if cfg.sga_threshold < 5:
        raise ConfigError("sga_threshold must be at least 5 (four coefficients plus one dof)")
    if cfg.early_window is not None and cfg.early_window.overlaps(cfg.late_window):
        raise ConfigError("early_window and late_window overlap")
    if cfg.early_window is not None and cfg.late_window.start < cfg.early_window.start:
        raise ConfigError("early_window must precede late_window")
    if not (cfg.late_window.start <= cfg.bubble_window.start and cfg.bubble_window.end <= cfg.late_window.end):
        raise ConfigError("bubble_window must lie inside late_window")
    bad = [f for f in cfg.spanning_factors if f not in MODEL_FACTORS]
    if bad or not cfg.spanning_factors:
        raise ConfigError(f"spanning_factors must be drawn from {', '.join(MODEL_FACTORS)}")
    if check_paths:
        for key in ("fundamentals", "returns", "factors"):
            if not Path(getattr(cfg, key)).is_file():
                raise ConfigError(f"{key}: no such file {getattr(cfg, key)}")


# -- artifacts -------------------------------------------------------------------

@dataclass
class Cell:
    panel: str
    row: str
    column: str
    value: float
    t_stat: float | None = None
    p_value: float | None = None


@dataclass
class TableArtifact:
    table_id: str
    title: str
    cells: list = field(default_factory=list)
    regressions: list = field(default_factory=list)
    portfolios: dict = field(default_factory=dict)  # panel -> {label: PortfolioSeries}
    memberships: list = field(default_factory=list)  # assignment frames
    texts: dict = field(default_factory=dict)  # suffix -> text
    notes: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, panel, row, column, value, t=None, p=None):
        self.cells.append(Cell(panel, row, column, _f(value), _f(t), _f(p)))

    def add_regression(self, panel, row, res: em.RegressionResult, months, dependent):
        self.regressions.append({
            "panel": panel, "row": row, "dependent": dependent,
            "months": [str(CalendarMonth.from_index(m)) for m in months],
            "result": res.to_dict(),
        })

    def value(self, panel, row, column) -> Cell:
        for c in self.cells:
            if (c.panel, c.row, c.column) == (panel, row, column):
                return c
        raise KeyError((panel, row, column))

    # rendering
    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["panel", "row", "column", "value", "t_stat", "p_value", "stars"])
        for c in self.cells:
            w.writerow([c.panel, c.row, c.column, canonical_number(c.value),
                        canonical_number(c.t_stat), canonical_number(c.p_value), em.stars(c.p_value)])
        return buf.getvalue()

    def to_text(self) -> str:
        out = [f"{self.table_id}  {self.title}", ""]
        for key in sorted(self.provenance):
            out.append(f"# {key}: {self.provenance[key]}")
        if self.provenance:
            out.append("")
        panels = list(dict.fromkeys(c.panel for c in self.cells))
        for panel in panels:
            cells = [c for c in self.cells if c.panel == panel]
            rows = list(dict.fromkeys(c.row for c in cells))
            cols = list(dict.fromkeys(c.column for c in cells))
            grid = {(c.row, c.column): _cell_text(c) for c in cells}
            body = [[""] + cols] + [[r] + [grid.get((r, col), "") for col in cols] for r in rows]
            widths = [max(len(line[j]) for line in body) for j in range(len(cols) + 1)]
            out.append(panel)
            for line in body:
                out.append("  ".join(s.rjust(w) if j else s.ljust(w)
                                     for j, (s, w) in enumerate(zip(line, widths))).rstrip())
            out.append("")
        for note in self.notes:
            out.append(f"note: {note}")
        return "\n".join(out).rstrip() + "\n"

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []

        def put(name, text):
            p = out / name
            p.write_text(text, encoding="utf-8", newline="\n")
            paths.append(p)

        put(f"{self.table_id}.csv", self.to_csv())
        put(f"{self.table_id}.txt", self.to_text())
        if self.regressions:
            put(f"{self.table_id}_regressions.json",
                json.dumps(self.regressions, indent=1, sort_keys=True) + "\n")
        if self.portfolios:
            put(f"{self.table_id}_portfolios.csv", _portfolio_csv(self.portfolios))
        if self.memberships:
            frame = pd.concat(self.memberships, ignore_index=True)
            p = out / f"{self.table_id}_memberships.csv"
            fb.write_memberships(frame, p)
            paths.append(p)
        for suffix, text in sorted(self.texts.items()):
            put(f"{self.table_id}_{suffix}.txt", text)
        return paths


def _f(x):
    if x is None:
        return None
    return float(x)


def _cell_text(c: Cell) -> str:
    if c.value is None or (isinstance(c.value, float) and math.isnan(c.value)):
        return "n/a"
    s = f"{c.value:.3f}" if abs(c.value) >= 0.001 or c.value == 0 else f"{c.value:.4f}"
    s += em.stars(c.p_value)
    if c.t_stat is not None and not math.isnan(c.t_stat):
        s += f" ({c.t_stat:.2f})"
    return s


def _portfolio_csv(portfolios: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["panel", "label", "month", "return", "rf", "excess_return", "n_members"])
    for panel, series in portfolios.items():
        for label, ps in series.items():
            n = ps.n_members if ps.n_members is not None else [""] * len(ps.months)
            for m, r, rf, x, k in zip(ps.months, ps.returns, ps.rf, ps.excess_returns, n):
                w.writerow([panel, label, str(CalendarMonth.from_index(m)), canonical_number(r),
                            canonical_number(rf), canonical_number(x), canonical_number(k)])
    return buf.getvalue()


# -- shared computations ---------------------------------------------------------

def _period_label(w: Window) -> str:
    return f"{w.start.year}-{w.end.year}"


class Study:
    """Cached intermediate results for one Panel and StudyConfig."""

    def __init__(self, panel: Panel, config: StudyConfig):
        self.panel = panel
        self.config = config
        self._cache = {}

    def _memo(self, key, fn):
        if key not in self._cache:
            try:
                self._cache[key] = (True, fn())
            except IntanError as exc:
                self._cache[key] = (False, exc)
        ok, value = self._cache[key]
        if not ok:
            raise value
        return value

    @property
    def derivation(self):
        return self._memo("derivation", lambda: derive_all(
            self.panel, self.config.sga_threshold, self.config.winsorize_pct))

    @property
    def derived(self) -> pd.DataFrame:
        return self.derivation.frame

    def window(self, period: str) -> Window:
        try:
            return self.config.periods[period]
        except KeyError:
            raise WindowUncovered(f"the {period} window is disabled in this configuration") from None

    def intanft(self, period: str):
        def build():
            return fb.build_intanft(
                self.panel, self.derived, self.window(period), self.config.intanft_weighting,
                self.config.breakpoint_low, self.config.breakpoint_high,
                self.config.breakpoint_universe == "nyse")
        return self._memo(("intanft", period), build)

    def spanning(self, period: str):
        def fit():
            series, _ = self.intanft(period)
            return orthogonalize(series, self.panel.factors, self.window(period),
                                 against=self.config.spanning_factors)
        return self._memo(("spanning", period), fit)

    def rmw_split(self):
        def fit():
            series, _ = self.intanft("late")
            w = self.window("late")
            rmw = fb.FactorSeries.from_series(self.panel.factors_in(w)["rmw"], "RMW")
            return decompose_rmw(rmw, series, w)
        return self._memo("rmw_split", fit)

    def regressors(self, period: str, extra=()) -> pd.DataFrame:
        """Factor frame for ``period`` with requested constructed columns."""
        w = self.window(period)
        frame = self.panel.factors_in(w)
        for name in extra:
            if name == "intanft":
                frame[name] = self.intanft(period)[0].series
            elif name == "intanft_org":
                frame[name] = self.spanning(period).orthogonal_series.series
            elif name == "rmw_org":
                frame[name] = self.rmw_split()[0].series
            elif name == "rmw_intan":
                frame[name] = self.rmw_split()[1].series
            else:
                raise KeyError(name)
        return frame

    def quintiles(self, variable: str, period: str, n_bins: int = 5):
        def build():
            w = self.window(period)
            a = fb.sort_years(self.derived, w, fb.quantile_sort, variable, n_bins)
            labels = [f"{variable}{i}" for i in range(1, n_bins + 1)]
            return a, fb.portfolio_returns(a, self.panel, w, self.config.weighting, labels)
        return self._memo(("sort", variable, period, n_bins), build)

    def double(self, var_a: str, var_b: str, period: str, n_a: int = 5, n_b: int = 4):
        def build():
            w = self.window(period)
            a = fb.sort_years(self.derived, w, fb.independent_double_sort, var_a, var_b,
                              n_a=n_a, n_b=n_b)
            labels = [fb.double_label(var_a, i, var_b, j)
                      for i in range(1, n_a + 1) for j in range(1, n_b + 1)]
            return a, labels, fb.portfolio_returns(a, self.panel, w, self.config.weighting, labels)
        return self._memo(("double", var_a, var_b, period), build)


def _quintile_row(i: int, n: int, name: str) -> str:
    if i == 1:
        return f"Low {name}"
    if i == n:
        return f"High {name}"
    return str(i)


def _regress(ps: fb.PortfolioSeries, X: pd.DataFrame, columns, months=None):
    """Excess returns of ``ps`` on ``columns`` over ``months`` (default: all),
    dropping months where the portfolio has no return."""
    y = ps.excess
    if months is not None:
        y = y.loc[months]
    y = y.dropna()
    Xm = X.loc[y.index, list(columns)]
    res = em.ols(y.to_numpy(), [Xm[c].to_numpy() for c in columns],
                 names=[FACTOR_LABELS.get(c, c) for c in columns])
    return res, y.index.to_numpy()


def _add_regression_row(art: TableArtifact, panel: str, row: str, res, months, dependent,
                        show=None):
    names = res.names if show is None else show
    for name in names:
        j = res.names.index(name)
        art.add(panel, row, name, res.coefficients[j], res.t_stats[j], res.p_values[j])
    art.add(panel, row, "R^2", res.r_squared)
    art.add_regression(panel, row, res, months, dependent)


# -- tables ----------------------------------------------------------------------

def _table1(study: Study, art: TableArtifact):
    cfg = study.config
    if cfg.early_window is None:
        raise WindowUncovered("T1 compares two periods; early_window is disabled")
    early, late = cfg.early_window, cfg.late_window
    tab = descriptive_table(study.derived, (early, late))
    names = {"all": "All firms", "tech": "Technology firms", "nontech": "Non-tech firms"}
    for r in tab.itertuples(index=False):
        row = r._asdict()
        panel = names[row["group"]]
        for p, w in enumerate((early, late)):
            for tag, label in (("first", str(w.start.year)), ("last", str(w.end.year)),
                               ("", _period_label(w))):
                key = f"p{p}_{tag}_" if tag else f"p{p}_"
                art.add(panel, row["variable"], f"{label} mean", row[key + "mean"])
                art.add(panel, row["variable"], f"{label} median", row[key + "median"])
        art.add(panel, row["variable"], "t-value", row["t_value"], p=row["t_p"])
        art.add(panel, row["variable"], "z-value", row["z_value"], p=row["z_p"])
    art.notes.append(f"t/z compare {_period_label(late)} against {_period_label(early)} "
                     "(Welch t; rank-sum z with tie correction and 0.5 continuity correction)")


def _table2(study: Study, art: TableArtifact):
    cols = list(MODEL_FACTORS) + ["intanft"]
    for i, (period, w) in enumerate(study.config.periods.items()):
        X = study.regressors(period, ["intanft"])
        panel = f"{'ABCD'[i]}: {_period_label(w)}"
        for a in range(len(cols)):
            for b in range(a + 1):
                ra, rb = FACTOR_LABELS[cols[a]], FACTOR_LABELS[cols[b]]
                if a == b:
                    art.add(panel, ra, rb, 1.0)
                    continue
                r, p = em.pearson(X[cols[a]].to_numpy(), X[cols[b]].to_numpy())
                art.add(panel, ra, rb, r, p=p)


def _table3(study: Study, art: TableArtifact):
    for var_i, var in enumerate(("MTB", "INTAN")):
        for period, w in study.config.periods.items():
            a, series = study.quintiles(var, period)
            panel = f"{'AB'[var_i]}: {var} quintiles {_period_label(w)}"
            art.portfolios[panel] = series
            art.memberships.append(a)
            clean = {lab: ps.excess.dropna().to_numpy() for lab, ps in series.items()}
            for i, lab in enumerate(series, start=1):
                x = clean[lab]
                t = em.mean_t(x)
                p = float(em.t_sf2(t, len(x) - 1))
                row = _quintile_row(i, len(series), var)
                art.add(panel, row, "Average", x.mean(), t, p)
                art.add(panel, row, "Median", np.median(x))
            labs = list(series)
            test = em.two_sample_test(clean[labs[0]], clean[labs[-1]])
            art.add(panel, "Low vs High", "Average", test.t_value, p=test.t_p_value)
            art.add(panel, "Low vs High", "Median", test.z_value, p=test.z_p_value)


def _model_regressions(study, art, variable, intan_col, title):
    for i, (period, w) in enumerate(study.config.periods.items()):
        X = study.regressors(period, [intan_col])
        a, series = study.quintiles(variable, period)
        panel = f"{title}{_period_label(w)}"
        art.portfolios[panel] = series
        art.memberships.append(a)
        cols = list(MODEL_FACTORS) + [intan_col]
        for j, (lab, ps) in enumerate(series.items(), start=1):
            res, months = _regress(ps, X, cols)
            _add_regression_row(art, panel, _quintile_row(j, len(series), variable), res, months, lab)


def _spanning_text(study: Study) -> str:
    parts = []
    for period, w in study.config.periods.items():
        parts.append(render_spanning_fit(study.spanning(period), f"Spanning regression {_period_label(w)}"))
    return "\n".join(parts)


def _table4(study: Study, art: TableArtifact):
    for period in study.config.periods:
        _, assign = study.intanft(period)
        art.memberships.append(assign)
    _model_regressions(study, art, "MTB", "intanft", "")


def _table5(study: Study, art: TableArtifact):
    _model_regressions(study, art, "MTB", "intanft_org", "")
    art.texts["spanning"] = _spanning_text(study)


def _table6(study: Study, art: TableArtifact):
    _model_regressions(study, art, "INTAN", "intanft_org", "A: INTAN quintiles ")
    _model_regressions(study, art, "OP", "intanft_org", "B: OP quintiles ")
    art.texts["spanning"] = _spanning_text(study)


def _table7(study: Study, art: TableArtifact):
    w = study.window("late")
    X = study.regressors("late", ["intanft_org"])
    cols = list(MODEL_FACTORS) + ["intanft_org"]
    show = ["intercept", "HML", "RMW", "INTANFT_Org"]
    for tag, var_a in (("A", "MTB"), ("B", "OP")):
        a, labels, series = study.double(var_a, "INTAN", "late")
        panel = f"{tag}: {var_a}-INTAN portfolios {_period_label(w)}"
        art.portfolios[panel] = series
        art.memberships.append(a)
        for year, lab in fb.empty_cells(a, labels):
            art.notes.append(f"{panel}: {lab} has no members for formation year {year}")
        for lab in labels:
            ps = series[lab]
            if np.isnan(ps.excess_returns).all():
                art.notes.append(f"{panel}: {lab} is empty in every month; no regression")
                continue
            try:
                res, months = _regress(ps, X, cols)
            except em.TooFewObservations as exc:
                art.notes.append(f"{panel}: {lab}: {exc}")
                continue
            _add_regression_row(art, panel, lab, res, months, lab, show=show)
    art.texts["spanning"] = render_spanning_fit(study.spanning("late"),
                                                f"Spanning regression {_period_label(w)}")


def _table8(study: Study, art: TableArtifact):
    w = study.window("late")
    X = study.regressors("late", ["rmw_org", "rmw_intan"])
    cols = ["mktrf", "smb", "hml", "rmw_org", "rmw_intan", "cma", "umd"]
    a, series = study.quintiles("OP", "late")
    panel = f"OP quintiles {_period_label(w)}"
    art.portfolios[panel] = series
    art.memberships.append(a)
    for j, (lab, ps) in enumerate(series.items(), start=1):
        res, months = _regress(ps, X, cols)
        _add_regression_row(art, panel, _quintile_row(j, len(series), "OP"), res, months, lab)
    _, _, sf = study.rmw_split()
    art.texts["decomposition"] = render_spanning_fit(sf, f"RMW on INTANFT {_period_label(w)}")


def _table9(study: Study, art: TableArtifact):
    if not study.panel.has_ltg:
        raise MissingVariable("T9 needs the ltg column, which is absent or entirely blank")
    cfg = study.config
    w, bub = cfg.late_window, cfg.bubble_window
    X = study.regressors("late", ["intanft_org"])
    cols = list(MODEL_FACTORS) + ["intanft_org"]
    a, series = study.quintiles("LTG", "late")
    months = w.indices()
    in_bubble = (months >= bub.start.index) & (months <= bub.end.index)
    subsets = [
        (f"A: {_period_label(w)}", months),
        (f"B: bubble {bub}", months[in_bubble]),
        (f"C: {w} excluding {bub}", months[~in_bubble]),
    ]
    art.portfolios[f"LTG quintiles {_period_label(w)}"] = series
    art.memberships.append(a)
    for panel, sub in subsets:
        for j, (lab, ps) in enumerate(series.items(), start=1):
            res, used = _regress(ps, X, cols, sub)
            _add_regression_row(art, panel, _quintile_row(j, len(series), "LTG"), res, used, lab)
    art.texts["spanning"] = render_spanning_fit(study.spanning("late"),
                                                f"Spanning regression {_period_label(w)}")


_TABLES = {"T1": _table1, "T2": _table2, "T3": _table3, "T4": _table4, "T5": _table5,
           "T6": _table6, "T7": _table7, "T8": _table8, "T9": _table9}


def run_table(table_id: str, panel: Panel, config: StudyConfig, study: Study | None = None) -> TableArtifact:
    """Build one table.  Raises the structured error of whatever input fails."""
    table_id = table_id.upper()
    if table_id not in _TABLES:
        raise ConfigError(f"unknown table {table_id}")
    study = study or Study(panel, config)
    art = TableArtifact(table_id, TABLE_TITLES[table_id])
    _TABLES[table_id](study, art)
    return art


# -- whole runs ------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class LoadedInputs:
    panel: Panel
    rejected: dict  # source -> list[RejectedRow]
    digests: dict


def load_inputs(config: StudyConfig) -> LoadedInputs:
    check_config(config, check_paths=True)
    fund = load_fundamentals(config.fundamentals, strict=config.strict)
    ret = load_returns(config.returns, strict=config.strict)
    fac = load_factors(config.factors, config.span)
    panel = build_panel(fund, ret, fac, config.span, allow_orphans=config.allow_orphans)
    digests = {k: sha256_file(getattr(config, k)) for k in ("fundamentals", "returns", "factors")}
    return LoadedInputs(panel, {"fundamentals": fund.rejected, "returns": ret.rejected}, digests)


def validate(config: StudyConfig) -> dict:
    """Dry run: schema, row and window checks without building tables."""
    inputs = load_inputs(config)
    p = inputs.panel
    return {
        "window": str(config.span),
        "months": len(config.span),
        "periods": {k: {"window": str(w), "months": len(w)} for k, w in config.periods.items()},
        "firm_years": len(p._fundamentals),
        "returns": len(p._returns),
        "rejected_rows": {k: len(v) for k, v in inputs.rejected.items()},
        "orphan_firms": len(p.orphans),
        "has_ltg": p.has_ltg,
    }


def run_all(config: StudyConfig, tables=None, out_dir=None) -> dict:
    """Run the selected tables in T1..T9 order and write every artifact plus
    ``manifest.json`` into the output directory.  Returns the manifest."""
    if tables is not None:
        config = replace(config, tables=tuple(t for t in TABLE_IDS if t in {x.upper() for x in tables}))
    if out_dir is not None:
        config = replace(config, output_dir=Path(out_dir))
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = load_inputs(config)
    study = Study(inputs.panel, config)
    provenance = {"config_sha256": config.digest(),
                  **{f"{k}_sha256": v for k, v in sorted(inputs.digests.items())}}

    shared = []
    rej_path = out / "rejected_rows.csv"
    rows = [(src, r) for src in ("fundamentals", "returns") for r in inputs.rejected[src]]
    _write_rejected(rej_path, rows)
    shared.append(rej_path)
    try:
        der = study.derivation
        p = out / "derived.csv"
        _write_frame(der.frame, p)
        shared.append(p)
        p = out / "diagnostics.csv"
        _write_frame(der.diagnostics, p)
        shared.append(p)
        p = out / "sga_fits.csv"
        _write_fits(der.fits, p)
        shared.append(p)
    except IntanError:
        pass  # reported per table below
    p = _write_constructed(study, out)
    if p is not None:
        shared.append(p)

    entries = []
    for tid in config.tables:
        try:
            art = run_table(tid, inputs.panel, config, study)
        except IntanError as exc:
            entries.append({"id": tid, "status": "error", "error": type(exc).__name__,
                            "message": str(exc), "exit_code": exc.exit_code})
            continue
        art.provenance = provenance
        paths = art.write(out)
        entries.append({"id": tid, "status": "ok",
                        "artifacts": [{"path": p.name, "sha256": sha256_file(p)} for p in paths]})
    manifest = {
        "engine": f"intanfactor {__version__}",
        "config_sha256": config.digest(),
        "config": config.canonical().splitlines(),
        "inputs": {k: {"path": Path(getattr(config, k)).name, "sha256": v}
                   for k, v in sorted(inputs.digests.items())},
        "shared": [{"path": p.name, "sha256": sha256_file(p)} for p in shared],
        "tables": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8", newline="\n")
    return manifest


def _write_rejected(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "row", "firm_id", "fiscal_year", "reason"])
        for src, r in rows:
            w.writerow([src, r.row, r.firm_id, r.fiscal_year, r.reason])


def _write_frame(frame: pd.DataFrame, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(frame.columns)
        for row in frame.itertuples(index=False, name=None):
            w.writerow([canonical_number(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_fits(fits, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fiscal_year", "level", "industry", "n_obs", "n_members", "alpha", "beta",
                    "gamma", "lambda", "se_alpha", "se_beta", "se_gamma", "se_lambda", "dropped"])
        for f in sorted(fits, key=lambda f: (f.year, f.fallback_level.value, f.industry)):
            w.writerow([f.year, f.fallback_level.value, f.industry, f.n_obs, len(f.members),
                        *map(canonical_number, f.coefficients), *map(canonical_number, f.std_errors),
                        ";".join(f.dropped)])


def _write_constructed(study: Study, out: Path):
    """Monthly INTANFT, INTANFT_Org, RMW_Org and RMW_INTAN, as far as they
    can be built."""
    frames = []
    for period in study.config.periods:
        try:
            cols = ["intanft", "intanft_org"] + (["rmw_org", "rmw_intan"] if period == "late" else [])
            X = study.regressors(period, cols)[cols]
        except IntanError:
            continue
        X.insert(0, "period", period)
        frames.append(X)
    if not frames:
        return None
    frame = pd.concat(frames)
    path = out / "factors_constructed.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["period", "intanft", "intanft_org", "rmw_org", "rmw_intan"]
        w.writerow(["month"] + cols)
        for ym, row in frame.iterrows():
            w.writerow([str(CalendarMonth.from_index(ym))] +
                       [row["period"]] + [canonical_number(row.get(c, math.nan)) for c in cols[1:]])
    return path

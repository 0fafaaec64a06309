"""Spanning regressions: the orthogonalized intangible factor and the split
of RMW into an intangible-related part and the remainder.

For a fit ``y = a + X b + e`` the orthogonal series is ``a + e`` and the
projected series is the fitted value ``a + X b``, so that
``orthogonal + projected - a == y``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import econometrics as em
from .errors import WindowMismatch
from .factors import FactorSeries
from .panel import Window

SPANNING_FACTORS = ("mktrf", "smb", "hml", "rmw", "cma")


@dataclass(frozen=True)
class SpanningFit:
    dependent: str
    regressors: tuple
    fit: em.RegressionResult
    orthogonal_series: FactorSeries
    projected_series: FactorSeries

    @property
    def intercept(self) -> float:
        return float(self.fit.coefficients[0])

    def slope(self, name: str) -> float:
        return self.fit.coef(name)


def _aligned(series: FactorSeries, factors: pd.DataFrame, columns, window: Window | None):
    s = series.series
    if window is not None:
        months = window.indices()
        missing = np.setdiff1d(months, s.index.to_numpy())
        if missing.size:
            raise WindowMismatch(f"{series.name} has no value for {len(missing)} month(s) of {window}")
        missing = np.setdiff1d(months, factors.index.to_numpy())
        if missing.size:
            raise WindowMismatch(f"factors have no value for {len(missing)} month(s) of {window}")
        s = s.loc[months]
    else:
        if not set(s.index) <= set(factors.index):
            raise WindowMismatch(f"factors do not cover the months of {series.name}")
        months = s.index.to_numpy()
    X = factors.loc[months, list(columns)]
    return months, s.to_numpy(dtype=float), X


def orthogonalize(series: FactorSeries, factors: pd.DataFrame, window: Window | None = None,
                  against=SPANNING_FACTORS, name: str | None = None) -> SpanningFit:
    """Regress ``series`` on the ``against`` columns of ``factors`` over
    ``window`` and return the intercept-plus-residual series."""
    months, y, X = _aligned(series, factors, against, window)
    fit = em.ols(y, [X[c].to_numpy() for c in against], names=list(against))
    a = fit.coefficients[0]
    name = name or f"{series.name}_Org"
    return SpanningFit(
        dependent=series.name,
        regressors=tuple(against),
        fit=fit,
        orthogonal_series=FactorSeries(name, months, a + fit.residuals),
        projected_series=FactorSeries(f"{series.name}_fitted", months, fit.fitted.copy()),
    )


def decompose_rmw(rmw: FactorSeries, intanft: FactorSeries, window: Window | None = None):
    """Split RMW by a regression on INTANFT.

    Returns ``(rmw_org, rmw_intan, fit)``: rmw_intan is the fitted value
    a + b * INTANFT, rmw_org is a + residual.
    """
    frame = pd.DataFrame({"intanft": intanft.series})
    sf = orthogonalize(rmw, frame, window, against=("intanft",), name="RMW_Org")
    rmw_intan = FactorSeries("RMW_INTAN", sf.projected_series.months, sf.projected_series.values)
    return sf.orthogonal_series, rmw_intan, sf


def shifted_slope(raw_slope: float, intan_slope: float, spanning_slope: float) -> float:
    """Slope on a spanning factor once INTANFT is swapped for its orthogonal
    version: raw + b7 * (that factor's spanning slope)."""
    return raw_slope + intan_slope * spanning_slope


def render_spanning_fit(sf: SpanningFit, label: str = "", digits: int = 3) -> str:
    """Inline equation with t-values beneath and R-squared, e.g.

        INTANFT = 0.006 + 0.118*MKTRF - 0.647*HML + e
                  (15.17) (11.97)     (-39.36)
    """
    fit = sf.fit
    terms = [f"{fit.coefficients[0]:.{digits}f}"]
    tvals = [f"({fit.t_stats[0]:.2f})"]
    for name, b, t in zip(fit.names[1:], fit.coefficients[1:], fit.t_stats[1:]):
        sign = "-" if b < 0 else "+"
        terms.append(f"{sign} {abs(b):.{digits}f}*{name.upper()}")
        tvals.append(f"({t:.2f})")
    widths = [max(len(a), len(b)) for a, b in zip(terms, tvals)]
    lhs = f"{sf.dependent} = "
    line1 = lhs + " ".join(t.ljust(w) for t, w in zip(terms, widths)) + " + e"
    line2 = " " * len(lhs) + " ".join(t.ljust(w) for t, w in zip(tvals, widths))
    head = f"{label}\n" if label else ""
    return (f"{head}{line1.rstrip()}\n{line2.rstrip()}\n"
            f"R^2 = {fit.r_squared:.3f}, n = {fit.n_obs}\n")

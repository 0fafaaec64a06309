"""Synthetic panels with planted ground truth.

Returns follow an exact linear factor model::

    r[i, t] = rf[t] + sum_k beta[i, k] * F[k, t] + eps[i, t]

and SG&A follows the industry SG&A model with planted coefficients, so every
estimate the engine produces has a known target.  A firm's latent
"intangible propensity" z tilts its loadings, its R&D rate, its persistent
SG&A excess, and (optionally) its MTB, which gives INTANFT a realistic
correlation structure with HML and RMW.

Randomness comes from numpy's PCG64 bit generator; the draw order below is
part of the output format (GENERATOR_VERSION).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InvalidSpec
from .panel import (
    FACTOR_NAMES,
    FUNDAMENTAL_COLUMNS,
    Window,
    build_panel,
    canonical_number,
    write_factors,
    write_fundamentals,
    write_returns,
)

GENERATOR_VERSION = "pcg64-v1"
LOADING_FACTORS = ("mktrf", "smb", "hml", "rmw", "cma", "umd")

_DEFAULT_CORR = {
    ("mktrf", "smb"): 0.25, ("mktrf", "hml"): -0.2, ("mktrf", "rmw"): -0.2,
    ("mktrf", "cma"): -0.3, ("mktrf", "umd"): -0.1, ("smb", "rmw"): -0.3,
    ("hml", "rmw"): 0.3, ("hml", "cma"): 0.6, ("hml", "umd"): -0.2, ("rmw", "cma"): 0.2,
}


def _default_corr():
    c = np.eye(len(FACTOR_NAMES))
    for (a, b), v in _DEFAULT_CORR.items():
        i, j = FACTOR_NAMES.index(a), FACTOR_NAMES.index(b)
        c[i, j] = c[j, i] = v
    return c.tolist()


@dataclass
class SynthSpec:
    n_firms: int = 200
    window: str = "2001-01..2010-12"
    seed: int = 0

    factor_means: dict = field(default_factory=lambda: {
        "mktrf": 0.006, "smb": 0.002, "hml": 0.003, "rmw": 0.003, "cma": 0.002,
        "umd": 0.005, "rf": 0.003})
    factor_vols: dict = field(default_factory=lambda: {
        "mktrf": 0.045, "smb": 0.03, "hml": 0.03, "rmw": 0.025, "cma": 0.02,
        "umd": 0.04, "rf": 0.001})
    factor_corr: list = field(default_factory=_default_corr)  # over FACTOR_NAMES

    loading_means: dict = field(default_factory=lambda: {
        "mktrf": 1.0, "smb": 0.5, "hml": 0.2, "rmw": 0.1, "cma": 0.0, "umd": -0.05})
    loading_sds: dict = field(default_factory=lambda: {
        "mktrf": 0.25, "smb": 0.3, "hml": 0.3, "rmw": 0.3, "cma": 0.2, "umd": 0.1})
    intan_tilt: dict = field(default_factory=lambda: {"smb": 0.2, "hml": -0.3, "rmw": -0.3})
    idio_vol: float = 0.06

    industries: list = field(default_factory=lambda: ["283", "357", "737", "201", "291", "331", "541", "599"])
    sga_coefficients: dict = field(default_factory=lambda: {
        "alpha": 0.1, "beta": 0.2, "gamma": 0.05, "lambda": 0.03})
    sga_coef_jitter: float = 0.02  # sd of per-industry deviation from sga_coefficients
    sga_noise: float = 0.02
    sga_firm_effect: float = 0.03  # persistent SG&A excess per unit of propensity
    rd_rate_nontech: float = 0.01
    rd_rate_tech: float = 0.08
    rd_rate_sd: float = 0.02

    nyse_share: float = 0.4
    amex_share: float = 0.1
    mtb_log_mean: float = 0.5
    mtb_log_sd: float = 0.5
    mtb_intan_corr: float = 0.3
    ltg_mean: float = 15.0
    ltg_sd: float = 5.0
    ltg_tilt: float = 2.0
    missing_rd_rate: float = 0.0
    missing_ltg_rate: float = 0.0
    missing_return_rate: float = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> SynthSpec:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown synth spec keys: {', '.join(sorted(unknown))}")
        spec = cls(**d)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> SynthSpec:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise InvalidSpec(f"{path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    @property
    def window_range(self) -> Window:
        return Window.parse(self.window)

    def covariance(self) -> np.ndarray:
        vols = np.array([self.factor_vols[k] for k in FACTOR_NAMES], dtype=float)
        corr = np.asarray(self.factor_corr, dtype=float)
        return corr * np.outer(vols, vols)

    def validate(self) -> None:
        if self.n_firms < 1:
            raise InvalidSpec("n_firms must be positive")
        try:
            self.window_range
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from None
        for k in FACTOR_NAMES:
            if k not in self.factor_means or k not in self.factor_vols:
                raise InvalidSpec(f"factor {k} needs a mean and a volatility")
            if self.factor_vols[k] < 0:
                raise InvalidSpec(f"volatility of {k} is negative")
        for k in LOADING_FACTORS:
            if self.loading_sds.get(k, 0.0) < 0:
                raise InvalidSpec(f"loading sd of {k} is negative")
        if self.idio_vol < 0 or self.sga_noise < 0 or self.rd_rate_sd < 0:
            raise InvalidSpec("volatilities must be nonnegative")
        corr = np.asarray(self.factor_corr, dtype=float)
        n = len(FACTOR_NAMES)
        if corr.shape != (n, n):
            raise InvalidSpec(f"factor_corr must be {n}x{n} over {', '.join(FACTOR_NAMES)}")
        if not np.allclose(corr, corr.T) or not np.allclose(np.diag(corr), 1.0):
            raise InvalidSpec("factor_corr must be symmetric with a unit diagonal")
        if np.linalg.eigvalsh(corr).min() < -1e-10:
            raise InvalidSpec("factor_corr is not positive semidefinite")
        if not (0 <= self.nyse_share and 0 <= self.amex_share and self.nyse_share + self.amex_share <= 1):
            raise InvalidSpec("exchange shares must lie in [0, 1] and sum to at most 1")
        if not -1 <= self.mtb_intan_corr <= 1:
            raise InvalidSpec("mtb_intan_corr must lie in [-1, 1]")
        for rate in (self.missing_rd_rate, self.missing_ltg_rate, self.missing_return_rate):
            if not 0 <= rate < 1:
                raise InvalidSpec("missingness rates must lie in [0, 1)")
        if not self.industries or any(not (str(s).isdigit() and len(str(s)) == 3) for s in self.industries):
            raise InvalidSpec("industries must be 3-digit SIC prefixes")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class SynthData:
    spec: SynthSpec
    fundamentals: pd.DataFrame
    returns: pd.DataFrame
    factors: pd.DataFrame
    loadings: pd.DataFrame  # firm_id x LOADING_FACTORS
    propensity: pd.Series  # firm_id -> z
    sga_truth: pd.DataFrame  # sic3 -> alpha, beta, gamma, lambda

    def panel(self, window: Window | None = None):
        return build_panel(self.fundamentals, self.returns, self.factors,
                           window or self.spec.window_range)

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "fundamentals": out / "fundamentals.csv",
            "returns": out / "returns.csv",
            "factors": out / "factors.csv",
            "truth": out / "truth.csv",
        }
        write_fundamentals(self.fundamentals, paths["fundamentals"])
        write_returns(self.returns, paths["returns"])
        write_factors(self.factors, paths["factors"])
        write_oracle_report(self, paths["truth"])
        return paths


def factor_draws(spec: SynthSpec, n_months: int, rng: np.random.Generator) -> np.ndarray:
    """(n_months, 7) correlated draws via the eigen-decomposition of the
    target covariance (works for semidefinite targets)."""
    cov = spec.covariance()
    vals, vecs = np.linalg.eigh(cov)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    means = np.array([spec.factor_means[k] for k in FACTOR_NAMES])
    z = rng.standard_normal((n_months, len(FACTOR_NAMES)))
    return means + z @ root.T


def generate_sga_group(rng: np.random.Generator, n: int, alpha: float, beta: float, gamma: float,
                       lam: float, noise: float) -> pd.DataFrame:
    """One industry-year drawn from the SG&A model (scaled variables only)."""
    rev = rng.uniform(0.4, 1.8, n)
    dec = (rng.random(n) < 0.35).astype(float)
    loss = (rng.random(n) < 0.2).astype(float)
    sga = alpha + beta * rev + gamma * dec + lam * loss + noise * rng.standard_normal(n)
    return pd.DataFrame({"sga_scaled": sga, "rev_scaled": rev, "revenue_decrease": dec, "loss": loss})


def generate(spec: SynthSpec) -> SynthData:
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    window = spec.window_range
    n_months = len(window)
    months = window.indices()
    years = np.arange(window.start.year - 2, window.end.year + 1)
    n = spec.n_firms

    # factors
    F = factor_draws(spec, n_months, rng)
    factors = pd.DataFrame(F, columns=FACTOR_NAMES, index=pd.Index(months, name="ym"))

    # industries and their SG&A coefficients
    inds = [str(s) for s in spec.industries]
    base = np.array([spec.sga_coefficients[k] for k in ("alpha", "beta", "gamma", "lambda")])
    coef = base + spec.sga_coef_jitter * rng.standard_normal((len(inds), 4))
    sga_truth = pd.DataFrame(coef, columns=["alpha", "beta", "gamma", "lambda"],
                             index=pd.Index(inds, name="sic3"))

    # firm-level traits
    width = max(4, len(str(n)))
    firm_ids = [f"F{i:0{width}d}" for i in range(n)]
    ind_idx = rng.integers(0, len(inds), n)
    sic = [inds[j] + str(d) for j, d in zip(ind_idx, rng.integers(0, 10, n))]
    is_tech = np.array([s.startswith(("283", "357", "366", "38", "48", "737")) for s in sic])
    u = rng.random(n)
    exchange = np.where(u < spec.nyse_share, "NYSE",
                        np.where(u < spec.nyse_share + spec.amex_share, "AMEX", "NASDAQ"))
    z = rng.standard_normal(n)
    load = np.empty((n, len(LOADING_FACTORS)))
    noise = rng.standard_normal((n, len(LOADING_FACTORS)))
    for k, name in enumerate(LOADING_FACTORS):
        load[:, k] = (spec.loading_means.get(name, 0.0) + spec.intan_tilt.get(name, 0.0) * z
                      + spec.loading_sds.get(name, 0.0) * noise[:, k])
    rd_base = np.where(is_tech, spec.rd_rate_tech, spec.rd_rate_nontech)
    rd_rate = np.clip(rd_base + spec.rd_rate_sd * z, 0.0, None)
    rho = spec.mtb_intan_corr
    mtb_level = spec.mtb_log_mean + spec.mtb_log_sd * (rho * z + math.sqrt(1 - rho * rho) * rng.standard_normal(n))
    log_assets = rng.normal(6.0, 1.5, n)
    rev_level = rng.uniform(0.6, 1.4, n)
    margin_level = rng.normal(0.05, 0.04, n)

    # fundamentals, one fiscal year at a time (draw order is fixed)
    rows = []
    prev_assets = np.exp(log_assets - rng.normal(0.05, 0.1, n))
    prev_rev = None
    for fy in years:
        assets = prev_assets * np.exp(rng.normal(0.05, 0.1, n))
        avg = (assets + prev_assets) / 2.0
        rev_scaled = rev_level * np.exp(0.1 * rng.standard_normal(n))
        revenue = rev_scaled * avg
        dec = np.zeros(n) if prev_rev is None else (revenue < prev_rev).astype(float)
        net_income = revenue * (margin_level + 0.06 * rng.standard_normal(n))
        loss = (net_income < 0).astype(float)
        c = coef[ind_idx]
        sga_scaled = (c[:, 0] + c[:, 1] * rev_scaled + c[:, 2] * dec + c[:, 3] * loss
                      + spec.sga_firm_effect * z + spec.sga_noise * rng.standard_normal(n))
        sga = sga_scaled * avg
        rd = rd_rate * revenue
        rd_blank = rng.random(n) < spec.missing_rd_rate
        cogs = revenue * rng.uniform(0.45, 0.65, n)
        interest = assets * rng.uniform(0.0, 0.02, n)
        book = assets * rng.uniform(0.3, 0.6, n)
        mtb = np.exp(mtb_level + 0.1 * rng.standard_normal(n))
        me = book * mtb
        me_june = me * np.exp(0.05 * rng.standard_normal(n))
        ltg = spec.ltg_mean + spec.ltg_tilt * z + spec.ltg_sd * rng.standard_normal(n)
        ltg_blank = rng.random(n) < spec.missing_ltg_rate
        for i in range(n):
            rows.append((
                firm_ids[i], int(fy), sic[i], revenue[i], cogs[i], sga[i],
                math.nan if rd_blank[i] else rd[i], interest[i], net_income[i], assets[i],
                prev_assets[i], book[i], me[i], me_june[i],
                math.nan if ltg_blank[i] else ltg[i], exchange[i],
            ))
        prev_assets = assets
        prev_rev = revenue
    fundamentals = pd.DataFrame(rows, columns=FUNDAMENTAL_COLUMNS)
    # blank R&D is read back as zero by the loader
    fundamentals["rd_expense"] = fundamentals["rd_expense"].fillna(0.0)

    # returns
    eps = spec.idio_vol * rng.standard_normal((n_months, n))
    Fk = F[:, [FACTOR_NAMES.index(k) for k in LOADING_FACTORS]]
    R = factors["rf"].to_numpy()[:, None] + Fk @ load.T + eps
    keep = rng.random((n_months, n)) >= spec.missing_return_rate
    if np.any(R[keep] <= -1):
        raise InvalidSpec("parameters produce a return at or below -100%; lower the volatilities")
    t_idx, f_idx = np.nonzero(keep)
    order = np.lexsort((t_idx, f_idx))
    t_idx, f_idx = t_idx[order], f_idx[order]
    ym = months[t_idx]
    returns = pd.DataFrame({
        "firm_id": np.asarray(firm_ids)[f_idx],
        "year": ym // 12,
        "month": ym % 12 + 1,
        "total_return": R[t_idx, f_idx],
    })

    loadings = pd.DataFrame(load, columns=list(LOADING_FACTORS), index=pd.Index(firm_ids, name="firm_id"))
    return SynthData(spec, fundamentals, returns, factors, loadings,
                     pd.Series(z, index=loadings.index, name="propensity"), sga_truth)


def expected_compositions(fundamentals: pd.DataFrame, variable: str, n_bins: int = 5) -> dict:
    """Independent re-derivation of quantile-sort membership from raw
    fundamentals: {fiscal_year: {bin: sorted firm ids}} for MTB or OP."""
    out = {}
    for fy, g in fundamentals.groupby("fiscal_year"):
        g = g[g["book_equity"] > 0]
        if variable == "MTB":
            v = g["market_equity"] / g["book_equity"]
        elif variable == "OP":
            v = (g["revenue"] - g["cogs"] - g["sga_expense"] - g["interest_expense"]) / g["book_equity"]
        else:
            raise ValueError(variable)
        pairs = sorted(zip(v.to_numpy(), g["firm_id"]))
        size, extra = divmod(len(pairs), n_bins)
        bins, start = {}, 0
        for b in range(1, n_bins + 1):
            stop = start + size + (1 if b <= extra else 0)
            bins[b] = sorted(f for _, f in pairs[start:stop])
            start = stop
        out[int(fy)] = bins
    return out


def write_oracle_report(data: SynthData, path) -> None:
    """Ground-truth sidecar CSV: section, key, name, value."""
    spec = data.spec
    rows = [("meta", "", "generator", GENERATOR_VERSION),
            ("meta", "", "seed", str(spec.seed)),
            ("param", "", "idio_vol", canonical_number(spec.idio_vol)),
            ("param", "", "sga_noise", canonical_number(spec.sga_noise))]
    for firm, row in data.loadings.iterrows():
        for k in LOADING_FACTORS:
            rows.append(("loading", firm, k, canonical_number(row[k])))
        rows.append(("propensity", firm, "z", canonical_number(data.propensity[firm])))
    for sic3, row in data.sga_truth.iterrows():
        for k in ("alpha", "beta", "gamma", "lambda"):
            rows.append(("sga", sic3, k, canonical_number(row[k])))
    for var in ("MTB", "OP"):
        for fy, bins in expected_compositions(data.fundamentals, var).items():
            for b, firms in bins.items():
                rows.extend(("composition", f"{var}{b}@{fy}", f, "") for f in firms)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["section", "key", "name", "value"])
        w.writerows(rows)


def oracle_report(spec: SynthSpec, path) -> None:
    write_oracle_report(generate(spec), path)


def read_oracle_report(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"section": str, "key": str, "name": str}, keep_default_na=False)


def generate_files(spec: SynthSpec, out_dir) -> dict:
    return generate(spec).write(out_dir)

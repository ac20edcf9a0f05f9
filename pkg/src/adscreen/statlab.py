"""Ordinary least squares with inference, plus small statistical helpers.

Used for the per-country click-through analysis and for trend tests on
simulator output.  The t-distribution CDF is evaluated via the
continued-fraction regularized incomplete beta function (tolerance 1e-10),
so inference carries no external numerical dependency.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_MIN_IMPRESSIONS = 150


@dataclass(frozen=True)
class CountryStats:
    country: str
    impressions: int
    clicks: int
    gdp_per_capita: float
    internet_penetration_pct: float  # percentage points, 0..100
    life_expectancy_yrs: float

    @property
    def ctr(self) -> float:
        return self.clicks / self.impressions


@dataclass
class RegressionReport:
    names: list[str]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    t_statistics: np.ndarray
    p_values: np.ndarray
    r_squared: float
    n: int
    k: int  # regressors excluding the intercept

    def as_rows(self) -> list[dict]:
        return [
            {
                "name": nm,
                "coef": float(c),
                "se": float(se),
                "t": float(t),
                "p": float(p),
            }
            for nm, c, se, t, p in zip(
                self.names,
                self.coefficients,
                self.standard_errors,
                self.t_statistics,
                self.p_values,
            )
        ]

    def pretty(self) -> str:
        lines = [f"n={self.n}  k={self.k}  R^2={self.r_squared:.4f}"]
        lines.append(f"{'term':<24}{'coef':>12}{'se':>12}{'t':>9}{'p':>9}")
        for r in self.as_rows():
            lines.append(
                f"{r['name']:<24}{r['coef']:>12.6f}{r['se']:>12.6f}{r['t']:>9.3f}{r['p']:>9.4f}"
            )
        return "\n".join(lines)


def _betacf(a: float, b: float, x: float, tol: float = 1e-12, max_iter: int = 500) -> float:
    # Lentz's continued fraction for the incomplete beta function
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), documented tolerance 1e-10."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x outside [0, 1]")
    if x in (0.0, 1.0):
        return x
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: int) -> float:
    """CDF of Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    x = df / (df + t * t)
    tail = 0.5 * betainc_reg(df / 2.0, 0.5, x)
    return 1.0 - tail if t >= 0 else tail


def t_p_value(t: float, df: int) -> float:
    """Two-sided p-value."""
    return 2.0 * (1.0 - t_cdf(abs(t), df))


def ols_fit(y, X, names: Sequence[str] | None = None) -> RegressionReport:
    """OLS with classical standard errors and t-based p-values.

    X must already include the intercept column.
    """
    y = np.asarray(y, float)
    X = np.asarray(X, float)
    n, p = X.shape
    k = p - 1
    if n <= p:
        raise ValueError(f"insufficient n: {n} rows for {p} parameters")
    if np.linalg.matrix_rank(X) < p:
        raise ValueError("design matrix is rank deficient")
    beta, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    df = n - p
    sigma2 = rss / df
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    t_stats = beta / se
    p_values = np.array([t_p_value(float(t), df) for t in t_stats])
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return RegressionReport(
        names=list(names) if names else [f"x{i}" for i in range(p)],
        coefficients=beta,
        standard_errors=se,
        t_statistics=t_stats,
        p_values=p_values,
        r_squared=r2,
        n=n,
        k=k,
    )


def filter_countries(
    raw: Sequence[CountryStats], min_impressions: int = DEFAULT_MIN_IMPRESSIONS
) -> list[CountryStats]:
    """Keep countries shown ads at least min_impressions times."""
    return [c for c in raw if c.impressions >= min_impressions]


def country_ctr_model(stats: Sequence[CountryStats]) -> RegressionReport:
    """Regress CTR on [1, ln(GDP per capita), internet penetration (pp),
    life expectancy (years)]."""
    if len(stats) < 10:
        raise ValueError(f"insufficient n: need at least 10 countries, got {len(stats)}")
    bad = [c.country for c in stats if c.gdp_per_capita <= 0]
    if bad:
        raise ValueError(f"nonpositive GDP per capita (log undefined) for: {', '.join(bad)}")
    y = np.array([c.ctr for c in stats])
    X = np.column_stack(
        [
            np.ones(len(stats)),
            np.log([c.gdp_per_capita for c in stats]),
            [c.internet_penetration_pct for c in stats],
            [c.life_expectancy_yrs for c in stats],
        ]
    )
    return ols_fit(y, X, names=["intercept", "log_gdp", "internet_pct", "life_expectancy"])


def load_country_csv(path: str | Path) -> list[CountryStats]:
    """CSV columns: country,impressions,clicks,gdp_per_capita,
    internet_penetration_pct,life_expectancy_yrs."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                rows.append(
                    CountryStats(
                        country=row["country"],
                        impressions=int(row["impressions"]),
                        clicks=int(row["clicks"]),
                        gdp_per_capita=float(row["gdp_per_capita"]),
                        internet_penetration_pct=float(row["internet_penetration_pct"]),
                        life_expectancy_yrs=float(row["life_expectancy_yrs"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: malformed row ({e})") from None
    return rows


def synth_country_table(
    n_countries: int = 50,
    seed: int = 0,
    beta_internet: float = 0.001,
    beta_life: float = -0.002,
    intercept: float = 0.15,
    noise_sd: float = 0.008,
    n_below_threshold: int = 10,
) -> list[CountryStats]:
    """Synthetic per-country table with known generating coefficients.

    CTR = intercept + beta_internet * penetration_pct + beta_life * life_yrs
    + noise; log GDP enters the generator with a zero coefficient.  Used for
    generate-then-recover checks against country_ctr_model.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_countries):
        gdp = float(np.exp(rng.uniform(np.log(1000), np.log(60000))))
        internet = float(rng.uniform(20, 95))
        life = float(rng.uniform(55, 85))
        ctr = intercept + beta_internet * internet + beta_life * life
        ctr = max(1e-4, ctr + float(rng.normal(0, noise_sd)))
        below = i < n_below_threshold
        impressions = int(rng.integers(10, 150)) if below else int(rng.integers(2000, 20000))
        clicks = min(impressions, round(ctr * impressions))
        rows.append(
            CountryStats(
                country=f"C{i:02d}",
                impressions=impressions,
                clicks=clicks,
                gdp_per_capita=gdp,
                internet_penetration_pct=internet,
                life_expectancy_yrs=life,
            )
        )
    return rows


def write_country_csv(rows: Sequence[CountryStats], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "country",
                "impressions",
                "clicks",
                "gdp_per_capita",
                "internet_penetration_pct",
                "life_expectancy_yrs",
            ]
        )
        for c in rows:
            w.writerow(
                [
                    c.country,
                    c.impressions,
                    c.clicks,
                    f"{c.gdp_per_capita:.2f}",
                    f"{c.internet_penetration_pct:.2f}",
                    f"{c.life_expectancy_yrs:.2f}",
                ]
            )


def _ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), float)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_trend(values: Sequence[float]) -> tuple[float, float]:
    """Spearman rank correlation of a series against its index, with a
    two-sided t-approximation p-value."""
    y = np.asarray(values, float)
    n = len(y)
    if n < 4:
        raise ValueError("need at least 4 points for a trend test")
    rx = np.arange(1, n + 1, dtype=float)
    ry = _ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        return 0.0, 1.0
    rho = float(rx @ ry) / denom
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return rho, t_p_value(t, n - 2)

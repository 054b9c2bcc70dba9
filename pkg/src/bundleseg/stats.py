"""Paired nonparametric comparison machinery.

Wilcoxon signed-rank (exact sign-flip distribution up to n = 25, normal
approximation with tie-corrected variance and continuity correction above),
Benjamini-Hochberg FDR, and pooled-SD Cohen's d, plus the bundle-wise,
metric-wise two-method comparison that ties them together.
"""

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import norm, rankdata

EXACT_LIMIT = 25


@dataclass
class PairedSample:
    labels: list
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if len(self.labels) != len(self.a) or len(self.a) != len(self.b):
            raise ValueError("labels, a and b must have equal lengths")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("pair labels must be unique")


@dataclass
class TestResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str  # "exact" or "normal-approximation"


def _exact_tail_counts(double_ranks):
    """Distribution of the positive rank sum over all 2^n sign patterns.

    Ranks are doubled so mid-ranks become integers; returns an int64 count
    array c where c[s] patterns give a (doubled) positive rank sum of s.
    """
    total = int(round(sum(double_ranks)))
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for d in double_ranks:
        d = int(round(d))
        shifted = np.zeros_like(counts)
        shifted[d:] = counts[: counts.size - d]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b=None, alternative="two-sided"):
    """Wilcoxon signed-rank test on paired samples.

    Zero differences are discarded; ties in |d| get mid-ranks. With
    n_effective <= 25 the p-value is exact (full sign-flip enumeration),
    otherwise a normal approximation with tie-corrected variance and a 0.5
    continuity correction is used. Returns None, an explicitly undefined
    result, when every difference is zero.
    """
    if isinstance(a, PairedSample):
        if b is not None:
            raise ValueError("pass either a PairedSample or two arrays")
        a, b = a.a, a.b
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1D arrays of equal length")
    if a.size == 0:
        raise ValueError("empty paired sample")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        return None
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())

    if n <= EXACT_LIMIT:
        method = "exact"
        counts = _exact_tail_counts(2 * ranks)
        total = counts.size - 1  # == 2 * n(n+1)/2
        denom = float(2**n)
        s = np.arange(counts.size)
        if alternative == "two-sided":
            statistic = min(w_plus, w_minus)
            s_obs = int(round(2 * statistic))
            p = counts[np.minimum(s, total - s) <= s_obs].sum() / denom
        elif alternative == "greater":
            statistic = w_minus
            p = counts[total - s <= int(round(2 * w_minus))].sum() / denom
        else:
            statistic = w_plus
            p = counts[s <= int(round(2 * w_plus))].sum() / denom
    else:
        method = "normal-approximation"
        mean = n * (n + 1) / 4.0
        _, tie_sizes = np.unique(ranks, return_counts=True)
        tie_term = float(((tie_sizes**3) - tie_sizes).sum()) / 48.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
        sd = math.sqrt(var)
        if alternative == "two-sided":
            statistic = min(w_plus, w_minus)
            p = 2.0 * norm.cdf((statistic - mean + 0.5) / sd)
        elif alternative == "greater":
            statistic = w_minus
            p = norm.cdf((statistic - mean + 0.5) / sd)
        else:
            statistic = w_plus
            p = norm.cdf((statistic - mean + 0.5) / sd)
    p = min(1.0, max(p, np.finfo(float).tiny))
    return TestResult(statistic=statistic, p_value=float(p), n_effective=n, method=method)


def fdr_bh(p_values, alpha=0.05):
    """Benjamini-Hochberg step-up correction.

    Returns (rejected, adjusted) in the input order: rejected marks
    hypotheses 1..i* where i* is the largest i with p(i) <= i*alpha/m, and
    adjusted[i] = min_{j >= i} m*p(j)/j clipped to 1.
    """
    p = np.asarray(p_values, dtype=float)
    if p.size and (np.nanmin(p) < 0 or np.nanmax(p) > 1):
        raise ValueError("p-values must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    m = p.size
    rejected = np.zeros(m, dtype=bool)
    adjusted = np.ones(m, dtype=float)
    if m == 0:
        return rejected, adjusted
    order = np.argsort(p, kind="stable")
    sorted_p = p[order]
    scaled = sorted_p * m / np.arange(1, m + 1)
    adjusted_sorted = np.minimum(1.0, np.minimum.accumulate(scaled[::-1])[::-1])
    below = np.nonzero(sorted_p <= np.arange(1, m + 1) * alpha / m)[0]
    k = below[-1] + 1 if below.size else 0
    rejected_sorted = np.arange(m) < k
    rejected[order] = rejected_sorted
    adjusted[order] = adjusted_sorted
    return rejected, adjusted


def cohens_d(x, y):
    """Pooled-SD standardized mean difference; None when the pooled
    variance is zero. Heatmaps report the absolute value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or y.size < 2:
        raise ValueError("cohens_d needs >= 2 values per sample")
    nx, ny = x.size, y.size
    pooled_var = ((nx - 1) * x.var(ddof=1) + (ny - 1) * y.var(ddof=1)) / (nx + ny - 2)
    if pooled_var == 0:
        return None
    return float((x.mean() - y.mean()) / math.sqrt(pooled_var))


DEFAULT_METRICS = ("dice", "overlap", "overreach", "adjacency")


def compare_methods(table_a, table_b, alpha=0.05, metrics=DEFAULT_METRICS):
    """Per-bundle, per-metric Wilcoxon tests between two metric tables.

    Tables are DataFrames with columns subject, bundle and one column per
    metric; undefined entries are NaN/empty. Pairs missing on either side
    are dropped per test and counted. BH-FDR runs across all testable
    bundles within each metric family. Bundles with no testable pairs (or
    all-zero differences) appear as untestable rows, never silently vanish.
    """
    table_a = pd.DataFrame(table_a)
    table_b = pd.DataFrame(table_b)
    key_a = set(zip(table_a["subject"], table_a["bundle"]))
    key_b = set(zip(table_b["subject"], table_b["bundle"]))
    if key_a != key_b:
        diff = sorted(key_a ^ key_b)[:5]
        raise ValueError(f"tables do not share (subject, bundle) keys, e.g. {diff}")
    if len(key_a) != len(table_a) or len(key_b) != len(table_b):
        raise ValueError("duplicate (subject, bundle) rows in a metric table")

    merged = table_a.merge(table_b, on=["subject", "bundle"], suffixes=("_a", "_b"))
    rows = []
    for metric in metrics:
        col_a, col_b = f"{metric}_a", f"{metric}_b"
        family = []
        for bundle, grp in merged.groupby("bundle", sort=True):
            ok = grp[col_a].notna() & grp[col_b].notna()
            n_dropped = int((~ok).sum())
            sub = grp[ok]
            result = None
            if len(sub) > 0:
                result = wilcoxon_signed_rank(
                    sub[col_a].to_numpy(), sub[col_b].to_numpy(), alternative="two-sided"
                )
            row = {
                "bundle": bundle,
                "metric": metric,
                "W": result.statistic if result else None,
                "p_raw": result.p_value if result else None,
                "p_adjusted": None,
                "n_effective": result.n_effective if result else 0,
                "n_dropped": n_dropped,
                "significant": False,
                "untestable": result is None,
                "test_method": result.method if result else "undefined",
            }
            rows.append(row)
            if result is not None:
                family.append(row)
        if family:
            rejected, adjusted = fdr_bh([r["p_raw"] for r in family], alpha=alpha)
            for row, rej, adj in zip(family, rejected, adjusted):
                row["p_adjusted"] = float(adj)
                row["significant"] = bool(rej)
    return pd.DataFrame(rows)


def write_stats_csv(results, path):
    cols = ["bundle", "metric", "W", "p_raw", "p_adjusted", "n_effective",
            "n_dropped", "significant", "untestable", "test_method"]
    results.to_csv(path, index=False, columns=[c for c in cols if c in results.columns])

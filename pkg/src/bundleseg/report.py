"""Figures summarizing evaluation and comparison results.

All functions render to files through the Agg backend so they work in
headless runs.  The numeric payload of each figure is also returned so
callers (and tests) can inspect what was drawn.
"""

import numpy as np
import pandas as pd

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .stats import cohens_d

SHAPE_COLUMNS = ("surface_area", "volume", "mean_length", "curl")


class ReportError(ValueError):
    pass


def significance_marker(p):
    """Conventional star notation for an (adjusted) p-value."""
    if p is None or (isinstance(p, float) and np.isnan(p)):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def _require_columns(table, needed, what):
    missing = [c for c in needed if c not in table.columns]
    if missing:
        raise ReportError("%s table lacks columns %s" % (what, missing))


def dice_boxplots(metrics_a, metrics_b, stats_table, out_path,
                  labels=("method A", "method B"), metric="dice"):
    """Side-by-side per-bundle box plots of one metric for two methods.

    metrics_a, metrics_b : per-(subject, bundle) metric tables.
    stats_table : output of the paired comparison; rows matching
        ``metric`` contribute significance stars above the bundle.
    Returns the list of bundles in plotting order.
    """
    for t, w in ((metrics_a, "first metrics"), (metrics_b, "second metrics")):
        _require_columns(t, ("subject", "bundle", metric), w)
    bundles = sorted(set(metrics_a["bundle"]) | set(metrics_b["bundle"]))

    stars = {}
    if stats_table is not None and len(stats_table):
        _require_columns(stats_table, ("bundle", "metric", "p_adjusted"), "stats")
        for _, row in stats_table[stats_table["metric"] == metric].iterrows():
            p = row["p_adjusted"]
            stars[row["bundle"]] = significance_marker(
                None if pd.isna(p) else float(p))

    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(bundles) + 2.0), 4.5))
    width = 0.35
    for offset, table, color in ((-width / 2, metrics_a, "#4878cf"),
                                 (width / 2, metrics_b, "#d65f5f")):
        data, positions = [], []
        for i, bundle in enumerate(bundles):
            vals = table.loc[table["bundle"] == bundle, metric].dropna()
            if len(vals):
                data.append(vals.to_numpy(dtype=float))
                positions.append(i + offset)
        if data:
            parts = ax.boxplot(data, positions=positions, widths=width * 0.9,
                               patch_artist=True)
            for box in parts["boxes"]:
                box.set_facecolor(color)
                box.set_alpha(0.6)
    for i, bundle in enumerate(bundles):
        mark = stars.get(bundle, "")
        if mark:
            ax.text(i, 1.02, mark, ha="center", va="bottom", fontsize=11)
    ax.set_xticks(range(len(bundles)))
    ax.set_xticklabels(bundles, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel(metric)
    ax.set_ylim(-0.02, 1.12)
    handles = [plt.Rectangle((0, 0), 1, 1, facecolor="#4878cf", alpha=0.6),
               plt.Rectangle((0, 0), 1, 1, facecolor="#d65f5f", alpha=0.6)]
    ax.legend(handles, labels, loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return bundles


def shape_effect_matrix(shapes_a, shapes_b):
    """|Cohen's d| per (bundle, shape metric) between two shape tables.

    Tables need columns subject, bundle and the four shape measures.
    Returns (bundles, matrix) where matrix has one row per bundle and one
    column per entry of SHAPE_COLUMNS; undefined effects are NaN.
    """
    for t, w in ((shapes_a, "first shapes"), (shapes_b, "second shapes")):
        _require_columns(t, ("subject", "bundle") + SHAPE_COLUMNS, w)
    bundles = sorted(set(shapes_a["bundle"]) | set(shapes_b["bundle"]))
    matrix = np.full((len(bundles), len(SHAPE_COLUMNS)), np.nan)
    for i, bundle in enumerate(bundles):
        rows_a = shapes_a[shapes_a["bundle"] == bundle]
        rows_b = shapes_b[shapes_b["bundle"] == bundle]
        for j, col in enumerate(SHAPE_COLUMNS):
            x = rows_a[col].dropna().to_numpy(dtype=float)
            y = rows_b[col].dropna().to_numpy(dtype=float)
            if len(x) < 2 or len(y) < 2:
                continue
            d = cohens_d(x, y)
            if d is not None:
                matrix[i, j] = abs(d)
    return bundles, matrix


def shape_effect_heatmap(shapes_a, shapes_b, out_path,
                         labels=("method A", "method B")):
    """Render the |Cohen's d| matrix of bundle shape differences.

    Returns (bundles, matrix); the figure has exactly
    len(bundles) * len(SHAPE_COLUMNS) cells.
    """
    bundles, matrix = shape_effect_matrix(shapes_a, shapes_b)
    fig, ax = plt.subplots(figsize=(6.0, max(3.0, 0.3 * len(bundles) + 1.5)))
    shown = np.ma.masked_invalid(matrix)
    image = ax.imshow(shown, aspect="auto", cmap="viridis",
                      vmin=0.0, vmax=max(1.0, float(shown.max()) if shown.count() else 1.0))
    ax.set_xticks(range(len(SHAPE_COLUMNS)))
    ax.set_xticklabels(SHAPE_COLUMNS, rotation=30, ha="right", fontsize=8)
    ax.set_yticks(range(len(bundles)))
    ax.set_yticklabels(bundles, fontsize=7)
    ax.set_title("|Cohen's d|: %s vs %s" % labels, fontsize=10)
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return bundles, matrix

"""Voxel-level agreement metrics between predicted and reference masks.

Undefined cases (empty denominators) propagate as None, never 0, and the
cohort table keeps them as empty CSV cells.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class MaskComparison:
    bundle: str
    subject: str
    dice: float = None
    overlap: float = None
    overreach: float = None
    adjacency: float = None


def _as_bool(pred, ref):
    p = np.asarray(pred)
    g = np.asarray(ref)
    if p.shape != g.shape:
        raise ValueError(f"grid mismatch: {p.shape} vs {g.shape}")
    return p.astype(bool), g.astype(bool)


def dice(pred, ref):
    """2|P & G| / (|P| + |G|); None when both masks are empty."""
    p, g = _as_bool(pred, ref)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return None
    return 2.0 * int((p & g).sum()) / denom


def volume_overlap(pred, ref):
    """|P & G| / |G|; None when the reference is empty."""
    p, g = _as_bool(pred, ref)
    n_ref = int(g.sum())
    if n_ref == 0:
        return None
    return int((p & g).sum()) / n_ref


def volume_overreach(pred, ref):
    """|P \\ G| / |G|; None when the reference is empty."""
    p, g = _as_bool(pred, ref)
    n_ref = int(g.sum())
    if n_ref == 0:
        return None
    return int((p & ~g).sum()) / n_ref


def adjacency(pred, ref, radius=1):
    """Fraction of predicted voxels within a 26-connected dilation of the
    reference; None when the prediction is empty."""
    p, g = _as_bool(pred, ref)
    n_pred = int(p.sum())
    if n_pred == 0:
        return None
    struct = np.ones((3,) * g.ndim, dtype=bool)
    near = ndimage.binary_dilation(g, structure=struct, iterations=radius) if g.any() else g
    return int((p & near).sum()) / n_pred


def compare_masks(pred, ref, bundle, subject, adjacency_radius=1):
    return MaskComparison(
        bundle=bundle,
        subject=subject,
        dice=dice(pred, ref),
        overlap=volume_overlap(pred, ref),
        overreach=volume_overreach(pred, ref),
        adjacency=adjacency(pred, ref, radius=adjacency_radius),
    )


def evaluate_cohort(preds, refs, bundles=None, adjacency_radius=1):
    """One MaskComparison per (subject, valid reference bundle).

    preds and refs map subject id -> BundleMaskSet on a shared grid.
    Rows for reference channels flagged invalid are omitted; undefined
    metrics stay None.
    """
    if set(preds) != set(refs):
        missing = set(preds) ^ set(refs)
        raise ValueError(f"prediction/reference subject sets differ: {sorted(missing)}")
    rows = []
    for subject in sorted(refs):
        ref, pred = refs[subject], preds[subject]
        if ref.grid != pred.grid:
            raise ValueError(f"subject {subject}: prediction grid differs from reference")
        names = bundles if bundles is not None else ref.channels
        for bundle in names:
            if bundle not in ref.channels:
                continue
            if not ref.valid[ref.channels.index(bundle)]:
                continue
            if bundle not in pred.channels:
                raise ValueError(f"subject {subject}: prediction lacks channel {bundle}")
            rows.append(
                compare_masks(
                    pred.channel(bundle),
                    ref.channel(bundle),
                    bundle,
                    subject,
                    adjacency_radius=adjacency_radius,
                )
            )
    return rows


METRIC_COLUMNS = ("dice", "overlap", "overreach", "adjacency")


def write_metrics_csv(rows, path):
    """Cohort table as CSV; undefined metrics become empty cells."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("subject", "bundle") + METRIC_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.subject, r.bundle]
                + ["" if getattr(r, m) is None else repr(getattr(r, m)) for m in METRIC_COLUMNS]
            )

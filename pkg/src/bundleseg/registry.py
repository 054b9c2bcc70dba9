"""Canonical bundle name sets, mask-merging rules, and channel assembly.

The shipped catalog (data/bundle_catalog.json) holds the 16 expert bundle
names, the 44 appended names (21 left/right pairs plus CA and MCP), and
the default source-to-target merge map. The CC_Body and SLF merges are the
documented equivalences; the CC_Genu (CC_1 + CC_2) and CC_Splenium
(CC_6 + CC_7) groupings and the FX pair for the Fornix are overridable
defaults. Users can point any command at their own JSON to redefine them.
"""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .volume import BundleMaskSet

EXPERT_COUNT = 16
APPENDED_COUNT = 44
MERGED_COUNT = 60


@dataclass(frozen=True)
class BundleCatalog:
    expert_16: tuple
    tractseg_44: tuple

    def __post_init__(self):
        object.__setattr__(self, "expert_16", tuple(self.expert_16))
        object.__setattr__(self, "tractseg_44", tuple(self.tractseg_44))
        if len(self.expert_16) != EXPERT_COUNT:
            raise ValueError(f"expert catalog must have {EXPERT_COUNT} names")
        if len(self.tractseg_44) != APPENDED_COUNT:
            raise ValueError(f"appended catalog must have {APPENDED_COUNT} names")
        merged = self.expert_16 + self.tractseg_44
        if len(set(merged)) != len(merged):
            raise ValueError("bundle catalogs contain duplicate names")

    @property
    def merged_catalog_60(self):
        return self.expert_16 + self.tractseg_44


@dataclass(frozen=True)
class MergeRule:
    target: str
    sources: tuple

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise ValueError(f"merge rule for {self.target} has no sources")


def _catalog_json(path=None):
    if path is None:
        text = resources.files("bundleseg").joinpath("data/bundle_catalog.json").read_text()
    else:
        with open(path) as f:
            text = f.read()
    return json.loads(text)


def load_catalog(path=None):
    doc = _catalog_json(path)
    return BundleCatalog(doc["expert_16"], doc["tractseg_44"])


def load_merge_rules(path=None):
    doc = _catalog_json(path)
    rules = [MergeRule(r["target"], r["sources"]) for r in doc["merge_rules"]]
    seen = {}
    for rule in rules:
        for src in rule.sources:
            if src in seen:
                raise ValueError(f"source {src} used by both {seen[src]} and {rule.target}")
            seen[src] = rule.target
    return rules


def merge_tractseg_masks(tractseg_masks, rules):
    """Apply merge rules: each target channel is the voxelwise OR of its
    source channels; channels no rule consumes pass through unchanged."""
    available = set(tractseg_masks.channels)
    consumed = set()
    for rule in rules:
        for src in rule.sources:
            if src not in available:
                raise KeyError(f"merge rule {rule.target} needs missing channel {src}")
            consumed.add(src)
    names, columns, valid = [], [], []
    for rule in rules:
        idx = [tractseg_masks.channels.index(s) for s in rule.sources]
        merged = np.zeros(tractseg_masks.grid.shape, dtype=tractseg_masks.data.dtype)
        for i in idx:
            merged = np.logical_or(merged, tractseg_masks.data[..., i] > 0).astype(merged.dtype)
        names.append(rule.target)
        columns.append(merged)
        valid.append(any(tractseg_masks.valid[i] for i in idx))
    for i, name in enumerate(tractseg_masks.channels):
        if name not in consumed:
            names.append(name)
            columns.append(tractseg_masks.data[..., i])
            valid.append(tractseg_masks.valid[i])
    return BundleMaskSet(
        tractseg_masks.grid, names, np.stack(columns, axis=-1), valid
    )


def assemble_60(expert, tractseg):
    """Stack the 16 expert channels ahead of the 44 appended ones.

    Expert validity flags are kept; an appended channel that is entirely
    empty is flagged invalid (the upstream tool produced no segmentation).
    """
    if expert.grid != tractseg.grid:
        raise ValueError("expert and appended mask sets must share a grid")
    if len(expert.channels) != EXPERT_COUNT:
        raise ValueError(f"expected {EXPERT_COUNT} expert channels, got {len(expert.channels)}")
    if len(tractseg.channels) != APPENDED_COUNT:
        raise ValueError(
            f"expected {APPENDED_COUNT} appended channels, got {len(tractseg.channels)}"
        )
    appended_valid = [
        bool(tractseg.valid[i]) and bool(tractseg.data[..., i].any())
        for i in range(len(tractseg.channels))
    ]
    return BundleMaskSet(
        expert.grid,
        list(expert.channels) + list(tractseg.channels),
        np.concatenate([expert.data, tractseg.data], axis=-1),
        list(expert.valid) + appended_valid,
    )


@dataclass
class ExclusionReport:
    subject_missing: list      # (subject, bundle) pairs flagged invalid
    missing_counts: dict       # bundle -> number of subjects missing it
    cohort_excluded: list      # bundles missing in > threshold of subjects
    comparison_excluded: list  # bundles the comparison method cannot produce
    threshold: float
    n_subjects: int

    def reportable(self, bundles):
        dropped = set(self.cohort_excluded) | set(self.comparison_excluded)
        return [b for b in bundles if b not in dropped]


def exclusion_filter(cohort_refs, missing_fraction=1.0 / 3.0, comparison_catalog=None):
    """Per-subject and cohort-level bundle exclusions from reference masks.

    A bundle is missing for a subject when its channel is flagged invalid
    (or absent); a bundle missing in strictly more than missing_fraction of
    subjects is cohort-excluded. With a comparison catalog given, bundles
    outside it are marked comparison-excluded.
    """
    subjects = sorted(cohort_refs)
    bundles = []
    for subject in subjects:
        for name in cohort_refs[subject].channels:
            if name not in bundles:
                bundles.append(name)
    subject_missing = []
    counts = {b: 0 for b in bundles}
    for subject in subjects:
        refs = cohort_refs[subject]
        for bundle in bundles:
            if bundle in refs.channels:
                ok = refs.valid[refs.channels.index(bundle)]
            else:
                ok = False
            if not ok:
                subject_missing.append((subject, bundle))
                counts[bundle] += 1
    n = len(subjects)
    cohort_excluded = [b for b in bundles if n and counts[b] > missing_fraction * n]
    comparison_excluded = []
    if comparison_catalog is not None:
        comparison_excluded = [b for b in bundles if b not in set(comparison_catalog)]
    return ExclusionReport(
        subject_missing=subject_missing,
        missing_counts=counts,
        cohort_excluded=cohort_excluded,
        comparison_excluded=comparison_excluded,
        threshold=missing_fraction,
        n_subjects=n,
    )

import json

import numpy as np
import pytest

from bundleseg.volume import VoxelGrid, BundleMaskSet
from bundleseg.registry import (
    EXPERT_COUNT,
    APPENDED_COUNT,
    MERGED_COUNT,
    BundleCatalog,
    MergeRule,
    load_catalog,
    load_merge_rules,
    merge_tractseg_masks,
    assemble_60,
    exclusion_filter,
)


# ------------------------------------------------------------ catalog

def test_default_catalog_counts():
    cat = load_catalog()
    assert len(cat.expert_16) == EXPERT_COUNT == 16
    assert len(cat.tractseg_44) == APPENDED_COUNT == 44
    assert len(cat.merged_catalog_60) == MERGED_COUNT == 60
    assert cat.merged_catalog_60[:16] == cat.expert_16


def test_expert_names_include_laterality_pairs():
    cat = load_catalog()
    for name in ("L_SLF", "R_SLF", "L_ILF", "R_ILF", "Fornix", "CC_Body"):
        assert name in cat.expert_16


def test_appended_names_are_left_right_pairs_plus_commissural():
    cat = load_catalog()
    lefts = {n[:-5] for n in cat.tractseg_44 if n.endswith("_left")}
    rights = {n[:-6] for n in cat.tractseg_44 if n.endswith("_right")}
    assert lefts == rights
    assert len(lefts) == 21
    unpaired = [n for n in cat.tractseg_44
                if not n.endswith("_left") and not n.endswith("_right")]
    assert sorted(unpaired) == ["CA", "MCP"]


def test_catalog_rejects_wrong_counts_and_collisions():
    with pytest.raises(ValueError, match="16"):
        BundleCatalog(("a",), tuple(f"t{i}" for i in range(44)))
    names16 = tuple(f"e{i}" for i in range(16))
    clash = ("e0",) + tuple(f"t{i}" for i in range(43))
    with pytest.raises(ValueError, match="duplicate"):
        BundleCatalog(names16, clash)


def test_custom_catalog_file(tmp_path):
    doc = {
        "expert_16": [f"e{i}" for i in range(16)],
        "tractseg_44": [f"t{i}" for i in range(44)],
        "merge_rules": [{"target": "e0", "sources": ["x", "y"]}],
    }
    path = tmp_path / "catalog.json"
    path.write_text(json.dumps(doc))
    cat = load_catalog(path)
    assert cat.expert_16[0] == "e0"
    rules = load_merge_rules(path)
    assert rules == [MergeRule("e0", ("x", "y"))]


def test_merge_rules_reject_reused_source(tmp_path):
    doc = {
        "expert_16": [f"e{i}" for i in range(16)],
        "tractseg_44": [f"t{i}" for i in range(44)],
        "merge_rules": [
            {"target": "a", "sources": ["x"]},
            {"target": "b", "sources": ["x"]},
        ],
    }
    path = tmp_path / "catalog.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="both"):
        load_merge_rules(path)


def test_default_rules_cover_documented_merges():
    rules = {r.target: r.sources for r in load_merge_rules()}
    assert rules["CC_Body"] == ("CC_3", "CC_4", "CC_5")
    assert rules["CC_Genu"] == ("CC_1", "CC_2")
    assert rules["CC_Splenium"] == ("CC_6", "CC_7")
    assert rules["L_SLF"] == ("SLF_I_left", "SLF_II_left", "SLF_III_left")
    assert rules["R_SLF"] == ("SLF_I_right", "SLF_II_right", "SLF_III_right")
    assert rules["Fornix"] == ("FX_left", "FX_right")
    # no source for the pyramidal tract exists upstream
    assert "L_Pyramidal" not in rules and "R_Pyramidal" not in rules


# ------------------------------------------------------------ merging

def _mask_set(channel_arrays, valid=None):
    names = list(channel_arrays)
    data = np.stack([channel_arrays[n] for n in names], axis=-1).astype(np.uint8)
    grid = VoxelGrid(data.shape[:3], (1, 1, 1))
    return BundleMaskSet(grid, names, data, valid)


def test_merge_is_voxelwise_or():
    shape = (3, 3, 3)
    a = np.zeros(shape)
    b = np.zeros(shape)
    a[0, 0, 0] = 1
    b[1, 1, 1] = 1
    passthrough = np.ones(shape)
    masks = _mask_set({"x": a, "y": b, "keep": passthrough})
    rules = [MergeRule("xy", ("x", "y"))]
    merged = merge_tractseg_masks(masks, rules)
    assert merged.channels == ["xy", "keep"]
    want = np.logical_or(a, b)
    assert np.array_equal(merged.channel("xy").astype(bool), want)
    assert np.array_equal(merged.channel("keep"), passthrough.astype(np.uint8))


def test_merge_missing_source_names_channel():
    masks = _mask_set({"x": np.zeros((2, 2, 2))})
    with pytest.raises(KeyError, match="ghost"):
        merge_tractseg_masks(masks, [MergeRule("t", ("x", "ghost"))])


def test_merge_validity_is_any_of_sources():
    shape = (2, 2, 2)
    masks = _mask_set(
        {"x": np.zeros(shape), "y": np.ones(shape), "z": np.zeros(shape)},
        valid=[False, True, False],
    )
    merged = merge_tractseg_masks(masks, [MergeRule("xy", ("x", "y")),
                                          MergeRule("zz", ("z",))])
    assert merged.valid == [True, False]


# ------------------------------------------------------------ 60-channel stack

def _random_set(names, rng, shape=(3, 3, 3), empty=()):
    data = {}
    for n in names:
        if n in empty:
            data[n] = np.zeros(shape)
        else:
            data[n] = (rng.random(shape) > 0.5).astype(np.uint8)
            data[n].flat[0] = 1  # never accidentally empty
    return _mask_set(data)


def test_assemble_60_order_and_count():
    rng = np.random.default_rng(61)
    cat = load_catalog()
    expert = _random_set(cat.expert_16, rng)
    appended = _random_set(cat.tractseg_44, rng)
    merged = assemble_60(expert, appended)
    assert len(merged.channels) == 60
    assert tuple(merged.channels) == cat.merged_catalog_60
    assert np.array_equal(merged.data[..., :16], expert.data)
    assert np.array_equal(merged.data[..., 16:], appended.data)


def test_assemble_60_flags_empty_appended_channels():
    rng = np.random.default_rng(67)
    cat = load_catalog()
    expert = _random_set(cat.expert_16, rng)
    appended = _random_set(cat.tractseg_44, rng, empty=("CA", "MCP"))
    merged = assemble_60(expert, appended)
    assert merged.valid[merged.channels.index("CA")] is False
    assert merged.valid[merged.channels.index("MCP")] is False
    assert merged.valid[merged.channels.index("AF_left")] is True


def test_assemble_60_rejects_bad_inputs():
    rng = np.random.default_rng(71)
    cat = load_catalog()
    expert = _random_set(cat.expert_16, rng)
    appended = _random_set(cat.tractseg_44, rng)
    short = _mask_set({"only": np.ones((3, 3, 3))})
    with pytest.raises(ValueError, match="16 expert"):
        assemble_60(short, appended)
    grid2 = VoxelGrid((4, 4, 4), (1, 1, 1))
    other = BundleMaskSet(grid2, list(cat.tractseg_44),
                          np.zeros((4, 4, 4, 44), dtype=np.uint8))
    with pytest.raises(ValueError, match="share a grid"):
        assemble_60(expert, other)


# ------------------------------------------------------------ exclusions

def _cohort_with_missing(n_subjects, missing_subjects, bundle="b1"):
    shape = (2, 2, 2)
    refs = {}
    for i in range(n_subjects):
        sid = f"s{i}"
        data = {
            "b0": np.ones(shape),
            "b1": np.ones(shape),
            "b2": np.ones(shape),
        }
        valid = [True, sid not in missing_subjects, True]
        refs[sid] = _mask_set(data, valid=valid)
    return refs


def test_exclusion_above_third_threshold():
    refs = _cohort_with_missing(10, {"s0", "s1", "s2", "s3"})  # 40% missing
    report = exclusion_filter(refs)
    assert report.cohort_excluded == ["b1"]
    assert report.missing_counts["b1"] == 4
    assert ("s0", "b1") in report.subject_missing


def test_exclusion_threshold_is_strict():
    refs = _cohort_with_missing(9, {"s0", "s1", "s2"})  # exactly 1/3
    report = exclusion_filter(refs)
    assert report.cohort_excluded == []
    refs = _cohort_with_missing(9, {"s0", "s1", "s2", "s3"})  # just over
    report = exclusion_filter(refs)
    assert report.cohort_excluded == ["b1"]


def test_comparison_catalog_exclusion_and_reportable():
    refs = _cohort_with_missing(4, set())
    report = exclusion_filter(refs, comparison_catalog=["b0", "b2"])
    assert report.comparison_excluded == ["b1"]
    assert report.reportable(["b0", "b1", "b2"]) == ["b0", "b2"]


def test_absent_channel_counts_as_missing():
    shape = (2, 2, 2)
    full = _mask_set({"b0": np.ones(shape), "b1": np.ones(shape)})
    partial = _mask_set({"b0": np.ones(shape)})
    report = exclusion_filter({"s0": full, "s1": partial})
    assert ("s1", "b1") in report.subject_missing
    assert report.cohort_excluded == ["b1"]  # 1 of 2 > 1/3

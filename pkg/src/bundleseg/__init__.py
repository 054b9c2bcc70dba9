"""Multi-label white-matter bundle segmentation from fiber peak volumes.

A 2D U-Net segments bundle masks slice by slice from 9-channel peak
images; the package covers preprocessing, subject-level cross-validated
training, 3D reconstruction, overlap metrics, paired statistics, bundle
shape measurements, mask merging, and a synthetic phantom generator, all
reachable from the ``bundleseg`` command line tool.
"""

__version__ = "0.1.0"

from .volume import (
    VoxelGrid,
    ScalarVolume,
    PeakVolume,
    BundleMaskSet,
    load_volume,
    save_volume,
    resample,
    pad_to_multiple,
)
from .preprocess import (
    SubjectRecord,
    SliceSample,
    normalize_peaks,
    binarize_masks,
    brain_mask_from_peaks,
    extract_slices,
)
from .model import (
    UNet,
    UNetConfig,
    ModelWeights,
    build_model,
    masked_dice_loss,
    save_weights,
    load_weights,
)
from .training import (
    FoldPlan,
    TrainSettings,
    TrainRecord,
    make_folds,
    train_fold,
    infer_subject,
    run_cross_validation,
)
from .metrics import (
    MaskComparison,
    dice,
    volume_overlap,
    volume_overreach,
    adjacency,
    compare_masks,
    evaluate_cohort,
    write_metrics_csv,
)
from .stats import (
    PairedSample,
    TestResult,
    wilcoxon_signed_rank,
    fdr_bh,
    cohens_d,
    compare_methods,
    write_stats_csv,
)
from .tractometry import (
    BundleShape,
    streamline_length,
    streamline_curl,
    mask_volume,
    mask_surface_area,
    bundle_shape,
    load_streamlines,
    save_streamlines,
)
from .registry import (
    BundleCatalog,
    MergeRule,
    ExclusionReport,
    load_catalog,
    load_merge_rules,
    merge_tractseg_masks,
    assemble_60,
    exclusion_filter,
)
from .phantom import (
    TubeSpec,
    PhantomSpec,
    default_tubes,
    generate_subject,
    generate_cohort,
    generate_streamlines,
)

__all__ = [
    "VoxelGrid", "ScalarVolume", "PeakVolume", "BundleMaskSet",
    "load_volume", "save_volume", "resample", "pad_to_multiple",
    "SubjectRecord", "SliceSample", "normalize_peaks", "binarize_masks",
    "brain_mask_from_peaks", "extract_slices",
    "UNet", "UNetConfig", "ModelWeights", "build_model", "masked_dice_loss",
    "save_weights", "load_weights",
    "FoldPlan", "TrainSettings", "TrainRecord", "make_folds", "train_fold",
    "infer_subject", "run_cross_validation",
    "MaskComparison", "dice", "volume_overlap", "volume_overreach",
    "adjacency", "compare_masks", "evaluate_cohort", "write_metrics_csv",
    "PairedSample", "TestResult", "wilcoxon_signed_rank", "fdr_bh",
    "cohens_d", "compare_methods", "write_stats_csv",
    "BundleShape", "streamline_length", "streamline_curl", "mask_volume",
    "mask_surface_area", "bundle_shape", "load_streamlines", "save_streamlines",
    "BundleCatalog", "MergeRule", "ExclusionReport", "load_catalog",
    "load_merge_rules", "merge_tractseg_masks", "assemble_60", "exclusion_filter",
    "TubeSpec", "PhantomSpec", "default_tubes", "generate_subject",
    "generate_cohort", "generate_streamlines",
]

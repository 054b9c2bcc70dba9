"""Subject volumes -> model samples.

Peak normalization (NaN zeroing first, then one global scale by the
volume-wide maximum peak magnitude), mask binarization at an inclusive
threshold, and axial slice extraction with positive-voxel filtering and
per-channel loss masks.
"""

from dataclasses import dataclass

import numpy as np

from .volume import BundleMaskSet, PeakVolume, ScalarVolume


@dataclass
class SliceSample:
    """One axial slice: 9-channel input, C-channel target, and loss mask."""

    subject_id: str
    slice_index: int
    input: np.ndarray       # (H, W, 9)
    target: np.ndarray      # (H, W, C) in {0, 1}
    loss_mask: np.ndarray   # (H, W, C) in {0, 1}
    used_in_training: bool


@dataclass
class SubjectRecord:
    subject_id: str
    peaks: PeakVolume
    masks: BundleMaskSet
    brain_mask: ScalarVolume

    def __post_init__(self):
        grids = {self.peaks.grid, self.masks.grid, self.brain_mask.grid}
        if len(grids) != 1:
            raise ValueError(f"subject {self.subject_id}: volumes do not share one grid")


def normalize_peaks(peaks):
    """Zero NaNs, then scale all components by the global max peak magnitude.

    The scale is the maximum over the whole volume of the three per-voxel
    3-vector norms, computed after NaN replacement so NaNs cannot poison it.
    An all-zero volume comes back unchanged; otherwise the maximum peak
    magnitude is exactly 1 afterwards.
    """
    clean = np.nan_to_num(peaks.peaks.astype(np.float64), nan=0.0, posinf=0.0, neginf=0.0)
    mags = np.linalg.norm(clean.reshape(clean.shape[:3] + (3, 3)), axis=4)
    peak_max = float(mags.max()) if mags.size else 0.0
    if peak_max > 0:
        clean = clean / peak_max
    return PeakVolume(peaks.grid, clean.astype(np.float32))


def binarize_masks(masks, threshold=0.5):
    """Threshold mask probabilities to {0, 1}; >= threshold maps to 1."""
    data = np.asarray(masks.data, dtype=np.float64)
    if data.min() < 0 or data.max() > 1:
        raise ValueError("mask values must lie in [0, 1] before binarization")
    out = (data >= threshold).astype(np.uint8)
    return BundleMaskSet(masks.grid, masks.channels, out, list(masks.valid))


def brain_mask_from_peaks(peaks):
    """Binary mask of voxels where any peak has nonzero magnitude."""
    support = (peaks.magnitudes() > 0).any(axis=3)
    return ScalarVolume(peaks.grid, support.astype(np.uint8))


def extract_slices(subject):
    """Split a subject into per-axial-slice samples, one per z index.

    The loss mask for channel c is the brain mask where the bundle is valid
    and all-zero otherwise. Slices whose target is empty across every valid
    channel are flagged used_in_training=False (they are still emitted so
    inference can reconstruct full volumes).
    """
    peaks, masks, brain = subject.peaks, subject.masks, subject.brain_mask
    if np.isnan(peaks.peaks).any():
        raise ValueError(f"subject {subject.subject_id}: peaks contain NaN; normalize first")
    if not masks.is_binary():
        raise ValueError(f"subject {subject.subject_id}: masks are not binary; binarize first")
    nz = peaks.grid.shape[2]
    valid = np.asarray(masks.valid, dtype=bool)
    samples = []
    for z in range(nz):
        target = masks.data[:, :, z, :].astype(np.float32)
        loss_mask = (brain.values[:, :, z, None] > 0) & valid[None, None, :]
        eligible = bool(target[..., valid].any()) if valid.any() else False
        samples.append(
            SliceSample(
                subject_id=subject.subject_id,
                slice_index=z,
                input=peaks.peaks[:, :, z, :].astype(np.float32),
                target=target,
                loss_mask=loss_mask.astype(np.float32),
                used_in_training=eligible,
            )
        )
    return samples

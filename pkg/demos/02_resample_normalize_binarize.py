#!/usr/bin/env python3
"""Walk through the preprocessing steps on one synthetic subject.

Shows what resampling to an isotropic grid does to shapes and origins,
how peak normalization rescales magnitudes, and why probabilistic masks
need an explicit threshold before training.
"""

import argparse

import numpy as np

from bundleseg import (PhantomSpec, generate_subject, resample,
                       normalize_peaks, binarize_masks, extract_slices)
from bundleseg.preprocess import SubjectRecord
from bundleseg.volume import BundleMaskSet


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--voxel-size", type=float, default=1.25,
                    help="pretend acquisition resolution in mm")
    args = ap.parse_args()

    # build a subject, then mangle it so it looks like raw input:
    # anisotropic-ish voxels, unnormalized peaks, soft masks
    spec = PhantomSpec(voxel_size=(args.voxel_size,) * 3)
    subject = generate_subject(spec, seed=4)
    peaks = subject["peaks"]
    peaks = type(peaks)(peaks.grid, peaks.peaks * 3.7)  # arbitrary scanner scale
    soft = subject["masks"].data.astype(np.float32) * 0.9 + 0.05
    masks = BundleMaskSet(subject["masks"].grid, subject["masks"].channels, soft)

    print("raw grid:", peaks.grid.shape, "voxels of", peaks.grid.voxel_size, "mm")
    print("raw peak magnitude max: %.3f" % peaks.magnitudes().max())
    print("raw mask values:", sorted(set(np.round(np.unique(masks.data), 3))))

    target = (1.0, 1.0, 1.0)
    peaks_1mm = resample(peaks, target, mode="cubic")
    masks_1mm = resample(masks, target, mode="nearest")
    print("resampled grid:", peaks_1mm.grid.shape,
          "voxels of", peaks_1mm.grid.voxel_size, "mm")

    peaks_1mm = normalize_peaks(peaks_1mm)
    print("normalized magnitude max: %.6f" % peaks_1mm.magnitudes().max())

    binary = binarize_masks(masks_1mm, threshold=0.5)
    print("binarized mask values:", np.unique(binary.data).tolist())

    brain = resample(subject["brain_mask"], target, mode="nearest")
    record = SubjectRecord(subject["subject_id"], peaks_1mm, binary, brain)
    samples = list(extract_slices(record))
    trainable = sum(s.used_in_training for s in samples)
    print(f"{len(samples)} axial slices, {trainable} carry at least one bundle")
    sample = next(s for s in samples if s.used_in_training)
    print("slice input shape:", sample.input.shape,
          "| target shape:", sample.target.shape,
          "| loss-mask coverage: %.2f" % sample.loss_mask.mean())


if __name__ == "__main__":
    main()

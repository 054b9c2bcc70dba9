"""On-disk layout for cohorts of subjects.

A cohort root contains one directory per subject:

    <root>/<subject_id>/peaks.nii.gz           fiber peak volume (x, y, z, 9)
    <root>/<subject_id>/masks.nii.gz           bundle masks (x, y, z, n)
    <root>/<subject_id>/masks.labels.json      channel names + valid flags
    <root>/<subject_id>/brain_mask.nii.gz      optional; derived if absent
    <root>/<subject_id>/streamlines/<name>.txt optional streamline bundles

Predictions use a flat layout: <pred_root>/<subject_id>.nii.gz plus the
labels sidecar.
"""

import os

from .volume import load_volume, save_volume
from .preprocess import SubjectRecord, brain_mask_from_peaks
from .tractometry import save_streamlines, load_streamlines

PEAKS_FILE = "peaks.nii.gz"
MASKS_FILE = "masks.nii.gz"
BRAIN_FILE = "brain_mask.nii.gz"
STREAMLINE_DIR = "streamlines"


class CohortError(ValueError):
    pass


def subject_dir(root, subject_id):
    return os.path.join(root, subject_id)


def list_subjects(root):
    """Sorted ids of all subject directories that hold a peak volume."""
    if not os.path.isdir(root):
        raise CohortError("cohort root %r is not a directory" % root)
    out = []
    for name in sorted(os.listdir(root)):
        if os.path.isfile(os.path.join(root, name, PEAKS_FILE)):
            out.append(name)
    return out


def save_subject(root, subject_id, peaks, masks, brain_mask=None,
                 streamlines=None):
    """Write one subject.  ``streamlines`` maps bundle name to line list."""
    d = subject_dir(root, subject_id)
    os.makedirs(d, exist_ok=True)
    save_volume(peaks, os.path.join(d, PEAKS_FILE))
    save_volume(masks, os.path.join(d, MASKS_FILE))
    if brain_mask is not None:
        save_volume(brain_mask, os.path.join(d, BRAIN_FILE))
    if streamlines:
        sdir = os.path.join(d, STREAMLINE_DIR)
        os.makedirs(sdir, exist_ok=True)
        for name, lines in streamlines.items():
            save_streamlines(os.path.join(sdir, name + ".txt"), lines)


def load_subject(root, subject_id):
    """Read one subject back as a SubjectRecord."""
    d = subject_dir(root, subject_id)
    peaks_path = os.path.join(d, PEAKS_FILE)
    masks_path = os.path.join(d, MASKS_FILE)
    if not os.path.isfile(peaks_path):
        raise CohortError("subject %r has no %s" % (subject_id, PEAKS_FILE))
    if not os.path.isfile(masks_path):
        raise CohortError("subject %r has no %s" % (subject_id, MASKS_FILE))
    peaks = load_volume(peaks_path, kind="peaks")
    masks = load_volume(masks_path, kind="masks")
    brain_path = os.path.join(d, BRAIN_FILE)
    if os.path.isfile(brain_path):
        brain = load_volume(brain_path, kind="scalar")
    else:
        brain = brain_mask_from_peaks(peaks)
    return SubjectRecord(subject_id=subject_id, peaks=peaks, masks=masks,
                         brain_mask=brain)


def load_subject_streamlines(root, subject_id):
    """All streamline bundles of one subject, keyed by bundle name."""
    sdir = os.path.join(subject_dir(root, subject_id), STREAMLINE_DIR)
    out = {}
    if os.path.isdir(sdir):
        for name in sorted(os.listdir(sdir)):
            if name.endswith(".txt"):
                out[name[:-4]] = load_streamlines(os.path.join(sdir, name))
    return out


def prediction_path(root, subject_id):
    return os.path.join(root, subject_id + ".nii.gz")


def save_prediction(root, subject_id, masks):
    os.makedirs(root, exist_ok=True)
    save_volume(masks, prediction_path(root, subject_id))


def load_prediction(root, subject_id):
    path = prediction_path(root, subject_id)
    if not os.path.isfile(path):
        raise CohortError("no prediction for subject %r under %r"
                          % (subject_id, root))
    return load_volume(path, kind="masks")


def list_predictions(root):
    if not os.path.isdir(root):
        raise CohortError("prediction root %r is not a directory" % root)
    out = []
    for name in sorted(os.listdir(root)):
        if name.endswith(".nii.gz"):
            out.append(name[:-len(".nii.gz")])
        elif name.endswith(".nii"):
            out.append(name[:-len(".nii")])
    return out

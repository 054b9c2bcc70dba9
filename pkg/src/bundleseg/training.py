"""Cross-validated training of the slice segmentation network.

Folds are assigned at the subject level so that no slice of a validation
subject is ever seen during training.  Within a fold, training minimizes
the masked Dice loss over axial slices; early stopping watches the
training loss while checkpoint selection watches the validation Dice
computed on fully reconstructed 3D masks.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .model import (SPATIAL_MULTIPLE, UNetConfig, ModelWeights, build_model,
                    masked_dice_loss)
from .preprocess import extract_slices
from .volume import BundleMaskSet, pad_to_multiple
from .metrics import dice


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class FoldPlan:
    """Subject ids per fold; fold i is the validation set of run i."""
    folds: tuple

    def __post_init__(self):
        seen = set()
        for fold in self.folds:
            for sid in fold:
                if sid in seen:
                    raise TrainingError("subject %r appears in two folds" % sid)
                seen.add(sid)

    @property
    def k(self):
        return len(self.folds)

    def train_subjects(self, i):
        out = []
        for j, fold in enumerate(self.folds):
            if j != i:
                out.extend(fold)
        return tuple(out)

    def validation_subjects(self, i):
        return tuple(self.folds[i])

    def all_subjects(self):
        out = []
        for fold in self.folds:
            out.extend(fold)
        return tuple(out)


def make_folds(subject_ids, k, seed=0):
    """Split subjects into k folds of near-equal size.

    Ids are sorted, shuffled with a seeded generator, then dealt
    round-robin, so fold sizes differ by at most one and the split is a
    pure function of (ids, k, seed).
    """
    ids = sorted(str(s) for s in subject_ids)
    if len(set(ids)) != len(ids):
        raise TrainingError("subject ids must be unique")
    if k < 2:
        raise TrainingError("need at least 2 folds")
    if len(ids) < k:
        raise TrainingError("cannot split %d subjects into %d folds" % (len(ids), k))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    folds = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        folds[pos % k].append(ids[idx])
    return FoldPlan(tuple(tuple(f) for f in folds))


@dataclass(frozen=True)
class TrainSettings:
    learning_rate: float = 1e-3
    max_epochs: int = 250
    patience: int = 25
    batch_size: int = 32
    improve_eps: float = 1e-6
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise TrainingError("epochs, patience and batch size must be positive")


@dataclass
class TrainRecord:
    """Per-epoch log of one fold run.  Epochs are 1-based."""
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_dice: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def rows(self):
        for e, l, d in zip(self.epochs, self.train_loss, self.val_dice):
            yield {"epoch": e, "loss": l, "val_dice": d}


def _stack_training_slices(subjects):
    """Collect trainable slices from all subjects into dense arrays."""
    inputs, targets, masks = [], [], []
    for subject in subjects:
        for sample in extract_slices(subject):
            if not sample.used_in_training:
                continue
            inputs.append(sample.input)
            targets.append(sample.target)
            masks.append(sample.loss_mask)
    if not inputs:
        raise TrainingError("no trainable slices: every slice is empty of bundles")
    return (np.stack(inputs).astype(np.float32),
            np.stack(targets).astype(np.float32),
            np.stack(masks).astype(np.float32))


def _padded_batch(inputs, targets, masks, idx):
    """Pad one batch of slices to the network's spatial granularity."""
    xs, ys, ms = [], [], []
    for i in idx:
        x, _ = pad_to_multiple(inputs[i], SPATIAL_MULTIPLE)
        y, _ = pad_to_multiple(targets[i], SPATIAL_MULTIPLE)
        m, _ = pad_to_multiple(masks[i], SPATIAL_MULTIPLE)
        xs.append(x)
        ys.append(y)
        ms.append(m)
    return np.stack(xs), np.stack(ys), np.stack(ms)


def infer_subject(model, channels, peaks, threshold=0.5):
    """Predict a 3D multi-label mask set for one subject.

    Axial slices are padded, pushed through the network, cropped back,
    thresholded at ``threshold`` and restacked along z.

    peaks : PeakVolume with normalized magnitudes.
    """
    model.eval()
    grid = peaks.grid
    nz = grid.shape[2]
    n_channels = len(channels)
    out = np.zeros(grid.shape + (n_channels,), dtype=np.uint8)
    device = next(model.parameters()).device
    with torch.no_grad():
        for z in range(nz):
            slice_in = peaks.peaks[:, :, z, :]
            padded, crop = pad_to_multiple(slice_in, SPATIAL_MULTIPLE)
            x = torch.from_numpy(padded.astype(np.float32)[None]).permute(0, 3, 1, 2)
            pred = model(x.to(device)).permute(0, 2, 3, 1)[0].cpu().numpy()
            pred = crop.crop(pred)
            out[:, :, z, :] = (pred >= threshold).astype(np.uint8)
    return BundleMaskSet(grid, list(channels), out)


def _mean_validation_dice(model, channels, subjects, threshold=0.5):
    """Mean Dice over (subject, valid bundle) pairs on reconstructed masks.

    Pairs with an undefined Dice (both masks empty) are skipped; returns
    None if nothing was comparable.
    """
    scores = []
    for subject in subjects:
        predicted = infer_subject(model, channels, subject.peaks, threshold)
        truth = subject.masks
        for c, name in enumerate(channels):
            if name not in truth.channels:
                continue
            ci = truth.channels.index(name)
            if not truth.valid[ci]:
                continue
            d = dice(predicted.data[..., c] > 0, truth.data[..., ci] > 0)
            if d is not None:
                scores.append(d)
    if not scores:
        return None
    return float(np.mean(scores))


def train_fold(train_subjects, val_subjects, model_cfg, settings=None):
    """Train one fold and return (best_weights, record).

    train_subjects / val_subjects : lists of SubjectRecord.
    Raises if a subject id appears on both sides.
    """
    settings = settings or TrainSettings()
    train_ids = {s.subject_id for s in train_subjects}
    val_ids = {s.subject_id for s in val_subjects}
    overlap = train_ids & val_ids
    if overlap:
        raise TrainingError("subjects in both train and validation: %s"
                            % sorted(overlap))
    if not train_subjects or not val_subjects:
        raise TrainingError("both train and validation sets must be non-empty")

    channels = train_subjects[0].masks.channels
    for s in list(train_subjects) + list(val_subjects):
        if s.masks.channels != channels:
            raise TrainingError("subject %r has mismatched bundle channels"
                                % s.subject_id)
    if model_cfg.out_channels != len(channels):
        raise TrainingError("model emits %d channels but subjects have %d bundles"
                            % (model_cfg.out_channels, len(channels)))

    inputs, targets, masks = _stack_training_slices(train_subjects)
    n_samples = inputs.shape[0]

    model = build_model(model_cfg)
    model.train()
    optimizer = torch.optim.Adamax(model.parameters(), lr=settings.learning_rate)

    record = TrainRecord()
    best_loss = np.inf
    best_loss_epoch = 0
    best_val = -np.inf
    best_state = None
    best_meta = (0, None)

    for epoch in range(1, settings.max_epochs + 1):
        rng = np.random.default_rng(settings.shuffle_seed + epoch)
        order = rng.permutation(n_samples)
        model.train()
        total = 0.0
        for start in range(0, n_samples, settings.batch_size):
            idx = order[start:start + settings.batch_size]
            bx, by, bm = _padded_batch(inputs, targets, masks, idx)
            x = torch.from_numpy(bx).permute(0, 3, 1, 2)
            y = torch.from_numpy(by)
            m = torch.from_numpy(bm)
            optimizer.zero_grad()
            pred = model(x).permute(0, 2, 3, 1)
            loss = masked_dice_loss(pred, y, m)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
        epoch_loss = total / n_samples

        val = _mean_validation_dice(model, channels, val_subjects)
        record.epochs.append(epoch)
        record.train_loss.append(epoch_loss)
        record.val_dice.append(val)

        if val is not None and val > best_val:
            best_val = val
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            best_meta = (epoch, val)
            record.best_epoch = epoch

        if epoch_loss < best_loss - settings.improve_eps:
            best_loss = epoch_loss
            best_loss_epoch = epoch
        elif epoch - best_loss_epoch >= settings.patience:
            break

    record.stopped_epoch = record.epochs[-1]
    if best_state is None:
        # validation Dice was never defined; fall back to final weights
        best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        best_meta = (record.stopped_epoch, None)
        record.best_epoch = record.stopped_epoch

    weights = ModelWeights(config=model_cfg, state=best_state, channels=channels,
                           epoch=best_meta[0], val_dice=best_meta[1])
    return weights, record


def run_cross_validation(subjects, k=5, model_cfg=None, settings=None, seed=0):
    """Full k-fold run over preprocessed subjects.

    Returns a dict with the fold plan, per-fold weights and records, and
    one predicted BundleMaskSet per subject produced by the fold that
    held the subject out.
    """
    subjects = list(subjects)
    by_id = {s.subject_id: s for s in subjects}
    if len(by_id) != len(subjects):
        raise TrainingError("duplicate subject ids in cohort")
    if model_cfg is None:
        model_cfg = UNetConfig(out_channels=len(subjects[0].masks.channels))
    plan = make_folds(by_id.keys(), k, seed=seed)

    fold_weights = []
    fold_records = []
    predictions = {}
    for i in range(plan.k):
        train_ids = plan.train_subjects(i)
        val_ids = plan.validation_subjects(i)
        weights, record = train_fold([by_id[s] for s in train_ids],
                                     [by_id[s] for s in val_ids],
                                     model_cfg, settings)
        fold_weights.append(weights)
        fold_records.append(record)
        model = weights.build()
        for sid in val_ids:
            assert sid not in train_ids
            assert sid not in predictions
            predictions[sid] = infer_subject(model, weights.channels,
                                             by_id[sid].peaks)
    assert set(predictions) == set(by_id)
    return {
        "plan": plan,
        "weights": fold_weights,
        "records": fold_records,
        "predictions": predictions,
    }

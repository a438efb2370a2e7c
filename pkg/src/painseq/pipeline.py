"""Manifest-level training and evaluation orchestration.

Training units are the non-overlapping 300-frame segments of the train
split (frames of those segments for the ANN). Validation and test always
use the first 300 frames of every video; the ANN aggregates its per-frame
predictions with a majority vote.
"""

import logging

import numpy as np

from . import models as m
from .errors import DataError
from .evaluate import confusion, majority_vote, metrics
from .losses import weighted_ce_loss

logger = logging.getLogger(__name__)


def train_on_manifest(manifest, kind, config):
    """Train one model kind on a manifest; returns (model, history)."""
    units = m.training_units(manifest, "train")
    val_units, skipped = m.evaluation_units(manifest, "validation")
    if skipped:
        logger.warning("validation: %d short video(s) excluded: %s",
                       len(skipped), ", ".join(skipped))
    if not val_units:
        raise DataError("validation split has no usable videos")
    model = m.build_model(kind, config)
    if kind == "ann":
        train_set = m.frame_arrays(units, config.dtype)
        val_x, val_y = m.frame_arrays(val_units, config.dtype)

        def eval_fn(model, class_weights):
            # frame-level loss for early stopping, video-level accuracy
            probs, _ = model.forward(val_x, mode="infer")
            loss, _ = weighted_ce_loss(probs, val_y, class_weights)
            preds = [majority_vote(model.predict_frames(seq)) for seq, _ in val_units]
            truth = [label for _, label in val_units]
            return loss, float(np.mean(np.array(preds) == np.array(truth)))
    else:
        train_set = m.sequence_arrays(units, config.dtype)
        val_set = m.sequence_arrays(val_units, config.dtype)
        eval_fn = None

    if kind == "ann":
        _, history = m.train(model, train_set, (val_x, val_y), config, eval_fn=eval_fn)
    else:
        _, history = m.train(model, train_set, val_set, config)
    return model, history


def predict_video(model, kind, seq):
    """Video-level label for one 300-frame sequence."""
    if kind == "ann":
        return majority_vote(model.predict_frames(seq))
    return int(np.argmax(model.predict_sequence(seq)))


def evaluate_split(model, kind, manifest, split, model_name=None):
    """Apply the first-300-frames protocol and score a split.

    Returns (EvalReport, skipped sample ids).
    """
    units, skipped = m.evaluation_units(manifest, split)
    if skipped:
        logger.warning("%s: %d short video(s) excluded: %s",
                       split, len(skipped), ", ".join(skipped))
    if not units:
        raise DataError(f"split {split!r} has no usable videos")
    preds = [predict_video(model, kind, seq) for seq, _ in units]
    truth = [label for _, label in units]
    cm = confusion(np.array(preds), np.array(truth))
    name = model_name or ("Simple ANN + Voting" if kind == "ann" else "LSTM")
    return metrics(cm, model=name, split=split), skipped

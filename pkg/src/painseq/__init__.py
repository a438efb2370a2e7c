"""painseq: frozen-CNN feature extraction plus frame- and sequence-level
pain classifiers, trained from scratch with weighted cross-entropy and
Adadelta.
"""

from .data import FeatureSequence, Manifest, SynthConfig
from .errors import PainseqError
from .losses import ClassWeights
from .models import TrainConfig, build_lstm_model, build_simple_ann, train

__all__ = [
    "FeatureSequence", "Manifest", "SynthConfig", "PainseqError",
    "ClassWeights", "TrainConfig", "build_lstm_model", "build_simple_ann",
    "train",
]

__version__ = "0.1.0"

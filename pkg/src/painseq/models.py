"""The two classifiers and their shared training loop.

SimpleAnnModel predicts every frame independently (video label by majority
vote, see ``evaluate``); LstmModel classifies a 300-frame sequence. Both
train with weighted cross-entropy and Adadelta, mini-batches of 32, and
early stopping with best-epoch restoration.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import data as datamod
from .errors import ConfigError, DataError, ShapeError, TrainingError
from .layers import BatchNormLayer, DenseLayer, DropoutLayer, LstmLayer, softmax
from .losses import ClassWeights, weighted_ce_loss
from .optim import AdadeltaState, adadelta_step

logger = logging.getLogger(__name__)

SEQ_LEN = 300
FEATURE_DIM = 1024


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    lr: float = 1.0
    rho: float = 0.95
    epsilon: float = 1e-6
    dropout: float = 0.3
    seed: int = 0
    class_weight_mode: str = "inverse-frequency"
    early_stop_metric: str = "val_loss"
    precision: str = "f64"
    ann_wide_first: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience and max_epochs must be >= 1")
        if self.class_weight_mode not in ("inverse-frequency", "uniform"):
            raise ConfigError(f"unknown class_weight_mode {self.class_weight_mode!r}")
        if self.early_stop_metric not in ("val_loss", "val_accuracy"):
            raise ConfigError(f"unknown early_stop_metric {self.early_stop_metric!r}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @classmethod
    def from_file(cls, path):
        return cls(**parse_kv_config(path, cls))


def parse_kv_config(path, cls):
    """Parse a ``key = value`` config file against a dataclass's fields."""
    fields = {f.name: f.type for f in cls.__dataclass_fields__.values()}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in fields:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            kind = fields[key]
            try:
                if kind in ("int", int):
                    values[key] = int(raw)
                elif kind in ("float", float):
                    values[key] = float(raw)
                elif kind in ("bool", bool):
                    values[key] = raw.lower() in ("1", "true", "yes")
                else:
                    values[key] = raw
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0  # 1-based

    @property
    def epochs(self):
        return len(self.train_loss)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
            for i in range(self.epochs):
                writer.writerow([i + 1, repr(self.train_loss[i]),
                                 repr(self.val_loss[i]), repr(self.val_accuracy[i])])


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without improvement."""

    def __init__(self, patience, mode="min"):
        if mode not in ("min", "max"):
            raise ConfigError(f"unknown early stopping mode {mode!r}")
        self.patience = patience
        self.mode = mode
        self.best = None
        self.best_epoch = 0
        self.stale = 0
        self.epoch = 0

    def update(self, value):
        """Record one epoch's metric; returns True if it improved."""
        self.epoch += 1
        improved = (
            self.best is None
            or (self.mode == "min" and value < self.best)
            or (self.mode == "max" and value > self.best)
        )
        if improved:
            self.best = value
            self.best_epoch = self.epoch
            self.stale = 0
        else:
            self.stale += 1
        return improved

    @property
    def should_stop(self):
        return self.stale >= self.patience


class SimpleAnnModel:
    """Dense stack 1024 -> 128 -> 32 -> 3 with dropout between layers.

    The published layer widths (1024, 128, 32, 3) are read as the input
    width plus three trainable layers; ``wide_first=True`` builds the
    alternative reading with a trainable 1024-unit first layer.
    """

    def __init__(self, seed=0, input_dim=FEATURE_DIM, hidden=(128, 32),
                 wide_first=False, dropout=0.3, dtype=np.float64):
        rng = np.random.default_rng(seed)
        widths = [input_dim]
        if wide_first:
            widths.append(input_dim)
        widths += list(hidden) + [datamod.NUM_CLASSES]
        self.layers = []
        for i in range(len(widths) - 1):
            last = i == len(widths) - 2
            self.layers.append(DenseLayer.init(
                rng, widths[i], widths[i + 1],
                activation="softmax" if last else "relu", dtype=dtype))
        self.dropout = DropoutLayer(dropout)
        self.input_dim = input_dim

    has_batchnorm = False

    def parameters(self):
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"dense{i}.weights"] = layer.weights
            params[f"dense{i}.bias"] = layer.bias
        return params

    def state_dict(self):
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state):
        for name, value in self.parameters().items():
            if name not in state:
                raise ShapeError(f"checkpoint missing parameter {name!r}")
            if state[name].shape != value.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {state[name].shape} "
                    f"!= model shape {value.shape}")
            value[...] = state[name]

    def forward(self, x, mode="infer", rng=None):
        x = np.asarray(x)
        caches = []
        h = x
        for layer in self.layers[:-1]:
            h, cache = layer.forward(h)
            h, mask = self.dropout.forward(h, mode, rng)
            caches.append((cache, mask))
        probs, last_cache = self.layers[-1].forward(h)
        caches.append((last_cache, None))
        return probs, caches

    def loss_and_grads(self, x, y, class_weights, mode="train", rng=None):
        probs, caches = self.forward(x, mode=mode, rng=rng)
        loss, grad_logits = weighted_ce_loss(probs, y, class_weights)
        grads = {}
        upstream = grad_logits
        for i in range(len(self.layers) - 1, -1, -1):
            cache, mask = caches[i]
            if i < len(self.layers) - 1:
                upstream = self.dropout.backward(mask, upstream)
            upstream, g_w, g_b = self.layers[i].backward(cache, upstream)
            grads[f"dense{i}.weights"] = g_w
            grads[f"dense{i}.bias"] = g_b
        return loss, grads

    def predict_frames(self, seq):
        """Per-frame class probabilities with dropout off."""
        values = seq.values if isinstance(seq, datamod.FeatureSequence) else np.asarray(seq)
        if values.ndim != 2 or values.shape[1] != self.input_dim:
            raise ShapeError(f"expected (frames, {self.input_dim}), got {values.shape}")
        probs, _ = self.forward(values, mode="infer")
        return probs


class LstmModel:
    """Input batch norm, LSTM(32), LSTM(16), dense head on the final state.

    Batch norm and dropout follow each LSTM layer; the batch norms on
    sequence outputs treat batch and time jointly.
    """

    def __init__(self, seed=0, input_dim=FEATURE_DIM, units1=32, units2=16,
                 hidden=16, seq_len=SEQ_LEN, dropout=0.3, dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.bn_in = BatchNormLayer(input_dim, dtype=dtype)
        self.lstm1 = LstmLayer.init(rng, input_dim, units1, dtype=dtype)
        self.bn1 = BatchNormLayer(units1, dtype=dtype)
        self.lstm2 = LstmLayer.init(rng, units1, units2, dtype=dtype)
        self.bn2 = BatchNormLayer(units2, dtype=dtype)
        self.dense1 = DenseLayer.init(rng, units2, hidden, activation="relu", dtype=dtype)
        self.out = DenseLayer.init(rng, hidden, datamod.NUM_CLASSES,
                                   activation="softmax", dtype=dtype)
        self.dropout = DropoutLayer(dropout)
        self.input_dim = input_dim
        self.seq_len = seq_len

    has_batchnorm = True

    def parameters(self):
        p = {"bn_in.gamma": self.bn_in.gamma, "bn_in.beta": self.bn_in.beta}
        for name, lstm in (("lstm1", self.lstm1), ("lstm2", self.lstm2)):
            p[f"{name}.w_x"] = lstm.w_x
            p[f"{name}.w_h"] = lstm.w_h
            p[f"{name}.bias"] = lstm.bias
        p["bn1.gamma"] = self.bn1.gamma
        p["bn1.beta"] = self.bn1.beta
        p["bn2.gamma"] = self.bn2.gamma
        p["bn2.beta"] = self.bn2.beta
        p["dense1.weights"] = self.dense1.weights
        p["dense1.bias"] = self.dense1.bias
        p["out.weights"] = self.out.weights
        p["out.bias"] = self.out.bias
        return p

    def _running_stats(self):
        return {
            "bn_in.running_mean": self.bn_in.running_mean,
            "bn_in.running_var": self.bn_in.running_var,
            "bn1.running_mean": self.bn1.running_mean,
            "bn1.running_var": self.bn1.running_var,
            "bn2.running_mean": self.bn2.running_mean,
            "bn2.running_var": self.bn2.running_var,
        }

    def state_dict(self):
        state = {k: v.copy() for k, v in self.parameters().items()}
        state.update({k: v.copy() for k, v in self._running_stats().items()})
        return state

    def load_state_dict(self, state):
        for name, value in {**self.parameters(), **self._running_stats()}.items():
            if name not in state:
                raise ShapeError(f"checkpoint missing parameter {name!r}")
            if state[name].shape != value.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {state[name].shape} "
                    f"!= model shape {value.shape}")
        for name, value in self.parameters().items():
            value[...] = state[name]
        # running stats are plain attributes, not parameter views
        self.bn_in.running_mean = state["bn_in.running_mean"].copy()
        self.bn_in.running_var = state["bn_in.running_var"].copy()
        self.bn1.running_mean = state["bn1.running_mean"].copy()
        self.bn1.running_var = state["bn1.running_var"].copy()
        self.bn2.running_mean = state["bn2.running_mean"].copy()
        self.bn2.running_var = state["bn2.running_var"].copy()

    def forward(self, x, mode="infer", rng=None):
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ShapeError(f"expected (batch, time, {self.input_dim}), got {x.shape}")
        h, c_bn_in = self.bn_in.forward(x, mode)
        seq1, _, c_lstm1 = self.lstm1.forward(h)
        h, c_bn1 = self.bn1.forward(seq1, mode)
        h, mask1 = self.dropout.forward(h, mode, rng)
        seq2, _, c_lstm2 = self.lstm2.forward(h)
        last = seq2[:, -1, :]
        h, c_bn2 = self.bn2.forward(last, mode)
        h, mask2 = self.dropout.forward(h, mode, rng)
        h, c_dense1 = self.dense1.forward(h)
        probs, c_out = self.out.forward(h)
        caches = (c_bn_in, c_lstm1, c_bn1, mask1, c_lstm2, c_bn2, mask2, c_dense1, c_out)
        return probs, caches

    def loss_and_grads(self, x, y, class_weights, mode="train", rng=None):
        probs, caches = self.forward(x, mode=mode, rng=rng)
        c_bn_in, c_lstm1, c_bn1, mask1, c_lstm2, c_bn2, mask2, c_dense1, c_out = caches
        loss, grad_logits = weighted_ce_loss(probs, y, class_weights)
        grads = {}
        up, grads["out.weights"], grads["out.bias"] = self.out.backward(c_out, grad_logits)
        up, grads["dense1.weights"], grads["dense1.bias"] = self.dense1.backward(c_dense1, up)
        up = self.dropout.backward(mask2, up)
        up, grads["bn2.gamma"], grads["bn2.beta"] = self.bn2.backward(c_bn2, up)
        # gradient flows into the second LSTM only through its last timestep
        batch, time = x.shape[0], x.shape[1]
        up_seq = np.zeros((batch, time, self.lstm2.units), dtype=up.dtype)
        up_seq[:, -1, :] = up
        up, lstm2_grads = self.lstm2.backward(c_lstm2, up_seq)
        for k, v in lstm2_grads.items():
            grads[f"lstm2.{k}"] = v
        up = self.dropout.backward(mask1, up)
        up, grads["bn1.gamma"], grads["bn1.beta"] = self.bn1.backward(c_bn1, up)
        up, lstm1_grads = self.lstm1.backward(c_lstm1, up)
        for k, v in lstm1_grads.items():
            grads[f"lstm1.{k}"] = v
        _, grads["bn_in.gamma"], grads["bn_in.beta"] = self.bn_in.backward(c_bn_in, up)
        return loss, grads

    def predict_sequence(self, seq):
        """Probability row for one sequence of exactly ``seq_len`` frames."""
        values = seq.values if isinstance(seq, datamod.FeatureSequence) else np.asarray(seq)
        if values.ndim != 2 or values.shape[1] != self.input_dim:
            raise ShapeError(f"expected ({self.seq_len}, {self.input_dim}), got {values.shape}")
        if values.shape[0] != self.seq_len:
            raise DataError(
                f"sequence has {values.shape[0]} frames, model expects {self.seq_len}")
        probs, _ = self.forward(values[None, :, :], mode="infer")
        return probs[0]


def build_simple_ann(seed, wide_first=False, dropout=0.3, dtype=np.float64):
    return SimpleAnnModel(seed=seed, wide_first=wide_first, dropout=dropout, dtype=dtype)


def build_lstm_model(seed, dropout=0.3, dtype=np.float64):
    return LstmModel(seed=seed, dropout=dropout, dtype=dtype)


def training_units(manifest, split="train", window=SEQ_LEN):
    """All non-overlapping 10 s segments of a split, with labels."""
    units = []
    for entry in manifest.split(split):
        seq = manifest.load_sequence(entry)
        for segment in datamod.segment_sequence(seq, window, window):
            units.append((segment, entry.label))
    if not units:
        raise DataError(f"split {split!r} yields no training segments")
    return units


def evaluation_units(manifest, split, window=SEQ_LEN):
    """First 300 frames of every video in a split; short videos are
    reported to the caller via the skipped list."""
    units, skipped = [], []
    for entry in manifest.split(split):
        seq = manifest.load_sequence(entry)
        try:
            units.append((datamod.take_first_n(seq, window), entry.label))
        except DataError:
            skipped.append(entry.sample_id)
    return units, skipped


def frame_arrays(units, dtype=np.float64):
    """Flatten (segment, label) units into per-frame training arrays."""
    xs = np.concatenate([seq.values for seq, _ in units]).astype(dtype, copy=False)
    ys = np.concatenate([np.full(seq.frames, label, dtype=np.int64) for seq, label in units])
    return xs, ys


def sequence_arrays(units, dtype=np.float64):
    xs = np.stack([seq.values for seq, _ in units]).astype(dtype, copy=False)
    ys = np.array([label for _, label in units], dtype=np.int64)
    return xs, ys


def _default_eval_fn(model, val_x, val_y, class_weights):
    probs, _ = model.forward(val_x, mode="infer")
    loss, _ = weighted_ce_loss(probs, val_y, class_weights)
    accuracy = float(np.mean(probs.argmax(axis=1) == val_y))
    return loss, accuracy


def train(model, train_set, val_set, config, eval_fn=None):
    """Train with Adadelta + early stopping; returns (best state, history).

    ``train_set``/``val_set`` are (X, y) arrays whose leading axis is the
    training unit (frames for the ANN, sequences for the LSTM). The best
    epoch's parameters are restored into the model before returning.
    ``eval_fn(model, class_weights)`` may override validation; it returns
    (loss, accuracy).
    """
    train_x, train_y = train_set
    if train_x.shape[0] == 0:
        raise DataError("empty training set")
    if config.class_weight_mode == "inverse-frequency":
        counts = np.bincount(train_y, minlength=datamod.NUM_CLASSES)
        class_weights = ClassWeights.from_counts(counts)
    else:
        class_weights = ClassWeights.uniform()
    if eval_fn is None:
        val_x, val_y = val_set
        if val_x.shape[0] == 0:
            raise DataError("empty validation set")
        eval_fn = lambda m, w: _default_eval_fn(m, val_x, val_y, w)

    rng = np.random.default_rng(config.seed)
    states = {
        name: AdadeltaState(p.shape, rho=config.rho, epsilon=config.epsilon,
                            lr=config.lr, dtype=p.dtype)
        for name, p in model.parameters().items()
    }
    stopper = EarlyStopping(config.patience,
                            mode="min" if config.early_stop_metric == "val_loss" else "max")
    history = TrainHistory()
    best_state = model.state_dict()
    n = train_x.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if idx.size < 2 and model.has_batchnorm:
                logger.warning("epoch %d: skipping degenerate batch of %d sample(s)",
                               epoch, idx.size)
                continue
            loss, grads = model.loss_and_grads(
                train_x[idx], train_y[idx], class_weights, mode="train", rng=rng)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}")
            for name, param in model.parameters().items():
                adadelta_step(param, grads[name], states[name], name=name)
            epoch_losses.append(loss)
        val_loss, val_accuracy = eval_fn(model, class_weights)
        history.train_loss.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        history.val_loss.append(float(val_loss))
        history.val_accuracy.append(float(val_accuracy))
        metric = val_loss if config.early_stop_metric == "val_loss" else val_accuracy
        if stopper.update(metric):
            best_state = model.state_dict()
        if stopper.should_stop:
            history.stop_reason = "early_stop"
            break
    else:
        history.stop_reason = "max_epochs"
    history.best_epoch = stopper.best_epoch
    model.load_state_dict(best_state)
    return best_state, history


def predict_frames(model, seq):
    return model.predict_frames(seq)


def predict_sequence(model, seq):
    return model.predict_sequence(seq)


MODEL_KINDS = ("ann", "lstm")


def build_model(kind, config):
    if kind == "ann":
        return build_simple_ann(config.seed, wide_first=config.ann_wide_first,
                                dropout=config.dropout, dtype=config.dtype)
    if kind == "lstm":
        return build_lstm_model(config.seed, dropout=config.dropout, dtype=config.dtype)
    raise ConfigError(f"unknown model kind {kind!r}")


def save_model(model, path):
    from .checkpoint import write_checkpoint
    write_checkpoint(path, model.state_dict())


def load_model(kind, path, config=None):
    from .checkpoint import read_checkpoint
    config = config or TrainConfig()
    state = read_checkpoint(path)
    dtype = next(iter(state.values())).dtype  # lossless load
    if kind == "ann":
        wide_first = any(s.shape == (FEATURE_DIM, FEATURE_DIM)
                         for n, s in state.items() if n.endswith("weights"))
        model = build_simple_ann(config.seed, wide_first=wide_first,
                                 dropout=config.dropout, dtype=dtype)
    elif kind == "lstm":
        model = build_lstm_model(config.seed, dropout=config.dropout, dtype=dtype)
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    model.load_state_dict(state)
    return model

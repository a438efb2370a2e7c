"""Dataset layer: FSEQ files, manifests, segmentation, synthetic data.

Labels are encoded 0 = NoPain, 1 = LowPain, 2 = HighPain everywhere.
"""

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

logger = logging.getLogger(__name__)

LABEL_NAMES = ("NoPain", "LowPain", "HighPain")
NUM_CLASSES = 3
SPLITS = ("train", "validation", "test")

FSEQ_MAGIC = b"FSEQ"
FSEQ_VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class FeatureSequence:
    """Time-ordered (frames, dim) feature matrix for one video or segment."""

    values: np.ndarray
    fps: float = 30.0
    source_id: str = ""
    participant_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise DataError(f"feature sequence needs a (frames, dim) matrix, got {self.values.shape}")
        if self.fps <= 0:
            raise DataError(f"fps must be positive, got {self.fps}")

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


def write_fseq(seq, path):
    """Binary layout: magic, version u16, dtype u8, dim u32, frames u32,
    fps f32, 8 reserved bytes, then row-major little-endian values."""
    dtype = np.dtype(seq.values.dtype)
    if dtype not in _TAG_FOR:
        raise FormatError(f"unsupported FSEQ dtype {dtype}")
    header = FSEQ_MAGIC + struct.pack(
        "<HBIIf8x", FSEQ_VERSION, _TAG_FOR[dtype], seq.dim, seq.frames, seq.fps
    )
    body = np.ascontiguousarray(seq.values, dtype=dtype.newbyteorder("<")).tobytes()
    Path(path).write_bytes(header + body)


def read_fseq(path):
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != FSEQ_MAGIC:
        raise FormatError(f"{path}: bad magic, not an FSEQ file", offset=0)
    header_fmt = "<HBIIf8x"
    header_size = 4 + struct.calcsize(header_fmt)
    if len(data) < header_size:
        raise FormatError(f"{path}: truncated header", offset=len(data))
    version, tag, dim, frames, fps = struct.unpack(header_fmt, data[4:header_size])
    if version != FSEQ_VERSION:
        raise FormatError(f"{path}: unsupported FSEQ version {version}", offset=4)
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"{path}: unknown dtype tag {tag}", offset=6)
    if dim < 1 or frames < 1:
        raise FormatError(f"{path}: invalid header dim={dim} frames={frames}", offset=7)
    dtype = _DTYPE_TAGS[tag]
    expected = header_size + frames * dim * dtype.itemsize
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {frames}x{dim} values, got {len(data)}",
            offset=min(len(data), expected),
        )
    values = np.frombuffer(data[header_size:], dtype=dtype).reshape(frames, dim).copy()
    return FeatureSequence(values, fps=float(fps), source_id=path.stem)


def segment_sequence(seq, window=300, hop=300):
    """Split into consecutive windows; a trailing partial window is dropped.

    With hop == window the segments are non-overlapping and their
    concatenation equals the first floor(frames/window)*window frames.
    """
    if window < 1 or hop < 1:
        raise ConfigError(f"window {window} and hop {hop} must be >= 1")
    if seq.frames < window:
        logger.info("sequence %s has %d frames < window %d: no segments",
                    seq.source_id, seq.frames, window)
        return []
    segments = []
    start = 0
    index = 0
    while start + window <= seq.frames:
        segments.append(FeatureSequence(
            seq.values[start:start + window],
            fps=seq.fps,
            source_id=f"{seq.source_id}#seg{index}",
            participant_id=seq.participant_id,
        ))
        start += hop
        index += 1
    return segments


def take_first_n(seq, n=300):
    """First n frames of a video, for the validation/test protocol."""
    if seq.frames < n:
        raise DataError(f"sample {seq.source_id!r} has {seq.frames} frames, needs {n}")
    return FeatureSequence(seq.values[:n], fps=seq.fps,
                           source_id=seq.source_id, participant_id=seq.participant_id)


@dataclass
class ManifestEntry:
    sample_id: str
    participant_id: str
    label: int
    split: str
    path: Path


@dataclass
class Manifest:
    entries: list = field(default_factory=list)

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def load_sequence(self, entry):
        seq = read_fseq(entry.path)
        seq.source_id = entry.sample_id
        seq.participant_id = entry.participant_id
        return seq


def load_manifest(path):
    """CSV with header sample_id,participant_id,label,split,path.

    Paths are resolved relative to the manifest's directory. Rejects
    duplicate sample ids and participants that span two splits.
    """
    path = Path(path)
    base = path.parent
    entries = []
    seen_ids = set()
    participant_splits = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"sample_id", "participant_id", "label", "split", "path"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(f"{path}: manifest header must contain {sorted(required)}")
        for row in reader:
            sid = row["sample_id"]
            if sid in seen_ids:
                raise DataError(f"duplicate sample_id {sid!r}")
            seen_ids.add(sid)
            try:
                label = int(row["label"])
            except ValueError:
                label = -1
            if label not in (0, 1, 2):
                raise DataError(f"sample {sid!r}: invalid label {row['label']!r}")
            split = row["split"]
            if split not in SPLITS:
                raise DataError(f"sample {sid!r}: unknown split {split!r}")
            pid = row["participant_id"]
            prev = participant_splits.setdefault(pid, split)
            if prev != split:
                raise DataError(
                    f"participant {pid!r} appears in both {prev!r} and {split!r} splits"
                )
            payload = base / row["path"]
            if not payload.exists():
                raise DataError(f"sample {sid!r}: payload {payload} not found")
            entries.append(ManifestEntry(sid, pid, label, split, payload))
    return Manifest(entries)


def save_manifest(manifest, path):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "participant_id", "label", "split", "path"])
        for e in manifest.entries:
            rel = Path(e.path)
            try:
                rel = rel.relative_to(path.parent)
            except ValueError:
                pass
            writer.writerow([e.sample_id, e.participant_id, e.label, e.split, rel.as_posix()])


@dataclass
class SynthConfig:
    """Synthetic dataset generator settings.

    Features are drawn as orthogonal class mean directions plus a
    participant offset and per-frame temporal noise, so the classes are
    separable by construction and a trained model can be sanity-checked
    end to end.
    """

    train_participants: int = 12
    validation_participants: int = 4
    test_participants: int = 4
    repetitions: int = 2
    dim: int = 1024
    fps: float = 30.0
    nopain_frames: int = 1800
    pain_frames: int = 300
    mean_scale: float = 1.0
    noise_scale: float = 0.25
    drift_scale: float = 0.05
    participant_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.train_participants, self.validation_participants,
               self.test_participants, self.repetitions) < 1:
            raise ConfigError("all participant/repetition counts must be >= 1")
        if self.noise_scale < 0 or self.drift_scale < 0:
            raise ConfigError("noise and drift scales must be non-negative")
        if self.dim < NUM_CLASSES:
            raise ConfigError(f"dim must be at least {NUM_CLASSES}")


def _class_means(config):
    # Orthogonal one-hot block directions, one per class.
    means = np.zeros((NUM_CLASSES, config.dim))
    block = config.dim // NUM_CLASSES
    for c in range(NUM_CLASSES):
        means[c, c * block:(c + 1) * block] = config.mean_scale
    return means


def synth_dataset(config, out_dir):
    """Generate FSEQ files plus a manifest under ``out_dir``.

    Per participant: one ~60 s no-pain sequence and ``repetitions``
    10 s sequences per pain class. Deterministic per seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    means = _class_means(config)
    entries = []
    split_sizes = (("train", config.train_participants),
                   ("validation", config.validation_participants),
                   ("test", config.test_participants))
    pidx = 0
    for split, count in split_sizes:
        for _ in range(count):
            pid = f"P{pidx:03d}"
            pidx += 1
            offset = rng.normal(0.0, config.participant_scale, size=config.dim)
            samples = [(0, config.nopain_frames, f"{pid}_nopain")]
            for label in (1, 2):
                for rep in range(config.repetitions):
                    samples.append((label, config.pain_frames, f"{pid}_{LABEL_NAMES[label].lower()}_{rep:02d}"))
            for label, frames, sid in samples:
                drift = rng.normal(0.0, config.drift_scale, size=config.dim)
                t = np.linspace(0.0, 1.0, frames)[:, None]
                noise = rng.normal(0.0, config.noise_scale, size=(frames, config.dim))
                values = means[label] + offset + t * drift + noise
                seq = FeatureSequence(values.astype(np.float32), fps=config.fps,
                                      source_id=sid, participant_id=pid)
                fname = f"{sid}.fseq"
                write_fseq(seq, out_dir / fname)
                entries.append(ManifestEntry(sid, pid, label, split, out_dir / fname))
    manifest = Manifest(entries)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest


def dataset_counts(manifest, split="train", unit="sequence", window=300):
    """Per-class counts of training units after segmentation.

    ``unit`` is "sequence" (10 s segments) or "frame" (segment frames).
    """
    if unit not in ("sequence", "frame"):
        raise ConfigError(f"unknown unit {unit!r}")
    counts = np.zeros(NUM_CLASSES, dtype=np.int64)
    entries = manifest.split(split)
    if not entries:
        raise DataError(f"split {split!r} is empty")
    for entry in entries:
        seq = manifest.load_sequence(entry)
        n_segments = seq.frames // window
        counts[entry.label] += n_segments * (window if unit == "frame" else 1)
    if np.any(counts == 0):
        empty = [LABEL_NAMES[c] for c in range(NUM_CLASSES) if counts[c] == 0]
        raise DataError(f"no training units for class(es) {empty}")
    return counts

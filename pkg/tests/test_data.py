import numpy as np
import pytest

from painseq.data import (FeatureSequence, Manifest, SynthConfig,
                          dataset_counts, load_manifest, read_fseq, save_manifest,
                          segment_sequence, synth_dataset, take_first_n, write_fseq)
from painseq.errors import ConfigError, DataError, FormatError


def make_seq(frames, dim=4, seed=0, dtype=np.float32, **kw):
    rng = np.random.default_rng(seed)
    return FeatureSequence(rng.normal(size=(frames, dim)).astype(dtype), **kw)


class TestFseqFormat:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_roundtrip_bit_exact(self, tmp_path, dtype):
        seq = make_seq(300, 1024 if dtype == np.float32 else 16, dtype=dtype)
        path = tmp_path / "x.fseq"
        write_fseq(seq, path)
        back = read_fseq(path)
        assert back.values.dtype == dtype
        assert np.array_equal(back.values.view(np.uint8), seq.values.view(np.uint8))
        assert back.fps == seq.fps

    def test_truncation_detected_with_offset(self, tmp_path):
        seq = make_seq(300, 8)
        path = tmp_path / "x.fseq"
        write_fseq(seq, path)
        data = path.read_bytes()
        path.write_bytes(data[:-8 * 4])  # drop part of the last frame
        with pytest.raises(FormatError, match="byte offset"):
            read_fseq(path)

    def test_zero_dim_header_rejected(self, tmp_path):
        seq = make_seq(2, 3)
        path = tmp_path / "x.fseq"
        write_fseq(seq, path)
        raw = bytearray(path.read_bytes())
        raw[7:11] = (0).to_bytes(4, "little")  # dim field
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="invalid header"):
            read_fseq(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.fseq"
        path.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNK")
        with pytest.raises(FormatError, match="magic"):
            read_fseq(path)


class TestSegmentation:
    def test_60s_video_yields_6_segments(self):
        seq = make_seq(1800)
        segments = segment_sequence(seq, 300, 300)
        assert len(segments) == 6
        assert all(s.frames == 300 for s in segments)

    def test_trailing_partial_dropped(self):
        segments = segment_sequence(make_seq(1650), 300, 300)
        assert len(segments) == 5

    def test_short_sequence_yields_empty_list(self):
        assert segment_sequence(make_seq(299), 300, 300) == []

    def test_concatenation_equals_prefix(self):
        seq = make_seq(1234, 6)
        segments = segment_sequence(seq, 300, 300)
        joined = np.concatenate([s.values for s in segments])
        assert np.array_equal(joined, seq.values[: 4 * 300])

    def test_invalid_window_rejected(self):
        with pytest.raises(ConfigError):
            segment_sequence(make_seq(10), 0, 1)


class TestTakeFirstN:
    def test_450_frame_video(self):
        seq = make_seq(450)
        head = take_first_n(seq, 300)
        assert head.frames == 300
        assert np.array_equal(head.values, seq.values[:300])

    def test_exact_length_is_identity(self):
        seq = make_seq(300)
        assert np.array_equal(take_first_n(seq, 300).values, seq.values)

    def test_short_video_names_sample(self):
        seq = make_seq(200, source_id="vid42")
        with pytest.raises(DataError, match="vid42"):
            take_first_n(seq, 300)


def write_manifest(tmp_path, rows):
    lines = ["sample_id,participant_id,label,split,path"]
    lines += [",".join(str(v) for v in row) for row in rows]
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestManifest:
    def _payload(self, tmp_path, name="a.fseq"):
        write_fseq(make_seq(10), tmp_path / name)
        return name

    def test_well_formed_three_rows(self, tmp_path):
        p = self._payload(tmp_path)
        path = write_manifest(tmp_path, [
            ("s1", "P01", 0, "train", p),
            ("s2", "P02", 1, "validation", p),
            ("s3", "P03", 2, "test", p),
        ])
        manifest = load_manifest(path)
        assert len(manifest.entries) == 3
        assert [e.label for e in manifest.entries] == [0, 1, 2]

    def test_participant_leak_rejected(self, tmp_path):
        p = self._payload(tmp_path)
        path = write_manifest(tmp_path, [
            ("s1", "P07", 0, "train", p),
            ("s2", "P07", 1, "test", p),
        ])
        with pytest.raises(DataError, match="P07"):
            load_manifest(path)

    def test_invalid_label_rejected(self, tmp_path):
        p = self._payload(tmp_path)
        path = write_manifest(tmp_path, [("s1", "P01", 4, "train", p)])
        with pytest.raises(DataError, match="label"):
            load_manifest(path)

    def test_duplicate_sample_id_rejected(self, tmp_path):
        p = self._payload(tmp_path)
        path = write_manifest(tmp_path, [
            ("s1", "P01", 0, "train", p),
            ("s1", "P01", 1, "train", p),
        ])
        with pytest.raises(DataError, match="duplicate"):
            load_manifest(path)

    def test_missing_payload_rejected(self, tmp_path):
        path = write_manifest(tmp_path, [("s1", "P01", 0, "train", "nope.fseq")])
        with pytest.raises(DataError, match="not found"):
            load_manifest(path)

    def test_save_load_roundtrip(self, tmp_path):
        p = self._payload(tmp_path)
        manifest = load_manifest(write_manifest(tmp_path, [("s1", "P01", 0, "train", p)]))
        out = tmp_path / "again.csv"
        save_manifest(manifest, out)
        again = load_manifest(out)
        assert [(e.sample_id, e.label, e.split) for e in again.entries] == [("s1", 0, "train")]


class TestSynthDataset:
    def small_config(self, **kw):
        defaults = dict(train_participants=2, validation_participants=1,
                        test_participants=1, repetitions=2, dim=6,
                        nopain_frames=900, seed=5)
        defaults.update(kw)
        return SynthConfig(**defaults)

    def test_deterministic_regeneration(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        synth_dataset(self.small_config(), a)
        synth_dataset(self.small_config(), b)
        files_a = sorted(p.name for p in a.iterdir())
        assert files_a == sorted(p.name for p in b.iterdir())
        for name in files_a:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_zero_noise_gives_identical_frames(self, tmp_path):
        config = self.small_config(noise_scale=0.0, drift_scale=0.0)
        manifest = synth_dataset(config, tmp_path)
        seq = manifest.load_sequence(manifest.entries[0])
        assert np.all(seq.values == seq.values[0])

    def test_splits_have_disjoint_participants(self, tmp_path):
        manifest = synth_dataset(self.small_config(), tmp_path)
        by_split = {s: {e.participant_id for e in manifest.split(s)}
                    for s in ("train", "validation", "test")}
        assert not (by_split["train"] & by_split["validation"])
        assert not (by_split["train"] & by_split["test"])
        assert not (by_split["validation"] & by_split["test"])

    def test_manifest_loads_back(self, tmp_path):
        synth_dataset(self.small_config(), tmp_path)
        manifest = load_manifest(tmp_path / "manifest.csv")
        assert manifest.split("train")


class TestDatasetCounts:
    def test_paper_protocol_sequence_counts(self, tmp_path):
        # 1 participant: 1800-frame no-pain video, 12 reps per pain class
        config = SynthConfig(train_participants=1, validation_participants=1,
                             test_participants=1, repetitions=12, dim=6,
                             nopain_frames=1800, seed=0)
        manifest = synth_dataset(config, tmp_path)
        counts = dataset_counts(manifest, split="train", unit="sequence")
        assert counts.tolist() == [6, 12, 12]

    def test_frame_level_counts(self, tmp_path):
        config = SynthConfig(train_participants=1, validation_participants=1,
                             test_participants=1, repetitions=12, dim=6,
                             nopain_frames=1800, seed=0)
        manifest = synth_dataset(config, tmp_path)
        counts = dataset_counts(manifest, split="train", unit="frame")
        assert counts.tolist() == [1800, 3600, 3600]

    def test_balanced_synthetic_counts_equal_for_pain_classes(self, tmp_path):
        manifest = synth_dataset(SynthConfig(
            train_participants=2, validation_participants=1, test_participants=1,
            repetitions=3, dim=6, nopain_frames=900, seed=1), tmp_path)
        counts = dataset_counts(manifest, split="train", unit="sequence")
        assert counts[1] == counts[2] == 6

    def test_empty_class_rejected(self, tmp_path):
        config = SynthConfig(train_participants=1, validation_participants=1,
                             test_participants=1, repetitions=1, dim=6,
                             nopain_frames=200, seed=0)  # no-pain too short
        manifest = synth_dataset(config, tmp_path)
        with pytest.raises(DataError, match="NoPain"):
            dataset_counts(manifest, split="train", unit="sequence")

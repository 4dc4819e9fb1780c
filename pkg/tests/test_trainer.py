import json

import numpy as np
import pytest

from ttsembed.errors import DataError, NumericError
from ttsembed.model import ModelConfig, TTSModel
from ttsembed.model.checkpoint import load_checkpoint, save_checkpoint
from ttsembed.model.trainer import (Example, load_train_state, save_train_state,
                                    train)


def tiny_config(w=0.0):
    return ModelConfig(
        text_hidden=4, embedding_dim=3, n_mels=5, decoder_hidden=4,
        attention_dim=3, location_filters=2, location_kernel=3,
        resnet_channels=(2, 3), lde_components=2, reduction_factor=2,
        prenet_units=3, text_conv_layers=2, text_conv_kernel=3,
        spk_loss_weight=w)


def tiny_examples(n=6, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        t = int(rng.integers(5, 9))
        out.append(Example(
            utt_id=f"u{i}",
            token_ids=[int(x) for x in rng.integers(1, 6, size=4)],
            mel=rng.normal(size=(t, 5)) * 0.5,
            speaker_index=i % 2))
    return out


class TestTrain:
    def test_same_seed_identical_logs(self):
        ex = tiny_examples()
        _, log1 = train(ex, tiny_config(), vocab_size=6, epochs=2, batch_size=3,
                        seed=7)
        _, log2 = train(ex, tiny_config(), vocab_size=6, epochs=2, batch_size=3,
                        seed=7)
        assert log1 == log2

    def test_loss_log_schema_and_length(self, tmp_path):
        ex = tiny_examples()
        _, log = train(ex, tiny_config(), vocab_size=6, epochs=2, batch_size=3,
                       seed=0, out_dir=tmp_path)
        assert len(log) == 4  # 2 epochs x ceil(6/3) batches
        for entry in log:
            assert set(entry) == {"step", "l1", "l2", "stop_bce", "l_spk", "total"}
        lines = (tmp_path / "loss_log.jsonl").read_text().splitlines()
        assert len(lines) == len(log)
        assert json.loads(lines[0]) == log[0]

    def test_zero_weight_never_touches_classifier(self):
        ex = tiny_examples()
        model, _ = train(ex, tiny_config(w=0.0), vocab_size=6, epochs=1, seed=0)
        assert "proj" not in model.params

    def test_zero_weight_ignores_speaker_labels(self):
        ex = tiny_examples()
        for e in ex:
            e.speaker_index = None
        _, log = train(ex, tiny_config(w=0.0), vocab_size=6, epochs=1, seed=0)
        assert all(entry["l_spk"] == 0.0 for entry in log)

    def test_speaker_loss_requires_labels(self):
        ex = tiny_examples()
        ex[0].speaker_index = None
        with pytest.raises(DataError):
            train(ex, tiny_config(w=0.03), vocab_size=6, epochs=1, seed=0)

    def test_resume_reproduces_trajectory(self, tmp_path):
        ex = tiny_examples()
        cfg = tiny_config(w=0.03)
        _, full_log = train(ex, cfg, vocab_size=6, epochs=4, batch_size=3, seed=1)

        d = tmp_path / "run"
        _, log_a = train(ex, cfg, vocab_size=6, epochs=2, batch_size=3, seed=1,
                         out_dir=d)
        model = load_checkpoint(d / "checkpoint.bin")
        state, epochs_done = load_train_state(d / "train_state.npz")
        _, log_b = train(ex, cfg, vocab_size=6, epochs=4, batch_size=3, seed=1,
                         out_dir=d, model=model, optimizer_state=state,
                         epochs_done=epochs_done)
        resumed = log_a + log_b
        assert len(resumed) == len(full_log)
        for got, want in zip(resumed, full_log):
            assert got["step"] == want["step"]
            assert abs(got["total"] - want["total"]) < 1e-9

    def test_max_steps_cap(self):
        ex = tiny_examples()
        _, log = train(ex, tiny_config(), vocab_size=6, epochs=50, batch_size=2,
                       seed=0, max_steps=5)
        assert len(log) == 5

    def test_empty_examples_rejected(self):
        with pytest.raises(DataError):
            train([], tiny_config(), vocab_size=6)

    def test_loss_decreases(self):
        ex = tiny_examples(n=4)
        _, log = train(ex, tiny_config(), vocab_size=6, epochs=100, batch_size=4,
                       seed=0, learning_rate=1e-2)
        assert log[-1]["total"] < 0.5 * log[0]["total"]


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = TTSModel(tiny_config(w=0.03), vocab_size=6, n_speakers=3, seed=5)
        save_checkpoint(tmp_path / "c.bin", model)
        loaded = load_checkpoint(tmp_path / "c.bin")
        assert sorted(loaded.params) == sorted(model.params)
        for name, p in model.params.items():
            np.testing.assert_array_equal(loaded.params[name].data, p.data)
        assert loaded.cfg.to_dict() == model.cfg.to_dict()

    def test_magic_and_layout(self, tmp_path):
        model = TTSModel(tiny_config(), vocab_size=6, n_speakers=0, seed=0)
        save_checkpoint(tmp_path / "c.bin", model)
        raw = (tmp_path / "c.bin").read_bytes()
        assert raw[:4] == b"TTSE"
        assert int.from_bytes(raw[4:8], "little") == 1  # format version

    def test_corrupt_file_rejected(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"NOPE" + b"\x00" * 100)
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "bad.bin")

    def test_byte_identical_saves(self, tmp_path):
        model = TTSModel(tiny_config(), vocab_size=6, n_speakers=0, seed=2)
        save_checkpoint(tmp_path / "a.bin", model)
        save_checkpoint(tmp_path / "b.bin", model)
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


class TestTrainState:
    def test_round_trip(self, tmp_path):
        from ttsembed.optim import AdamState
        state = AdamState(learning_rate=0.002, step_count=17)
        state.first_moment["w"] = np.arange(6.0).reshape(2, 3)
        state.second_moment["w"] = np.ones((2, 3))
        save_train_state(tmp_path / "s.npz", state, epochs_done=3)
        loaded, epochs_done = load_train_state(tmp_path / "s.npz")
        assert epochs_done == 3
        assert loaded.step_count == 17
        assert loaded.learning_rate == 0.002
        np.testing.assert_array_equal(loaded.first_moment["w"],
                                      state.first_moment["w"])

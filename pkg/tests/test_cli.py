import json
from pathlib import Path

import numpy as np
import pytest

from ttsembed.cli import main

TINY_MODEL = {
    "text_hidden": 4, "embedding_dim": 3, "decoder_hidden": 4,
    "attention_dim": 3, "location_filters": 2, "location_kernel": 3,
    "resnet_channels": [2, 3], "lde_components": 2, "reduction_factor": 2,
    "prenet_units": 3, "text_conv_layers": 2, "text_conv_kernel": 3,
    "spk_loss_weight": 0.0,
}


def write_config(path, corpus, work, **overrides):
    doc = {
        "model": dict(TINY_MODEL),
        "train": {"epochs": 1, "batch": 4, "lr": 1e-3, "seed": 0, "max_steps": 2},
        "backend": {"em_iters": 3},
        "paths": {"manifest": str(corpus / "manifest.jsonl"),
                  "work_dir": str(work)},
    }
    for key, sub in overrides.items():
        doc.setdefault(key, {}).update(sub)
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """synthgen + prepare + train + extract + backend, shared by tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    work = root / "work"
    run = root / "run"
    # 4 eval speakers (2 per gender) so the trial list has both target and
    # non-target same-gender pairs
    assert main(["synthgen", "--speakers", "8", "--utts", "4", "--seed", "0",
                 "--out", str(corpus), "--eval-speakers", "4"]) == 0
    cfg = write_config(root / "config.json", corpus, work)
    assert main(["prepare", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(run)]) == 0
    assert main(["extract", "--config", str(cfg), "--out", str(run),
                 "--checkpoint", str(run / "checkpoint.bin")]) == 0
    assert main(["backend", "--config", str(cfg), "--out", str(run)]) == 0
    return root


class TestSynthgen:
    def test_manifest_line_count(self, tmp_path):
        out = tmp_path / "c"
        assert main(["synthgen", "--speakers", "4", "--utts", "3", "--seed", "1",
                     "--out", str(out)]) == 0
        lines = (out / "manifest.jsonl").read_text().splitlines()
        assert len(lines) == 12

    def test_single_speaker_rejected(self, tmp_path):
        code = main(["synthgen", "--speakers", "1", "--utts", "3",
                     "--out", str(tmp_path / "c")])
        assert code == 1


class TestPipeline:
    def test_prepare_writes_caches(self, pipeline_dir):
        work = pipeline_dir / "work"
        assert (work / "vocab.json").exists()
        assert len(list((work / "features").glob("*.melf"))) == 32
        assert len(list((work / "tokens").glob("*.json"))) == 32

    def test_train_outputs(self, pipeline_dir):
        run = pipeline_dir / "run"
        assert (run / "checkpoint.bin").exists()
        log = (run / "loss_log.jsonl").read_text().splitlines()
        assert len(log) == 2  # max_steps
        entry = json.loads(log[0])
        assert set(entry) == {"step", "l1", "l2", "stop_bce", "l_spk", "total"}

    def test_extract_counts(self, pipeline_dir):
        run = pipeline_dir / "run"
        train_lines = (run / "embeddings_train.jsonl").read_text().splitlines()
        eval_lines = (run / "embeddings_eval.jsonl").read_text().splitlines()
        assert len(train_lines) == 16  # 4 train speakers x 4 utts
        assert len(eval_lines) == 16

    def test_eval_report(self, pipeline_dir):
        cfg = pipeline_dir / "config.json"
        run = pipeline_dir / "run"
        assert main(["eval", "--config", str(cfg), "--out", str(run)]) == 0
        report = json.loads((run / "report.json").read_text())
        assert 0.0 <= report["eer_percent"] <= 100.0
        assert np.isfinite(report["min_dcf"])
        assert (run / "trials.txt").exists()
        assert (run / "scores.txt").exists()

    def test_rerun_reports_identical(self, pipeline_dir, tmp_path):
        # same corpus + seeds end to end a second time: identical report
        corpus = pipeline_dir / "corpus"
        work2 = tmp_path / "work2"
        run2 = tmp_path / "run2"
        cfg2 = write_config(tmp_path / "config.json", corpus, work2)
        assert main(["prepare", "--config", str(cfg2)]) == 0
        assert main(["train", "--config", str(cfg2), "--out", str(run2)]) == 0
        assert main(["extract", "--config", str(cfg2), "--out", str(run2),
                     "--checkpoint", str(run2 / "checkpoint.bin")]) == 0
        assert main(["backend", "--config", str(cfg2), "--out", str(run2)]) == 0
        assert main(["eval", "--config", str(cfg2), "--out", str(run2)]) == 0

        run1 = pipeline_dir / "run"
        assert main(["eval", "--config", str(pipeline_dir / "config.json"),
                     "--out", str(run1)]) == 0
        r1 = json.loads((run1 / "report.json").read_text())
        r2 = json.loads((run2 / "report.json").read_text())
        for r in (r1, r2):
            r.pop("timestamp")
            r.pop("config")  # echoes the differing work_dir paths
        assert r1 == r2


class TestErrorPaths:
    def test_missing_config_exit_1(self, tmp_path):
        assert main(["prepare", "--config", str(tmp_path / "no.json")]) == 1

    def test_missing_manifest_exit_2(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({
            "paths": {"manifest": str(tmp_path / "no.jsonl"),
                      "work_dir": str(tmp_path / "w")}}))
        assert main(["prepare", "--config", str(cfg)]) == 2

    def test_missing_token_file_names_utterance(self, tmp_path, capsys):
        corpus = tmp_path / "corpus"
        assert main(["synthgen", "--speakers", "2", "--utts", "2", "--seed", "3",
                     "--out", str(corpus)]) == 0
        victim = json.loads(
            (corpus / "manifest.jsonl").read_text().splitlines()[0])
        (corpus / victim["text_source"]).unlink()
        cfg = write_config(tmp_path / "c.json", corpus, tmp_path / "w")
        assert main(["prepare", "--config", str(cfg)]) == 2
        assert victim["utt_id"] in capsys.readouterr().err

    def test_unknown_config_key_exit_1(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"trainer": {}}))
        assert main(["prepare", "--config", str(cfg)]) == 1


class TestSweep:
    def test_single_value_sweep(self, pipeline_dir, tmp_path):
        corpus = pipeline_dir / "corpus"
        cfg = write_config(tmp_path / "c.json", corpus, pipeline_dir / "work")
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(cfg), "--param", "spk_loss_weight",
                     "--values", "0", "--out", str(out)]) == 0
        doc = json.loads((out / "sweep.json").read_text())
        assert doc["param"] == "spk_loss_weight"
        assert len(doc["rows"]) == 1
        assert doc["rows"][0]["seed"] == 0

    def test_rows_and_derived_seeds(self, pipeline_dir, tmp_path):
        corpus = pipeline_dir / "corpus"
        cfg = write_config(tmp_path / "c.json", corpus, pipeline_dir / "work",
                           train={"seed": 5, "max_steps": 1, "epochs": 1})
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(cfg), "--param", "spk_loss_weight",
                     "--values", "0,0.03", "--out", str(out)]) == 0
        doc = json.loads((out / "sweep.json").read_text())
        assert [row["value"] for row in doc["rows"]] == [0.0, 0.03]
        assert [row["seed"] for row in doc["rows"]] == [5, 6]

    def test_unknown_param_exit_1(self, pipeline_dir, tmp_path):
        cfg = write_config(tmp_path / "c.json", pipeline_dir / "corpus",
                           pipeline_dir / "work")
        assert main(["sweep", "--config", str(cfg), "--param", "nonsense",
                     "--values", "1", "--out", str(tmp_path / "s")]) == 1

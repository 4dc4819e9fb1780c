"""End-to-end pipeline stages shared by the CLI and the test suite.

prepare -> train -> extract -> fit backend -> score trials -> report.
All stages are deterministic given the manifest and the config seeds.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .backend import (EmbeddingRecord, EmbeddingSet, PldaScorer, lda_fit,
                      load_embeddings, plda_fit, preprocess, save_backend,
                      save_embeddings, training_mean, load_backend)
from .errors import ConfigError, DataError
from .features import load_features, log_mel, save_features
from .metrics import (TrialList, evaluate, make_trials, save_scores,
                      save_trials, write_report)
from .model import Example, ModelConfig, TTSModel, load_checkpoint, train
from .runconfig import RunConfig
from .synthcorpus import CorpusManifest, load_audio, load_manifest
from .textio import (TokenSequence, Vocabulary, build_vocab, load_tokens,
                     upsample_alignment)


def _work(cfg: RunConfig) -> Path:
    if not cfg.work_dir:
        raise ConfigError("paths.work_dir is required")
    return Path(cfg.work_dir)


def prepare(cfg: RunConfig) -> CorpusManifest:
    """Write per-utterance feature and token caches plus the vocabulary."""
    manifest = load_manifest(cfg.manifest)
    work = _work(cfg)
    feat_dir = work / "features"
    tok_dir = work / "tokens"
    feat_dir.mkdir(parents=True, exist_ok=True)
    tok_dir.mkdir(parents=True, exist_ok=True)

    char_mode = cfg.text.tokenizer == "char"
    train_records = manifest.subset("train")
    if not train_records:
        raise DataError("manifest has no train utterances")
    vocab = build_vocab([r.text_source for r in train_records], char_mode=char_mode)
    with open(work / "vocab.json", "w", encoding="utf-8") as f:
        json.dump(vocab.symbols, f, sort_keys=True)

    for r in manifest.records:
        mel = log_mel(load_audio(r.audio_source), cfg.features)
        save_features(feat_dir / f"{r.utt_id}.melf", mel)
        try:
            seq = load_tokens(r.text_source, vocab, utt_id=r.utt_id,
                              char_mode=char_mode)
        except DataError as e:
            raise DataError(f"{r.utt_id}: {e}")
        if seq.kind == "alignment":
            if cfg.text.target_sr is not None:
                seq = upsample_alignment(seq, cfg.text.target_sr)
            covered = len(seq.ids) * seq.frame_sr
            if abs(covered - mel.frames.shape[0]) > 2:
                warnings.warn(
                    f"{r.utt_id}: alignment covers {covered} frames but features "
                    f"have {mel.frames.shape[0]}; truncating to the shorter")
        with open(tok_dir / f"{r.utt_id}.json", "w", encoding="utf-8") as f:
            json.dump({"utt_id": r.utt_id, "ids": seq.ids, "kind": seq.kind,
                       "frame_sr": seq.frame_sr}, f, sort_keys=True)
    return manifest


def load_vocab(cfg: RunConfig) -> Vocabulary:
    path = _work(cfg) / "vocab.json"
    if not path.exists():
        raise DataError(f"vocabulary not found at {path}; run prepare first")
    with open(path, encoding="utf-8") as f:
        return Vocabulary(json.load(f))


def _load_cached_tokens(cfg: RunConfig, utt_id: str) -> TokenSequence:
    path = _work(cfg) / "tokens" / f"{utt_id}.json"
    if not path.exists():
        raise DataError(f"token cache missing for {utt_id}; run prepare first")
    with open(path, encoding="utf-8") as f:
        d = json.load(f)
    return TokenSequence(d["utt_id"], d["ids"], d["kind"], d["frame_sr"])


def load_dataset(cfg: RunConfig, subset: str = "train"):
    """Assemble (examples, vocab, speaker index map) from the caches."""
    manifest = load_manifest(cfg.manifest)
    vocab = load_vocab(cfg)
    records = manifest.subset(subset)
    speakers = sorted({r.speaker_id for r in records})
    spk_index = {s: i for i, s in enumerate(speakers)}
    feat_dir = _work(cfg) / "features"
    examples = []
    for r in records:
        mel = load_features(feat_dir / f"{r.utt_id}.melf")
        seq = _load_cached_tokens(cfg, r.utt_id)
        ids, frames = seq.ids, mel.frames
        if seq.kind == "alignment" and seq.frame_sr == 1:
            n = min(len(ids), frames.shape[0])
            ids, frames = ids[:n], frames[:n]
        examples.append(Example(r.utt_id, ids, frames, spk_index[r.speaker_id]))
    return examples, vocab, spk_index


def train_from_config(cfg: RunConfig, out_dir) -> tuple[TTSModel, list[dict]]:
    examples, vocab, _ = load_dataset(cfg, "train")
    return train(examples, cfg.model, len(vocab),
                 epochs=cfg.train.epochs, batch_size=cfg.train.batch,
                 learning_rate=cfg.train.lr, seed=cfg.train.seed,
                 max_steps=cfg.train.max_steps, out_dir=out_dir)


def extract_embeddings(cfg: RunConfig, model: TTSModel, subset: str) -> EmbeddingSet:
    """e = encode_speaker(log_mel(utt)) for every utterance, manifest order."""
    manifest = load_manifest(cfg.manifest)
    feat_dir = _work(cfg) / "features"
    records = []
    for r in manifest.subset(subset):
        path = feat_dir / f"{r.utt_id}.melf"
        if not path.exists():
            raise DataError(f"features missing for {r.utt_id}; run prepare first")
        mel = load_features(path)
        e = model.encode_speaker(mel.frames)
        records.append(EmbeddingRecord(r.utt_id, r.speaker_id, r.gender,
                                       e.data[0].copy()))
    return EmbeddingSet(records)


def fit_backend(train_embs: EmbeddingSet, lda_dim: int, em_iters: int):
    """Center + length-norm, LDA with within-class whitening, then PLDA."""
    mean = training_mean(train_embs)
    prepped = preprocess(train_embs, mean)
    labels = prepped.labels()
    n_classes = len(set(labels))
    dim = prepped.matrix().shape[1]
    d_out = min(lda_dim, n_classes - 1, dim - 1)
    lda = lda_fit(prepped.matrix(), labels, d_out)
    projected = lda.project(prepped.matrix())
    plda = plda_fit(projected, labels, em_iters=em_iters)
    return mean, lda, plda


def score_trials(mean, lda, plda, embs: EmbeddingSet, trials: TrialList):
    prepped = preprocess(embs, mean)
    projected = lda.project(prepped.matrix())
    by_utt = {r.utt_id: projected[i] for i, r in enumerate(prepped.records)}
    scorer = PldaScorer(plda)
    scores = []
    for t in trials.trials:
        for utt in (t.enroll_utt, t.test_utt):
            if utt not in by_utt:
                raise DataError(f"no embedding for trial utterance {utt}")
        scores.append(scorer.score(by_utt[t.enroll_utt], by_utt[t.test_utt]))
    return np.asarray(scores)


def evaluate_run(cfg: RunConfig, out_dir, checkpoint_id: str = "") -> dict:
    """Score all eval trials with the fitted back-end and write the report."""
    out_dir = Path(out_dir)
    manifest = load_manifest(cfg.manifest)
    eval_records = manifest.subset("eval")
    trials = make_trials(eval_records)
    if not any(t.is_target for t in trials.trials):
        raise DataError("trial list has no target trials")
    mean, lda, plda = load_backend(out_dir / "backend.json")
    eval_embs = load_embeddings(out_dir / "embeddings_eval.jsonl")
    scores = score_trials(mean, lda, plda, eval_embs, trials)
    labels = [t.is_target for t in trials.trials]
    metrics = evaluate(scores, labels)
    save_trials(out_dir / "trials.txt", trials)
    save_scores(out_dir / "scores.txt", trials, scores)
    report = write_report(out_dir / "report.json", metrics, len(trials),
                          int(np.sum(labels)), cfg.to_dict(), checkpoint_id)
    return report

"""Teacher-forced training loop.

Adam over shuffled minibatches of per-utterance losses, global gradient-norm
clipping at 1.0, a checkpoint per epoch, and a JSON-lines loss log with one
line per optimizer step. Seeds: parameter init uses `seed`, shuffling uses
`seed + 1`, so runs with equal seeds are bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..errors import DataError, NumericError
from ..optim import AdamState, adam_step, clip_grad_norm, zero_grads
from .config import ModelConfig
from .checkpoint import save_checkpoint
from .losses import anneal_lambda, loss_joint, loss_speaker, loss_tts
from .network import TTSModel


@dataclass
class Example:
    utt_id: str
    token_ids: list
    mel: np.ndarray                  # T x D_a
    speaker_index: int | None = None


def save_train_state(path, state: AdamState, epochs_done: int):
    arrays = {}
    for key, moments in (("m", state.first_moment), ("v", state.second_moment)):
        for name, arr in moments.items():
            arrays[f"{key}:{name}"] = arr
    np.savez(path, __step_count=state.step_count, __epochs_done=epochs_done,
             __learning_rate=state.learning_rate, **arrays)


def load_train_state(path) -> tuple[AdamState, int]:
    with np.load(path) as z:
        state = AdamState(learning_rate=float(z["__learning_rate"]),
                          step_count=int(z["__step_count"]))
        epochs_done = int(z["__epochs_done"])
        for key in z.files:
            if key.startswith("m:"):
                state.first_moment[key[2:]] = z[key].copy()
            elif key.startswith("v:"):
                state.second_moment[key[2:]] = z[key].copy()
    return state, epochs_done


def train(examples: list[Example], cfg: ModelConfig, vocab_size: int, *,
          epochs: int = 10, batch_size: int = 4, learning_rate: float = 1e-3,
          seed: int = 0, max_steps: int | None = None,
          out_dir=None, model: TTSModel | None = None,
          optimizer_state: AdamState | None = None,
          epochs_done: int = 0) -> tuple[TTSModel, list[dict]]:
    """Train on the given examples; returns (model, loss log).

    To resume, pass the checkpointed `model`, its `optimizer_state`, and
    `epochs_done`; the shuffle stream is replayed so the continued run is
    bit-identical to an uninterrupted one. The speaker classification head
    is only built (and its labels only read) when cfg.spk_loss_weight > 0.
    """
    if not examples:
        raise DataError("no training examples")
    use_spk = cfg.spk_loss_weight > 0
    n_speakers = 0
    if use_spk:
        labels = {ex.speaker_index for ex in examples}
        if None in labels:
            raise DataError("speaker loss enabled but an example has no speaker label")
        n_speakers = max(labels) + 1

    if model is None:
        model = TTSModel(cfg, vocab_size, n_speakers, seed=seed)
    state = optimizer_state if optimizer_state is not None \
        else AdamState(learning_rate=learning_rate)
    rng = np.random.default_rng(seed + 1)
    for _ in range(epochs_done):
        rng.permutation(len(examples))
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    log: list[dict] = []
    step = state.step_count
    done = False
    for epoch in range(epochs_done, epochs):
        order = rng.permutation(len(examples))
        for lo in range(0, len(order), batch_size):
            batch = [examples[i] for i in order[lo:lo + batch_size]]
            parts = {"l1": 0.0, "l2": 0.0, "stop_bce": 0.0, "l_spk": 0.0}
            zero_grads(model.params)
            with ad.Tape() as tape:
                total = None
                for ex in batch:
                    pred, stop_logits, _attn, e = model.forward_teacher_forced(
                        ex.token_ids, ex.mel)
                    l1, l2, sb = loss_tts(pred, ex.mel, stop_logits,
                                          cfg.stop_positive_weight)
                    l_spk = None
                    if use_spk:
                        l_spk = loss_speaker(e, ex.speaker_index, model.params["proj"],
                                             cfg.angular_margin, anneal_lambda(step))
                        parts["l_spk"] += float(l_spk.data)
                    joint = loss_joint(l1, l2, sb, l_spk, cfg.spk_loss_weight)
                    parts["l1"] += float(l1.data)
                    parts["l2"] += float(l2.data)
                    parts["stop_bce"] += float(sb.data)
                    total = joint if total is None else ad.add(total, joint)
                total = ad.mul(1.0 / len(batch), total)
                if not np.isfinite(total.data):
                    raise NumericError(f"non-finite loss at step {step}")
                ad.backward(total, tape)
            clip_grad_norm(model.params, 1.0)
            adam_step(model.params, state)
            step += 1
            entry = {"step": step,
                     "l1": parts["l1"] / len(batch),
                     "l2": parts["l2"] / len(batch),
                     "stop_bce": parts["stop_bce"] / len(batch),
                     "l_spk": parts["l_spk"] / len(batch),
                     "total": float(total.data)}
            log.append(entry)
            if max_steps is not None and step >= max_steps:
                done = True
                break
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint.bin", model)
            save_train_state(out_dir / "train_state.npz", state, epoch + 1)
        if done:
            break
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.bin", model)
        mode = "a" if epochs_done else "w"
        with open(out_dir / "loss_log.jsonl", mode, encoding="utf-8") as f:
            for entry in log:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
    return model, log

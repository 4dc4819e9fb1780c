"""Trial construction and detection metrics (EER, MinDCF).

Trials are all unordered same-gender utterance pairs of the eval subset;
PLDA scoring is symmetric, so each pair appears once. The accept rule is
score >= threshold. EER is linearly interpolated at the miss/false-alarm
crossing; MinDCF sweeps all thresholds including the always-accept and
always-reject extremes and normalizes by min(c_miss*p_target,
c_fa*(1-p_target)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class Trial:
    enroll_utt: str
    test_utt: str
    is_target: bool


@dataclass
class TrialList:
    trials: list = field(default_factory=list)

    def __len__(self):
        return len(self.trials)


@dataclass
class DetMetrics:
    eer: float
    eer_threshold: float
    min_dcf: float
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0


def make_trials(records) -> TrialList:
    """All unordered same-gender pairs over manifest records."""
    for r in records:
        if r.gender not in ("M", "F"):
            raise DataError(f"{r.utt_id}: gender missing")
    trials = []
    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            a, b = records[i], records[j]
            if a.gender != b.gender:
                continue
            trials.append(Trial(a.utt_id, b.utt_id, a.speaker_id == b.speaker_id))
    return TrialList(trials)


def _error_rates(scores, labels):
    """P_miss and P_fa at each candidate threshold (ascending distinct scores
    plus one above the max), under the accept rule score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if not np.all(np.isfinite(scores)):
        raise DataError("scores contain non-finite values")
    n_t = int(labels.sum())
    n_n = int(labels.size - n_t)
    if n_t == 0 or n_n == 0:
        raise DataError("need at least one target and one non-target trial")
    thresholds = np.unique(scores)
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)   # reject-everything
    t_scores = scores[labels]
    n_scores = scores[~labels]
    p_miss = np.searchsorted(np.sort(t_scores), thresholds, side="left") / n_t
    p_fa = (n_n - np.searchsorted(np.sort(n_scores), thresholds, side="left")) / n_n
    return thresholds, p_miss, p_fa


def compute_eer(scores, labels):
    """Equal error rate and its threshold, interpolated at the crossing."""
    thresholds, p_miss, p_fa = _error_rates(scores, labels)
    diff = p_miss - p_fa
    # first index where miss >= fa (diff is non-decreasing in the threshold)
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        return float(p_miss[k]), float(thresholds[k])
    if k == 0:
        return float(max(p_miss[0], p_fa[0])), float(thresholds[0])
    m1, f1 = p_miss[k - 1], p_fa[k - 1]
    m2, f2 = p_miss[k], p_fa[k]
    d1, d2 = f1 - m1, m2 - f2
    alpha = d1 / (d1 + d2) if (d1 + d2) > 0 else 0.0
    eer = m1 + alpha * (m2 - m1)
    thr = thresholds[k - 1] + alpha * (thresholds[k] - thresholds[k - 1])
    return float(eer), float(thr)


def compute_min_dcf(scores, labels, p_target: float = 0.01,
                    c_miss: float = 1.0, c_fa: float = 1.0) -> float:
    _, p_miss, p_fa = _error_rates(scores, labels)
    dcf = c_miss * p_miss * p_target + c_fa * p_fa * (1.0 - p_target)
    norm = min(c_miss * p_target, c_fa * (1.0 - p_target))
    return float(dcf.min() / norm)


def evaluate(scores, labels, p_target: float = 0.01,
             c_miss: float = 1.0, c_fa: float = 1.0) -> DetMetrics:
    eer, thr = compute_eer(scores, labels)
    mdcf = compute_min_dcf(scores, labels, p_target, c_miss, c_fa)
    return DetMetrics(eer, thr, mdcf, p_target, c_miss, c_fa)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def save_trials(path, trial_list: TrialList):
    with open(path, "w", encoding="utf-8") as f:
        for t in trial_list.trials:
            tag = "target" if t.is_target else "nontarget"
            f.write(f"{t.enroll_utt} {t.test_utt} {tag}\n")


def load_trials(path) -> TrialList:
    trials = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[2] not in ("target", "nontarget"):
                raise DataError(f"{path}:{lineno}: malformed trial line")
            trials.append(Trial(parts[0], parts[1], parts[2] == "target"))
    return TrialList(trials)


def save_scores(path, trial_list: TrialList, scores):
    with open(path, "w", encoding="utf-8") as f:
        for t, s in zip(trial_list.trials, scores):
            f.write(f"{t.enroll_utt} {t.test_utt} {s:.6f}\n")


def write_report(path, metrics: DetMetrics, n_trials: int, n_target: int,
                 config_echo: dict, checkpoint_id: str, timestamp: str = ""):
    report = {
        "eer_percent": round(metrics.eer * 100.0, 6),
        "eer_threshold": round(metrics.eer_threshold, 9),
        "min_dcf": round(metrics.min_dcf, 6),
        "dcf_params": {"p_target": metrics.p_target, "c_miss": metrics.c_miss,
                       "c_fa": metrics.c_fa},
        "n_trials": n_trials,
        "n_target": n_target,
        "config": config_echo,
        "checkpoint": checkpoint_id,
        "timestamp": timestamp,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return report

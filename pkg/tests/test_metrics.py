import json
import math

import numpy as np
import pytest

from ttsembed import metrics as mt
from ttsembed.errors import DataError
from ttsembed.synthcorpus import UttRecord


def brute_force_rates(scores, labels):
    """Independent exhaustive sweep: P_miss/P_fa at every candidate threshold,
    evaluated by direct counting under the accept rule score >= threshold."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    thresholds = np.concatenate([np.unique(scores), [scores.max() + 1.0]])
    rows = []
    for t in thresholds:
        accept = scores >= t
        p_miss = np.mean(~accept[labels])
        p_fa = np.mean(accept[~labels])
        rows.append((t, p_miss, p_fa))
    return rows


def brute_force_min_dcf(scores, labels, p_target=0.01, c_miss=1.0, c_fa=1.0):
    rows = brute_force_rates(scores, labels)
    norm = min(c_miss * p_target, c_fa * (1.0 - p_target))
    return min(c_miss * pm * p_target + c_fa * pf * (1.0 - p_target)
               for _, pm, pf in rows) / norm


def brute_force_eer_band(scores, labels):
    """The step functions rarely cross exactly; return the crossing bracket
    [max(min over t of max(pm,pf) adjacent values)] as (lo, hi)."""
    rows = brute_force_rates(scores, labels)
    best = min(max(pm, pf) for _, pm, pf in rows)
    worst_inner = min(rows, key=lambda r: max(r[1], r[2]))
    lo = min(worst_inner[1], worst_inner[2])
    return lo, best


class TestMakeTrials:
    @staticmethod
    def rec(utt, spk, gender):
        return UttRecord(utt, spk, gender, "a", "t", "eval")

    def test_counting_example(self):
        records = [self.rec(f"m{s}_{u}", f"ms{s}", "M")
                   for s in range(2) for u in range(2)]
        records += [self.rec(f"f0_{u}", "fs0", "F") for u in range(2)]
        tl = mt.make_trials(records)
        assert len(tl) == 7
        assert sum(t.is_target for t in tl.trials) == 3

    def test_single_utterance_empty(self):
        assert len(mt.make_trials([self.rec("u", "s", "M")])) == 0

    def test_no_cross_gender(self):
        rng = np.random.default_rng(0)
        records = [self.rec(f"u{i}", f"s{i % 5}", "M" if rng.random() < 0.5 else "F")
                   for i in range(30)]
        gender = {r.utt_id: r.gender for r in records}
        for t in mt.make_trials(records).trials:
            assert gender[t.enroll_utt] == gender[t.test_utt]

    def test_missing_gender_rejected(self):
        with pytest.raises(DataError):
            mt.make_trials([UttRecord("u", "s", "?", "a", "t", "eval"),
                            UttRecord("v", "s", "M", "a", "t", "eval")])


class TestEer:
    def test_worked_example(self):
        scores = [0.9, 0.8, 0.7, 0.75, 0.2, 0.1]
        labels = [1, 1, 1, 0, 0, 0]
        eer, thr = mt.compute_eer(scores, labels)
        assert abs(eer - 1 / 3) < 1e-12
        assert 0.7 < thr <= 0.75

    def test_perfect_separation(self):
        eer, _ = mt.compute_eer([1.0, 2.0, -1.0, -2.0], [1, 1, 0, 0])
        assert eer == 0.0

    def test_chance_level(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=10_000)
        labels = rng.random(10_000) < 0.5
        eer, _ = mt.compute_eer(scores, labels)
        assert abs(eer - 0.5) < 0.03

    def test_within_interpolation_bound_of_step_crossing(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(4, 50))
            scores = rng.normal(size=n)
            labels = np.zeros(n, dtype=bool)
            labels[rng.permutation(n)[:int(rng.integers(1, n))]] = True
            if labels.all() or not labels.any():
                continue
            eer, _ = mt.compute_eer(scores, labels)
            lo, hi = brute_force_eer_band(scores, labels)
            bound = 1.0 / (2 * min(labels.sum(), (~labels).sum()))
            assert lo - 1e-12 <= eer <= hi + 1e-12
            assert abs(eer - hi) < bound + 1e-12

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        scores = rng.normal(size=40)
        labels = rng.random(40) < 0.4
        e1, _ = mt.compute_eer(scores, labels)
        e2, _ = mt.compute_eer(np.tanh(scores) * 5 + 2, labels)
        assert abs(e1 - e2) < 1e-12

    def test_degenerate_labels_rejected(self):
        with pytest.raises(DataError):
            mt.compute_eer([1.0, 2.0], [1, 1])


class TestMinDcf:
    def test_perfect_separation(self):
        assert mt.compute_min_dcf([2.0, 1.0, -1.0], [1, 1, 0]) == 0.0

    def test_always_reject_boundary(self):
        # A system whose scores cannot separate at all is no better than
        # always rejecting, which costs exactly the normalizer.
        scores = [0.0, 0.0, 0.0, 0.0]
        labels = [1, 1, 0, 0]
        assert mt.compute_min_dcf(scores, labels) <= 1.0 + 1e-12

    def test_worked_example_matches_brute_force(self):
        scores = [0.9, 0.8, 0.7, 0.75, 0.2, 0.1]
        labels = [1, 1, 1, 0, 0, 0]
        got = mt.compute_min_dcf(scores, labels)
        want = brute_force_min_dcf(scores, labels)
        assert abs(got - want) < 1e-12

    def test_random_sets_match_brute_force_exactly(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(4, 50))
            scores = rng.normal(size=n)
            labels = np.zeros(n, dtype=bool)
            labels[:max(1, n // 3)] = True
            rng.shuffle(labels)
            if labels.all() or not labels.any():
                continue
            got = mt.compute_min_dcf(scores, labels)
            want = brute_force_min_dcf(scores, labels)
            assert abs(got - want) < 1e-12

    def test_min_dcf_not_above_dcf_at_eer_threshold(self):
        rng = np.random.default_rng(5)
        scores = rng.normal(size=60)
        labels = rng.random(60) < 0.5
        _, thr = mt.compute_eer(scores, labels)
        accept = scores >= thr
        pm = np.mean(~accept[labels])
        pf = np.mean(accept[~labels])
        dcf_at_eer = (pm * 0.01 + pf * 0.99) / min(0.01, 0.99)
        assert mt.compute_min_dcf(scores, labels) <= dcf_at_eer + 1e-12

    def test_duplication_invariance(self):
        scores = [0.9, 0.1, 0.6, 0.4]
        labels = [1, 0, 1, 0]
        e1, _ = mt.compute_eer(scores, labels)
        e2, _ = mt.compute_eer(scores * 3, labels * 3)
        assert abs(e1 - e2) < 1e-12


class TestFilesAndReport:
    def test_trials_round_trip(self, tmp_path):
        tl = mt.TrialList([mt.Trial("a", "b", True), mt.Trial("a", "c", False)])
        mt.save_trials(tmp_path / "t.txt", tl)
        loaded = mt.load_trials(tmp_path / "t.txt")
        assert loaded.trials == tl.trials

    def test_score_file_format(self, tmp_path):
        tl = mt.TrialList([mt.Trial("a", "b", True)])
        mt.save_scores(tmp_path / "s.txt", tl, [1.23456789])
        assert (tmp_path / "s.txt").read_text() == "a b 1.234568\n"

    def test_report_percent_conversion(self, tmp_path):
        m = mt.DetMetrics(eer=0.0104, eer_threshold=0.5, min_dcf=0.2)
        rep = mt.write_report(tmp_path / "r.json", m, 10, 3, {}, "ck")
        assert rep["eer_percent"] == 1.04

    def test_report_round_trips_and_is_deterministic(self, tmp_path):
        m = mt.DetMetrics(eer=0.25, eer_threshold=0.1, min_dcf=0.9)
        mt.write_report(tmp_path / "r1.json", m, 10, 3, {"seed": 0}, "ck")
        mt.write_report(tmp_path / "r2.json", m, 10, 3, {"seed": 0}, "ck")
        assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
        json.loads((tmp_path / "r1.json").read_text())

    def test_malformed_trial_line(self, tmp_path):
        (tmp_path / "bad.txt").write_text("a b maybe\n")
        with pytest.raises(DataError, match=":1:"):
            mt.load_trials(tmp_path / "bad.txt")

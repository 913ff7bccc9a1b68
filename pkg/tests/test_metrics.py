import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vpgeo.errors import SingleClass
from vpgeo.metrics import average_precision, compute_report, f1_at_threshold, roc_auc


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.9, 0.1], [1, 0]) == 1.0

    def test_one_concordant_one_discordant(self):
        # positives at 0.8 and 0.3, negative at 0.7: one pair each way
        assert roc_auc([0.8, 0.7, 0.3], [1, 0, 1]) == 0.5

    def test_all_ties(self):
        assert roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_single_class_raises(self):
        with pytest.raises(SingleClass):
            roc_auc([0.1, 0.9], [1, 1])

    def test_matches_trapezoidal(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = 30
            scores = rng.random(n)
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            # trapezoidal ROC integration oracle
            thr = np.unique(scores)[::-1]
            tpr = [0.0]
            fpr = [0.0]
            p = labels.sum()
            q = n - p
            for t in thr:
                pred = scores >= t
                tpr.append(np.sum(pred & (labels == 1)) / p)
                fpr.append(np.sum(pred & (labels == 0)) / q)
            auc_trap = np.trapezoid(tpr, fpr)
            assert abs(roc_auc(scores, labels) - auc_trap) < 1e-9


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_worst_ranking_two_samples(self):
        assert average_precision([0.9, 0.1], [0, 1]) == 0.5

    def test_single_positive_ranked_first(self):
        scores = [0.99] + list(np.linspace(0.5, 0.1, 10))
        labels = [1] + [0] * 10
        assert average_precision(scores, labels) == 1.0


class TestF1:
    def test_all_correct(self):
        assert f1_at_threshold([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_no_predicted_positives(self):
        assert f1_at_threshold([0.1, 0.2, 0.3], [1, 1, 0]) == 0.0

    def test_balanced_half(self):
        # TP=1, FP=1, FN=1 -> F1 = 0.5
        assert f1_at_threshold([0.9, 0.8, 0.1], [1, 0, 1]) == 0.5


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000))
def test_rank_invariance_and_flip(n, seed):
    rng = np.random.default_rng(seed)
    scores = rng.random(n)
    labels = rng.integers(0, 2, n)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    auc = roc_auc(scores, labels)
    # strictly increasing transform preserves AUC exactly
    assert roc_auc(np.exp(3 * scores) + 1.0, labels) == auc
    # flipping labels maps AUC -> 1 - AUC
    assert abs(roc_auc(scores, 1 - labels) - (1.0 - auc)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20))
def test_perfect_separation_agreement(n_pos, n_neg):
    scores = np.concatenate([np.linspace(0.9, 0.8, n_pos), np.linspace(0.2, 0.1, n_neg)])
    labels = np.array([1] * n_pos + [0] * n_neg)
    assert roc_auc(scores, labels) == 1.0
    assert average_precision(scores, labels) == 1.0


def test_report_fields():
    rep = compute_report(["a", "b", "c"], [0.9, 0.2, 0.6], [1, 0, 1])
    d = rep.to_dict()
    assert set(d) == {"auc_roc", "ap", "f1", "n_pos", "n_neg", "per_sample"}
    assert d["n_pos"] == 2 and d["n_neg"] == 1
    assert d["per_sample"][0] == {"id": "a", "label": "generated", "score": 0.9}

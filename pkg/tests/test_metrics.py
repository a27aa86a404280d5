import numpy as np
import pytest
from scipy import stats

from multirm.backbone import BackboneConfig
from multirm.metrics import (JudgeError, best_of_n, direct_select, evaluate, kendall_tau, pairwise_accuracy,
                             pairwise_aggregate, permutation_sensitivity, ranking_from_scores)
from multirm.packing import PreferenceSample
from multirm.scoring import init_reward_model
from conftest import randomize_head
from oracles import all_permutations, best_bruteforce, pairacc_bruteforce, tau_bruteforce


def test_best_of_n_examples():
    assert best_of_n([3, 1, 2], 0) == 1
    assert best_of_n([1, 1, 1], 0) == 1 and best_of_n([1, 1, 1], 2) == 0
    with pytest.raises(ValueError):
        best_of_n([1, 2], 5)


def test_best_of_n_chance_level():
    rng = np.random.default_rng(0)
    hits = [best_of_n(rng.normal(size=4), int(rng.integers(4))) for _ in range(10_000)]
    assert np.mean(hits) == pytest.approx(0.25, abs=0.015)


def test_pairwise_accuracy_examples():
    assert pairwise_accuracy([4, 3, 2, 1], [0, 1, 2, 3]) == 1.0
    assert pairwise_accuracy([1, 2, 3, 4], [0, 1, 2, 3]) == 0.0
    assert pairwise_accuracy([4, 2, 3, 1], [0, 1, 2, 3]) == pytest.approx(5 / 6)


def test_tau_examples():
    assert kendall_tau([0, 1, 2, 3], [0, 1, 2, 3]) == 1.0
    assert kendall_tau([3, 2, 1, 0], [0, 1, 2, 3]) == -1.0
    assert kendall_tau([0, 2, 1, 3], [0, 1, 2, 3]) == pytest.approx(4 / 6)
    with pytest.raises(ValueError):
        kendall_tau([0, 1], [0, 2])


@pytest.mark.parametrize("n", range(2, 7))
def test_metrics_match_bruteforce_exhaustively(n):
    perms = all_permutations(n)
    for truth in perms:
        for pred in perms:
            assert kendall_tau(pred, truth) == tau_bruteforce(pred, truth)
            scores = [float(n - pred.index(k)) for k in range(n)]
            assert pairwise_accuracy(scores, truth) == pairacc_bruteforce(scores, truth)
            assert best_of_n(scores, truth[0]) == best_bruteforce(scores, truth[0])


def test_tau_agrees_with_scipy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        truth, pred = rng.permutation(7).tolist(), rng.permutation(7).tolist()
        ref = stats.kendalltau([truth.index(k) for k in range(7)], [pred.index(k) for k in range(7)]).statistic
        assert kendall_tau(pred, truth) == pytest.approx(ref, abs=1e-12)


def test_ranking_ties_stable():
    assert ranking_from_scores([1, 3, 3, 0]) == [1, 2, 0, 3]


def oracle_judge(first, second):
    return 0 if first > second else 1


@pytest.mark.parametrize("n", range(2, 7))
@pytest.mark.parametrize("presentation", ["fixed", "balanced", "random"])
def test_aggregate_picks_true_best(n, presentation):
    for order in all_permutations(n):
        res = pairwise_aggregate(oracle_judge, order, presentation)
        assert res.best == int(np.argmax(order))
        assert direct_select(lambda c: int(np.argmax(c)), order) == res.best


def test_six_calls_for_four():
    assert pairwise_aggregate(oracle_judge, [1, 2, 3, 4]).calls == 6


@pytest.mark.parametrize("n", range(2, 8))
def test_first_position_judge_balanced(n):
    res = pairwise_aggregate(lambda a, b: 0, list(range(n)), "balanced")
    lo, hi = (n - 1) // 2, n - 1 - (n - 1) // 2
    assert all(lo <= w <= hi for w in res.scores)
    assert res.position_bias


def test_judge_failures_counted():
    def flaky(a, b):
        if a == 0 or b == 0:
            raise RuntimeError("timeout")
        return 0 if a > b else 1
    res = pairwise_aggregate(flaky, [0, 1, 2, 3])
    assert res.failures == 3 and res.scores[0] == 0 and res.best == 3


def test_direct_select_rejects_bad_choice():
    with pytest.raises(JudgeError):
        direct_select(lambda c: 9, [1, 2])


def test_rock_paper_scissors_runs():
    beats = {("r", "s"), ("s", "p"), ("p", "r")}
    res = pairwise_aggregate(lambda a, b: 0 if (a, b) in beats else 1, ["r", "p", "s"])
    assert sorted(res.scores) == [1, 1, 1]


def test_evaluate_oracle_scores(tmp_path):
    truth = [PreferenceSample(f"s{i}", [1], [[2], [3], [4]], ranking=r)
             for i, r in enumerate(([2, 0, 1], [0, 1, 2]))]
    recs = [{"id": s.id, "scores": [3.0 - s.ranking.index(k) for k in range(3)]} for s in truth]
    res = evaluate(recs, truth)
    assert (res.best_of_n, res.pairwise_accuracy, res.kendall_tau) == (1.0, 1.0, 1.0)
    res.write(tmp_path)
    assert len((tmp_path / "eval_samples.jsonl").read_text().splitlines()) == 2
    with pytest.raises(KeyError):
        evaluate([{"id": "zz", "scores": [1, 2, 3]}], truth)


@pytest.fixture
def scorer():
    w = init_reward_model(BackboneConfig(vocab_size=64, d=16, n_layers=2, n_heads=4, max_seq_len=64), 0)
    randomize_head(w, np.random.default_rng(0))
    return w


def test_sensitivity_single_mode_is_order_free(scorer):
    s = PreferenceSample("p", [1, 2, 3], [[4, 5], [6], [7, 8, 9], [10]], best=0)
    assert permutation_sensitivity(scorer, s, 24, 0, mode="single")["agreement"] == 1.0


def test_sensitivity_identical_responses(scorer):
    s = PreferenceSample("p", [1, 2, 3], [[4, 5]] * 4, best=0)
    assert permutation_sensitivity(scorer, s, 24, 0)["agreement"] == 1.0


def test_sensitivity_multi_is_measured(scorer):
    s = PreferenceSample("p", [1, 2, 3], [[4, 5], [6], [7, 8, 9], [10]], best=0)
    out = permutation_sensitivity(scorer, s, 24, 0)
    assert 0.0 <= out["agreement"] <= 1.0 and len(out["score_std"]) == 4

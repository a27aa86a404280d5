import csv

import numpy as np
import pytest

from multirm.backbone import BackboneConfig, init_model
from multirm.cost import (cost_single_vs_multi, flops_per_token, scaling_curve, sequence_flops, timed_bench,
                          write_curve_csv)
from multirm.scoring import init_reward_model

CFG = BackboneConfig()


def test_position_zero_flops():
    assert flops_per_token(CFG, 0) == 196_608


def test_head_term_optional():
    assert flops_per_token(CFG, 0, include_head=True) - flops_per_token(CFG, 0) == 2 * 64 * 512


def test_sequence_flops_is_sum():
    for L in (1, 2, 17, 100):
        assert sequence_flops(CFG, L) == sum(flops_per_token(CFG, t) for t in range(L))


def test_reference_token_counts():
    rep = cost_single_vs_multi(1000, [10] * 4, CFG)
    assert (rep.tokens_single, rep.tokens_multi) == (4040, 1043)
    assert rep.speedup_tokens == pytest.approx(4040 / 1043)


def test_single_response_speedup_one():
    rep = cost_single_vs_multi(300, [7], CFG)
    assert rep.speedup_tokens == 1.0 and rep.speedup_flops == 1.0


def test_no_context_gives_no_gain():
    assert cost_single_vs_multi(0, [10] * 4, CFG).speedup_tokens <= 1.0


def test_rejections():
    with pytest.raises(ValueError):
        cost_single_vs_multi(10, [], CFG)
    with pytest.raises(ValueError):
        cost_single_vs_multi(10, [0, 3], CFG)
    with pytest.raises(ValueError):
        scaling_curve(10, 3, [], CFG)


def test_curve_shape():
    rows = scaling_curve(1000, 10, range(2, 17), CFG)
    single = np.diff([r["single"] for r in rows])
    multi = np.diff([r["multi"] for r in rows])
    assert np.all(single == 1010) and np.all(multi == 11)
    sp = [r["speedup"] for r in rows]
    assert all(a <= b for a, b in zip(sp, sp[1:]))


def test_speedup_tends_to_n():
    assert cost_single_vs_multi(10**7, [1] * 8, CFG).speedup_tokens == pytest.approx(8, rel=1e-5)


def test_csv(tmp_path):
    rows = scaling_curve(1000, 10, [2, 3], CFG)
    write_curve_csv(rows, tmp_path / "c.csv")
    got = list(csv.reader(open(tmp_path / "c.csv")))
    assert got[0] == ["N", "single", "multi", "speedup"]
    assert got[1][:3] == ["2", "2020", "1021"]


def test_timed_bench_reports_both_predictions():
    w = init_reward_model(BackboneConfig(vocab_size=64, d=16, n_heads=2, max_seq_len=128), 0)
    out = timed_bench(w, 40, 4, 3, repeats=2)
    assert out["measured_speedup"] > 0 and len(out["multi_seconds"]) == 2
    assert out["predicted_speedup_tokens"] == pytest.approx(3 * 44 / (40 + 12 + 2))

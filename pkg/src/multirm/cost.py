"""Analytical token-pass and FLOPs accounting for single- vs multi-response scoring.

Per-token forward FLOPs at sequence position ``t`` (multiply-accumulate = 2 FLOPs):

    24 * n_layers * d**2        projections (4 d^2) and 4x MLP (8 d^2), times 2
  +  4 * n_layers * d * t       causal attention scores and mixing over the prefix
  ( + 2 * d * vocab             logit head, excluded from scoring cost )

A sequence of length L costs the sum over t = 0 .. L-1.
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig


def flops_per_token(config: BackboneConfig, position: int, include_head: bool = False) -> int:
    d, nl = config.d, config.n_layers
    f = 24 * nl * d * d + 4 * nl * d * position
    if include_head:
        f += 2 * d * config.vocab_size
    return f


def sequence_flops(config: BackboneConfig, length: int) -> int:
    """Sum of :func:`flops_per_token` over positions 0 .. length-1."""
    d, nl = config.d, config.n_layers
    return 24 * nl * d * d * length + 4 * nl * d * (length * (length - 1) // 2)


@dataclass
class CostReport:
    context_len: int
    response_lens: list[int]
    tokens_single: int
    tokens_multi: int
    flops_single: int
    flops_multi: int
    breakdown: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.response_lens)

    @property
    def speedup_tokens(self) -> float:
        return self.tokens_single / self.tokens_multi

    @property
    def speedup_flops(self) -> float:
        return self.flops_single / self.flops_multi

    def to_json(self) -> dict:
        d = asdict(self)
        d["n_responses"] = self.n
        d["speedup_tokens"] = self.speedup_tokens
        d["speedup_flops"] = self.speedup_flops
        return d


def cost_single_vs_multi(P: int, R, config: BackboneConfig) -> CostReport:
    R = [int(r) for r in R]
    if P < 0 or not R or min(R) < 1:
        raise ValueError("need P >= 0 and at least one response, each of length >= 1")
    n = len(R)
    multi_len = P + sum(R) + n - 1
    return CostReport(
        context_len=P,
        response_lens=R,
        tokens_single=sum(P + r for r in R),
        tokens_multi=multi_len,
        flops_single=sum(sequence_flops(config, P + r) for r in R),
        flops_multi=sequence_flops(config, multi_len),
        breakdown={
            "single": {"context": n * P, "response": sum(R), "separator": 0},
            "multi": {"context": P, "response": sum(R), "separator": n - 1},
        },
    )


def scaling_curve(P: int, R: int, N_range, config: BackboneConfig) -> list[dict]:
    N_range = list(N_range)
    if not N_range:
        raise ValueError("N_range is empty")
    rows = []
    for n in N_range:
        rep = cost_single_vs_multi(P, [R] * n, config)
        rows.append({
            "N": n,
            "single": rep.tokens_single,
            "multi": rep.tokens_multi,
            "speedup": rep.speedup_tokens,
            "single_flops": rep.flops_single,
            "multi_flops": rep.flops_multi,
            "speedup_flops": rep.speedup_flops,
        })
    return rows


def write_curve_csv(rows: list[dict], path, metric: str = "tokens") -> None:
    """CSV with columns N, single, multi, speedup for the chosen metric."""
    suffix = "" if metric == "tokens" else "_flops"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "single", "multi", "speedup"])
        for r in rows:
            w.writerow([r["N"], r["single" + suffix], r["multi" + suffix], repr(r["speedup" + suffix])])


def write_report(report: CostReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")


def timed_bench(weights, P: int, R: int, N: int, repeats: int = 5, seed: int = 0) -> dict:
    """Median host wall time of one packed pass vs N separate passes."""
    from .packing import PreferenceSample
    from .scoring import score_multi, score_single

    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    cfg = weights.config
    rng = np.random.default_rng(seed)
    sample = PreferenceSample(
        id="bench",
        context=rng.integers(0, cfg.separator_id, size=P).tolist(),
        responses=[rng.integers(0, cfg.separator_id, size=R).tolist() for _ in range(N)],
        best=0,
    )
    multi_t, single_t = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        score_multi(weights, sample, min_responses=1)
        multi_t.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        score_single(weights, sample)
        single_t.append(time.perf_counter() - t0)
    predicted = cost_single_vs_multi(P, [R] * N, cfg)
    med_m, med_s = statistics.median(multi_t), statistics.median(single_t)
    return {
        "P": P, "R": R, "N": N, "repeats": repeats,
        "multi_seconds": multi_t, "single_seconds": single_t,
        "median_multi": med_m, "median_single": med_s,
        "measured_speedup": med_s / med_m,
        "predicted_speedup_tokens": predicted.speedup_tokens,
        "predicted_speedup_flops": predicted.speedup_flops,
    }

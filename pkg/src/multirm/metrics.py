"""Ranking metrics, judge protocols and position-bias diagnostics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np


def argmax_first(scores) -> int:
    return int(np.argmax(np.asarray(scores, dtype=float)))


def ranking_from_scores(scores) -> list[int]:
    """Best-first order; equal scores keep index order."""
    s = np.asarray(scores, dtype=float)
    return [int(i) for i in np.argsort(-s, kind="stable")]


def best_of_n(scores, truth_best: int) -> int:
    if not 0 <= truth_best < len(scores):
        raise ValueError(f"truth index {truth_best} out of range")
    return int(argmax_first(scores) == truth_best)


def pairwise_accuracy(scores, truth_ranking: Sequence[int]) -> float:
    """Fraction of pairs whose scores order them as the ranking does; ties are wrong."""
    pos = {c: k for k, c in enumerate(truth_ranking)}
    if sorted(pos) != list(range(len(scores))):
        raise ValueError("truth ranking is not a permutation of the score indices")
    good = total = 0
    for i, j in combinations(range(len(scores)), 2):
        total += 1
        better, worse = (i, j) if pos[i] < pos[j] else (j, i)
        good += scores[better] > scores[worse]
    return good / total


def kendall_tau(pred_ranking: Sequence, truth_ranking: Sequence) -> float:
    """Tau-a between two tie-free rankings of the same items."""
    if len(set(pred_ranking)) != len(pred_ranking) or set(pred_ranking) != set(truth_ranking) \
            or len(pred_ranking) != len(truth_ranking):
        raise ValueError("rankings must be permutations of the same set")
    n = len(pred_ranking)
    if n < 2:
        raise ValueError("kendall_tau needs at least two items")
    pp = {c: k for k, c in enumerate(pred_ranking)}
    tp = {c: k for k, c in enumerate(truth_ranking)}
    items = list(truth_ranking)
    s = 0
    for a, b in combinations(items, 2):
        s += 1 if (pp[a] - pp[b]) * (tp[a] - tp[b]) > 0 else -1
    return s / (n * (n - 1) / 2)


# ---------------------------------------------------------------------------
# Judge protocols
# ---------------------------------------------------------------------------


class JudgeError(RuntimeError):
    pass


@dataclass
class AggregateResult:
    scores: list[int]
    calls: int
    failures: int
    first_position_wins: int
    decided: int
    presented_first: list[int]
    position_bias: bool

    @property
    def best(self) -> int:
        return argmax_first(self.scores)


def presentation_order(i: int, j: int, presentation: str, rng=None) -> tuple[int, int]:
    """Which of a pair (i < j) is shown first.

    ``fixed``: i first. ``balanced``: i first iff j - i is odd, so every candidate
    is shown first in floor((N-1)/2) or ceil((N-1)/2) of its comparisons.
    ``random``: coin flip from ``rng``.
    """
    if presentation == "fixed":
        return i, j
    if presentation == "balanced":
        return (i, j) if (j - i) % 2 else (j, i)
    if presentation == "random":
        return (i, j) if rng.random() < 0.5 else (j, i)
    raise ValueError(f"unknown presentation {presentation!r}")


def pairwise_aggregate(judge: Callable, candidates: Sequence, presentation: str = "fixed", seed: int = 0,
                       bias_threshold: float = 0.9) -> AggregateResult:
    """Run every unordered comparison once; pseudo-score = win count.

    ``judge(first, second)`` returns 0 when the first-presented candidate wins and
    1 when the second does. A raised exception or any other return value counts as
    a failure and awards no win.
    """
    n = len(candidates)
    if n < 2:
        raise ValueError("pairwise_aggregate needs N >= 2")
    rng = np.random.default_rng(seed)
    wins = [0] * n
    firsts = [0] * n
    calls = failures = first_wins = decided = 0
    for i, j in combinations(range(n), 2):
        a, b = presentation_order(i, j, presentation, rng)
        firsts[a] += 1
        calls += 1
        try:
            verdict = judge(candidates[a], candidates[b])
        except Exception:
            failures += 1
            continue
        if verdict not in (0, 1):
            failures += 1
            continue
        decided += 1
        if verdict == 0:
            wins[a] += 1
            first_wins += 1
        else:
            wins[b] += 1
    rate = first_wins / decided if decided else 0.5
    return AggregateResult(wins, calls, failures, first_wins, decided, firsts,
                           decided > 0 and max(rate, 1.0 - rate) >= bias_threshold)


def direct_select(judge: Callable, candidates: Sequence) -> int:
    """Single N-way call; ``judge(candidates)`` returns the chosen index."""
    if len(candidates) < 2:
        raise ValueError("direct_select needs N >= 2")
    choice = judge(list(candidates))
    if not isinstance(choice, (int, np.integer)) or not 0 <= choice < len(candidates):
        raise JudgeError(f"judge returned invalid choice {choice!r}")
    return int(choice)


# ---------------------------------------------------------------------------
# Dataset-level evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    best_of_n: float
    pairwise_accuracy: float | None
    kendall_tau: float | None
    n_samples: int
    records: list[dict] = field(default_factory=list)
    permutation_sensitivity: dict | None = None

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("records")
        return d

    def write(self, out_dir) -> None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        with open(out / "eval_samples.jsonl", "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def evaluate(score_records: Sequence[dict], truth: Sequence) -> EvalResult:
    """Join score records (``id``, ``scores``) with truth samples by id."""
    by_id = {s.id: s for s in truth}
    records = []
    for rec in score_records:
        sample = by_id.get(rec["id"])
        if sample is None:
            raise KeyError(f"no ground truth for sample {rec['id']!r}")
        scores = rec["scores"]
        if len(scores) != sample.n:
            raise ValueError(f"sample {rec['id']}: {len(scores)} scores for {sample.n} responses")
        r = {"id": rec["id"], "best_hit": best_of_n(scores, sample.best_index), "pair_acc": None, "tau": None}
        if sample.ranking is not None:
            r["pair_acc"] = pairwise_accuracy(scores, sample.ranking)
            r["tau"] = kendall_tau(ranking_from_scores(scores), sample.ranking)
        records.append(r)
    if not records:
        raise ValueError("no score records to evaluate")

    def mean(key):
        vals = [r[key] for r in records if r[key] is not None]
        return float(np.mean(vals)) if vals else None

    return EvalResult(mean("best_hit"), mean("pair_acc"), mean("tau"), len(records), records)


def permutation_sensitivity(weights, sample, n_perms: int, seed: int, mode: str = "multi") -> dict:
    """Score ``sample`` under random response orders and measure argmax agreement.

    Agreement compares the chosen response's tokens with the unpermuted choice,
    so duplicate responses count as the same answer.
    """
    from .packing import apply_permutation
    from .scoring import score

    if n_perms < 2:
        raise ValueError("n_perms must be >= 2")
    base = score(weights, sample, mode).scores
    chosen = sample.responses[argmax_first(base)]
    rng = np.random.default_rng(seed)
    per_response = [[] for _ in range(sample.n)]
    agree = 0
    for _ in range(n_perms):
        perm = rng.permutation(sample.n).tolist()
        s = score(weights, apply_permutation(sample, perm), mode).scores
        for slot, old in enumerate(perm):
            per_response[old].append(s[slot])
        agree += list(sample.responses[perm[argmax_first(s)]]) == list(chosen)
    return {
        "n_perms": n_perms,
        "agreement": agree / n_perms,
        "score_std": [float(np.std(v)) for v in per_response],
        "score_mean": [float(np.mean(v)) for v in per_response],
    }

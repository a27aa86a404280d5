"""Synthetic preference data with a planted ground truth.

Each context hides a small answer key: ``key_size`` distinct tokens drawn from
the reserved low band ``[0, key_band)`` and inserted among filler tokens drawn
from ``[key_band, vocab_size - 1)``. The response at planted rank ``k`` (0 = best)
has a fraction ``strength * ((N-1-k)/(N-1)) ** profile`` of its tokens drawn
from the key; the rest is filler that never occurs in the context. Response
slots are shuffled, so the best response can sit anywhere.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np

from .packing import PreferenceSample
from .pged import PairwiseJudgment
from .seeding import derive_seed


@dataclass(frozen=True)
class GeneratorSpec:
    n_samples: int = 2048
    n_eval: int = 256
    n_responses: int = 4
    context_len: tuple[int, int] = (32, 128)
    response_len: tuple[int, int] = (8, 32)
    strength: float = 0.9
    vocab_size: int = 512
    key_size: int = 8
    key_band: int = 64
    profile: float = 2.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "context_len", tuple(self.context_len))
        object.__setattr__(self, "response_len", tuple(self.response_len))
        if self.n_samples < 0 or self.n_eval < 0:
            raise ValueError("sample counts must be non-negative")
        if self.n_responses < 2:
            raise ValueError("n_responses must be >= 2")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError("strength must lie in [0, 1]")
        lo, hi = self.response_len
        if not 1 <= lo <= hi:
            raise ValueError("response_len must satisfy 1 <= min <= max")
        lo, hi = self.context_len
        if not self.key_size <= lo <= hi:
            raise ValueError("context_len must satisfy key_size <= min <= max")
        if not 1 <= self.key_size <= self.key_band:
            raise ValueError("key_size must lie in [1, key_band]")
        filler = self.vocab_size - 1 - self.key_band
        if filler < hi + self.response_len[1]:
            raise ValueError("vocabulary too small for the filler band")
        if self.profile <= 0:
            raise ValueError("profile must be positive")

    @property
    def separator_id(self) -> int:
        return self.vocab_size - 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["context_len"] = list(self.context_len)
        d["response_len"] = list(self.response_len)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown GeneratorSpec fields: {sorted(unknown)}")
        return cls(**d)


def key_fraction(spec: GeneratorSpec, rank: int) -> float:
    n = spec.n_responses
    return spec.strength * ((n - 1 - rank) / (n - 1)) ** spec.profile


def _one_sample(spec: GeneratorSpec, split: str, index: int) -> PreferenceSample:
    rng = np.random.default_rng(derive_seed(spec.seed, "sample", split, index))
    n = spec.n_responses
    P = int(rng.integers(spec.context_len[0], spec.context_len[1] + 1))
    key = rng.choice(spec.key_band, spec.key_size, replace=False)
    context = rng.integers(spec.key_band, spec.separator_id, size=P)
    context[rng.choice(P, spec.key_size, replace=False)] = key
    in_ctx = np.zeros(spec.vocab_size, dtype=bool)
    in_ctx[context] = True
    pool = np.flatnonzero(~in_ctx[spec.key_band : spec.separator_id]) + spec.key_band

    by_rank = []
    for k in range(n):
        L = int(rng.integers(spec.response_len[0], spec.response_len[1] + 1))
        nk = int(round(key_fraction(spec, k) * L))
        toks = np.concatenate([rng.choice(key, nk), rng.choice(pool, L - nk)])
        rng.shuffle(toks)
        by_rank.append(toks.tolist())
    slot_of_rank = rng.permutation(n)
    responses = [None] * n
    for k, slot in enumerate(slot_of_rank):
        responses[slot] = by_rank[k]
    return PreferenceSample(
        id=f"{split}-{index:06d}",
        context=context.tolist(),
        responses=responses,
        ranking=[int(s) for s in slot_of_rank],
    )


def generate_ranked(spec: GeneratorSpec, split: str = "train", n: int | None = None) -> list[PreferenceSample]:
    """Samples keyed by ``(seed, split, index)``; ``n`` defaults to the split's size."""
    if n is None:
        n = spec.n_eval if split == "eval" else spec.n_samples
    return [_one_sample(spec, split, i) for i in range(n)]


def token_overlap_oracle(sample: PreferenceSample) -> list[float]:
    """Fraction of each response's tokens that also occur in the context."""
    ctx = set(sample.context)
    return [sum(t in ctx for t in r) / len(r) for r in sample.responses]


def judgments_for_ranking(question_id: str, ranking: list[str], n_annotators: int, flip_prob: float,
                          tie_prob: float, rng) -> list[PairwiseJudgment]:
    """Every annotator judges every unordered pair once against the planted order."""
    if not (0 <= flip_prob <= 1 and 0 <= tie_prob <= 1 and flip_prob + tie_prob <= 1):
        raise ValueError("need flip_prob, tie_prob in [0, 1] with flip_prob + tie_prob <= 1")
    out = []
    for ann in range(n_annotators):
        for i, j in combinations(range(len(ranking)), 2):
            a, b = ranking[i], ranking[j]
            if rng.random() < 0.5:
                a, b = b, a
            u = rng.random()
            if u < tie_prob:
                winner = "tie"
            else:
                truth = "a" if a == ranking[i] else "b"
                flipped = u < tie_prob + flip_prob
                winner = {"a": "b", "b": "a"}[truth] if flipped else truth
            out.append(PairwiseJudgment(question_id, a, b, winner, f"ann{ann:03d}"))
    return out


def generate_judgments(samples: list[PreferenceSample], n_annotators: int, flip_prob: float, tie_prob: float,
                       seed: int) -> list[PairwiseJudgment]:
    """Noisy judgments over each sample's responses; candidates are named by slot index."""
    out = []
    for s in samples:
        if s.ranking is None:
            raise ValueError(f"sample {s.id} has no full ranking")
        rng = np.random.default_rng(derive_seed(seed, "judgments", s.id))
        out.extend(judgments_for_ranking(s.id, [str(i) for i in s.ranking], n_annotators, flip_prob,
                                         tie_prob, rng))
    return out


def load_spec(path) -> GeneratorSpec:
    with open(path) as fh:
        return GeneratorSpec.from_dict(json.load(fh))

"""Packing a prompt and N candidate responses into one token sequence.

Layout: ``x ++ y_1 ++ SEP ++ y_2 ++ SEP ++ ... ++ y_N`` with no leading or
trailing separator. Response ``i`` spans ``[s_i, e_i]`` inclusive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

DEFAULT_SEPARATOR = 511


@dataclass
class PreferenceSample:
    id: str
    context: list[int]
    responses: list[list[int]]
    ranking: list[int] | None = None  # best-first permutation of response indices
    best: int | None = None
    sources: list[str] | None = None

    def __post_init__(self):
        if self.ranking is None and self.best is None:
            raise ValueError(f"sample {self.id}: needs a ranking or a best index")
        n = len(self.responses)
        if self.ranking is not None:
            if sorted(self.ranking) != list(range(n)):
                raise ValueError(f"sample {self.id}: ranking is not a permutation of 0..{n - 1}")
            if self.best is not None and self.best != self.ranking[0]:
                raise ValueError(f"sample {self.id}: best disagrees with ranking[0]")
        if self.best is not None and not 0 <= self.best < n:
            raise ValueError(f"sample {self.id}: best index {self.best} out of range")
        if self.sources is not None and len(self.sources) != n:
            raise ValueError(f"sample {self.id}: one source tag per response required")

    @property
    def n(self) -> int:
        return len(self.responses)

    @property
    def best_index(self) -> int:
        return self.ranking[0] if self.ranking is not None else self.best

    def to_json(self) -> dict:
        rec = {"id": self.id, "context": list(self.context), "responses": [list(r) for r in self.responses]}
        if self.ranking is not None:
            rec["ranking"] = list(self.ranking)
        else:
            rec["best"] = self.best
        if self.sources is not None:
            rec["sources"] = list(self.sources)
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "PreferenceSample":
        return cls(
            id=str(rec["id"]),
            context=[int(t) for t in rec["context"]],
            responses=[[int(t) for t in r] for r in rec["responses"]],
            ranking=[int(i) for i in rec["ranking"]] if rec.get("ranking") is not None else None,
            best=int(rec["best"]) if rec.get("best") is not None else None,
            sources=rec.get("sources"),
        )


@dataclass
class PackedSequence:
    tokens: list[int]
    boundaries: list[tuple[int, int]]
    separator_id: int
    n_responses: int
    context_len: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tokens)


def pack(sample: PreferenceSample, separator_id: int = DEFAULT_SEPARATOR, max_seq_len: int | None = None,
         min_responses: int = 2) -> PackedSequence:
    if sample.n < min_responses:
        raise ValueError(f"sample {sample.id}: need at least {min_responses} responses, got {sample.n}")
    if any(len(r) == 0 for r in sample.responses):
        raise ValueError(f"sample {sample.id}: empty response")
    if separator_id in sample.context or any(separator_id in r for r in sample.responses):
        raise ValueError(f"sample {sample.id}: separator id {separator_id} occurs inside the input")
    required = len(sample.context) + sum(len(r) for r in sample.responses) + sample.n - 1
    if max_seq_len is not None and required > max_seq_len:
        raise ValueError(f"sample {sample.id}: packed length {required} exceeds max_seq_len {max_seq_len}")

    tokens = list(sample.context)
    bounds = []
    for i, resp in enumerate(sample.responses):
        if i:
            tokens.append(separator_id)
        start = len(tokens)
        tokens.extend(resp)
        bounds.append((start, len(tokens) - 1))
    return PackedSequence(tokens, bounds, separator_id, sample.n, len(sample.context))


def boundaries(packed: PackedSequence) -> list[tuple[int, int]]:
    return list(packed.boundaries)


def recompute_boundaries(tokens, separator_id: int, context_len: int) -> list[tuple[int, int]]:
    """Derive response spans from separator positions alone."""
    seps = [i for i, t in enumerate(tokens) if t == separator_id and i >= context_len]
    starts = [context_len] + [p + 1 for p in seps]
    ends = [p - 1 for p in seps] + [len(tokens) - 1]
    return list(zip(starts, ends))


def unpack(packed: PackedSequence) -> tuple[list[int], list[list[int]]]:
    ctx = packed.tokens[: packed.context_len]
    return ctx, [packed.tokens[s : e + 1] for s, e in packed.boundaries]


def apply_permutation(sample: PreferenceSample, perm) -> PreferenceSample:
    """New slot ``j`` holds old response ``perm[j]``; labels follow their response."""
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(sample.n)):
        raise ValueError("not a permutation")
    inv = {old: new for new, old in enumerate(perm)}
    return PreferenceSample(
        id=sample.id,
        context=list(sample.context),
        responses=[list(sample.responses[p]) for p in perm],
        ranking=[inv[r] for r in sample.ranking] if sample.ranking is not None else None,
        best=inv[sample.best] if sample.best is not None else None,
        sources=[sample.sources[p] for p in perm] if sample.sources is not None else None,
    )


def shuffle_responses(sample: PreferenceSample, seed) -> tuple[PreferenceSample, list[int]]:
    perm = np.random.default_rng(seed).permutation(sample.n).tolist()
    return apply_permutation(sample, perm), perm


def read_samples(path) -> list[PreferenceSample]:
    with open(path) as fh:
        return [PreferenceSample.from_json(json.loads(line)) for line in fh if line.strip()]


def write_samples(samples: Iterable[PreferenceSample], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), separators=(",", ":")) + "\n")

"""Deterministic trainer for the multi-response (CE), single-response (BT) and
Plackett-Luce objectives: AdamW, linear decay without warmup, gradient
accumulation over an effective batch, per-epoch response shuffling."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import PRECISIONS
from .backbone import ModelWeights, attach_adapters, bind, make_adapters
from .metrics import best_of_n, pairwise_accuracy
from .packing import PreferenceSample, apply_permutation
from .scoring import bt_loss, ce_loss, multi_scores, pl_loss, score_multi, score_single, single_score
from .seeding import derive_seed

log = logging.getLogger(__name__)

OBJECTIVES = ("ce-multi", "bt-single", "pl-multi")


@dataclass
class TrainConfig:
    objective: str = "ce-multi"
    epochs: int = 3
    batch_size: int = 16
    lr: float = 2e-3
    weight_decay: float = 0.0
    seed: int = 0
    precision: str = "ref64"
    shuffle_responses: bool = True
    # "full" trains every weight; "lora" freezes the backbone and trains
    # adapters plus the value head.
    finetune: str = "full"
    lora_rank: int = 4
    lora_alpha: float = 4.0
    lora_dropout: float = 0.0
    eval_every_epoch: bool = True

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr < 0 or self.weight_decay < 0:
            raise ValueError("epochs, batch_size must be positive; lr, weight_decay non-negative")
        if self.precision not in PRECISIONS:
            raise ValueError(f"unknown precision {self.precision!r}")
        if self.finetune not in ("full", "lora"):
            raise ValueError(f"unknown finetune mode {self.finetune!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    skipped: int = 0
    final_weights: str | None = None

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "train_log.jsonl", "w") as fh:
            for rec in self.steps:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        summary = {"n_steps": len(self.steps), "epochs": self.epochs, "skipped": self.skipped,
                   "final_weights": self.final_weights}
        (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def lr_at(step: int, total_steps: int, peak: float) -> float:
    """Linear decay from ``peak`` at step 0 to zero at ``total_steps``; no warmup."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return peak * (1.0 - step / total_steps)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float,
               weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """In-place decoupled-weight-decay Adam update of ``params``."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ag.ShapeError(f"adamw_step: grad shape {g.shape} != param shape {params[name].shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adamw_step: non-finite gradient for {name}")
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def _sample_loss(weights, sample: PreferenceSample, objective: str, bound, rng) -> ag.Tensor:
    if objective == "ce-multi":
        return ce_loss(multi_scores(weights, sample, bound, rng), sample.best_index)
    if objective == "pl-multi":
        return pl_loss(multi_scores(weights, sample, bound, rng), sample.ranking)
    # bt-single: (best, other) pairs; the best response is scored once and shared
    best = sample.best_index
    r_w = single_score(weights, sample.context, sample.responses[best], bound, rng)
    pair_losses = [
        bt_loss(r_w, single_score(weights, sample.context, y, bound, rng))
        for j, y in enumerate(sample.responses) if j != best
    ]
    total = pair_losses[0]
    for pl in pair_losses[1:]:
        total = ag.add(total, pl)
    return ag.scale(total, 1.0 / len(pair_losses))


def _fits(weights: ModelWeights, sample: PreferenceSample, objective: str) -> bool:
    cfg = weights.config
    if objective == "bt-single":
        return all(len(sample.context) + len(y) <= cfg.max_seq_len for y in sample.responses)
    packed_len = len(sample.context) + sum(len(y) for y in sample.responses) + sample.n - 1
    return packed_len <= cfg.max_seq_len


def trainable_names(weights: ModelWeights, finetune: str) -> set[str]:
    names = set(weights.arrays())
    if finetune == "full":
        return names
    return {n for n in names if n.startswith(("lora.", "head."))}


def prepare_weights(weights: ModelWeights, config: TrainConfig) -> ModelWeights:
    """Private copy at the configured precision, with adapters attached in LoRA mode."""
    w = weights.astype(PRECISIONS[config.precision])
    if config.finetune == "lora" and not w.adapters:
        w = attach_adapters(
            w, make_adapters(w.config, config.lora_rank, config.lora_alpha, config.lora_dropout),
            derive_seed(config.seed, "adapters"),
        )
    return w


def evaluate_weights(weights: ModelWeights, samples: list[PreferenceSample], mode: str) -> dict:
    hits, pairs = [], []
    for s in samples:
        sv = score_multi(weights, s) if mode == "multi" else score_single(weights, s)
        hits.append(best_of_n(sv.scores, s.best_index))
        if s.ranking is not None:
            pairs.append(pairwise_accuracy(sv.scores, s.ranking))
    return {
        "best_of_n": float(np.mean(hits)) if hits else None,
        "pairwise_accuracy": float(np.mean(pairs)) if pairs else None,
        "n": len(samples),
    }


def train(dataset: list[PreferenceSample], eval_set: list[PreferenceSample] | None, weights: ModelWeights,
          config: TrainConfig, progress=None) -> tuple[ModelWeights, TrainLog]:
    """Train a private copy of ``weights``; the input weights are never mutated."""
    if not dataset:
        raise ValueError("empty training set")
    if weights.head is None:
        raise ValueError("weights have no value head")
    if config.objective == "pl-multi" and any(s.ranking is None for s in dataset):
        raise ValueError("pl-multi requires full rankings on every training sample")

    w = prepare_weights(weights, config)
    names = sorted(trainable_names(w, config.finetune))
    arrays = w.arrays()
    params = {n: arrays[n] for n in names}
    state = AdamState()
    log_ = TrainLog()
    eval_mode = "single" if config.objective == "bt-single" else "multi"

    n_batches = math.ceil(len(dataset) / config.batch_size)
    total_steps = config.epochs * n_batches
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng(derive_seed(config.seed, "order", epoch)).permutation(len(dataset))
        used = 0
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            bound = bind(w, trainable=set(names))
            grads = {n: np.zeros_like(p) for n, p in params.items()}
            losses = []
            for i in idx:
                sample = dataset[int(i)]
                if not _fits(w, sample, config.objective):
                    log_.skipped += 1
                    log.warning("skipping overlength sample %s", sample.id)
                    continue
                if config.shuffle_responses:
                    perm = np.random.default_rng(
                        derive_seed(config.seed, "shuffle", epoch, sample.id)
                    ).permutation(sample.n)
                    sample = apply_permutation(sample, perm)
                drop_rng = np.random.default_rng(derive_seed(config.seed, "dropout", epoch, sample.id))
                loss = _sample_loss(w, sample, config.objective, bound, drop_rng)
                for t in bound.values():
                    t.grad = None
                loss.backward()
                for n in names:
                    if bound[n].grad is not None:
                        grads[n] += bound[n].grad
                losses.append(loss.item())
            lr = lr_at(step, total_steps, config.lr)
            if losses:
                for n in grads:
                    grads[n] /= len(losses)
                adamw_step(params, grads, state, lr, config.weight_decay)
                used += len(losses)
            mean_loss = float(np.mean(losses)) if losses else None
            log_.steps.append({"step": step, "epoch": epoch, "lr": lr, "loss": mean_loss, "n": len(losses)})
            step += 1
            if progress is not None:
                progress(step, total_steps, mean_loss)
        if used == 0:
            raise RuntimeError(f"epoch {epoch}: every sample was skipped")
        rec = {"epoch": epoch, "train_loss": float(np.mean([s["loss"] for s in log_.steps
                                                              if s["epoch"] == epoch and s["loss"] is not None]))}
        if eval_set and config.eval_every_epoch:
            rec.update(evaluate_weights(w, eval_set, eval_mode))
        log_.epochs.append(rec)
        log.info("epoch %d: %s", epoch, rec)
    return w, log_

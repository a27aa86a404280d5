"""Toy decoder-only causal transformer with optional low-rank adapters.

Pre-norm blocks (RMS norm, multi-head causal self-attention, 4x MLP), learned
absolute position embeddings and a final RMS norm. Linear weights are stored
``(out, in)``. The value head lives in :mod:`multirm.scoring`.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor

LINEAR_NAMES = ("wq", "wk", "wv", "wo", "w_up", "w_down")


@dataclass(frozen=True)
class BackboneConfig:
    vocab_size: int = 512
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq_len: int = 512
    activation: str = "gelu"
    # "sinusoid": position table starts as a scaled sinusoid table (still trained);
    # "normal": same N(0, 0.02) draw as every other matrix.
    pos_init: str = "sinusoid"
    pos_scale: float = 0.3

    def __post_init__(self):
        for name in ("vocab_size", "d", "n_layers", "n_heads", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"BackboneConfig.{name} must be positive")
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if self.activation not in ag.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.pos_init not in ("sinusoid", "normal"):
            raise ValueError(f"unknown pos_init {self.pos_init!r}")

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    @property
    def separator_id(self) -> int:
        return self.vocab_size - 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)


@dataclass
class LoraAdapter:
    """Low-rank update ``(alpha / rank) * B @ A`` added to a frozen base matrix."""

    target: str
    rank: int = 4
    alpha: float = 4.0
    dropout: float = 0.0
    A: np.ndarray | None = None  # (rank, in)
    B: np.ndarray | None = None  # (out, rank)

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("LoRA rank must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("LoRA dropout must be in [0, 1)")

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def n_params(self) -> int:
        return self.A.size + self.B.size

    def delta(self) -> np.ndarray:
        return self.scaling * (self.B @ self.A)

    def meta(self) -> dict:
        return {"target": self.target, "rank": self.rank, "alpha": self.alpha, "dropout": self.dropout}


@dataclass
class ModelWeights:
    config: BackboneConfig
    params: dict[str, np.ndarray]
    head: object | None = None  # scoring.ValueHeadParams
    adapters: list[LoraAdapter] = field(default_factory=list)

    @property
    def dtype(self):
        return self.params["tok_emb"].dtype

    def copy(self) -> "ModelWeights":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "ModelWeights":
        out = self.copy()
        for k, v in out.params.items():
            out.params[k] = v.astype(dtype)
        for ad in out.adapters:
            ad.A = ad.A.astype(dtype)
            ad.B = ad.B.astype(dtype)
        if out.head is not None:
            out.head = out.head.astype(dtype)
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        """Every parameter array keyed by a flat name, in declaration order."""
        out = dict(self.params)
        for ad in self.adapters:
            out[f"lora.{ad.target}.A"] = ad.A
            out[f"lora.{ad.target}.B"] = ad.B
        if self.head is not None:
            for k, v in self.head.arrays().items():
                out[f"head.{k}"] = v
        return out

    def set_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        ads = {ad.target: ad for ad in self.adapters}
        for name, value in arrays.items():
            if name.startswith("lora."):
                target, part = name[5:].rsplit(".", 1)
                setattr(ads[target], part, value)
            elif name.startswith("head."):
                setattr(self.head, name[5:], value)
            else:
                self.params[name] = value

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays().values())


def param_shapes(config: BackboneConfig) -> dict[str, tuple[int, ...]]:
    d = config.d
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_seq_len, d),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes[p + "attn_norm"] = (d,)
        for n in ("wq", "wk", "wv", "wo"):
            shapes[p + n] = (d, d)
        shapes[p + "mlp_norm"] = (d,)
        shapes[p + "w_up"] = (4 * d, d)
        shapes[p + "w_down"] = (d, 4 * d)
    shapes["final_norm"] = (d,)
    return shapes


def linear_targets(config: BackboneConfig) -> list[str]:
    return [f"layers.{i}.{n}" for i in range(config.n_layers) for n in LINEAR_NAMES]


def sinusoid_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    freq = 10000.0 ** (-np.arange(0, d, 2) / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: d // 2])
    return table


def init_model(config: BackboneConfig, seed: int, dtype=np.float64) -> ModelWeights:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("norm"):
            params[name] = np.ones(shape)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape)
    if config.pos_init == "sinusoid":
        params["pos_emb"] = config.pos_scale * sinusoid_table(config.max_seq_len, config.d)
    params = {k: v.astype(dtype) for k, v in params.items()}
    return ModelWeights(config=config, params=params)


def make_adapters(
    config: BackboneConfig, rank: int = 4, alpha: float = 4.0, dropout: float = 0.0, targets=None
) -> list[LoraAdapter]:
    targets = linear_targets(config) if targets is None else list(targets)
    return [LoraAdapter(t, rank=rank, alpha=alpha, dropout=dropout) for t in targets]


def attach_adapters(weights: ModelWeights, adapters: list[LoraAdapter], seed: int) -> ModelWeights:
    """Return a copy of ``weights`` with fresh adapters: A random, B zero."""
    rng = np.random.default_rng(seed)
    out = weights.copy()
    existing = {ad.target for ad in out.adapters}
    for spec in adapters:
        if spec.target not in out.params or out.params[spec.target].ndim != 2:
            raise KeyError(f"unknown adapter target {spec.target!r}")
        if spec.target in existing:
            raise ValueError(f"adapter already attached to {spec.target!r}")
        n_out, n_in = out.params[spec.target].shape
        ad = LoraAdapter(spec.target, spec.rank, spec.alpha, spec.dropout)
        ad.A = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(spec.rank, n_in)).astype(weights.dtype)
        ad.B = np.zeros((n_out, spec.rank), dtype=weights.dtype)
        out.adapters.append(ad)
        existing.add(spec.target)
    return out


def bind(weights: ModelWeights, trainable=None) -> dict[str, Tensor]:
    """Wrap every array as a leaf Tensor; names in ``trainable`` require grad.

    ``trainable`` is a set of names, a predicate, or ``"all"``. The tensors share
    memory with ``weights``.
    """
    out = {}
    for name, arr in weights.arrays().items():
        if trainable == "all":
            req = True
        elif callable(trainable):
            req = bool(trainable(name))
        else:
            req = trainable is not None and name in trainable
        out[name] = Tensor(arr, requires_grad=req)
    return out


def _linear(x: Tensor, name: str, bound: dict[str, Tensor], adapters: dict, rng) -> Tensor:
    y = ag.matmul(x, ag.transpose(bound[name]))
    ad = adapters.get(name)
    if ad is None:
        return y
    h = x
    if ad.dropout > 0 and rng is not None:
        keep = (rng.random(x.shape) >= ad.dropout).astype(x.dtype) / (1.0 - ad.dropout)
        h = ag.mul(h, Tensor(keep))
    h = ag.matmul(ag.matmul(h, ag.transpose(bound[f"lora.{name}.A"])), ag.transpose(bound[f"lora.{name}.B"]))
    return ag.add(y, ag.scale(h, ad.scaling))


def check_tokens(config: BackboneConfig, tokens) -> np.ndarray:
    toks = np.asarray(tokens, dtype=np.int64)
    if toks.ndim != 1 or toks.size == 0:
        raise ValueError("tokens must be a non-empty 1-d sequence")
    if toks.size > config.max_seq_len:
        raise ValueError(f"sequence length {toks.size} exceeds max_seq_len {config.max_seq_len}")
    if toks.min() < 0 or toks.max() >= config.vocab_size:
        raise ValueError(f"token id out of range [0, {config.vocab_size})")
    return toks


def forward_hidden(weights: ModelWeights, tokens, bound: dict[str, Tensor] | None = None, rng=None) -> Tensor:
    """Hidden states (L, d) after the final norm.

    ``bound`` supplies leaf tensors (see :func:`bind`) when gradients are
    needed; ``rng`` enables adapter dropout.
    """
    cfg = weights.config
    toks = check_tokens(cfg, tokens)
    if bound is None:
        bound = bind(weights)
    adapters = {ad.target: ad for ad in weights.adapters}
    L, H, dh = toks.size, cfg.n_heads, cfg.head_dim

    x = ag.add(ag.embedding(bound["tok_emb"], toks), ag.gather_rows(bound["pos_emb"], np.arange(L)))
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h = ag.rms_norm(x, bound[p + "attn_norm"])
        q, k, v = (
            ag.transpose(ag.reshape(_linear(h, p + n, bound, adapters, rng), (L, H, dh)), (1, 0, 2))
            for n in ("wq", "wk", "wv")
        )
        att = ag.matmul(ag.softmax(ag.causal_scores(q, k)), v)
        att = ag.reshape(ag.transpose(att, (1, 0, 2)), (L, cfg.d))
        x = ag.add(x, _linear(att, p + "wo", bound, adapters, rng))
        h = ag.rms_norm(x, bound[p + "mlp_norm"])
        h = ag.activation(_linear(h, p + "w_up", bound, adapters, rng), cfg.activation)
        x = ag.add(x, _linear(h, p + "w_down", bound, adapters, rng))
    return ag.rms_norm(x, bound["final_norm"])

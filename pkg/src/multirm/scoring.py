"""Response representations, the two-layer value head and the preference losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor
from .backbone import BackboneConfig, ModelWeights, bind, forward_hidden, init_model
from .packing import PreferenceSample, pack
from .seeding import derive_seed

REPRESENTATIONS = ("last", "first-last-concat", "first-plus-last", "first-minus-last", "mean")


@dataclass
class ValueHeadParams:
    W1: np.ndarray  # (h, in)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: np.ndarray  # ()
    activation: str = "silu"
    representation: str = "last"

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def astype(self, dtype) -> "ValueHeadParams":
        return ValueHeadParams(
            self.W1.astype(dtype), self.b1.astype(dtype), self.w2.astype(dtype),
            np.asarray(self.b2, dtype=dtype), self.activation, self.representation,
        )

    def meta(self) -> dict:
        return {"hidden": self.hidden, "input_dim": self.input_dim,
                "activation": self.activation, "representation": self.representation}


@dataclass
class ScoreVector:
    scores: list[float]
    provenance: str  # "multi" | "single"
    id: str = ""

    @property
    def best(self) -> int:
        return argmax_first(self.scores)

    def to_json(self) -> dict:
        return {"id": self.id, "scores": list(self.scores), "best": self.best, "mode": self.provenance}


def argmax_first(scores) -> int:
    """Argmax with ties resolved to the smallest index."""
    return int(np.argmax(np.asarray(scores, dtype=float)))


def representation_dim(d: int, mode: str) -> int:
    if mode not in REPRESENTATIONS:
        raise ValueError(f"unknown representation mode {mode!r}")
    return 2 * d if mode == "first-last-concat" else d


def init_value_head(d: int, h: int, activation: str = "silu", seed: int = 0,
                    representation: str = "last", std: float = 0.01, dtype=np.float64) -> ValueHeadParams:
    """Weights ~ N(0, std^2) with std 0.01; biases exactly zero."""
    if d < 1 or h < 1:
        raise ValueError("value head needs d >= 1 and h >= 1")
    if activation not in ag.ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    in_dim = representation_dim(d, representation)
    return ValueHeadParams(
        W1=rng.normal(0.0, std, size=(h, in_dim)).astype(dtype),
        b1=np.zeros(h, dtype=dtype),
        w2=rng.normal(0.0, std, size=h).astype(dtype),
        b2=np.zeros((), dtype=dtype),
        activation=activation,
        representation=representation,
    )


def init_reward_model(config: BackboneConfig, seed: int, head_hidden: int = 32, activation: str = "silu",
                      representation: str = "last", dtype=np.float64) -> ModelWeights:
    weights = init_model(config, derive_seed(seed, "backbone"), dtype=dtype)
    weights.head = init_value_head(config.d, head_hidden, activation, derive_seed(seed, "value_head"),
                                   representation, dtype=dtype)
    return weights


def extract_representation(H, bounds, mode: str = "last", head: ValueHeadParams | None = None) -> Tensor:
    """Stack one representation per response span into an ``(N, dim)`` tensor."""
    H = as_tensor(H)
    L, d = H.shape
    if mode not in REPRESENTATIONS:
        raise ValueError(f"unknown representation mode {mode!r}")
    if head is not None and head.input_dim != representation_dim(d, mode):
        raise ValueError(
            f"representation {mode!r} yields dim {representation_dim(d, mode)} "
            f"but value head expects {head.input_dim}"
        )
    for s, e in bounds:
        if not 0 <= s <= e < L:
            raise ValueError(f"invalid span ({s}, {e}) for length {L}")
    starts = [s for s, _ in bounds]
    ends = [e for _, e in bounds]
    if mode == "last":
        return ag.gather_rows(H, ends)
    if mode == "mean":
        avg = np.zeros((len(bounds), L), dtype=H.dtype)
        for i, (s, e) in enumerate(bounds):
            avg[i, s : e + 1] = 1.0 / (e - s + 1)
        return ag.matmul(Tensor(avg), H)
    first, last = ag.gather_rows(H, starts), ag.gather_rows(H, ends)
    if mode == "first-last-concat":
        return ag.concat([first, last], axis=1)
    if mode == "first-plus-last":
        return ag.add(first, last)
    return ag.sub(first, last)


def value_head(h, params: ValueHeadParams, bound: dict[str, Tensor] | None = None) -> Tensor:
    """``w2 . act(W1 h + b1) + b2`` for one vector or each row of a matrix."""
    h = as_tensor(h)
    if h.shape[-1] != params.input_dim:
        raise ag.ShapeError(f"value_head: input dim {h.shape[-1]} != head input dim {params.input_dim}")
    if bound is None:
        bound = {f"head.{k}": Tensor(v) for k, v in params.arrays().items()}
    W1, b1, w2, b2 = (bound[f"head.{k}"] for k in ("W1", "b1", "w2", "b2"))
    single = h.ndim == 1
    x = ag.reshape(h, (1, h.shape[0])) if single else h
    z = ag.activation(ag.add(ag.matmul(x, ag.transpose(W1)), b1), params.activation)
    r = ag.add(ag.matmul(z, w2), b2)
    return ag.reshape(r, ()) if single else r


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def ce_loss(scores, best) -> Tensor:
    """``-log softmax(scores)[best]`` with max subtraction.

    A ``(B, N)`` score matrix with one best index per row gives a ``(B,)``
    vector of per-row losses.
    """
    scores = as_tensor(scores)
    if scores.ndim == 2:
        B, n = scores.shape
        best = np.asarray(best, dtype=np.int64).reshape(-1)
        if best.shape != (B,):
            raise ValueError(f"need one best index per row, got {best.shape[0]} for {B} rows")
    else:
        n = scores.shape[0] if scores.ndim == 1 else 0
        best = np.asarray([best], dtype=np.int64)
    if scores.ndim not in (1, 2) or n < 2:
        raise ValueError("ce_loss needs a score vector (or matrix of rows) with N >= 2")
    if best.min() < 0 or best.max() >= n:
        raise ValueError(f"best index out of range for N={n}")
    if scores.ndim == 1:
        return ag.scale(ag.gather_rows(ag.log_softmax(scores), int(best[0])), -1.0)
    flat = ag.reshape(ag.log_softmax(scores), (B * n,))
    return ag.scale(ag.gather_rows(flat, np.arange(B) * n + best), -1.0)


def bt_loss(r_w, r_l) -> Tensor:
    """``-log sigmoid(r_w - r_l)``."""
    return ag.scale(ag.log_sigmoid(ag.sub(as_tensor(r_w), as_tensor(r_l))), -1.0)


def pl_loss(scores, ranking) -> Tensor:
    """Plackett-Luce negative log-likelihood of a best-first ranking."""
    scores = as_tensor(scores)
    ranking = [int(i) for i in ranking]
    if sorted(ranking) != list(range(scores.shape[0])):
        raise ValueError("pl_loss: ranking is not a permutation of the score indices")
    terms = []
    for k in range(len(ranking) - 1):
        tail = ag.gather_rows(scores, ranking[k:])
        terms.append(ag.gather_rows(ag.log_softmax(tail), 0))
    # the last position is a certain choice: log 1 = 0
    total = terms[0]
    for t in terms[1:]:
        total = ag.add(total, t)
    return ag.scale(total, -1.0)


# ---------------------------------------------------------------------------
# Scoring passes
# ---------------------------------------------------------------------------


def multi_scores(weights: ModelWeights, sample: PreferenceSample, bound=None, rng=None,
                 min_responses: int = 2) -> Tensor:
    """Scores for all N responses from one forward pass over the packed sequence."""
    cfg = weights.config
    packed = pack(sample, cfg.separator_id, cfg.max_seq_len, min_responses=min_responses)
    if bound is None:
        bound = bind(weights)
    H = forward_hidden(weights, packed.tokens, bound, rng)
    reps = extract_representation(H, packed.boundaries, weights.head.representation, weights.head)
    return value_head(reps, weights.head, bound)


def single_score(weights: ModelWeights, context, response, bound=None, rng=None) -> Tensor:
    """Score one response in isolation from a forward pass over ``[x; y]``."""
    cfg = weights.config
    tokens = list(context) + list(response)
    if len(response) == 0:
        raise ValueError("empty response")
    if cfg.separator_id in tokens:
        raise ValueError(f"separator id {cfg.separator_id} occurs inside the input")
    if len(tokens) > cfg.max_seq_len:
        raise ValueError(f"sequence length {len(tokens)} exceeds max_seq_len {cfg.max_seq_len}")
    if bound is None:
        bound = bind(weights)
    H = forward_hidden(weights, tokens, bound, rng)
    reps = extract_representation(H, [(len(context), len(tokens) - 1)], weights.head.representation, weights.head)
    return ag.reshape(value_head(reps, weights.head, bound), ())


def score_multi(weights: ModelWeights, sample: PreferenceSample, min_responses: int = 2) -> ScoreVector:
    r = multi_scores(weights, sample, min_responses=min_responses)
    return ScoreVector([float(v) for v in r.data], "multi", sample.id)


def score_single(weights: ModelWeights, sample: PreferenceSample) -> ScoreVector:
    bound = bind(weights)
    r = [single_score(weights, sample.context, y, bound).item() for y in sample.responses]
    return ScoreVector(r, "single", sample.id)


def score(weights: ModelWeights, sample: PreferenceSample, mode: str = "multi") -> ScoreVector:
    if mode == "multi":
        return score_multi(weights, sample)
    if mode == "single":
        return score_single(weights, sample)
    raise ValueError(f"unknown scoring mode {mode!r}")

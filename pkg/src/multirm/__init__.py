"""Multi-response reward modelling on a small numpy transformer."""

from .backbone import BackboneConfig, ModelWeights, init_model
from .packing import PackedSequence, PreferenceSample, pack, unpack
from .scoring import ScoreVector, init_reward_model, score
from .training import TrainConfig, train

__all__ = [
    "BackboneConfig", "ModelWeights", "init_model",
    "PackedSequence", "PreferenceSample", "pack", "unpack",
    "ScoreVector", "init_reward_model", "score",
    "TrainConfig", "train",
]
__version__ = "0.1.0"

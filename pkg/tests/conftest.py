import numpy as np
import pytest

from multirm.backbone import BackboneConfig
from multirm.packing import PreferenceSample


@pytest.fixture
def tiny_config():
    return BackboneConfig(vocab_size=64, d=16, n_layers=2, n_heads=4, max_seq_len=64)


def random_sample(rng, vocab=64, n=4, ctx=(3, 10), resp=(1, 6), sid="s"):
    """Tokens avoid the separator (vocab - 1)."""
    context = rng.integers(0, vocab - 1, int(rng.integers(ctx[0], ctx[1] + 1))).tolist()
    responses = [rng.integers(0, vocab - 1, int(rng.integers(resp[0], resp[1] + 1))).tolist() for _ in range(n)]
    return PreferenceSample(sid, context, responses, ranking=rng.permutation(n).tolist())


def randomize_head(weights, rng, std=0.5):
    """Fresh heads start near zero; tests that need visible scores widen them."""
    for v in weights.head.arrays().values():
        v[...] = rng.normal(0, std, v.shape)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

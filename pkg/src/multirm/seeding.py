"""Stable sub-seed derivation: every random stream comes from one integer seed."""

import hashlib


def derive_seed(seed: int, *purpose) -> int:
    """Hash ``(seed, *purpose)`` to a 63-bit integer, stable across processes."""
    key = "/".join([str(int(seed))] + [str(p) for p in purpose])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") >> 1

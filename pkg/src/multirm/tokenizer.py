"""Demo-only byte tokenizer: ids 0-255 are raw bytes; special ids sit above.

Good enough to push a text file through a toy model, nothing more.
"""

BYTE_VOCAB = 256


def encode(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode(ids) -> str:
    return bytes(i for i in ids if 0 <= i < BYTE_VOCAB).decode("utf-8", errors="replace")

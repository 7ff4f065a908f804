"""Byte-level tokenizer.

Token ids 0..255 are raw bytes. Three control tokens follow: PAD (batch
padding, never attended), BOS (sequence start), and DELIM, which is the
tokenization of the newline byte and doubles as the value terminator the
decoder watches for. tokenize() is total over bytes; detokenize() inverts
it exactly, dropping PAD/BOS and rendering DELIM back as b"\\n".
"""

from __future__ import annotations

from .errors import ContractError

NUM_BYTE_TOKENS = 256
PAD = 256
BOS = 257
DELIM = 258
NUM_CONTROL_TOKENS = 3
MIN_VOCAB = 260

_NEWLINE_BYTE = 10


def tokenize(text: str | bytes) -> list[int]:
    """Map text to token ids; newline bytes become DELIM."""
    data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    return [DELIM if b == _NEWLINE_BYTE else b for b in data]


def detokenize(token_ids: list[int] | tuple[int, ...]) -> bytes:
    """Invert tokenize(). PAD and BOS vanish; ids past DELIM are rejected."""
    out = bytearray()
    for t in token_ids:
        t = int(t)
        if t == DELIM:
            out.append(_NEWLINE_BYTE)
        elif t in (PAD, BOS):
            continue
        elif 0 <= t < NUM_BYTE_TOKENS:
            out.append(t)
        else:
            raise ContractError(f"token id {t} is outside the byte/control range")
    return bytes(out)


def detokenize_text(token_ids: list[int] | tuple[int, ...]) -> str:
    """detokenize() then best-effort utf-8 decoding (lossy on garbage)."""
    return detokenize(token_ids).decode("utf-8", errors="replace")

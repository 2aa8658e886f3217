"""64-bit FNV-1a hashing: the single digest primitive for content addressing,
UI-state checkpoints, and path identifiers.

Chosen because it is trivial to reimplement in any language, which makes
cross-checking stored ids easy. Collision risk is acceptable at desk scale.
"""

from __future__ import annotations

FNV64_OFFSET_BASIS = 14695981039346656037
FNV64_PRIME = 1099511628211

_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """Hash a byte sequence with 64-bit FNV-1a (XOR byte, then multiply)."""
    h = FNV64_OFFSET_BASIS
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h


def digest_hex(value: int) -> str:
    """Render a 64-bit digest as exactly 16 lowercase hex characters, no prefix."""
    if not 0 <= value <= _MASK64:
        raise ValueError(f"digest value out of 64-bit range: {value}")
    return format(value, "016x")


def fnv1a64_hex(data: bytes) -> str:
    return digest_hex(fnv1a64(data))


def text_digest(text: str) -> str:
    """Digest of a text document's UTF-8 bytes, rendered as hex."""
    return fnv1a64_hex(text.encode("utf-8"))

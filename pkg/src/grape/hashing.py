"""FNV-1a 64-bit content hashing.

The hex digest is part of the file-format contract: instruction_id and
response_id are hex(FNV-1a-64(canonical UTF-8 bytes)), 16 lowercase hex
digits, zero-padded. FNV-1a-64 is reproducible in any language from its
two published constants, which is why it was chosen over hashlib digests.

Collisions are astronomically unlikely at corpus scale (~N^2 / 2^65 for N
distinct texts; ~3e-7 for 100M texts) but are detected, not ignored: ingest
fails loudly if two distinct canonical texts ever map to one id.
"""

_FNV64_OFFSET = 0xCBF29CE484222325
_FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = _FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV64_PRIME) & _MASK64
    return h


def fnv1a_64_hex(data: bytes) -> str:
    return format(fnv1a_64(data), "016x")


def text_id(text: str) -> str:
    """Content id of a canonical text: hex(FNV-1a-64(UTF-8 bytes))."""
    return fnv1a_64_hex(text.encode("utf-8"))

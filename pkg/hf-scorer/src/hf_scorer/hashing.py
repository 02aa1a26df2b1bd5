"""FNV-1a-64, as required by the Logprob File format's template_hash field."""

_OFFSET = 0xCBF29CE484222325
_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a_64_hex(data: bytes) -> str:
    h = _OFFSET
    for byte in data:
        h ^= byte
        h = (h * _PRIME) & _MASK
    return format(h, "016x")

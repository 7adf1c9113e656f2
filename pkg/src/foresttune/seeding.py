"""Deterministic derivation of 64-bit seeds for independent random streams.

Every stochastic component (subsampling, tree growth, synthetic data,
optimiser initialisation) receives a seed derived from the run's master
seed plus a few context tokens. Derivation is hash-based so it is stable
across processes, platforms and Python versions, unlike built-in hash().
"""

import hashlib

MASK64 = (1 << 64) - 1


def derive_seed(*parts) -> int:
    """Mix ``parts`` (ints, floats, strings, bytes, None) into a 64-bit seed.

    Floats are tokenised via repr() so exact values, not rounded ones,
    enter the hash.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bool):
            token = b"b1" if part else b"b0"
        elif isinstance(part, int):
            token = b"i" + str(part).encode()
        elif isinstance(part, float):
            token = b"f" + repr(part).encode()
        elif isinstance(part, str):
            token = b"s" + part.encode()
        elif isinstance(part, bytes):
            token = b"y" + part
        elif part is None:
            token = b"n"
        else:
            raise TypeError(f"cannot derive a seed from {type(part).__name__}")
        h.update(len(token).to_bytes(4, "little"))
        h.update(token)
    return int.from_bytes(h.digest(), "little")

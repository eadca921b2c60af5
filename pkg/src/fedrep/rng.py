"""Deterministic seed derivation.

All randomness in a simulation is derived from a single master seed via
stable hashing, so results do not depend on client execution order, thread
schedule, or Python's per-process hash randomization.
"""

from __future__ import annotations

import hashlib

__all__ = ["derive_seed"]


def derive_seed(*parts: int | str) -> int:
    """Derive a 64-bit seed from a sequence of integers and string tags.

    The mapping is stable across processes and platforms. Integer parts are
    encoded as signed little-endian 64-bit values, strings as UTF-8; each
    part is domain-tagged so (1, "a") and ("1a",) never collide.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            h.update(b"s")
            h.update(part.encode("utf-8"))
        elif isinstance(part, (int,)):
            h.update(b"i")
            h.update(int(part).to_bytes(8, "little", signed=True))
        else:
            raise TypeError(f"seed parts must be int or str, got {type(part)!r}")
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")

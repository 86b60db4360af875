"""Deterministic seed derivation.

Every random draw in the package flows from one master seed. Stages and
per-item streams get their own child seeds derived by hashing the master
seed together with a path of names, so adding a stage or reordering calls
never shifts the stream of an unrelated one.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, *path: object) -> int:
    """Derive a child seed from ``master`` and a path of names/indices.

    The derivation is a SHA-256 hash of the decimal master seed joined
    with the stringified path parts, truncated to 64 bits. It is stable
    across platforms and Python versions.
    """
    if master < 0:
        raise ValueError(f"master seed must be non-negative, got {master}")
    tag = "/".join([str(int(master))] + [str(p) for p in path])
    digest = hashlib.sha256(tag.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")

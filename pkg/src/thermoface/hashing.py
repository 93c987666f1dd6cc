"""Canonical hashing of numeric configuration parameters.

Signatures and galleries are only comparable when they were produced with
the same numeric settings, so configurations carry a content hash over their
numeric parameters. Canonicalization (sorted keys, repr of floats) makes the
hash independent of field order and serialization cosmetics, and sensitive
to every numeric change.
"""

from __future__ import annotations

import hashlib

__all__ = ["canonical_hash"]


def _canonical_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return repr(value)
    if isinstance(value, float):
        return repr(float(value))
    if value is None:
        return "auto"
    if isinstance(value, str):
        return value
    if isinstance(value, (tuple, list)):
        return "[" + ",".join(_canonical_value(v) for v in value) + "]"
    raise TypeError(f"unhashable config value type: {type(value)!r}")


def canonical_hash(params: dict) -> str:
    """SHA-256 over 'name=value' lines of the canonicalized mapping."""
    lines = [f"{key}={_canonical_value(params[key])}" for key in sorted(params)]
    digest = hashlib.sha256("\n".join(lines).encode("utf-8"))
    return digest.hexdigest()

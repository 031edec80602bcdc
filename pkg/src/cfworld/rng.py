"""Counter-based hashing for per-pixel random streams.

Values depend only on their inputs (seed, pixel, tag, counter), never on
evaluation order, so tiled or threaded renders reproduce bit for bit.
"""
from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(k) for k in (30, 27, 31, 11))


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_u64(*parts) -> np.ndarray:
    """Chain splitmix64 over broadcastable integer arrays."""
    with np.errstate(over="ignore"):
        h = np.zeros(np.broadcast(*[np.asarray(p) for p in parts]).shape, dtype=np.uint64)
        for p in parts:
            h = _mix(h + _GOLDEN + np.asarray(p, dtype=np.uint64))
    return h


def pixel_keys(seed: int, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return hash_u64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), xs, ys)


def uniform01(key: np.ndarray, tag: int, counter: int) -> np.ndarray:
    """Uniform doubles in [0, 1) from per-pixel ``key`` and a stream position."""
    h = hash_u64(key, np.uint64(tag), np.uint64(counter))
    return (h >> _S11).astype(np.float64) * (1.0 / 9007199254740992.0)


def stable_int(*parts) -> int:
    """Process-independent 64-bit integer from arbitrary string-able parts."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")

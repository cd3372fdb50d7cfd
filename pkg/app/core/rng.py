"""Counter-based pseudorandom function for windowless, reproducible media.

Every random quantity is a pure function of (seed, stream, integer key), so a weight
can be regenerated at any site without storing arrays and independently of box size,
evaluation order or thread count.
"""
import hashlib
import json
import numpy as np

MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

# stream labels
EDGE_STREAM = 1
LEVEL_STREAM = 2
PROBE_STREAM = 3


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)"""
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_keys(seed: int, stream: int, keys: np.ndarray) -> np.ndarray:
    """Hash each row of an integer key matrix (N, m) to a uint64"""
    keys = np.ascontiguousarray(np.atleast_2d(keys), dtype=np.int64)
    n_rows, n_cols = keys.shape
    base = np.array([(seed ^ (stream * 0x632BE59BD9B4E019)) & MASK64], dtype=np.uint64)
    h = np.repeat(_mix64(base), n_rows)
    words = keys.view(np.uint64)
    with np.errstate(over="ignore"):
        for j in range(n_cols):
            h = _mix64(h + _GOLDEN * np.uint64(j + 1) + words[:, j])
    return h


def uniform(seed: int, stream: int, keys: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) doubles, one per key row"""
    return (hash_keys(seed, stream, keys) >> _S11).astype(np.float64) * (1.0 / (1 << 53))


def derive_seed(seed: int, label: str, index: int = 0) -> int:
    """Labeled substream seed (replica, direction, medium ...) from a root seed"""
    payload = json.dumps([int(seed) & MASK64, label, int(index)]).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")

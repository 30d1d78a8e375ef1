"""Portable seeded random streams.

Every random draw in the package goes through Philox4x64-10 with the 128-bit
key ``seed | tag << 64``; the stream is the blocks at counters 1, 2, 3, ... so a seed reproduces the same numbers on any platform that implements the
published Philox algorithm.
Uniforms take the top 53 bits of each 64-bit word; normals use Box-Muller.
"""

import numpy as np

# stream tags keep unrelated consumers of one seed apart
INIT = 1
POOL = 2
NOISE = 3
PERMUTE = 4
SHUFFLE = 5
DATA = 6
SPLIT = 7

_MASK64 = (1 << 64) - 1


def _bitgen(seed, tag):
    seed = int(seed)
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    key = seed | (int(tag) << 64)
    return np.random.Philox(key=key, counter=0)


def raw(seed, tag, n):
    """First ``n`` 64-bit words of the stream."""
    if n == 0:
        return np.zeros(0, dtype=np.uint64)
    return _bitgen(seed, tag).random_raw(n)


def uniform(seed, tag, n):
    """``n`` doubles in [0, 1)."""
    words = raw(seed, tag, n)
    return (words >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def normal(seed, tag, n):
    """``n`` standard normal doubles (Box-Muller over consecutive uniform pairs)."""
    m = (n + 1) // 2
    u = uniform(seed, tag, 2 * m)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * m)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]


def permutation(seed, tag, n):
    """Fisher-Yates shuffle of ``range(n)``.

    Step ``i`` (from ``n - 1`` down to 1) swaps ``i`` with
    ``floor(u_i * (i + 1))`` where ``u_i`` is the stream's next uniform.
    """
    perm = np.arange(n, dtype=np.int64)
    if n < 2:
        return perm
    u = uniform(seed, tag, n - 1)
    js = (u * np.arange(n, 1, -1)).astype(np.int64)
    p = perm.tolist()
    for step, i in enumerate(range(n - 1, 0, -1)):
        j = int(js[step])
        p[i], p[j] = p[j], p[i]
    return np.asarray(p, dtype=np.int64)


def derive(seed, *parts):
    """Deterministic child seed from a parent seed and small integers."""
    h = int(seed) & _MASK64
    for part in parts:
        # splitmix64 mixing of the running value with each part
        h = (h + 0x9E3779B97F4A7C15 + (int(part) & _MASK64)) & _MASK64
        z = h
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        h = z ^ (z >> 31)
    return h

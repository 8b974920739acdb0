"""Counter-based random streams with hierarchical keying.

Every random quantity in the toolkit is drawn from a stream addressed by
``(master_seed, k, i)``: individual ``k``'s candidate contact stream lives at
``i = -1`` and the profile drawn at its ``i``-th infection lives at ``i >= 0``.
Two simulations that share a master seed therefore share every contact time,
every thinning mark and every profile realization without storing any of them,
which is what makes coupled runs (population vs. mean-field agents, baseline
vs. quarantine variant) exact path-wise couplings rather than approximate ones.

The generator is splitmix64: a counter hashed through a 64-bit finalizer.  It
is much cheaper to instantiate than a numpy Generator (the event loop creates
one stream per infection) and trivially reproducible across processes.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, k: int, i: int) -> int:
    """Hash ``(master, k, i)`` into a 64-bit stream seed.

    ``i = -1`` addresses individual ``k``'s candidate stream, ``i >= 0`` the
    profile drawn at its ``i``-th infection.  Negative values are folded into
    the uint64 range, so every integer key is valid.
    """
    s = _mix((master & _MASK) ^ 0x243F6A8885A308D3)
    s = _mix((s + _GOLDEN * ((k & _MASK) + 1)) & _MASK)
    s = _mix((s + _GOLDEN * ((i & _MASK) + 2)) & _MASK)
    return s


class Stream:
    """Deterministic uniform stream (splitmix64 counter)."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        return _mix(self.state)

    def uniform(self) -> float:
        # 53-bit mantissa, in [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53

    def exponential(self, rate: float) -> float:
        u = self.uniform()
        return -np.log1p(-u) / rate


def uniform_block(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Vectorized draw of ``n`` uniforms from the stream with the given seed.

    Equivalent to ``n`` successive ``Stream(seed).uniform()`` calls starting
    after ``offset`` draws; used where whole sample blocks are needed at once
    (Monte-Carlo kernel backends, covariance agents).
    """
    counters = (
        np.uint64(seed)
        + np.uint64(_GOLDEN) * (np.arange(offset + 1, offset + n + 1, dtype=np.uint64))
    )
    z = counters
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53

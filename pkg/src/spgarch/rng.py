"""Counter-based random streams.

Innovations come from Philox keyed by a 64-bit seed. Site ``i`` always
consumes the ``i``-th 64-bit word of the stream and is mapped through the
inverse CDF, so a site's draw does not depend on how many sites are drawn.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_seed", "uniforms", "innovations", "permutation_keys"]

_MASK64 = (1 << 64) - 1


def derive_seed(*parts: int) -> int:
    """Stable 64-bit seed from a tuple of non-negative integers."""
    words = [int(p) & _MASK64 for p in parts]
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def uniforms(seed: int, n: int) -> np.ndarray:
    """The first ``n`` open-interval uniforms of stream ``seed``."""
    bitgen = np.random.Philox(key=int(seed) & _MASK64)
    raw = bitgen.random_raw(n)
    # 53-bit mantissa, shifted off the endpoints so the inverse CDF stays finite
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def innovations(seed: int, n: int, innovation) -> np.ndarray:
    return np.asarray(innovation.ppf(uniforms(seed, n)), dtype=np.float64)


def permutation_keys(seed: int, k: int, n: int) -> np.ndarray:
    """Sort keys for permutation ``k``; depends only on ``(seed, k)``."""
    return uniforms(derive_seed(seed, k), n)

"""Portable seeded PRNG used for sampling, augmentation and synthetic data.

The generator is xoshiro256** (Blackman & Vigna) seeded through splitmix64,
so index fixtures can be reproduced bit-for-bit by any other implementation
of the same two published algorithms:

* ``seed`` -> four 64-bit state words, each the next splitmix64 output.
* ``next_u64`` -> the standard xoshiro256** step.
* ``randbelow(n)`` -> Lemire's multiply-shift with rejection (unbiased).
* ``random()`` -> ``(next_u64() >> 11) * 2**-53``.
* ``sample(n, m)`` -> the first ``m`` slots of a partial Fisher-Yates
  shuffle of ``range(n)``, slot ``i`` swapped with ``i + randbelow(n - i)``.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def splitmix64(state: int) -> tuple[int, int]:
    """Return ``(new_state, output)`` for one splitmix64 step."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class Xoshiro256:
    def __init__(self, seed: int = 0):
        sm = seed & _MASK
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self.s = words

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        m = self.next_u64() * n
        low = m & _MASK
        if low < n:
            threshold = ((1 << 64) - n) % n
            while low < threshold:
                m = self.next_u64() * n
                low = m & _MASK
        return m >> 64

    def sample(self, n: int, m: int) -> list[int]:
        """``m`` distinct indices from ``range(n)`` (partial Fisher-Yates)."""
        if not 0 <= m <= n:
            raise ValueError(f"cannot draw {m} of {n} without replacement")
        idx = list(range(n))
        for i in range(m):
            j = i + self.randbelow(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:m]

    def spawn(self) -> "Xoshiro256":
        """Child generator seeded from this stream."""
        return Xoshiro256(self.next_u64())

    def getstate(self) -> tuple[int, int, int, int]:
        return tuple(self.s)

    def setstate(self, state) -> None:
        if len(state) != 4:
            raise ValueError("xoshiro256 state is four 64-bit words")
        self.s = [int(w) & _MASK for w in state]

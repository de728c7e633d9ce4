"""Deterministic pseudo-random generator for reproducible fixtures.

The generator is splitmix64, chosen because it is trivial to reimplement
bit-for-bit in any language, so golden files generated here can be verified
elsewhere. The algorithm, in full:

    state <- (state + 0x9E3779B97F4A7C15) mod 2^64
    z <- state
    z <- ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z <- ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    output <- z XOR (z >> 31)

Sub-streams are derived with FNV-1a (64-bit) over a label, XORed into the
parent seed, so independent scenario components do not share sequences.
"""

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def derive_seed(seed: int, label: str) -> int:
    """Derive an independent 64-bit seed from (seed, label)."""
    h = _FNV_OFFSET
    for b in label.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return (seed ^ h) & _MASK


class SplitMix64:
    """splitmix64 stream over a 64-bit seed."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return (z ^ (z >> 31)) & _MASK

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n). Uses simple modulo; the bias is
        negligible for the fixture sizes used here and keeps the generator
        reproducible from the documented algorithm alone."""
        if n <= 0:
            raise ValueError("randrange needs n > 0")
        return self.next_u64() % n

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return lo + self.randrange(hi - lo + 1)

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randrange(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def hex_string(self, n_chars: int) -> str:
        """Lowercase hex string of n_chars characters."""
        out = []
        while len(out) < n_chars:
            out.extend(f"{self.next_u64():016x}")
        return "".join(out[:n_chars])

"""Seeded generators.

Row splits must be bit-reproducible across platforms, so they are drawn from
xoshiro256** seeded through splitmix64 (both implemented here on plain
Python integers). Bulk sampling during training and generation uses numpy's
``PCG64`` generator, seeded from a 64-bit value derived from the root seed.

Seed fan-out: ``derive_seed(root, "train")`` hashes the subsystem name
together with the root seed (BLAKE2b, 8-byte digest, little endian), so every
subsystem gets an independent but reproducible stream.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** 1.0 with splitmix64 seeding."""

    def __init__(self, seed: int):
        sm = seed & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``, swapping from the top down."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def derive_seed(root: int, name: str) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update((root & MASK64).to_bytes(8, "little"))
    h.update(name.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def generator(root: int, name: str) -> np.random.Generator:
    """numpy generator for subsystem ``name`` under root seed ``root``."""
    return np.random.Generator(np.random.PCG64(derive_seed(root, name)))

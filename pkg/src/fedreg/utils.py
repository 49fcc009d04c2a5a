"""Small shared helpers: named deterministic randomness and byte codecs."""

from __future__ import annotations

import hashlib
import random
import secrets


def int_to_bytes(x: int, width: int) -> bytes:
    return int(x).to_bytes(width, "big")


def int_from_bytes(b: bytes) -> int:
    return int.from_bytes(b, "big")


class _SystemRng(random.Random):
    """random.Random facade over the OS entropy source."""

    def random(self):  # pragma: no cover - never used for crypto paths
        return secrets.randbits(53) / (1 << 53)

    def getrandbits(self, n):
        return secrets.randbits(n)

    def randrange(self, start, stop=None, step=1):
        if stop is None:
            start, stop = 0, start
        width = stop - start
        if width <= 0:
            raise ValueError("empty range")
        return start + secrets.randbelow(width)

    def randbytes(self, n):
        return secrets.token_bytes(n)

    def seed(self, *a, **kw):
        pass


class RandomStreams:
    """Named, independently seeded randomness streams.

    Protocol phases each draw from their own stream so that a plaintext
    reference computation can replay exactly the draws it needs without
    consuming another phase's state. With seed None every stream is backed
    by the OS entropy source and nothing is reproducible.
    """

    def __init__(self, seed: int | None):
        self.seed = seed

    def stream(self, name: str) -> random.Random:
        if self.seed is None:
            return _SystemRng()
        digest = hashlib.sha256(
            self.seed.to_bytes(16, "big", signed=True) + name.encode()
        ).digest()
        return random.Random(int.from_bytes(digest, "big"))


def rng_bytes(rng: random.Random, n: int) -> bytes:
    """n random bytes from any random.Random compatible source."""
    return rng.getrandbits(8 * n).to_bytes(n, "big") if n else b""

"""Operation and traffic counters.

Counter semantics, used consistently everywhere:
  enc        fresh encryptions, including fused encrypt-and-add calls
  dec        decryptions
  ct_mul     ciphertext-times-ciphertext evaluation ops
  const_mul  ciphertext-to-scalar-power evaluation ops
  bits_up    ciphertext bits sent by the counted party
  bits_down  ciphertext bits received by the counted party

The counting wrappers guarantee the tallies stay in lockstep with the ops
actually executed; protocol code never bumps operation counters by hand.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass, field

from .ahe import PublicKey, SecretKey


@dataclass
class OpCounter:
    enc: int = 0
    dec: int = 0
    ct_mul: int = 0
    const_mul: int = 0
    bits_up: int = 0
    bits_down: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def merged(self, other: "OpCounter") -> "OpCounter":
        return OpCounter(
            self.enc + other.enc,
            self.dec + other.dec,
            self.ct_mul + other.ct_mul,
            self.const_mul + other.const_mul,
            self.bits_up + other.bits_up,
            self.bits_down + other.bits_down,
        )


class CountingEval:
    """Public-key evaluation surface that tallies every call."""

    def __init__(self, pk: PublicKey, counter: OpCounter | None = None):
        self.pk = pk
        self.counter = counter if counter is not None else OpCounter()

    def encrypt(self, m: int, rng: random.Random | None = None) -> int:
        self.counter.enc += 1
        return self.pk.encrypt(m, rng)

    def add(self, c1: int, c2: int) -> int:
        self.counter.ct_mul += 1
        return self.pk.add(c1, c2)

    def scalar_mul(self, c: int, z: int) -> int:
        self.counter.const_mul += 1
        return self.pk.scalar_mul(c, z)

    def add_plain(self, c: int, m: int, rng: random.Random | None = None) -> int:
        self.counter.enc += 1
        return self.pk.add_plain(c, m, rng)

    def sent(self, n_ciphertexts: int) -> None:
        self.counter.bits_up += n_ciphertexts * self.pk.ciphertext_bits

    def received(self, n_ciphertexts: int) -> None:
        self.counter.bits_down += n_ciphertexts * self.pk.ciphertext_bits


class CountingDecryptor:
    def __init__(self, sk: SecretKey, counter: OpCounter | None = None):
        self.sk = sk
        self.counter = counter if counter is not None else OpCounter()

    def decrypt(self, c: int) -> int:
        self.counter.dec += 1
        return self.sk.decrypt(c)


@dataclass
class StorageMeter:
    """Coarse high-water mark of bytes a party holds at once."""

    current: int = 0
    peak: int = 0
    _tags: dict = field(default_factory=dict)

    def hold(self, tag: str, nbytes: int) -> None:
        self.current += nbytes - self._tags.get(tag, 0)
        self._tags[tag] = nbytes
        self.peak = max(self.peak, self.current)

    def release(self, tag: str) -> None:
        self.current -= self._tags.pop(tag, 0)

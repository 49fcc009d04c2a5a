"""Shamir threshold secret sharing over the P-256 group order field.

Secrets are integers mod the prime order q of the NIST P-256 curve group
(convenient because curve scalars and 128-bit seeds both fit). A (t, m)
sharing evaluates a uniform degree t-1 polynomial with constant term equal
to the secret at the points 1..m. Any t shares reconstruct the secret by
Lagrange interpolation at zero; fewer than t reveal nothing, every secret
remains consistent with them.

Wire encoding of a share: 4-byte big-endian index, 32-byte big-endian value.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551

_VALUE_BYTES = 32
_INDEX_BYTES = 4
SHARE_WIRE_BYTES = _INDEX_BYTES + _VALUE_BYTES


@dataclass(frozen=True)
class Share:
    index: int
    value: int

    def to_bytes(self) -> bytes:
        return self.index.to_bytes(_INDEX_BYTES, "big") + self.value.to_bytes(_VALUE_BYTES, "big")

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Share":
        if len(blob) != SHARE_WIRE_BYTES:
            raise ValueError(f"share blob must be {SHARE_WIRE_BYTES} bytes, got {len(blob)}")
        return cls(
            int.from_bytes(blob[:_INDEX_BYTES], "big"),
            int.from_bytes(blob[_INDEX_BYTES:], "big"),
        )


def _poly_eval(coeffs: list[int], x: int, prime: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % prime
    return acc


def share_secret(
    secret: int,
    threshold: int,
    n_shares: int,
    rng: random.Random,
    prime: int = P256_ORDER,
) -> list[Share]:
    if not 0 <= secret < prime:
        raise ValueError("secret outside the field")
    if not 1 <= threshold <= n_shares:
        raise ValueError(f"need 1 <= threshold <= n_shares, got t={threshold}, m={n_shares}")
    if n_shares >= prime:
        raise ValueError("too many shares for the field")
    coeffs = [secret] + [rng.randrange(prime) for _ in range(threshold - 1)]
    return [Share(i, _poly_eval(coeffs, i, prime)) for i in range(1, n_shares + 1)]


def interpolate(points: list[tuple[int, int]], x: int, prime: int = P256_ORDER) -> int:
    """Evaluate the Lagrange interpolation through the points at x."""
    if len({px for px, _ in points}) != len(points):
        raise ValueError("duplicate x coordinates")
    total = 0
    for i, (xi, yi) in enumerate(points):
        num, den = 1, 1
        for j, (xj, _) in enumerate(points):
            if i == j:
                continue
            num = num * ((x - xj) % prime) % prime
            den = den * ((xi - xj) % prime) % prime
        total = (total + yi * num * pow(den, -1, prime)) % prime
    return total


def reconstruct(shares: list[Share], threshold: int, prime: int = P256_ORDER) -> int:
    """Recover the secret from at least threshold distinct shares."""
    seen: dict[int, int] = {}
    for sh in shares:
        if sh.index in seen and seen[sh.index] != sh.value:
            raise ValueError(f"conflicting shares for index {sh.index}")
        seen[sh.index] = sh.value
    if len(seen) < threshold:
        raise ValueError(f"need {threshold} distinct shares, have {len(seen)}")
    pts = sorted(seen.items())[:threshold]
    return interpolate(pts, 0, prime)

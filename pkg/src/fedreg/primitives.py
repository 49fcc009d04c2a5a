"""Cryptographic building blocks for the aggregation layer.

Covers the four primitive roles the masking protocol needs: elliptic-curve
key agreement on P-256, a hash chain that turns one master pairwise key
into per-round one-time keys, an AES-CTR expansion of 128-bit seeds into
ring vectors, and AES-GCM authenticated channels with a structured nonce
(phase tag, round counter, sender id).
"""

from __future__ import annotations

import hashlib
import random

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import AuthenticationError
from .secretshare import P256_ORDER

_CURVE = ec.SECP256R1()
PUBKEY_BYTES = 65  # X9.62 uncompressed point
KEY_BYTES = 32
SEED_BYTES = 16
NONCE_BYTES = 12


class EcKeyPair:
    """P-256 keypair; the scalar doubles as a Shamir-shareable secret."""

    def __init__(self, scalar: int):
        if not 1 <= scalar < P256_ORDER:
            raise ValueError("scalar outside [1, group order)")
        self.scalar = scalar
        self._sk = ec.derive_private_key(scalar, _CURVE)
        self.public_bytes = self._sk.public_key().public_bytes(
            Encoding.X962, PublicFormat.UncompressedPoint
        )

    @classmethod
    def generate(cls, rng: random.Random) -> "EcKeyPair":
        return cls(rng.randrange(1, P256_ORDER))

    def shared_key(self, peer_public: bytes) -> bytes:
        """32-byte master key: SHA-256 of the ECDH shared point."""
        peer = ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, peer_public)
        return hashlib.sha256(self._sk.exchange(ec.ECDH(), peer)).digest()


def shared_key_from_scalar(scalar: int, peer_public: bytes) -> bytes:
    """Recompute a pairwise master key from a reconstructed scalar."""
    return EcKeyPair(scalar).shared_key(peer_public)


def chain_key(master: bytes, rounds: int) -> bytes:
    """Round key: the hash chain H applied `rounds` times to the master."""
    key = master
    for _ in range(rounds):
        key = hashlib.sha256(key).digest()
    return key


def prg_expand(seed: bytes, n_elems: int, k: int) -> list[int]:
    """Expand a 128-bit seed into n_elems uniform elements of Z_{2^k}."""
    if len(seed) != SEED_BYTES:
        raise ValueError(f"seed must be {SEED_BYTES} bytes")
    if k % 8:
        raise ValueError("ring width must be byte aligned")
    width = k // 8
    cipher = Cipher(algorithms.AES(seed), modes.CTR(b"\x00" * 16))
    stream = cipher.encryptor().update(b"\x00" * (width * n_elems))
    return [int.from_bytes(stream[i * width : (i + 1) * width], "big") for i in range(n_elems)]


def make_nonce(phase: int, round_index: int, sender: int) -> bytes:
    """12-byte nonce: phase tag (1) | round counter (7) | sender id (4)."""
    return (
        phase.to_bytes(1, "big")
        + round_index.to_bytes(7, "big")
        + sender.to_bytes(4, "big")
    )


def aead_seal(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    return AESGCM(key[:16]).encrypt(nonce, plaintext, aad)


def aead_open(key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    try:
        return AESGCM(key[:16]).decrypt(nonce, ciphertext, aad)
    except InvalidTag as exc:
        raise AuthenticationError("sealed message failed to verify") from exc

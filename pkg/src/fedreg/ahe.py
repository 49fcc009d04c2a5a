"""Additively homomorphic encryption with plaintext space Z_{2^k}.

Two interchangeable backends sit behind the same four-algorithm interface
(key generation, encryption, ciphertext evaluation, decryption). Addition
of plaintexts is multiplication of ciphertexts; multiplication by a ring
scalar is ciphertext exponentiation.

Backend "jl" (default), a power-residue scheme in the Joye-Libert style:
  KeyGen picks primes p = u * 2^k + 1 (u odd) and q = 3 mod 4, N = p*q,
  and a y in Z_N* with Jacobi symbol 1 whose image alpha = y^((p-1)/2^k)
  mod p has order exactly 2^k. Enc(m) = y^m * x^(2^k) mod N for random x.
  Dec raises c to (p-1)/2^k mod p, landing in the subgroup generated by
  alpha, then recovers m as a discrete log in that order-2^k group using
  a divide-and-conquer Pohlig-Hellman walk (about k*log2(k) squarings).
  Ciphertexts are single elements of Z_N, so ciphertext_bits equals
  modulus_bits.

Backend "paillier", the classic scheme reduced to the ring:
  Enc(m) = (1+N)^m * r^N mod N^2, decryption via the CRT shortcut, with
  every decrypted value reduced mod 2^k. Plaintexts accumulate in Z_N, so
  homomorphic results agree with ring arithmetic exactly as long as the
  underlying integer magnitude stays below N. Every protocol in this
  package keeps accumulated magnitudes under 2^1300 while N >= 2^2047,
  so the reduction is sound throughout. Ciphertexts live in Z_{N^2} and
  ciphertext_bits is 2 * modulus_bits.

Key material serializes to a tagged binary blob of length-prefixed
big-endian integers:

  b"AHEK" | version u8 = 1 | backend u8 (1 jl, 2 paillier) | k u16
  | modulus_bits u32 | has_secret u8 | fields

where the public fields are (N, y) for jl and (N,) for paillier, the
secret fields are (p, q), and each field is a u32 byte length followed by
that many magnitude bytes, big endian.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass

from .errors import ConfigError
from .utils import _SystemRng

try:
    import gmpy2

    _mpz = gmpy2.mpz
    _powmod = gmpy2.powmod
    _invert = gmpy2.invert
    _jacobi = gmpy2.jacobi

    def _is_prime(n: int) -> bool:
        return bool(gmpy2.is_prime(n, 30))

except ImportError:  # pragma: no cover - gmpy2 is a declared dependency
    def _mpz(x):
        return x

    _powmod = pow

    def _invert(a, n):
        return pow(a, -1, n)

    def _jacobi(a, n):
        a %= n
        result = 1
        while a:
            while a % 2 == 0:
                a //= 2
                if n % 8 in (3, 5):
                    result = -result
            a, n = n, a
            if a % 4 == 3 and n % 4 == 3:
                result = -result
            a %= n
        return result if n == 1 else 0

    def _is_prime(n: int) -> bool:
        if n < 2:
            return False
        for sp in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
            if n % sp == 0:
                return n == sp
        d = n - 1
        r = 0
        while d % 2 == 0:
            d //= 2
            r += 1
        probe = random.Random(n & 0xFFFFFFFF)
        for _ in range(30):
            a = probe.randrange(2, n - 1)
            x = pow(a, d, n)
            if x in (1, n - 1):
                continue
            for _ in range(r - 1):
                x = x * x % n
                if x == n - 1:
                    break
            else:
                return False
        return True


SUPPORTED_MODULUS_BITS = (2048, 3072)
BACKENDS = ("jl", "paillier")

_MAGIC = b"AHEK"
_BACKEND_TAGS = {"jl": 1, "paillier": 2}
_BACKEND_NAMES = {v: k for k, v in _BACKEND_TAGS.items()}


@dataclass(frozen=True)
class AheParams:
    backend: str
    modulus_bits: int
    k: int

    @property
    def plaintext_modulus(self) -> int:
        return 1 << self.k


def _validate_params(modulus_bits: int, k: int, backend: str) -> None:
    if backend not in BACKENDS:
        raise ConfigError(f"unknown backend {backend!r}, expected one of {BACKENDS}")
    if modulus_bits not in SUPPORTED_MODULUS_BITS:
        raise ConfigError(
            f"modulus_bits={modulus_bits} unsupported, expected one of {SUPPORTED_MODULUS_BITS}"
        )
    if k < 8 or k > 512 or k % 8:
        raise ConfigError(f"plaintext width k={k} must be a multiple of 8 in [8, 512]")


def _check_plaintext(m: int, k: int) -> int:
    m = int(m)
    if not 0 <= m < (1 << k):
        raise ValueError(f"plaintext {m} outside [0, 2^{k})")
    return m


def _check_scalar(z: int, k: int) -> int:
    z = int(z)
    if not 0 <= z < (1 << k):
        raise ValueError(f"scalar {z} outside [0, 2^{k})")
    return z


class PublicKey:
    """Shared surface of both backends' public halves."""

    params: AheParams

    @property
    def ciphertext_bits(self) -> int:
        raise NotImplementedError

    def encrypt(self, m: int, rng: random.Random | None = None) -> int:
        raise NotImplementedError

    def add(self, c1: int, c2: int) -> int:
        """Homomorphic addition: the product of the two ciphertexts."""
        raise NotImplementedError

    def scalar_mul(self, c: int, z: int) -> int:
        """Homomorphic scalar multiplication: ciphertext exponentiation."""
        raise NotImplementedError

    def add_plain(self, c: int, m: int, rng: random.Random | None = None) -> int:
        """Fused encrypt-and-add: folds a fresh encryption of m into c."""
        return self.add(c, self.encrypt(m, rng))

    def ct_to_bytes(self, c: int) -> bytes:
        return int(c).to_bytes(self.ciphertext_bits // 8, "big")

    def ct_from_bytes(self, b: bytes) -> int:
        if len(b) != self.ciphertext_bits // 8:
            raise ValueError(f"ciphertext blob must be {self.ciphertext_bits // 8} bytes")
        return int.from_bytes(b, "big")

    def to_bytes(self) -> bytes:
        raise NotImplementedError


class SecretKey:
    params: AheParams
    public: PublicKey

    def decrypt(self, c: int) -> int:
        raise NotImplementedError


class JlPublicKey(PublicKey):
    def __init__(self, params: AheParams, n: int, y: int):
        self.params = params
        self.n = int(n)
        self.y = int(y)
        self._mn = _mpz(n)
        self._my = _mpz(y)

    @property
    def ciphertext_bits(self) -> int:
        return self.params.modulus_bits

    def encrypt(self, m: int, rng: random.Random | None = None) -> int:
        m = _check_plaintext(m, self.params.k)
        rng = rng or _SystemRng()
        x = rng.randrange(2, self.n - 1)
        body = _powmod(self._my, m, self._mn) if m else _mpz(1)
        mask = _powmod(_mpz(x), 1 << self.params.k, self._mn)
        return int(body * mask % self._mn)

    def add(self, c1: int, c2: int) -> int:
        return int(_mpz(c1) * _mpz(c2) % self._mn)

    def scalar_mul(self, c: int, z: int) -> int:
        z = _check_scalar(z, self.params.k)
        return int(_powmod(_mpz(c), z, self._mn))

    def to_bytes(self) -> bytes:
        return _pack_key(self.params, [self.n, self.y], None)


class JlSecretKey(SecretKey):
    def __init__(self, params: AheParams, public: JlPublicKey, p: int, q: int):
        self.params = params
        self.public = public
        self.p = int(p)
        self.q = int(q)
        k = params.k
        mp = _mpz(p)
        self._mp = mp
        self._u = (mp - 1) >> k  # odd cofactor of the 2-Sylow subgroup
        alpha = _powmod(_mpz(public.y), self._u, mp)
        if _powmod(alpha, 1 << (k - 1), mp) == 1:
            raise ConfigError("key material inconsistent: subgroup generator has low order")
        # Towers alpha^(2^j) and alpha^(-2^j) for the dlog walk.
        self._minus_one = mp - 1
        inv = _invert(alpha, mp)
        ainv_pow = []
        for _ in range(k):
            ainv_pow.append(inv)
            inv = inv * inv % mp
        self._ainv_pow = ainv_pow

    def _dlog(self, beta, s: int, e: int) -> int:
        # beta lies in the subgroup of order 2^e generated by alpha^(2^s);
        # split the exponent into low and high halves and recurse.
        mp = self._mp
        if e == 1:
            if beta == 1:
                return 0
            if beta == self._minus_one:
                return 1
            raise ValueError("value is not a valid ciphertext under this key")
        e1 = e >> 1
        e2 = e - e1
        x0 = self._dlog(_powmod(beta, 1 << e2, mp), s + e2, e1)
        if x0:
            beta = beta * _powmod(self._ainv_pow[s], x0, mp) % mp
        x1 = self._dlog(beta, s + e1, e2)
        return x0 | (x1 << e1)

    def decrypt(self, c: int) -> int:
        if not 1 <= c < self.public.n:
            raise ValueError("ciphertext outside Z_N")
        z = _powmod(_mpz(c) % self._mp, self._u, self._mp)
        return self._dlog(z, 0, self.params.k)

    def to_bytes(self) -> bytes:
        return _pack_key(self.params, [self.public.n, self.public.y], [self.p, self.q])


class PaillierPublicKey(PublicKey):
    def __init__(self, params: AheParams, n: int):
        self.params = params
        self.n = int(n)
        self._mn = _mpz(n)
        self._mn2 = self._mn * self._mn

    @property
    def ciphertext_bits(self) -> int:
        return 2 * self.params.modulus_bits

    def encrypt(self, m: int, rng: random.Random | None = None) -> int:
        m = _check_plaintext(m, self.params.k)
        rng = rng or _SystemRng()
        r = _mpz(rng.randrange(2, self.n - 1))
        # g = N + 1 makes g^m collapse to 1 + m*N mod N^2.
        body = (1 + _mpz(m) * self._mn) % self._mn2
        return int(body * _powmod(r, self._mn, self._mn2) % self._mn2)

    def add(self, c1: int, c2: int) -> int:
        return int(_mpz(c1) * _mpz(c2) % self._mn2)

    def scalar_mul(self, c: int, z: int) -> int:
        z = _check_scalar(z, self.params.k)
        return int(_powmod(_mpz(c), z, self._mn2))

    def to_bytes(self) -> bytes:
        return _pack_key(self.params, [self.n], None)


class PaillierSecretKey(SecretKey):
    def __init__(self, params: AheParams, public: PaillierPublicKey, p: int, q: int):
        self.params = params
        self.public = public
        self.p = int(p)
        self.q = int(q)
        mp, mq = _mpz(p), _mpz(q)
        self._p2 = mp * mp
        self._q2 = mq * mq
        self._mp = mp
        self._mq = mq
        n = mp * mq
        g = n + 1
        self._hp = _invert(self._l_func(_powmod(g, mp - 1, self._p2), mp), mp)
        self._hq = _invert(self._l_func(_powmod(g, mq - 1, self._q2), mq), mq)
        self._q_inv_p = _invert(mq, mp)

    @staticmethod
    def _l_func(u, d):
        return (u - 1) // d

    def decrypt(self, c: int) -> int:
        n2 = self.public._mn2
        if not 1 <= c < n2:
            raise ValueError("ciphertext outside Z_{N^2}")
        c = _mpz(c)
        mp_part = self._l_func(_powmod(c, self._mp - 1, self._p2), self._mp) * self._hp % self._mp
        mq_part = self._l_func(_powmod(c, self._mq - 1, self._q2), self._mq) * self._hq % self._mq
        diff = (mp_part - mq_part) * self._q_inv_p % self._mp
        m = mq_part + self._mq * diff
        return int(m) & ((1 << self.params.k) - 1)

    def to_bytes(self) -> bytes:
        return _pack_key(self.params, [self.public.n], [self.p, self.q])


def _gen_prime_topbit(rng: random.Random, bits: int, low_or: int = 1) -> int:
    while True:
        cand = rng.getrandbits(bits) | (1 << (bits - 1)) | low_or
        if cand.bit_length() == bits and _is_prime(cand):
            return cand


def _gen_jl_p(rng: random.Random, half_bits: int, k: int) -> int:
    ubits = half_bits - k
    if ubits < 128:
        raise ConfigError(f"k={k} leaves only {ubits} random bits in the special prime")
    while True:
        u = rng.getrandbits(ubits) | (1 << (ubits - 1)) | 1  # odd cofactor
        p = (u << k) | 1
        if _is_prime(p):
            return p


def keygen(
    modulus_bits: int = 3072,
    k: int = 256,
    backend: str = "jl",
    seed: int | None = None,
) -> tuple[PublicKey, SecretKey]:
    """Generate a keypair. Deterministic for a fixed seed."""
    _validate_params(modulus_bits, k, backend)
    rng: random.Random = random.Random(seed) if seed is not None else _SystemRng()
    half = modulus_bits // 2
    params = AheParams(backend, modulus_bits, k)
    if backend == "jl":
        p = _gen_jl_p(rng, half, k)
        while True:
            q = _gen_prime_topbit(rng, half, low_or=3)  # q = 3 mod 4
            if q != p and (p * q).bit_length() == modulus_bits:
                break
        n = p * q
        mp = _mpz(p)
        u = (mp - 1) >> k
        while True:
            y = rng.randrange(2, n - 1)
            if _jacobi(y, n) != 1:
                continue
            alpha = _powmod(_mpz(y), u, mp)
            if _powmod(alpha, 1 << (k - 1), mp) != 1:
                break
        pk = JlPublicKey(params, n, y)
        return pk, JlSecretKey(params, pk, p, q)
    # paillier
    p = _gen_prime_topbit(rng, half)
    while True:
        q = _gen_prime_topbit(rng, half)
        if q != p and (p * q).bit_length() == modulus_bits:
            break
    n = p * q
    if (n % (p - 1) == 0) or (n % (q - 1) == 0):  # pragma: no cover - astronomically rare
        return keygen(modulus_bits, k, backend, None if seed is None else seed + 1)
    pk = PaillierPublicKey(params, n)
    return pk, PaillierSecretKey(params, pk, p, q)


def _pack_key(params: AheParams, public_fields: list[int], secret_fields: list[int] | None) -> bytes:
    out = [
        _MAGIC,
        struct.pack(">BBHI", 1, _BACKEND_TAGS[params.backend], params.k, params.modulus_bits),
        struct.pack(">B", 1 if secret_fields else 0),
    ]
    for field in public_fields + (secret_fields or []):
        blob = int(field).to_bytes((int(field).bit_length() + 7) // 8, "big")
        out.append(struct.pack(">I", len(blob)))
        out.append(blob)
    return b"".join(out)


def key_from_bytes(blob: bytes) -> tuple[PublicKey, SecretKey | None]:
    """Parse a key blob produced by to_bytes on either key class."""
    if blob[:4] != _MAGIC:
        raise ValueError("not a key blob")
    version, backend_tag, k, modulus_bits = struct.unpack(">BBHI", blob[4:12])
    if version != 1:
        raise ValueError(f"unsupported key blob version {version}")
    backend = _BACKEND_NAMES.get(backend_tag)
    if backend is None:
        raise ValueError(f"unknown backend tag {backend_tag}")
    has_secret = blob[12]
    fields = []
    pos = 13
    while pos < len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        pos += 4
        fields.append(int.from_bytes(blob[pos : pos + length], "big"))
        pos += length
    params = AheParams(backend, modulus_bits, k)
    if backend == "jl":
        expect = 2 + (2 if has_secret else 0)
        if len(fields) != expect:
            raise ValueError("malformed key blob")
        pk = JlPublicKey(params, fields[0], fields[1])
        sk = JlSecretKey(params, pk, fields[2], fields[3]) if has_secret else None
    else:
        expect = 1 + (2 if has_secret else 0)
        if len(fields) != expect:
            raise ValueError("malformed key blob")
        pk = PaillierPublicKey(params, fields[0])
        sk = PaillierSecretKey(params, pk, fields[1], fields[2]) if has_secret else None
    return pk, sk

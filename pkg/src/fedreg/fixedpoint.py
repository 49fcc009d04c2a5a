"""Fixed-point codec over the ring Z_{2^k}.

Reals are mapped to ring elements at an explicit scale s: the encoding of x
is round(x * 2^(s*tau)) with negatives represented as 2^k minus the
magnitude encoding. Positives occupy [0, 2^(k-1) - 1] and negatives
[2^(k-1), 2^k - 1], so additions compose in the ring as long as results
stay inside the signed half. Scales are metadata carried alongside values,
never inside the ring: adding requires equal scales, multiplying adds them.

Rounding is half away from zero, computed exactly on the binary expansion
of the input float (no intermediate float products), so the codec is
bit-reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

DEFAULT_K = 256
DEFAULT_TAU = 16


@dataclass(frozen=True)
class FpConfig:
    """Ring width k and per-scale-unit fractional bits tau."""

    k: int = DEFAULT_K
    tau: int = DEFAULT_TAU

    def __post_init__(self):
        if self.k < 16 or self.k % 8 != 0:
            raise ConfigError(f"ring width k={self.k} must be a multiple of 8, at least 16")
        if self.tau < 1:
            raise ConfigError(f"tau={self.tau} must be positive")

    @property
    def modulus(self) -> int:
        return 1 << self.k

    @property
    def half(self) -> int:
        return 1 << (self.k - 1)


DEFAULT_CONFIG = FpConfig()


def fp_encode(x: float, scale: int, cfg: FpConfig = DEFAULT_CONFIG) -> int:
    """Encode a real at the given scale into [0, 2^k).

    Raises OverflowError when |x| * 2^(scale*tau) does not fit the signed
    half of the ring, and ValueError for non-finite inputs or negative
    scales.
    """
    if scale < 0:
        raise ValueError(f"scale must be nonnegative, got {scale}")
    xf = float(x)
    if xf != xf or xf in (float("inf"), float("-inf")):
        raise ValueError(f"cannot encode non-finite value {x!r}")
    # Exact dyadic arithmetic: xf = num / den with den a power of two.
    num, den = abs(xf).as_integer_ratio()
    shift = scale * cfg.tau
    dbits = den.bit_length() - 1
    if shift >= dbits:
        mag = num << (shift - dbits)
    else:
        down = dbits - shift
        mag = (num + (1 << (down - 1))) >> down  # half away from zero
    negative = xf < 0
    limit = cfg.half if negative else cfg.half - 1
    if mag > limit:
        raise OverflowError(
            f"|{x}| at scale {scale} needs {mag.bit_length()} bits, exceeds signed half of k={cfg.k}"
        )
    if negative and mag:
        return cfg.modulus - mag
    return mag


def fp_decode(v: int, scale: int, cfg: FpConfig = DEFAULT_CONFIG) -> float:
    """Decode a ring element back to a real at the given scale."""
    if scale < 0:
        raise ValueError(f"scale must be nonnegative, got {scale}")
    if not 0 <= v < cfg.modulus:
        raise ValueError(f"value {v} outside ring [0, 2^{cfg.k})")
    signed = v - cfg.modulus if v >= cfg.half else v
    return signed / (1 << (scale * cfg.tau))


def fp_check_depth(cfg: FpConfig, max_scale: int, magnitude_bits: int) -> None:
    """Verify that the deepest product scale plus magnitude fits the ring.

    The contract is max_scale*tau + magnitude_bits <= k - 2, leaving a sign
    bit and one guard bit. Raises ConfigError when violated.
    """
    need = max_scale * cfg.tau + magnitude_bits
    if need > cfg.k - 2:
        raise ConfigError(
            f"depth {max_scale} at tau={cfg.tau} with {magnitude_bits} magnitude bits "
            f"needs {need} bits but k={cfg.k} leaves only {cfg.k - 2}"
        )


def _scales_for(scale, count: int) -> list[int]:
    # scale may be a single depth or one depth per coordinate
    if isinstance(scale, int):
        return [scale] * count
    scales = list(scale)
    if len(scales) != count:
        raise ValueError(f"{len(scales)} scales for {count} coordinates")
    return scales


def fp_encode_vector(xs, scale, cfg: FpConfig = DEFAULT_CONFIG) -> list[int]:
    xs = list(xs)
    return [fp_encode(x, s, cfg) for x, s in zip(xs, _scales_for(scale, len(xs)))]


def fp_decode_vector(vs, scale, cfg: FpConfig = DEFAULT_CONFIG) -> list[float]:
    vs = list(vs)
    return [fp_decode(v, s, cfg) for v, s in zip(vs, _scales_for(scale, len(vs)))]

"""Encrypted local gradient shares, computed between one user and the server.

The server holds the regression model and the decryption key. A user holds
a small dataset. The user receives the coordinate-wise encrypted model,
homomorphically accumulates its local gradient, blinds every coordinate
with a uniform ring element, and returns only the blinded share. The
server decrypts blinded shares; the blinds themselves are removed later,
after a dropout-robust masked sum of the r vectors, so no individual
user's gradient is ever visible.

Scale map (in units of tau): model intercept 2, other model coordinates 1,
features 1, linear labels 2, logistic labels 7. Linear share coordinates
decode at (2, 3, ..., 3); logistic at (7, 8, ..., 8). The logistic path
runs the per-point value z = theta.x + c through a cubic approximation of
the logistic function, where c is a uniform ring mask: the user sends
E(z), the server decrypts and returns E(z^2) and E(sigma3(z)), and the
user removes the mask homomorphically via the exact ring identity

  sigma3(y) = sigma3(z) - 3*q3*c*z^2 - (2*q2*c - 3*q3*c^2)*y
              - (q1*c + q2*c^2 - 2*q3*c^3)          with z = y + c,

which holds coordinate-exact mod 2^k for every y and c because both sides
expand to the same polynomial. The two correction factors share a final
power by the negated mask, so unmasking costs four scalar powers and two
ciphertext products per point, and additive constants known in plaintext
fold in as fused encrypt-and-add operations.

Operation accounting is part of the tested contract. Per user over d data
points with n features:

  linear    ct_mul 2(n+1)d - (n+1)   const_mul 2nd        enc d + (n+1)
  logistic  ct_mul (2n+5)d - (n+1)   const_mul 2(n+2)d    enc 3d + (n+1)

and user traffic in ciphertext bits is 2(n+1)L for linear and
(2(n+1) + 3d)L for logistic, with L the ciphertext width. The counts fall
out of the structure above: the first data point initializes the gradient
accumulators instead of multiplying into them, and the final blinds enter
through fused encrypt-and-add.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .fixedpoint import FpConfig, fp_encode
from .metrics import CountingDecryptor, CountingEval, OpCounter

MODEL_INTERCEPT_SCALE = 2
MODEL_COORD_SCALE = 1
FEATURE_SCALE = 1
LABEL_SCALE = {"linear": 2, "ridge": 2, "logistic": 7}
KINDS = ("linear", "ridge", "logistic")


def share_scales(kind: str, n: int) -> list[int]:
    """Decode scales of a share vector, coordinate 0 first."""
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}, expected one of {KINDS}")
    if kind == "logistic":
        return [7] + [8] * n
    return [2] + [3] * n


@dataclass(frozen=True)
class SigmoidCubic:
    """Cubic least-squares fit of the logistic function on [-l, l].

    coeffs are (c0, c1, c2, c3) as floats; q are their ring encodings at
    scales (7, 5, 3, 1) in units of tau, so every term of a ring Horner
    evaluation at a scale-2 argument lands at 7 tau.
    """

    coeffs: tuple[float, float, float, float]
    q: tuple[int, int, int, int]
    interval: float
    grid_points: int
    fit_error: float

    def value(self, x: float) -> float:
        c0, c1, c2, c3 = self.coeffs
        return c0 + c1 * x + c2 * x * x + c3 * x * x * x


def fit_sigmoid_cubic(
    interval: float = 8.0, grid_points: int = 1000, cfg: FpConfig = FpConfig()
) -> SigmoidCubic:
    if interval <= 0 or grid_points < 8:
        raise ConfigError("need a positive interval and at least 8 grid points")
    xs = np.linspace(-interval, interval, grid_points)
    ys = 1.0 / (1.0 + np.exp(-xs))
    c3, c2, c1, c0 = (float(v) for v in np.polyfit(xs, ys, 3))
    fit_error = float(np.max(np.abs(np.polyval([c3, c2, c1, c0], xs) - ys)))
    coeffs = (c0, c1, c2, c3)
    q = tuple(fp_encode(coeffs[i], 7 - 2 * i, cfg) for i in range(4))
    return SigmoidCubic(coeffs, q, interval, grid_points, fit_error)


def sigma3_ring(y: int, sig: SigmoidCubic, cfg: FpConfig) -> int:
    """Evaluate the cubic at a scale-2 ring argument; result at scale 7."""
    mod = cfg.modulus
    q0, q1, q2, q3 = sig.q
    acc = q3
    for coeff in (q2, q1, q0):
        acc = (acc * y + coeff) % mod
    return acc


def encrypt_model(pk_eval, theta: list[float], cfg: FpConfig, rng: random.Random) -> list[int]:
    """Encrypt (theta_0, ..., theta_n); intercept at scale 2, rest at 1."""
    cts = [pk_eval.encrypt(fp_encode(theta[0], MODEL_INTERCEPT_SCALE, cfg), rng)]
    for coef in theta[1:]:
        cts.append(pk_eval.encrypt(fp_encode(coef, MODEL_COORD_SCALE, cfg), rng))
    return cts


def encrypted_inner_product(ev: CountingEval, enc_model: list[int], x_ring: list[int]) -> int:
    """E(theta . x) from the encrypted model and an encoded feature row.

    Multiplies the n constant powers together and folds in the encrypted
    intercept: n scalar powers and n ciphertext products.
    """
    n = len(x_ring)
    if len(enc_model) != n + 1:
        raise ValueError(f"model has {len(enc_model)} coordinates, row needs {n + 1}")
    if n == 0:
        raise ValueError("feature dimension must be at least 1")
    acc = ev.scalar_mul(enc_model[1], x_ring[0])
    for j in range(1, n):
        acc = ev.add(acc, ev.scalar_mul(enc_model[j + 1], x_ring[j]))
    return ev.add(acc, enc_model[0])


@dataclass
class GradientSharePair:
    """A user's blinded encrypted gradient and the blind it kept."""

    enc_share: list[int]
    blind: list[int]
    kind: str
    n: int
    d: int


def _encode_rows(rows, cfg: FpConfig) -> list[list[int]]:
    return [[fp_encode(x, FEATURE_SCALE, cfg) for x in row] for row in rows]


def _accumulate_and_blind(
    ev: CountingEval,
    err_cts: list[int],
    rows_ring: list[list[int]],
    cfg: FpConfig,
    rng: random.Random,
) -> tuple[list[int], list[int]]:
    """Fold per-point error ciphertexts into a blinded share vector.

    The first point initializes the accumulators; every later point costs
    one ciphertext product per coordinate. The uniform blinds enter through
    fused encrypt-and-add at the end.
    """
    acc: list[int] = []
    for i, (e_ct, xr) in enumerate(zip(err_cts, rows_ring)):
        if i == 0:
            acc = [e_ct] + [ev.scalar_mul(e_ct, xj) for xj in xr]
        else:
            acc[0] = ev.add(acc[0], e_ct)
            for j, xj in enumerate(xr):
                acc[j + 1] = ev.add(acc[j + 1], ev.scalar_mul(e_ct, xj))
    blind = [rng.getrandbits(cfg.k) for _ in acc]
    share = [ev.add_plain(c, r, rng) for c, r in zip(acc, blind)]
    return share, blind


def lin_slg(
    ev: CountingEval,
    enc_model: list[int],
    rows: list[list[float]],
    labels: list[float],
    cfg: FpConfig,
    rng: random.Random,
) -> GradientSharePair:
    """Linear (and ridge) local gradient share over the user's points."""
    if not rows or len(rows) != len(labels):
        raise ValueError("need equally many rows and labels, at least one")
    n = len(rows[0])
    ev.received(n + 1)
    rows_ring = _encode_rows(rows, cfg)
    err_cts = []
    for xr, y in zip(rows_ring, labels):
        neg_label = ev.encrypt(fp_encode(-y, LABEL_SCALE["linear"], cfg), rng)
        err_cts.append(ev.add(encrypted_inner_product(ev, enc_model, xr), neg_label))
    share, blind = _accumulate_and_blind(ev, err_cts, rows_ring, cfg, rng)
    ev.sent(n + 1)
    return GradientSharePair(share, blind, "linear", n, len(rows))


@dataclass
class LogSlgState:
    """What the user retains between the mask and unmask half-rounds."""

    ip_cts: list[int]
    masks: list[int]
    rows_ring: list[list[int]]
    n: int


def log_slg_mask(
    ev: CountingEval,
    enc_model: list[int],
    rows: list[list[float]],
    cfg: FpConfig,
    rng: random.Random,
) -> tuple[LogSlgState, list[int]]:
    """First half-round: per point, E(z) = E(theta.x) * E(c), c uniform."""
    if not rows:
        raise ValueError("need at least one row")
    n = len(rows[0])
    ev.received(n + 1)
    rows_ring = _encode_rows(rows, cfg)
    ip_cts, masks, z_cts = [], [], []
    for xr in rows_ring:
        ip = encrypted_inner_product(ev, enc_model, xr)
        c = rng.getrandbits(cfg.k)
        z_cts.append(ev.add(ip, ev.encrypt(c, rng)))
        ip_cts.append(ip)
        masks.append(c)
    ev.sent(len(rows))
    return LogSlgState(ip_cts, masks, rows_ring, n), z_cts


def log_slg_assist(
    dec: CountingDecryptor,
    server_ev: CountingEval,
    z_cts: list[int],
    sig: SigmoidCubic,
    cfg: FpConfig,
    rng: random.Random,
) -> list[tuple[int, int]]:
    """Server half-round: decrypt each z, return E(z^2) and E(sigma3(z))."""
    mod = cfg.modulus
    out = []
    for z_ct in z_cts:
        z = dec.decrypt(z_ct)
        out.append(
            (
                server_ev.encrypt(z * z % mod, rng),
                server_ev.encrypt(sigma3_ring(z, sig, cfg), rng),
            )
        )
    return out


def log_slg_unmask_and_share(
    ev: CountingEval,
    state: LogSlgState,
    assist: list[tuple[int, int]],
    labels: list[float],
    sig: SigmoidCubic,
    cfg: FpConfig,
    rng: random.Random,
) -> GradientSharePair:
    """Second half-round: unmask sigma3 per point, accumulate, blind."""
    if len(assist) != len(state.ip_cts) or len(labels) != len(state.ip_cts):
        raise ValueError("assist and label counts must match the masked points")
    ev.received(2 * len(assist))
    mod = cfg.modulus
    q0, q1, q2, q3 = sig.q
    err_cts = []
    for (z2_ct, s3z_ct), ip_ct, c, y in zip(assist, state.ip_cts, state.masks, labels):
        neg_c = (mod - c) % mod
        # sigma3(z) - 3 q3 c z^2 - (2 q2 c - 3 q3 c^2) y - (q1 c + q2 c^2 - 2 q3 c^3)
        corr_z2 = ev.scalar_mul(ev.scalar_mul(z2_ct, 3 * q3 % mod), neg_c)
        corr_y = ev.scalar_mul(ev.scalar_mul(ip_ct, (2 * q2 - 3 * q3 * c) % mod), neg_c)
        s3y_ct = ev.add(ev.add(s3z_ct, corr_z2), corr_y)
        const = (-(q1 * c + q2 * c * c - 2 * q3 * c**3)) % mod
        s3y_ct = ev.add_plain(s3y_ct, const, rng)
        neg_label = ev.encrypt(fp_encode(-y, LABEL_SCALE["logistic"], cfg), rng)
        err_cts.append(ev.add(s3y_ct, neg_label))
    share, blind = _accumulate_and_blind(ev, err_cts, state.rows_ring, cfg, rng)
    ev.sent(state.n + 1)
    return GradientSharePair(share, blind, "logistic", state.n, len(labels))


def run_slg(
    kind: str,
    ev: CountingEval,
    dec: CountingDecryptor,
    server_ev: CountingEval,
    enc_model: list[int],
    rows: list[list[float]],
    labels: list[float],
    cfg: FpConfig,
    rng: random.Random,
    sig: SigmoidCubic | None = None,
) -> GradientSharePair:
    """One user's full share computation, either flavor."""
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    if kind == "logistic":
        if sig is None:
            raise ConfigError("logistic flavor needs a fitted sigmoid cubic")
        state, z_cts = log_slg_mask(ev, enc_model, rows, cfg, rng)
        assist = log_slg_assist(dec, server_ev, z_cts, sig, cfg, rng)
        return log_slg_unmask_and_share(ev, state, assist, labels, sig, cfg, rng)
    return lin_slg(ev, enc_model, rows, labels, cfg, rng)


def expected_user_op_counts(kind: str, n: int, d: int) -> dict[str, int]:
    """Closed-form per-user operation counts for an SLG run."""
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    if kind == "logistic":
        return {
            "ct_mul": (2 * n + 5) * d - (n + 1),
            "const_mul": 2 * (n + 2) * d,
            "enc": 3 * d + (n + 1),
        }
    return {
        "ct_mul": 2 * (n + 1) * d - (n + 1),
        "const_mul": 2 * n * d,
        "enc": d + (n + 1),
    }


def expected_user_comm_bits(kind: str, n: int, d: int, ciphertext_bits: int) -> int:
    """Closed-form per-user ciphertext traffic for an SLG run."""
    if kind == "logistic":
        return (2 * (n + 1) + 3 * d) * ciphertext_bits
    return 2 * (n + 1) * ciphertext_bits


def decrypt_share(dec: CountingDecryptor, share: GradientSharePair) -> list[int]:
    return [dec.decrypt(c) for c in share.enc_share]


def local_gradient_float(
    kind: str,
    theta: list[float],
    rows: list[list[float]],
    labels: list[float],
    sig: SigmoidCubic | None = None,
) -> list[float]:
    """Float reference of a user's local gradient (cubic for logistic)."""
    n = len(rows[0])
    grad = [0.0] * (n + 1)
    for row, y in zip(rows, labels):
        pred = theta[0] + sum(t * x for t, x in zip(theta[1:], row))
        if kind == "logistic":
            if sig is None:
                raise ConfigError("logistic flavor needs a fitted sigmoid cubic")
            pred = sig.value(pred)
        e = pred - y
        grad[0] += e
        for j, x in enumerate(row):
            grad[j + 1] += e * x
    return grad


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    t = math.exp(x)
    return t / (1.0 + t)

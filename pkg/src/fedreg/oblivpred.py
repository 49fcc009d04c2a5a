"""Oblivious model evaluation: the user learns the prediction, nothing
else; the server never sees the query.

Roles flip relative to training: the querying user owns the key pair and
sends its feature row encrypted coordinate-wise; the server evaluates the
plaintext model homomorphically and answers in ciphertext. For the
logistic flavor the server additively masks the score z = theta.x + r
with a uniform ring element r before handing it back, the user returns
E(z^2) and E(sigma3(z)), and the server removes the mask through the same
exact ring identity the training path uses, so the user only ever
decrypts the masked score and the final sigmoid value.

Tested operation counts:

  linear    user n enc + 1 dec           server n ct_mul, n const_mul, 1 enc
  logistic  user (n+2) enc + 2 dec       server (n+3) ct_mul, (n+2) const_mul, 3 enc

and total ciphertext traffic is (n+1) ciphertexts for linear, (n+4) for
logistic.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import ConfigError
from .fixedpoint import FpConfig, fp_decode, fp_encode
from .metrics import CountingDecryptor, CountingEval
from .slg import MODEL_INTERCEPT_SCALE, MODEL_COORD_SCALE, SigmoidCubic, sigma3_ring


def expected_prediction_counts(kind: str, n: int, ciphertext_bits: int) -> dict[str, int]:
    if kind == "logistic":
        return {
            "user_enc": n + 2,
            "user_dec": 2,
            "server_ct_mul": n + 3,
            "server_const_mul": n + 2,
            "server_enc": 3,
            "comm_bits": (n + 4) * ciphertext_bits,
        }
    return {
        "user_enc": n,
        "user_dec": 1,
        "server_ct_mul": n,
        "server_const_mul": n,
        "server_enc": 1,
        "comm_bits": (n + 1) * ciphertext_bits,
    }


def predict_request(
    user_ev: CountingEval, x: list[float], cfg: FpConfig, rng: random.Random
) -> list[int]:
    """Encrypt the feature row coordinate-wise under the user's key."""
    if not x:
        raise ValueError("feature row must have at least one coordinate")
    cts = [user_ev.encrypt(fp_encode(v, 1, cfg), rng) for v in x]
    user_ev.sent(len(cts))
    return cts


def _score_ct(
    server_ev: CountingEval,
    theta: list[float],
    enc_input: list[int],
    cfg: FpConfig,
    rng: random.Random,
) -> int:
    """E(y) at scale 2, y = theta_0 + theta . x, from the encrypted row."""
    n = len(enc_input)
    if len(theta) != n + 1:
        raise ValueError(f"model has {len(theta)} coordinates, expected {n + 1}")
    acc = server_ev.scalar_mul(enc_input[0], fp_encode(theta[1], MODEL_COORD_SCALE, cfg))
    for j in range(1, n):
        acc = server_ev.add(
            acc, server_ev.scalar_mul(enc_input[j], fp_encode(theta[j + 1], MODEL_COORD_SCALE, cfg))
        )
    return server_ev.add(
        acc, server_ev.encrypt(fp_encode(theta[0], MODEL_INTERCEPT_SCALE, cfg), rng)
    )


def lin_predict_respond(
    server_ev: CountingEval,
    theta: list[float],
    enc_input: list[int],
    cfg: FpConfig,
    rng: random.Random,
) -> int:
    server_ev.received(len(enc_input))
    e_y = _score_ct(server_ev, theta, enc_input, cfg, rng)
    server_ev.sent(1)
    return e_y


def lin_predict_finish(
    user_ev: CountingEval, user_dec: CountingDecryptor, ct: int, cfg: FpConfig
) -> float:
    user_ev.received(1)
    return fp_decode(user_dec.decrypt(ct), 2, cfg)


@dataclass
class LogPredState:
    """What the server retains between the two logistic response steps."""

    e_y: int
    r: int


def log_predict_respond_score(
    server_ev: CountingEval,
    theta: list[float],
    enc_input: list[int],
    cfg: FpConfig,
    rng: random.Random,
) -> tuple[LogPredState, int]:
    """First response: E(z) = E(theta.x) * E(r) with r uniform in the ring."""
    server_ev.received(len(enc_input))
    e_y = _score_ct(server_ev, theta, enc_input, cfg, rng)
    r = rng.getrandbits(cfg.k)
    e_z = server_ev.add(e_y, server_ev.encrypt(r, rng))
    server_ev.sent(1)
    return LogPredState(e_y, r), e_z


def log_predict_assist(
    user_dec: CountingDecryptor,
    user_ev: CountingEval,
    e_z: int,
    sig: SigmoidCubic,
    cfg: FpConfig,
    rng: random.Random,
) -> tuple[int, int]:
    """User turn: decrypt the masked score, return E(z^2) and E(sigma3(z))."""
    user_ev.received(1)
    z = user_dec.decrypt(e_z)
    mod = cfg.modulus
    e_z2 = user_ev.encrypt(z * z % mod, rng)
    e_s3z = user_ev.encrypt(sigma3_ring(z, sig, cfg), rng)
    user_ev.sent(2)
    return e_z2, e_s3z


def log_predict_respond_final(
    server_ev: CountingEval,
    state: LogPredState,
    e_z2: int,
    e_s3z: int,
    sig: SigmoidCubic,
    cfg: FpConfig,
    rng: random.Random,
) -> int:
    """Second response: strip the mask from E(sigma3(z)) homomorphically."""
    server_ev.received(2)
    mod = cfg.modulus
    _, q1, q2, q3 = sig.q
    r = state.r
    corr_z2 = server_ev.scalar_mul(e_z2, (-3 * q3 * r) % mod)
    corr_y = server_ev.scalar_mul(state.e_y, (-(2 * q2 * r - 3 * q3 * r * r)) % mod)
    out = server_ev.add(server_ev.add(e_s3z, corr_z2), corr_y)
    const = (-(q1 * r + q2 * r * r - 2 * q3 * r**3)) % mod
    out = server_ev.add_plain(out, const, rng)
    server_ev.sent(1)
    return out


def log_predict_finish(
    user_ev: CountingEval, user_dec: CountingDecryptor, ct: int, cfg: FpConfig
) -> tuple[float, int]:
    user_ev.received(1)
    p = fp_decode(user_dec.decrypt(ct), 7, cfg)
    return p, int(p >= 0.5)


def predict(
    kind: str,
    user_ev: CountingEval,
    user_dec: CountingDecryptor,
    server_ev: CountingEval,
    theta: list[float],
    x: list[float],
    cfg: FpConfig,
    rng: random.Random,
    sig: SigmoidCubic | None = None,
) -> float:
    """One full oblivious evaluation; returns the decoded prediction.

    For logistic this is the sigmoid estimate in [0, 1]; thresholding is
    the caller's business.
    """
    enc_input = predict_request(user_ev, x, cfg, rng)
    if kind == "logistic":
        if sig is None:
            raise ConfigError("logistic prediction needs a fitted sigmoid cubic")
        state, e_z = log_predict_respond_score(server_ev, theta, enc_input, cfg, rng)
        e_z2, e_s3z = log_predict_assist(user_dec, user_ev, e_z, sig, cfg, rng)
        out = log_predict_respond_final(server_ev, state, e_z2, e_s3z, sig, cfg, rng)
        p, _ = log_predict_finish(user_ev, user_dec, out, cfg)
        return p
    if kind not in ("linear", "ridge"):
        raise ConfigError(f"unknown model kind {kind!r}")
    out = lin_predict_respond(server_ev, theta, enc_input, cfg, rng)
    return lin_predict_finish(user_ev, user_dec, out, cfg)

import json
import math
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedreg.errors import ConfigError
from fedreg.fixedpoint import FpConfig, fp_decode_vector, fp_encode
from fedreg.metrics import CountingDecryptor, CountingEval
from fedreg.slg import (
    KINDS,
    LABEL_SCALE,
    decrypt_share,
    encrypt_model,
    expected_user_comm_bits,
    expected_user_op_counts,
    fit_sigmoid_cubic,
    local_gradient_float,
    run_slg,
    share_scales,
    sigma3_ring,
    sigmoid,
)
from oracles import (
    oracle_gradient_ring,
    oracle_sigma3_ring,
    oracle_unmask,
    oracle_unmask_naive,
)

CFG = FpConfig()
FIXTURE = Path(__file__).parent / "data" / "unmask_counterexample.json"

elem16 = st.integers(0, (1 << 16) - 1)


@pytest.fixture(scope="module")
def sig():
    return fit_sigmoid_cubic(cfg=CFG)


# -- cubic fit ---------------------------------------------------------------


def test_fit_error_frozen_bound(sig):
    # computed once on the fixed grid and frozen; the fit is least squares
    # over [-8, 8] with 1000 points
    assert sig.fit_error == pytest.approx(0.113187, abs=1e-5)
    assert sig.fit_error < 0.115


def test_fit_approximates_sigmoid_on_interval(sig):
    for i in range(201):
        x = -8.0 + 16.0 * i / 200
        assert abs(sig.value(x) - sigmoid(x)) <= sig.fit_error + 1e-9


def test_fit_coefficient_encodings(sig):
    # ring coefficients carry complementary scales so every monomial of
    # sigma3(v) lands at scale 7 when v is at scale 2
    for i, (c, q) in enumerate(zip(sig.coeffs, sig.q)):
        assert q == fp_encode(c, 7 - 2 * i, CFG)


def test_sigma3_ring_matches_direct_oracle(sig):
    rng = random.Random(5)
    for _ in range(200):
        v = rng.getrandbits(CFG.k)
        assert sigma3_ring(v, sig, CFG) == oracle_sigma3_ring(v, sig.q, CFG.k)


# -- mask-removal identity ---------------------------------------------------


@given(elem16, elem16, elem16, elem16, elem16, elem16)
@settings(max_examples=300)
def test_unmask_identity_exact_in_toy_ring(q0, q1, q2, q3, y, r):
    k = 16
    q = (q0, q1, q2, q3)
    z = (y + r) % (1 << k)
    recovered = oracle_unmask(oracle_sigma3_ring(z, q, k), z, y, r, q, k)
    assert recovered == oracle_sigma3_ring(y, q, k)


@given(st.integers(0, 2**64), st.integers(0, 2**64))
@settings(max_examples=100)
def test_unmask_identity_exact_in_full_ring(y, r):
    k = CFG.k
    q = (12345, 67890, 13579, 24680)
    z = (y + r) % (1 << k)
    recovered = oracle_unmask(oracle_sigma3_ring(z, q, k), z, y, r, q, k)
    assert recovered == oracle_sigma3_ring(y, q, k)


def test_counterexample_fixture():
    fx = json.loads(FIXTURE.read_text())
    q = tuple(fx["q"])
    y, r, z = fx["y"], fx["r"], fx["z"]
    assert z == y + r
    assert oracle_sigma3_ring(z, q, 16) == fx["sigma3_of_z"]
    assert oracle_sigma3_ring(y, q, 16) == fx["correct_sigma3_of_y"]
    # the correct expression recovers sigma3(y) in both rings
    for k, ring in ((16, fx["ring_k16"]), (256, fx["ring_k256"])):
        s3z = oracle_sigma3_ring(z, q, k)
        assert oracle_unmask(s3z, z, y, r, q, k) == int(ring["correct"])
        assert oracle_unmask_naive(s3z, z, y, r, q, k) == int(ring["naive_variant"])
        assert int(ring["correct"]) != int(ring["naive_variant"])
    # signed reading of the naive result matches the recorded value
    signed = int(fx["ring_k16"]["naive_variant"]) - (1 << 16)
    assert signed == fx["naive_variant_result"] == -1


# -- protocol runs against the ring oracle -----------------------------------


def _instance(kind, n, d, seed):
    rng = random.Random(seed)
    theta = [rng.uniform(-1, 1) for _ in range(n + 1)]
    rows = [[rng.uniform(-1, 1) for _ in range(n)] for _ in range(d)]
    if kind == "logistic":
        labels = [float(rng.random() < 0.5) for _ in range(d)]
    else:
        labels = [rng.uniform(-1, 1) for _ in range(d)]
    return theta, rows, labels, rng


@pytest.mark.parametrize("kind", ["linear", "ridge", "logistic"])
@pytest.mark.parametrize("n,d", [(1, 1), (2, 3), (5, 4)])
def test_share_is_ring_exact_against_oracle(key2048, sig, kind, n, d):
    pk, sk = key2048
    theta, rows, labels, rng = _instance(kind, n, d, 1000 + n * 10 + d)
    server = CountingEval(pk)
    user = CountingEval(pk)
    dec = CountingDecryptor(sk)
    enc_model = encrypt_model(server, theta, CFG, rng)
    pair = run_slg(kind, user, dec, server, enc_model, rows, labels, CFG, rng, sig)
    share = decrypt_share(dec, pair)
    got = [(s - b) % CFG.modulus for s, b in zip(share, pair.blind)]
    want = oracle_gradient_ring(
        kind, theta, rows, labels, sig.q if kind == "logistic" else None, CFG.tau, CFG.k
    )
    assert got == want


@pytest.mark.parametrize("kind", ["linear", "logistic"])
def test_share_decodes_near_float_gradient(key2048, sig, kind):
    pk, sk = key2048
    n, d = 4, 5
    theta, rows, labels, rng = _instance(kind, n, d, 77)
    server = CountingEval(pk)
    user = CountingEval(pk)
    dec = CountingDecryptor(sk)
    enc_model = encrypt_model(server, theta, CFG, rng)
    pair = run_slg(kind, user, dec, server, enc_model, rows, labels, CFG, rng, sig)
    share = decrypt_share(dec, pair)
    ring = [(s - b) % CFG.modulus for s, b in zip(share, pair.blind)]
    decoded = fp_decode_vector(ring, share_scales(kind, n), CFG)
    ref = local_gradient_float(kind, theta, rows, labels, sig)
    for a, b in zip(decoded, ref):
        assert abs(a - b) <= d * 2.0 ** (-CFG.tau + 4)


# -- cost accounting ---------------------------------------------------------


@pytest.mark.parametrize("kind", ["linear", "logistic"])
@pytest.mark.parametrize("n", [1, 3, 7])
@pytest.mark.parametrize("d", [1, 2, 6])
def test_op_counts_match_closed_forms(key2048, sig, kind, n, d):
    pk, sk = key2048
    theta, rows, labels, rng = _instance(kind, n, d, n * 100 + d)
    server = CountingEval(pk)
    user = CountingEval(pk)
    dec = CountingDecryptor(sk)
    enc_model = encrypt_model(server, theta, CFG, rng)
    run_slg(kind, user, dec, server, enc_model, rows, labels, CFG, rng, sig)
    want = expected_user_op_counts(kind, n, d)
    assert user.counter.enc == want["enc"]
    assert user.counter.ct_mul == want["ct_mul"]
    assert user.counter.const_mul == want["const_mul"]
    total_bits = user.counter.bits_up + user.counter.bits_down
    assert total_bits == expected_user_comm_bits(kind, n, d, pk.ciphertext_bits)


def test_count_formulas_values():
    # spot values of the closed forms themselves
    assert expected_user_op_counts("linear", 10, 5) == {
        "ct_mul": 2 * 11 * 5 - 11,
        "const_mul": 2 * 10 * 5,
        "enc": 5 + 11,
    }
    assert expected_user_op_counts("logistic", 10, 5) == {
        "ct_mul": (2 * 10 + 5) * 5 - 11,
        "const_mul": 2 * 12 * 5,
        "enc": 15 + 11,
    }
    assert expected_user_comm_bits("linear", 10, 5, 2048) == 2 * 11 * 2048
    assert expected_user_comm_bits("logistic", 10, 5, 2048) == (2 * 11 + 15) * 2048


# -- model transport ---------------------------------------------------------


def test_encrypted_model_scale_layout(key2048):
    pk, sk = key2048
    rng = random.Random(12)
    theta = [0.5, -1.25, 2.0]
    ev = CountingEval(pk)
    cts = encrypt_model(ev, theta, CFG, rng)
    dec = CountingDecryptor(sk)
    vals = [dec.decrypt(c) for c in cts]
    assert vals[0] == fp_encode(0.5, 2, CFG)
    assert vals[1] == fp_encode(-1.25, 1, CFG)
    assert vals[2] == fp_encode(2.0, 1, CFG)


def test_share_scales_and_kinds():
    assert share_scales("linear", 3) == [2, 3, 3, 3]
    assert share_scales("ridge", 2) == [2, 3, 3]
    assert share_scales("logistic", 2) == [7, 8, 8]
    assert set(KINDS) == {"linear", "ridge", "logistic"}
    assert LABEL_SCALE["logistic"] == 7
    with pytest.raises(ConfigError):
        share_scales("poisson", 2)


def test_logistic_requires_sigmoid(key2048):
    pk, sk = key2048
    rng = random.Random(13)
    theta, rows, labels, _ = _instance("logistic", 2, 2, 5)
    server = CountingEval(pk)
    enc_model = encrypt_model(server, theta, CFG, rng)
    with pytest.raises(ConfigError):
        run_slg(
            "logistic",
            CountingEval(pk),
            CountingDecryptor(sk),
            server,
            enc_model,
            rows,
            labels,
            CFG,
            rng,
            None,
        )

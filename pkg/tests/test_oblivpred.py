import random

import pytest

from fedreg.errors import ConfigError
from fedreg.fixedpoint import FpConfig
from fedreg.metrics import CountingDecryptor, CountingEval
from fedreg.oblivpred import (
    expected_prediction_counts,
    lin_predict_finish,
    lin_predict_respond,
    log_predict_assist,
    log_predict_finish,
    log_predict_respond_final,
    log_predict_respond_score,
    predict,
    predict_request,
)
from fedreg.slg import fit_sigmoid_cubic, sigmoid
from oracles import oracle_float_inner

CFG = FpConfig()


@pytest.fixture(scope="module")
def sig():
    return fit_sigmoid_cubic(cfg=CFG)


def _instance(n, seed):
    rng = random.Random(seed)
    theta = [rng.uniform(-1, 1) for _ in range(n + 1)]
    x = [rng.uniform(-1, 1) for _ in range(n)]
    return theta, x, rng


@pytest.mark.parametrize("n", [1, 3, 8])
def test_linear_prediction_value_and_counts(key2048, n):
    pk, sk = key2048
    theta, x, rng = _instance(n, 40 + n)
    user_ev, server_ev = CountingEval(pk), CountingEval(pk)
    user_dec = CountingDecryptor(sk)
    got = predict("linear", user_ev, user_dec, server_ev, theta, x, CFG, rng)
    assert abs(got - oracle_float_inner(theta, x)) <= 2.0 ** (-CFG.tau + 3)

    want = expected_prediction_counts("linear", n, pk.ciphertext_bits)
    assert user_ev.counter.enc == want["user_enc"]
    assert user_dec.counter.dec == want["user_dec"]
    assert server_ev.counter.ct_mul == want["server_ct_mul"]
    assert server_ev.counter.const_mul == want["server_const_mul"]
    assert server_ev.counter.enc == want["server_enc"]
    assert user_ev.counter.bits_up + user_ev.counter.bits_down == want["comm_bits"]


@pytest.mark.parametrize("n", [1, 3, 8])
def test_logistic_prediction_value_and_counts(key2048, sig, n):
    pk, sk = key2048
    theta, x, rng = _instance(n, 80 + n)
    user_ev, server_ev = CountingEval(pk), CountingEval(pk)
    user_dec = CountingDecryptor(sk)
    got = predict("logistic", user_ev, user_dec, server_ev, theta, x, CFG, rng, sig)
    score = oracle_float_inner(theta, x)
    # the protocol computes the cubic surrogate exactly; it differs from
    # the true logistic by at most the frozen fit error
    assert abs(got - sig.value(score)) <= 2.0 ** (-CFG.tau + 4)
    assert abs(got - sigmoid(score)) <= sig.fit_error + 1e-4

    want = expected_prediction_counts("logistic", n, pk.ciphertext_bits)
    assert user_ev.counter.enc == want["user_enc"]
    assert user_dec.counter.dec == want["user_dec"]
    assert server_ev.counter.ct_mul == want["server_ct_mul"]
    assert server_ev.counter.const_mul == want["server_const_mul"]
    assert server_ev.counter.enc == want["server_enc"]
    assert user_ev.counter.bits_up + user_ev.counter.bits_down == want["comm_bits"]


def test_count_formulas_values():
    lin = expected_prediction_counts("linear", 10, 2048)
    assert lin == {
        "user_enc": 10,
        "user_dec": 1,
        "server_ct_mul": 10,
        "server_const_mul": 10,
        "server_enc": 1,
        "comm_bits": 11 * 2048,
    }
    log = expected_prediction_counts("logistic", 10, 2048)
    assert log == {
        "user_enc": 12,
        "user_dec": 2,
        "server_ct_mul": 13,
        "server_const_mul": 12,
        "server_enc": 3,
        "comm_bits": 14 * 2048,
    }


def test_logistic_classification_threshold(key2048, sig):
    pk, sk = key2048
    rng = random.Random(9)
    # strongly positive and strongly negative scores classify correctly
    theta = [0.0, 2.0]
    for x, want_label in (([1.5], 1), ([-1.5], 0)):
        user_ev, server_ev = CountingEval(pk), CountingEval(pk)
        user_dec = CountingDecryptor(sk)
        enc_x = predict_request(user_ev, x, CFG, rng)
        state, e_z = log_predict_respond_score(server_ev, theta, enc_x, CFG, rng)
        e_z2, e_s3z = log_predict_assist(user_dec, user_ev, e_z, sig, CFG, rng)
        out = log_predict_respond_final(server_ev, state, e_z2, e_s3z, sig, CFG, rng)
        p, label = log_predict_finish(user_ev, user_dec, out, CFG)
        assert label == want_label
        assert (p >= 0.5) == bool(want_label)


def test_score_mask_is_full_ring(key2048, sig):
    pk, sk = key2048
    rng = random.Random(10)
    theta, x, _ = _instance(3, 11)
    user_ev, server_ev = CountingEval(pk), CountingEval(pk)
    user_dec = CountingDecryptor(sk)
    enc_x = predict_request(user_ev, x, CFG, rng)
    state, e_z = log_predict_respond_score(server_ev, theta, enc_x, CFG, rng)
    z = user_dec.decrypt(e_z)
    y = user_dec.decrypt(state.e_y)
    assert z == (y + state.r) % CFG.modulus
    assert 0 <= state.r < CFG.modulus
    # the mask swamps the score: z alone looks nothing like y
    assert z != y


def test_mismatched_model_rejected(key2048):
    pk, sk = key2048
    rng = random.Random(12)
    user_ev, server_ev = CountingEval(pk), CountingEval(pk)
    enc_x = predict_request(user_ev, [0.1, 0.2], CFG, rng)
    with pytest.raises(ValueError):
        lin_predict_respond(server_ev, [0.1, 0.2], enc_x, CFG, rng)


def test_dispatcher_validation(key2048, sig):
    pk, sk = key2048
    rng = random.Random(13)
    ue, se = CountingEval(pk), CountingEval(pk)
    ud = CountingDecryptor(sk)
    with pytest.raises(ConfigError):
        predict("logistic", ue, ud, se, [0.1, 0.2], [0.5], CFG, rng, None)
    with pytest.raises(ConfigError):
        predict("poisson", ue, ud, se, [0.1, 0.2], [0.5], CFG, rng)
    with pytest.raises(ValueError):
        predict_request(ue, [], CFG, rng)


def test_ridge_uses_linear_path(key2048):
    pk, sk = key2048
    theta, x, rng = _instance(4, 50)
    ue, se = CountingEval(pk), CountingEval(pk)
    ud = CountingDecryptor(sk)
    got = predict("ridge", ue, ud, se, theta, x, CFG, rng)
    assert abs(got - oracle_float_inner(theta, x)) <= 2.0 ** (-CFG.tau + 3)

import math
import random

import pytest

from fedreg.bus import (
    STEP_MASKED,
    STEP_SLG,
    STEP_START,
    NoDropout,
    PermanentDrops,
    TransientDrops,
)
from fedreg.data import gen_synthetic, partition
from fedreg.errors import ConfigError, ProtocolAbort
from fedreg.fedtrain import (
    TrainConfig,
    gradient_reveals_features,
    model_update,
    plaintext_train,
    train,
)
from fedreg.fixedpoint import FpConfig


def _user_data(kind, m=9, ell=4, n=3, seed=5):
    ds = gen_synthetic(
        "logistic" if kind == "logistic" else "linear", n, m * ell * 2, seed=seed, noise=0.1
    )
    users, _, _ = partition(ds, m, ell, split_ratio=0.7, seed=seed)
    return users


def _cfg(kind, **kw):
    base = dict(
        kind=kind,
        n_users=9,
        per_user=4,
        rounds=3,
        eta=0.1,
        seed=20,
        modulus_bits=2048,
        epsilon=4,
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.mark.parametrize(
    "kind,eta,lam",
    [("linear", 0.1, 0.0), ("logistic", 0.2, 0.0), ("ridge", 0.005, 0.01)],
)
def test_secure_training_matches_plaintext_oracle(kind, eta, lam):
    users = _user_data(kind)
    cfg = _cfg(kind, eta=eta, lam=lam)
    res = train(users, cfg)
    theta_ref, reports_ref = plaintext_train(users, cfg)
    assert len(res.theta) == 4
    err = max(abs(a - b) for a, b in zip(res.theta, theta_ref))
    assert err < 1e-3
    assert len(res.rounds) == len(reports_ref) == cfg.rounds
    for sec, ref in zip(res.rounds, reports_ref):
        assert sec.cohort == ref.cohort
        assert sec.survivors == ref.survivors
        assert sec.d_a == ref.d_a


def test_transient_dropout_lockstep():
    users = _user_data("linear")
    cfg = _cfg("linear")
    # pick the real cohort, then drop two of its members mid-round
    _, dry = plaintext_train(users, cfg)
    c = dry[0].cohort
    sched = TransientDrops({}).drop(c[0], 1, STEP_MASKED).drop(c[1], 2, STEP_SLG)
    res = train(users, cfg, schedule=sched)
    theta_ref, reports_ref = plaintext_train(users, cfg, schedule=sched)
    err = max(abs(a - b) for a, b in zip(res.theta, theta_ref))
    assert err < 1e-3
    assert c[0] not in res.rounds[0].survivors
    assert c[0] in res.rounds[0].slg_users
    for sec, ref in zip(res.rounds, reports_ref):
        assert sec.survivors == ref.survivors
        assert sec.d_a == ref.d_a == len(sec.survivors) * cfg.per_user


def test_same_seed_reproduces_exactly():
    users = _user_data("linear")
    cfg = _cfg("linear")
    r1 = train(users, cfg)
    r2 = train(users, cfg)
    assert r1.theta == r2.theta
    assert [r.cohort for r in r1.rounds] == [r.cohort for r in r2.rounds]
    assert r1.bus_bytes == r2.bus_bytes


def test_scaling_matches_plain_statistics():
    users = _user_data("linear")
    cfg = _cfg("linear")
    res = train(users, cfg)
    rows = [row for u in sorted(users) for row in users[u][0]]
    d1 = len(rows)
    for j in range(3):
        col = [r[j] for r in rows]
        mu = sum(col) / d1
        var = sum((v - mu) ** 2 for v in col) / (d1 - 1)
        assert res.scaling.mu[j] == pytest.approx(mu, abs=1e-3)
        assert res.scaling.sigma[j] == pytest.approx(math.sqrt(var), abs=1e-3)
    assert res.scaling.d1 == d1


def test_abort_setup_below_cohort():
    users = _user_data("linear")
    cfg = _cfg("linear")
    sched = PermanentDrops({u: (0, STEP_START) for u in (0, 1, 2, 3)})
    with pytest.raises(ProtocolAbort) as exc:
        train(users, cfg, schedule=sched)
    assert exc.value.reason == "setup-below-cohort"


def test_abort_cohort_below_size():
    users = _user_data("linear")
    cfg = _cfg("linear")
    sched = PermanentDrops({u: (1, STEP_START) for u in (0, 1, 2, 3)})
    with pytest.raises(ProtocolAbort) as exc:
        train(users, cfg, schedule=sched)
    assert exc.value.reason == "cohort-below-size"


def test_abort_slg_below_threshold():
    users = _user_data("linear")
    cfg = _cfg("linear")
    # at most 3 users can run the gradient step; threshold is t + rho = 4
    sched = TransientDrops({})
    for u in range(6):
        sched.drop(u, 1, STEP_SLG)
    with pytest.raises(ProtocolAbort) as exc:
        train(users, cfg, schedule=sched)
    assert exc.value.reason == "slg-below-threshold"
    with pytest.raises(ProtocolAbort) as exc2:
        plaintext_train(users, cfg, schedule=sched)
    assert exc2.value.reason == "slg-below-threshold"


def test_abort_survivors_below_threshold():
    users = _user_data("linear")
    cfg = _cfg("linear")
    _, dry = plaintext_train(users, cfg)
    c = dry[0].cohort
    # two miss the gradient step (4 = t + rho remain), one more drops
    # before masking: 3 survivors passes the aggregation threshold t = 3
    # but fails the training floor t + rho = 4
    sched = TransientDrops({}).drop(c[0], 1, STEP_SLG).drop(c[1], 1, STEP_SLG)
    sched.drop(c[2], 1, STEP_MASKED)
    with pytest.raises(ProtocolAbort) as exc:
        train(users, cfg, schedule=sched)
    assert exc.value.reason == "survivors-below-threshold"
    with pytest.raises(ProtocolAbort) as exc2:
        plaintext_train(users, cfg, schedule=sched)
    assert exc2.value.reason == "survivors-below-threshold"


def test_abort_zero_variance():
    users = _user_data("linear")
    for u in users:
        rows, labels = users[u]
        users[u] = ([[0.5, r[1], r[2]] for r in rows], labels)
    cfg = _cfg("linear")
    with pytest.raises(ProtocolAbort) as exc:
        train(users, cfg)
    assert exc.value.reason == "zero-variance"


def test_abort_carries_partial_rounds():
    users = _user_data("linear")
    cfg = _cfg("linear")
    sched = PermanentDrops({u: (2, STEP_START) for u in (0, 1, 2, 3)})
    with pytest.raises(ProtocolAbort) as exc:
        train(users, cfg, schedule=sched)
    assert exc.value.reason == "cohort-below-size"
    assert len(exc.value.partial_rounds) == 1
    assert exc.value.partial_rounds[0].round == 1
    assert exc.value.partial_scaling is not None


def test_update_rules():
    theta = [1.0, 2.0]
    omega = [0.5, 0.5]
    # gradient-descent average for plain linear and logistic
    assert model_update("linear", theta, omega, 10, 0.2, 0.0) == [
        1.0 - 0.2 * 0.05,
        2.0 - 0.2 * 0.05,
    ]
    # ridge uses the summed gradient and weight decay
    lam, eta = 0.1, 0.2
    want = [
        (1 - 2 * lam * eta) * 1.0 - 2 * eta * 0.5,
        (1 - 2 * lam * eta) * 2.0 - 2 * eta * 0.5,
    ]
    got = model_update("ridge", theta, omega, 10, eta, lam)
    assert got == pytest.approx(want)


def test_gradient_reveals_features():
    assert gradient_reveals_features([2.0, 1.0, -4.0]) == [0.5, -2.0]
    assert gradient_reveals_features([0.0, 1.0]) is None


def test_theta0_passthrough():
    users = _user_data("linear")
    cfg = _cfg("linear", rounds=1)
    theta0 = [0.3, -0.2, 0.1, 0.05]
    res = train(users, cfg, theta0=list(theta0))
    ref, _ = plaintext_train(users, cfg, theta0=list(theta0))
    assert max(abs(a - b) for a, b in zip(res.theta, ref)) < 1e-3
    res_zero = train(users, cfg)
    assert res.theta != res_zero.theta


def test_config_validation():
    with pytest.raises(ConfigError):
        _cfg("poisson").validate()
    with pytest.raises(ConfigError):
        _cfg("ridge", lam=0.0).validate()
    with pytest.raises(ConfigError):
        _cfg("linear", eta=0.0).validate()
    with pytest.raises(ConfigError):
        _cfg("linear", rounds=0).validate()
    with pytest.raises(ConfigError):
        # logistic depth 8 does not fit a 64-bit ring at tau=16
        _cfg("logistic", fp=FpConfig(k=64, tau=16)).validate()
    cfg = _cfg("linear")
    assert cfg.t == 3 and cfg.m_cohort == 6 and cfg.rho == 1 and cfg.delta_max == 2


def test_user_data_validation():
    users = _user_data("linear")
    cfg = _cfg("linear")
    bad = dict(users)
    del bad[0]
    with pytest.raises(ConfigError):
        train(bad, cfg)
    users2 = _user_data("logistic")
    users2[3][1][0] = 0.37
    with pytest.raises(ConfigError):
        train(users2, _cfg("logistic"))


def test_server_never_multiplies_ciphertexts():
    # the asymmetric cost split: users do the homomorphic heavy lifting
    users = _user_data("linear")
    res = train(users, _cfg("linear"))
    assert res.server_ops.ct_mul == 0
    assert res.server_ops.const_mul == 0
    assert res.server_ops.dec > 0
    # every user that ran the gradient step paid ciphertext products
    ran = {u for r in res.rounds for u in r.slg_users}
    assert ran
    assert all(res.user_ops[u].ct_mul > 0 for u in ran)

"""Federated regression training driven by encrypted gradient shares.

One round: the server samples a cohort of M users from those responding,
broadcasts the encrypted model, and every cohort user that stays up
returns a blinded encrypted local gradient (set V'). The blinds are then
summed through a dropout-robust masked aggregation among V'; its
survivors V'' are exactly the users whose blinded shares the server may
decrypt. The model moves by

  theta <- theta - (eta / d_a) * omega          linear and logistic,
  theta <- (1 - 2*lambda*eta) * theta - 2*eta * omega   ridge,

with omega the decoded gradient sum over V'' and d_a = |V''| * ell. The
round aborts, rather than degrade, when fewer than t + rho users make it
through either stage, where t is the secret-sharing threshold and
rho = ceil(epsilon / ell) covers the gradient mass lost to dropouts.

Before round one, feature scaling runs as a single masked aggregation of
per-user (sum x, sum x^2) vectors at threshold 2t; every feature is then
centered and divided by the sample standard deviation
sqrt((S2 - d1*mu^2)/(d1 - 1)). Labels are never scaled.

A crypto-free reference, plaintext_train, consumes the same seed and
dropout schedule and must land within fixed-point noise of the secure
run; tests hold the two routes together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from struct import pack, unpack

from . import bus as wire
from .ahe import keygen
from .bus import Envelope, SimBus, DropoutSchedule, NoDropout, SERVER
from .errors import ConfigError, ProtocolAbort
from .fixedpoint import FpConfig, fp_decode, fp_encode, fp_check_depth
from .metrics import CountingDecryptor, CountingEval, OpCounter
from .secagg import (
    AggConfig,
    AggSession,
    UserKeyState,
    derive_agg_survivors,
    setup_users,
)
from .slg import (
    KINDS,
    GradientSharePair,
    encrypt_model,
    fit_sigmoid_cubic,
    lin_slg,
    local_gradient_float,
    log_slg_assist,
    log_slg_mask,
    log_slg_unmask_and_share,
    share_scales,
)
from .utils import RandomStreams


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of one training run. Defaults follow the protocol paper's
    small-cohort regime: t = ceil(m/3), M = 2t, epsilon = t * ell."""

    kind: str = "linear"
    n_users: int = 9
    per_user: int = 4
    rounds: int = 10
    eta: float = 0.1
    lam: float = 0.0
    threshold: int | None = None
    cohort: int | None = None
    epsilon: int | None = None
    fp: FpConfig = field(default_factory=FpConfig)
    seed: int | None = None
    modulus_bits: int = 2048
    backend: str = "jl"
    sigmoid_interval: float = 8.0
    scale_features: bool = True

    @property
    def t(self) -> int:
        return self.threshold if self.threshold is not None else math.ceil(self.n_users / 3)

    @property
    def m_cohort(self) -> int:
        return self.cohort if self.cohort is not None else 2 * self.t

    @property
    def eps(self) -> int:
        return self.epsilon if self.epsilon is not None else self.t * self.per_user

    @property
    def rho(self) -> int:
        return math.ceil(self.eps / self.per_user)

    @property
    def delta_max(self) -> int:
        """Cohort dropouts a round survives before aborting."""
        return self.m_cohort - (self.t + self.rho)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.n_users < 2:
            raise ConfigError("need at least two users")
        if self.per_user < 1:
            raise ConfigError("every user needs at least one data point")
        if self.rounds < 1:
            raise ConfigError("need at least one round")
        if self.eta <= 0:
            raise ConfigError("learning rate must be positive")
        if self.lam < 0:
            raise ConfigError("ridge weight must be nonnegative")
        if not 1 <= self.t <= self.n_users:
            raise ConfigError("threshold must lie in [1, n_users]")
        if not self.t <= self.m_cohort <= self.n_users:
            raise ConfigError("cohort must lie in [threshold, n_users]")
        if self.eps < 1:
            raise ConfigError("epsilon must be positive")
        if self.t + self.rho > self.m_cohort:
            raise ConfigError("t + rho exceeds the cohort; every round would abort")
        if self.kind == "ridge" and self.lam == 0:
            raise ConfigError("ridge needs a positive ridge weight")
        # deepest product scale on the share path, 64 magnitude bits of slack
        fp_check_depth(self.fp, 8 if self.kind == "logistic" else 3, 64)


@dataclass
class RoundReport:
    round: int
    cohort: list[int]
    slg_users: list[int]
    survivors: list[int]
    d_a: int
    theta: list[float]
    user_ops: dict[int, dict] = field(default_factory=dict)
    server_ops: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "round": self.round,
            "cohort": self.cohort,
            "slg_users": self.slg_users,
            "survivors": self.survivors,
            "d_a": self.d_a,
            "theta": self.theta,
            "user_ops": {str(u): ops for u, ops in sorted(self.user_ops.items())},
            "server_ops": self.server_ops,
        }


@dataclass
class ScalingReport:
    survivors: list[int]
    d1: int
    mu: list[float]
    sigma: list[float]

    def as_dict(self) -> dict:
        return {"survivors": self.survivors, "d1": self.d1, "mu": self.mu, "sigma": self.sigma}


@dataclass
class TrainResult:
    theta: list[float]
    rounds: list[RoundReport]
    scaling: ScalingReport | None
    user_ops: dict[int, OpCounter]
    server_ops: OpCounter
    bus_bytes: int
    net: SimBus
    ciphertext_bits: int


def model_update(
    kind: str, theta: list[float], omega: list[float], d_a: int, eta: float, lam: float
) -> list[float]:
    if kind == "ridge":
        keep = 1.0 - 2.0 * lam * eta
        return [keep * t - 2.0 * eta * w for t, w in zip(theta, omega)]
    return [t - (eta / d_a) * w for t, w in zip(theta, omega)]


def _check_user_data(
    data: dict[int, tuple[list[list[float]], list[float]]], cfg: TrainConfig
) -> int:
    if sorted(data) != list(range(cfg.n_users)):
        raise ConfigError("user data must be keyed 0..n_users-1")
    dims = set()
    for uid, (rows, labels) in data.items():
        if len(rows) != cfg.per_user or len(labels) != cfg.per_user:
            raise ConfigError(f"user {uid}: expected {cfg.per_user} rows and labels")
        dims.update(len(r) for r in rows)
        if cfg.kind == "logistic" and any(y not in (0.0, 1.0) for y in labels):
            raise ConfigError(f"user {uid}: logistic labels must be 0 or 1")
    if len(dims) != 1:
        raise ConfigError("all rows must share one feature dimension")
    n = dims.pop()
    if n < 1:
        raise ConfigError("feature dimension must be at least 1")
    return n


def _pack_floats(vals: list[float]) -> bytes:
    return pack(f">{len(vals)}d", *vals)


def _unpack_floats(raw: bytes) -> list[float]:
    return list(unpack(f">{len(raw) // 8}d", raw))


def secure_scaling(
    net: SimBus,
    data: dict[int, tuple[list[list[float]], list[float]]],
    cfg: TrainConfig,
    key_state: dict[int, UserKeyState],
    schedule: DropoutSchedule,
    streams: RandomStreams,
) -> tuple[dict[int, tuple[list[list[float]], list[float]]], ScalingReport]:
    """Masked-sum feature scaling; returns scaled data and the stats."""
    n = _check_user_data(data, cfg)
    fpc = cfg.fp
    present = [u for u in sorted(data) if schedule.alive(u, 0, wire.STEP_START)]
    if len(present) < cfg.m_cohort:
        raise ProtocolAbort("setup-below-cohort", f"{len(present)} < {cfg.m_cohort}")
    inputs = {}
    for u in present:
        rows, _ = data[u]
        s1 = [fp_encode(sum(r[j] for r in rows), 1, fpc) for j in range(n)]
        s2 = [fp_encode(sum(r[j] * r[j] for r in rows), 2, fpc) for j in range(n)]
        inputs[u] = s1 + s2
    agg = AggSession(
        net,
        AggConfig(
            k=fpc.k,
            dim=2 * n,
            threshold=2 * cfg.t,
            session=0,
            round_index=1,
            schedule_round=0,
        ),
        key_state,
        inputs,
        schedule,
        streams.stream("agg/0"),
    ).run()
    d1 = len(agg.survivors) * cfg.per_user
    mu, sigma = [], []
    for j in range(n):
        s1 = fp_decode(agg.total[j], 1, fpc)
        s2 = fp_decode(agg.total[n + j], 2, fpc)
        m = s1 / d1
        var = (s2 - d1 * m * m) / (d1 - 1)
        if var <= 0:
            raise ProtocolAbort("zero-variance", f"feature {j}")
        mu.append(m)
        sigma.append(math.sqrt(var))
    stats_blob = _pack_floats(mu) + _pack_floats(sigma)
    for u in sorted(data):
        net.send(Envelope(0, wire.PHASE_STATS, SERVER, u, stats_blob))
    scaled = {}
    for u, (rows, labels) in data.items():
        envs = net.collect(u, wire.PHASE_STATS)
        blob = envs[-1].payload
        got_mu = _unpack_floats(blob[: 8 * n])
        got_sigma = _unpack_floats(blob[8 * n :])
        scaled[u] = (
            [[(x - a) / s for x, a, s in zip(r, got_mu, got_sigma)] for r in rows],
            list(labels),
        )
    return scaled, ScalingReport(agg.survivors, d1, mu, sigma)


def plaintext_scaling(
    data: dict[int, tuple[list[list[float]], list[float]]],
    cfg: TrainConfig,
    schedule: DropoutSchedule,
) -> tuple[dict[int, tuple[list[list[float]], list[float]]], ScalingReport]:
    """Crypto-free scaling reference with the same gating and aborts."""
    n = _check_user_data(data, cfg)
    present = [u for u in sorted(data) if schedule.alive(u, 0, wire.STEP_START)]
    if len(present) < cfg.m_cohort:
        raise ProtocolAbort("setup-below-cohort", f"{len(present)} < {cfg.m_cohort}")
    survivors = derive_agg_survivors(schedule, 0, present, 2 * cfg.t)
    d1 = len(survivors) * cfg.per_user
    mu, sigma = [], []
    for j in range(n):
        s1 = sum(r[j] for u in survivors for r in data[u][0])
        s2 = sum(r[j] * r[j] for u in survivors for r in data[u][0])
        m = s1 / d1
        var = (s2 - d1 * m * m) / (d1 - 1)
        if var <= 0:
            raise ProtocolAbort("zero-variance", f"feature {j}")
        mu.append(m)
        sigma.append(math.sqrt(var))
    scaled = {
        u: ([[(x - a) / s for x, a, s in zip(r, mu, sigma)] for r in rows], list(labels))
        for u, (rows, labels) in data.items()
    }
    return scaled, ScalingReport(survivors, d1, mu, sigma)


def _cts_to_bytes(pk, cts: list[int]) -> bytes:
    return b"".join(pk.ct_to_bytes(c) for c in cts)


def _cts_from_bytes(pk, raw: bytes) -> list[int]:
    w = pk.ciphertext_bits // 8
    return [pk.ct_from_bytes(raw[i : i + w]) for i in range(0, len(raw), w)]


def train(
    data: dict[int, tuple[list[list[float]], list[float]]],
    cfg: TrainConfig,
    schedule: DropoutSchedule | None = None,
    theta0: list[float] | None = None,
) -> TrainResult:
    """Run the full protocol: keygen, scaling, R rounds of shared-gradient
    descent with masked blind aggregation. Raises ProtocolAbort with a
    stable reason the moment a round falls below its thresholds; the
    abort carries partial_rounds and partial_scaling so callers can
    report whatever completed."""
    progress: dict = {"rounds": [], "scaling": None}
    try:
        return _train(data, cfg, schedule, theta0, progress)
    except ProtocolAbort as e:
        e.partial_rounds = progress["rounds"]
        e.partial_scaling = progress["scaling"]
        raise


def _train(
    data: dict[int, tuple[list[list[float]], list[float]]],
    cfg: TrainConfig,
    schedule: DropoutSchedule | None,
    theta0: list[float] | None,
    progress: dict,
) -> TrainResult:
    cfg.validate()
    schedule = schedule or NoDropout()
    streams = RandomStreams(cfg.seed)
    n = _check_user_data(data, cfg)
    net = SimBus()

    key_seed = streams.stream("keygen").getrandbits(64) if cfg.seed is not None else None
    pk, sk = keygen(cfg.modulus_bits, cfg.fp.k, cfg.backend, seed=key_seed)
    server_dec = CountingDecryptor(sk)
    server_ev = CountingEval(pk)
    key_state = setup_users(list(range(cfg.n_users)), streams.stream("setup"))
    sig = (
        fit_sigmoid_cubic(cfg.sigmoid_interval, cfg=cfg.fp)
        if cfg.kind == "logistic"
        else None
    )

    scaling = None
    if cfg.scale_features:
        data, scaling = secure_scaling(net, data, cfg, key_state, schedule, streams)
        progress["scaling"] = scaling

    theta = list(theta0) if theta0 is not None else [0.0] * (n + 1)
    if len(theta) != n + 1:
        raise ConfigError(f"theta must have {n + 1} coordinates")
    user_ops: dict[int, OpCounter] = {u: OpCounter() for u in range(cfg.n_users)}
    scales = share_scales(cfg.kind, n)
    reports = progress["rounds"]

    for rnd in range(1, cfg.rounds + 1):
        alive_now = [
            u for u in range(cfg.n_users) if schedule.alive(u, rnd, wire.STEP_START)
        ]
        if len(alive_now) < cfg.m_cohort:
            raise ProtocolAbort("cohort-below-size", f"{len(alive_now)} < {cfg.m_cohort}")
        cohort = sorted(streams.stream(f"cohort/{rnd}").sample(alive_now, cfg.m_cohort))

        server_before = server_ev.counter.merged(server_dec.counter).as_dict()
        round_user_ops: dict[int, dict] = {}

        enc_model = encrypt_model(server_ev, theta, cfg.fp, streams.stream(f"model/{rnd}"))
        model_blob = _cts_to_bytes(pk, enc_model)
        for u in cohort:
            net.send(Envelope(rnd, wire.PHASE_MODEL, SERVER, u, model_blob))

        pairs: dict[int, GradientSharePair] = {}
        for u in cohort:
            if not schedule.alive(u, rnd, wire.STEP_SLG):
                continue
            env = net.collect(u, wire.PHASE_MODEL)[-1]
            cts = _cts_from_bytes(pk, env.payload)
            ev = CountingEval(pk)
            rng_u = streams.stream(f"user/{u}/round/{rnd}")
            rows, labels = data[u]
            if cfg.kind == "logistic":
                state, z_cts = log_slg_mask(ev, cts, rows, cfg.fp, rng_u)
                net.send(
                    Envelope(rnd, wire.PHASE_SLG_MASKED_IP, u, SERVER, _cts_to_bytes(pk, z_cts))
                )
                z_env = net.collect(SERVER, wire.PHASE_SLG_MASKED_IP)[-1]
                assist = log_slg_assist(
                    server_dec,
                    server_ev,
                    _cts_from_bytes(pk, z_env.payload),
                    sig,
                    cfg.fp,
                    streams.stream(f"assist/{u}/round/{rnd}"),
                )
                flat = [c for pair_ct in assist for c in pair_ct]
                net.send(
                    Envelope(rnd, wire.PHASE_SLG_ASSIST, SERVER, u, _cts_to_bytes(pk, flat))
                )
                back = _cts_from_bytes(pk, net.collect(u, wire.PHASE_SLG_ASSIST)[-1].payload)
                assist_cts = list(zip(back[0::2], back[1::2]))
                pair = log_slg_unmask_and_share(
                    ev, state, assist_cts, labels, sig, cfg.fp, rng_u
                )
            else:
                pair = lin_slg(ev, cts, rows, labels, cfg.fp, rng_u)
            net.send(
                Envelope(rnd, wire.PHASE_SLG_SHARE, u, SERVER, _cts_to_bytes(pk, pair.enc_share))
            )
            pairs[u] = pair
            round_user_ops[u] = ev.counter.as_dict()
            user_ops[u] = user_ops[u].merged(ev.counter)

        received: dict[int, list[int]] = {}
        for env in net.collect(SERVER, wire.PHASE_SLG_SHARE):
            received[env.sender] = _cts_from_bytes(pk, env.payload)
        slg_users = sorted(received)
        if len(slg_users) < cfg.t + cfg.rho:
            raise ProtocolAbort("slg-below-threshold", f"{len(slg_users)} < {cfg.t + cfg.rho}")

        agg = AggSession(
            net,
            AggConfig(
                k=cfg.fp.k,
                dim=n + 1,
                threshold=cfg.t,
                session=rnd,
                round_index=rnd + 1,
                schedule_round=rnd,
            ),
            key_state,
            {u: pairs[u].blind for u in slg_users},
            schedule,
            streams.stream(f"agg/{rnd}"),
        ).run()
        survivors = agg.survivors
        if len(survivors) < cfg.t + cfg.rho:
            raise ProtocolAbort("survivors-below-threshold", f"{len(survivors)} < {cfg.t + cfg.rho}")

        # Decrypt blinded shares for survivors only; the blinds of exactly
        # this set were just summed, so everything else stays opaque.
        dec_before = server_dec.counter.dec
        mod = cfg.fp.modulus
        share_sum = [0] * (n + 1)
        for u in survivors:
            for j, ct in enumerate(received[u]):
                share_sum[j] = (share_sum[j] + server_dec.decrypt(ct)) % mod
        assert server_dec.counter.dec - dec_before == (n + 1) * len(survivors)

        omega_ring = [(s - r) % mod for s, r in zip(share_sum, agg.total)]
        omega = [fp_decode(v, sc, cfg.fp) for v, sc in zip(omega_ring, scales)]
        d_a = len(survivors) * cfg.per_user
        theta = model_update(cfg.kind, theta, omega, d_a, cfg.eta, cfg.lam)
        server_after = server_ev.counter.merged(server_dec.counter).as_dict()
        server_delta = {key: server_after[key] - server_before[key] for key in server_after}
        reports.append(
            RoundReport(
                rnd,
                cohort,
                slg_users,
                survivors,
                d_a,
                list(theta),
                round_user_ops,
                server_delta,
            )
        )

    return TrainResult(
        theta=theta,
        rounds=reports,
        scaling=scaling,
        user_ops=user_ops,
        server_ops=server_ev.counter.merged(server_dec.counter),
        bus_bytes=net.total_bytes(),
        net=net,
        ciphertext_bits=pk.ciphertext_bits,
    )


def plaintext_train(
    data: dict[int, tuple[list[list[float]], list[float]]],
    cfg: TrainConfig,
    schedule: DropoutSchedule | None = None,
    theta0: list[float] | None = None,
) -> tuple[list[float], list[RoundReport]]:
    """Crypto-free reference run in lockstep with train().

    Consumes the same cohort streams and derives the same survivor sets
    from the schedule, so the two runs see identical participation and
    differ only by fixed-point noise.
    """
    cfg.validate()
    schedule = schedule or NoDropout()
    streams = RandomStreams(cfg.seed)
    n = _check_user_data(data, cfg)
    sig = (
        fit_sigmoid_cubic(cfg.sigmoid_interval, cfg=cfg.fp)
        if cfg.kind == "logistic"
        else None
    )
    if cfg.scale_features:
        data, _ = plaintext_scaling(data, cfg, schedule)
    theta = list(theta0) if theta0 is not None else [0.0] * (n + 1)
    reports = []
    for rnd in range(1, cfg.rounds + 1):
        alive_now = [
            u for u in range(cfg.n_users) if schedule.alive(u, rnd, wire.STEP_START)
        ]
        if len(alive_now) < cfg.m_cohort:
            raise ProtocolAbort("cohort-below-size", f"{len(alive_now)} < {cfg.m_cohort}")
        cohort = sorted(streams.stream(f"cohort/{rnd}").sample(alive_now, cfg.m_cohort))
        slg_users = [u for u in cohort if schedule.alive(u, rnd, wire.STEP_SLG)]
        if len(slg_users) < cfg.t + cfg.rho:
            raise ProtocolAbort("slg-below-threshold", f"{len(slg_users)} < {cfg.t + cfg.rho}")
        survivors = derive_agg_survivors(schedule, rnd, slg_users, cfg.t)
        if len(survivors) < cfg.t + cfg.rho:
            raise ProtocolAbort("survivors-below-threshold", f"{len(survivors)} < {cfg.t + cfg.rho}")
        omega = [0.0] * (n + 1)
        for u in survivors:
            rows, labels = data[u]
            g = local_gradient_float(cfg.kind, theta, rows, labels, sig)
            omega = [a + b for a, b in zip(omega, g)]
        d_a = len(survivors) * cfg.per_user
        theta = model_update(cfg.kind, theta, omega, d_a, cfg.eta, cfg.lam)
        reports.append(RoundReport(rnd, cohort, slg_users, survivors, d_a, list(theta)))
    return theta, reports


def gradient_reveals_features(omega: list[float]) -> list[float] | None:
    """Single-point gradient leak: x_j = omega_j / omega_0 when omega_0 != 0.

    This is why shared local gradients are blinded: a per-user, per-point
    gradient handed to the server in the clear gives the feature row back
    exactly. Returns None when the error term is zero.
    """
    if omega[0] == 0.0:
        return None
    return [w / omega[0] for w in omega[1:]]

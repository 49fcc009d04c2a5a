"""Dropout-robust masked vector aggregation over Z_{2^k}.

One aggregation session runs four phases on the bus:

  1. advertise: every responding user sends its two P-256 public keys
     (channel key, mask key); the server broadcasts the roster U1.
  2. share: every responding user u draws a fresh 16-byte self-mask seed
     b_u, Shamir-shares b_u and its mask secret scalar with threshold t
     across the roster, and sends each peer its pair of shares over an
     authenticated pairwise channel. Senders form U2.
  3. masked input: every responding user submits
       y_u = x_u + PRG(b_u) + sum_{v>u} PRG(s_uv) - sum_{v<u} PRG(s_uv)
     coordinate-wise mod 2^k, where v ranges over the peers it holds
     shares from and s_uv is the round's pairwise seed. Senders form U3.
  4. recovery: the server announces U3; each responder returns, for every
     u in U3, its share of b_u, and for every u in U2 minus U3, its share
     of u's mask scalar. The server reconstructs self-mask seeds of alive
     users and mask scalars of dropped users, never both for the same
     user, removes the masks, and outputs sum_{u in U3} x_u.

Pairwise secrets are never sent: both endpoints derive the round's
channel key and mask seed from an ECDH master pushed through a hash
chain, one step per round, so a leaked round key exposes no other round.
The session aborts with a typed reason the moment any phase has fewer
than t responders, and tampering with an authenticated channel aborts
with an authentication failure.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import bus as wire
from .bus import Envelope, SimBus, DropoutSchedule, SERVER
from .errors import ProtocolAbort
from .metrics import StorageMeter
from .primitives import (
    KEY_BYTES,
    PUBKEY_BYTES,
    SEED_BYTES,
    EcKeyPair,
    aead_open,
    aead_seal,
    chain_key,
    make_nonce,
    prg_expand,
    shared_key_from_scalar,
)
from .secretshare import P256_ORDER, SHARE_WIRE_BYTES, Share, reconstruct, share_secret

_KIND_BSEED = 1
_KIND_MASKKEY = 2


def _require_group(group: list, threshold: int, reason: str) -> None:
    if len(group) < threshold:
        raise ProtocolAbort(reason, f"{len(group)} < {threshold}")


def derive_agg_survivors(
    schedule: DropoutSchedule, schedule_round: int, participants: list[int], threshold: int
) -> list[int]:
    """Survivor set a session over these participants would produce.

    Walks the same per-phase gating as AggSession.run but purely from the
    schedule, raising the same abort reasons. Plaintext references and
    tests use this as the independent route to the survivor set.
    """
    u1 = [u for u in participants if schedule.alive(u, schedule_round, wire.STEP_ADVERTISE)]
    _require_group(u1, threshold, "agg-advertise-below-threshold")
    u2 = [u for u in u1 if schedule.alive(u, schedule_round, wire.STEP_SHARE)]
    _require_group(u2, threshold, "agg-share-below-threshold")
    u3 = [u for u in u2 if schedule.alive(u, schedule_round, wire.STEP_MASKED)]
    _require_group(u3, threshold, "agg-masked-below-threshold")
    resp = [u for u in u3 if schedule.alive(u, schedule_round, wire.STEP_RECOVER)]
    _require_group(resp, threshold, "agg-recovery-below-threshold")
    return sorted(u3)


class UserKeyState:
    """A user's long-lived key material plus cached per-round derivations."""

    def __init__(self, uid: int, rng: random.Random) -> None:
        self.uid = uid
        self.channel_master = EcKeyPair.generate(rng)
        self.mask_master = EcKeyPair.generate(rng)
        self._cache: dict[tuple[str, int, int], bytes] = {}

    def _derived(self, label: str, peer: int, peer_pub: bytes, round_index: int) -> bytes:
        key = (label, peer, round_index)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        master = self.channel_master if label == "chan" else self.mask_master
        out = chain_key(master.shared_key(peer_pub), round_index)
        self._cache[key] = out
        return out

    def channel_key(self, peer: int, peer_pub: bytes, round_index: int) -> bytes:
        return self._derived("chan", peer, peer_pub, round_index)

    def mask_seed(self, peer: int, peer_pub: bytes, round_index: int) -> bytes:
        return self._derived("mask", peer, peer_pub, round_index)[:SEED_BYTES]


def setup_users(uids: list[int], rng: random.Random) -> dict[int, UserKeyState]:
    return {uid: UserKeyState(uid, rng) for uid in sorted(uids)}


@dataclass(frozen=True)
class AggConfig:
    k: int
    dim: int
    threshold: int
    session: int
    round_index: int  # hash-chain position, >= 1
    schedule_round: int  # round index the dropout schedule is queried with

    def __post_init__(self) -> None:
        if self.threshold < 1:
            raise ValueError("threshold must be at least 1")
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")
        if self.round_index < 1:
            raise ValueError("hash-chain rounds start at 1")


@dataclass
class AggResult:
    total: list[int]
    roster: list[int]  # U1
    sharers: list[int]  # U2
    survivors: list[int]  # U3
    responders: list[int]
    recovered_self_masks: list[int]
    recovered_mask_keys: list[int]


def _aad(session: int, phase: int, sender: int, receiver: int) -> bytes:
    return (
        session.to_bytes(8, "big")
        + phase.to_bytes(1, "big")
        + sender.to_bytes(4, "big")
        + receiver.to_bytes(4, "big")
    )


def _pack_vector(vec: list[int], k: int) -> bytes:
    w = k // 8
    return b"".join(v.to_bytes(w, "big") for v in vec)


def _unpack_vector(raw: bytes, k: int) -> list[int]:
    w = k // 8
    if len(raw) % w:
        raise ValueError("vector payload is not a whole number of elements")
    return [int.from_bytes(raw[i : i + w], "big") for i in range(0, len(raw), w)]


def _pack_uids(uids: list[int]) -> bytes:
    return len(uids).to_bytes(4, "big") + b"".join(u.to_bytes(4, "big") for u in uids)


def _read_uids(raw: bytes, off: int) -> tuple[list[int], int]:
    n = int.from_bytes(raw[off : off + 4], "big")
    off += 4
    out = [int.from_bytes(raw[off + 4 * i : off + 4 * i + 4], "big") for i in range(n)]
    return out, off + 4 * n


def _parse_roster(raw: bytes) -> tuple[list[int], dict[int, tuple[bytes, bytes]]]:
    uids, off = _read_uids(raw, 0)
    pubs = {}
    for u in uids:
        pubs[u] = (
            raw[off : off + PUBKEY_BYTES],
            raw[off + PUBKEY_BYTES : off + 2 * PUBKEY_BYTES],
        )
        off += 2 * PUBKEY_BYTES
    if off != len(raw):
        raise ProtocolAbort("agg-bad-roster")
    return uids, pubs


class AggSession:
    """One run of the aggregation protocol on a bus.

    The constructor wires together the participants' key state, their
    input vectors, and the dropout schedule; run() either returns an
    AggResult or raises ProtocolAbort with a phase-specific reason.
    """

    def __init__(
        self,
        net: SimBus,
        cfg: AggConfig,
        users: dict[int, UserKeyState],
        inputs: dict[int, list[int]],
        schedule: DropoutSchedule,
        rng: random.Random,
        meter: StorageMeter | None = None,
    ) -> None:
        self.net = net
        self.cfg = cfg
        self.users = users
        self.inputs = inputs
        self.schedule = schedule
        self.rng = rng
        self.meter = meter or StorageMeter()
        mod = 1 << cfg.k
        for uid, vec in inputs.items():
            if uid not in users:
                raise ValueError(f"input for unknown user {uid}")
            if len(vec) != cfg.dim or any(not (0 <= v < mod) for v in vec):
                raise ValueError(f"user {uid}: input must be {cfg.dim} ring elements")

    def _alive(self, uid: int, step: int) -> bool:
        return self.schedule.alive(uid, self.cfg.schedule_round, step)

    def _require(self, group: list[int], reason: str) -> None:
        _require_group(group, self.cfg.threshold, reason)

    def run(self) -> AggResult:
        cfg = self.cfg
        participants = sorted(self.inputs)

        # Phase 1: advertise public keys, broadcast roster.
        u1 = [u for u in participants if self._alive(u, wire.STEP_ADVERTISE)]
        self._require(u1, "agg-advertise-below-threshold")
        pubs: dict[int, tuple[bytes, bytes]] = {}
        for u in u1:
            st = self.users[u]
            payload = st.channel_master.public_bytes + st.mask_master.public_bytes
            self.net.send(Envelope(cfg.session, wire.PHASE_ADVERTISE, u, SERVER, payload))
        for env in self.net.collect(SERVER, wire.PHASE_ADVERTISE):
            p = env.payload
            if len(p) != 2 * PUBKEY_BYTES:
                raise ProtocolAbort("agg-bad-advertise")
            pubs[env.sender] = (p[:PUBKEY_BYTES], p[PUBKEY_BYTES:])
        roster = sorted(pubs)
        roster_blob = _pack_uids(roster) + b"".join(pubs[u][0] + pubs[u][1] for u in roster)
        for u in roster:
            self.net.send(Envelope(cfg.session, wire.PHASE_ADVERTISE, SERVER, u, roster_blob))

        # Phase 2: threshold-share the self-mask seed and the mask scalar.
        # Every sharer works from its own parsed copy of the roster.
        u2 = [u for u in roster if self._alive(u, wire.STEP_SHARE)]
        self._require(u2, "agg-share-below-threshold")
        views: dict[int, tuple[list[int], dict[int, tuple[bytes, bytes]]]] = {}
        held: dict[int, dict[int, tuple[Share, Share]]] = {u: {} for u in roster}
        b_seeds: dict[int, bytes] = {}
        for u in u2:
            views[u] = _parse_roster(self.net.collect(u, wire.PHASE_ADVERTISE)[-1].payload)
        for u in u2:
            st = self.users[u]
            my_roster, my_pubs = views[u]
            index_of = {w: i + 1 for i, w in enumerate(my_roster)}
            b_seeds[u] = self.rng.randbytes(SEED_BYTES)
            b_shares = share_secret(
                int.from_bytes(b_seeds[u], "big"), cfg.threshold, len(my_roster), self.rng
            )
            s_shares = share_secret(
                st.mask_master.scalar, cfg.threshold, len(my_roster), self.rng
            )
            for v in my_roster:
                pair = (b_shares[index_of[v] - 1], s_shares[index_of[v] - 1])
                if v == u:
                    held[u][u] = pair
                    continue
                body = pair[0].to_bytes() + pair[1].to_bytes()
                key = st.channel_key(v, my_pubs[v][0], cfg.round_index)
                sealed = aead_seal(
                    key,
                    make_nonce(wire.PHASE_SHARE, cfg.round_index, u),
                    body,
                    _aad(cfg.session, wire.PHASE_SHARE, u, v),
                )
                self.net.send(Envelope(cfg.session, wire.PHASE_SHARE, u, v, sealed))
        for v in u2:
            st = self.users[v]
            my_pubs = views[v][1]
            for env in self.net.collect(v, wire.PHASE_SHARE):
                key = st.channel_key(env.sender, my_pubs[env.sender][0], cfg.round_index)
                body = aead_open(
                    key,
                    make_nonce(wire.PHASE_SHARE, cfg.round_index, env.sender),
                    env.payload,
                    _aad(cfg.session, wire.PHASE_SHARE, env.sender, v),
                )
                held[v][env.sender] = (
                    Share.from_bytes(body[:SHARE_WIRE_BYTES]),
                    Share.from_bytes(body[SHARE_WIRE_BYTES:]),
                )
            self.meter.hold(f"user{v}/held-shares", 2 * SHARE_WIRE_BYTES * len(held[v]))

        # Phase 3: masked inputs.
        u3 = [u for u in u2 if self._alive(u, wire.STEP_MASKED)]
        self._require(u3, "agg-masked-below-threshold")
        mod = 1 << cfg.k
        for u in u3:
            st = self.users[u]
            my_pubs = views[u][1]
            vec = list(self.inputs[u])
            self_mask = prg_expand(b_seeds[u], cfg.dim, cfg.k)
            vec = [(a + b) % mod for a, b in zip(vec, self_mask)]
            for v in sorted(held[u]):
                if v == u:
                    continue
                pw = prg_expand(
                    st.mask_seed(v, my_pubs[v][1], cfg.round_index), cfg.dim, cfg.k
                )
                sign = 1 if v > u else -1
                vec = [(a + sign * b) % mod for a, b in zip(vec, pw)]
            self.net.send(
                Envelope(
                    cfg.session, wire.PHASE_MASKED, u, SERVER, _pack_vector(vec, cfg.k)
                )
            )
        masked: dict[int, list[int]] = {}
        for env in self.net.collect(SERVER, wire.PHASE_MASKED):
            masked[env.sender] = _unpack_vector(env.payload, cfg.k)
        u3 = sorted(masked)
        self._require(u3, "agg-masked-below-threshold")
        self.meter.hold("server/masked-vectors", len(u3) * cfg.dim * cfg.k // 8)

        # Phase 4: announce survivors, collect shares, unmask. The server
        # knows who shared because pairwise share traffic was relayed
        # through it; anyone observed sharing but not submitting a masked
        # vector is a dropout whose pairwise masks must be reconstructed.
        observed = {
            e.sender
            for e in self.net.transcript
            if e.session == cfg.session
            and e.phase == wire.PHASE_RELAY
            and e.receiver == SERVER
        }
        dropped = sorted(u for u in observed if u not in masked)
        req = _pack_uids(u3) + _pack_uids(dropped)
        responders = [v for v in u3 if self._alive(v, wire.STEP_RECOVER)]
        for v in responders:
            self.net.send(Envelope(cfg.session, wire.PHASE_RECOVER_REQ, SERVER, v, req))
        for v in responders:
            envs = self.net.collect(v, wire.PHASE_RECOVER_REQ)
            alive_list, off = _read_uids(envs[-1].payload, 0)
            dropped_list, _ = _read_uids(envs[-1].payload, off)
            entries = bytearray()
            for u in alive_list:
                if u in held[v]:
                    entries += bytes([_KIND_BSEED]) + u.to_bytes(4, "big")
                    entries += held[v][u][0].to_bytes()
            for u in dropped_list:
                if u in held[v]:
                    entries += bytes([_KIND_MASKKEY]) + u.to_bytes(4, "big")
                    entries += held[v][u][1].to_bytes()
            self.net.send(
                Envelope(cfg.session, wire.PHASE_RECOVER_RESP, v, SERVER, bytes(entries))
            )
        self._require(responders, "agg-recovery-below-threshold")

        b_pool: dict[int, list[Share]] = {u: [] for u in u3}
        s_pool: dict[int, list[Share]] = {u: [] for u in dropped}
        step = 1 + 4 + SHARE_WIRE_BYTES
        for env in self.net.collect(SERVER, wire.PHASE_RECOVER_RESP):
            p = env.payload
            if len(p) % step:
                raise ProtocolAbort("agg-bad-recovery-entry")
            for i in range(0, len(p), step):
                kind = p[i]
                target = int.from_bytes(p[i + 1 : i + 5], "big")
                sh = Share.from_bytes(p[i + 5 : i + step])
                if kind == _KIND_BSEED and target in b_pool:
                    b_pool[target].append(sh)
                elif kind == _KIND_MASKKEY and target in s_pool:
                    s_pool[target].append(sh)
                else:
                    raise ProtocolAbort("agg-bad-recovery-entry")

        total = [0] * cfg.dim
        for u in u3:
            total = [(a + b) % mod for a, b in zip(total, masked[u])]
        for u in u3:
            seed_int = reconstruct(b_pool[u], cfg.threshold)
            seed = seed_int.to_bytes(SEED_BYTES, "big")
            pad = prg_expand(seed, cfg.dim, cfg.k)
            total = [(a - b) % mod for a, b in zip(total, pad)]
        for w in dropped:
            scalar = reconstruct(s_pool[w], cfg.threshold) % P256_ORDER
            for u in u3:
                master = shared_key_from_scalar(scalar, pubs[u][1])
                seed = chain_key(master, cfg.round_index)[:SEED_BYTES]
                pad = prg_expand(seed, cfg.dim, cfg.k)
                sign = 1 if u < w else -1
                total = [(a - sign * b) % mod for a, b in zip(total, pad)]

        self.meter.release("server/masked-vectors")
        for v in roster:
            self.meter.release(f"user{v}/held-shares")
        return AggResult(
            total=[v % mod for v in total],
            roster=roster,
            sharers=sorted(u2),
            survivors=sorted(u3),
            responders=sorted(responders),
            recovered_self_masks=sorted(u3),
            recovered_mask_keys=sorted(dropped),
        )


def run_dea(
    net: SimBus,
    cfg: AggConfig,
    users: dict[int, UserKeyState],
    inputs: dict[int, list[int]],
    schedule: DropoutSchedule | None = None,
    rng: random.Random | None = None,
    meter: StorageMeter | None = None,
) -> AggResult:
    """Run one aggregation session; convenience wrapper over AggSession."""
    session = AggSession(
        net,
        cfg,
        users,
        inputs,
        schedule or wire.NoDropout(),
        rng or random.Random(),
        meter,
    )
    return session.run()


def assert_never_both(result: AggResult) -> None:
    """Check the recovery invariant: no user had both secrets rebuilt."""
    both = set(result.recovered_self_masks) & set(result.recovered_mask_keys)
    if both:
        raise AssertionError(f"both secrets recovered for users {sorted(both)}")

"""Simulated star-topology message bus with byte-accurate envelopes.

Every message travels as an envelope: session id (8 bytes), phase tag
(1 byte), sender id (4 bytes), receiver id (4 bytes), payload length
(4 bytes), payload. User-to-user traffic is relayed by the server: the
inner envelope is wrapped in an outer one addressed to the server, which
re-wraps it toward the receiver, so the server sees (and the transcript
records) every byte on the wire. Payload confidentiality between users
comes from the authenticated channels layered on top, not from the bus.

Dropout schedules decide, per (user, round, step), whether a user is
still responding. Within one round the steps are ordered, and a schedule
must be monotone in the step for that round: once a user misses a step it
misses the later ones too. Across rounds a user may come back.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import ProtocolAbort

SERVER = 0xFFFFFFFF

ENVELOPE_HEADER_BYTES = 8 + 1 + 4 + 4 + 4

# Phase tags. One byte on the wire, also used as the AEAD nonce domain.
PHASE_ADVERTISE = 0x01
PHASE_SHARE = 0x02
PHASE_MASKED = 0x03
PHASE_RECOVER_REQ = 0x04
PHASE_RECOVER_RESP = 0x05
PHASE_MODEL = 0x10
PHASE_SLG_MASKED_IP = 0x11
PHASE_SLG_ASSIST = 0x12
PHASE_SLG_SHARE = 0x13
PHASE_STATS = 0x20
PHASE_PREDICT_REQ = 0x30
PHASE_PREDICT_RESP = 0x31
PHASE_PREDICT_FIN = 0x32
PHASE_RELAY = 0x7F

# Steps inside one training round, in wire order.
STEP_START = 0
STEP_SLG = 1
STEP_ADVERTISE = 2
STEP_SHARE = 3
STEP_MASKED = 4
STEP_RECOVER = 5
ROUND_STEPS = (STEP_START, STEP_SLG, STEP_ADVERTISE, STEP_SHARE, STEP_MASKED, STEP_RECOVER)


@dataclass(frozen=True)
class Envelope:
    session: int
    phase: int
    sender: int
    receiver: int
    payload: bytes

    def pack(self) -> bytes:
        head = (
            self.session.to_bytes(8, "big")
            + self.phase.to_bytes(1, "big")
            + self.sender.to_bytes(4, "big")
            + self.receiver.to_bytes(4, "big")
            + len(self.payload).to_bytes(4, "big")
        )
        return head + self.payload

    @classmethod
    def unpack(cls, raw: bytes) -> "Envelope":
        if len(raw) < ENVELOPE_HEADER_BYTES:
            raise ValueError("short envelope")
        session = int.from_bytes(raw[0:8], "big")
        phase = raw[8]
        sender = int.from_bytes(raw[9:13], "big")
        receiver = int.from_bytes(raw[13:17], "big")
        n = int.from_bytes(raw[17:21], "big")
        if len(raw) != ENVELOPE_HEADER_BYTES + n:
            raise ValueError("envelope length mismatch")
        return cls(session, phase, sender, receiver, raw[21:])


class DropoutSchedule:
    """Base schedule: everyone stays up."""

    def alive(self, user: int, round_index: int, step: int) -> bool:
        return True

    def check_monotone(self, users: list[int], rounds: int) -> None:
        """Validate within-round monotonicity over a concrete universe."""
        for u in users:
            for r in range(rounds + 1):
                seen_dead = False
                for s in ROUND_STEPS:
                    if not self.alive(u, r, s):
                        seen_dead = True
                    elif seen_dead:
                        raise ValueError(
                            f"schedule revives user {u} within round {r} at step {s}"
                        )


class NoDropout(DropoutSchedule):
    pass


@dataclass
class PermanentDrops(DropoutSchedule):
    """Users that vanish for good at (round, step) and never come back."""

    drops: dict[int, tuple[int, int]]

    def alive(self, user: int, round_index: int, step: int) -> bool:
        if user not in self.drops:
            return True
        r0, s0 = self.drops[user]
        return (round_index, step) < (r0, s0)


@dataclass
class TransientDrops(DropoutSchedule):
    """Users that miss the tail of specific rounds, from a step onward."""

    drops: dict[tuple[int, int], int] = field(default_factory=dict)

    def drop(self, user: int, round_index: int, from_step: int) -> "TransientDrops":
        self.drops[(user, round_index)] = from_step
        return self

    def alive(self, user: int, round_index: int, step: int) -> bool:
        s0 = self.drops.get((user, round_index))
        return s0 is None or step < s0


@dataclass
class SampledTransientDrops(DropoutSchedule):
    """Each round, each user independently misses the round's tail.

    With probability frac the user drops that round, at a step drawn
    uniformly from from_steps. Draws are deterministic in (seed, user,
    round), so schedule and protocol stay reproducible and the schedule
    can be queried in any order.
    """

    frac: float
    seed: int
    from_steps: tuple[int, ...] = (STEP_SLG, STEP_ADVERTISE, STEP_SHARE, STEP_MASKED, STEP_RECOVER)

    def _draw(self, user: int, round_index: int) -> int | None:
        rng = random.Random(self.seed * 0x9E3779B1 + user * 131071 + round_index)
        if rng.random() >= self.frac:
            return None
        return rng.choice(self.from_steps)

    def alive(self, user: int, round_index: int, step: int) -> bool:
        s0 = self._draw(user, round_index)
        return s0 is None or step < s0


@dataclass
class _Edge:
    messages: int = 0
    bytes: int = 0


class SimBus:
    """In-memory bus: mailboxes per node, full transcript, byte meters."""

    def __init__(self) -> None:
        self._boxes: dict[int, list[Envelope]] = {}
        self.transcript: list[Envelope] = []
        self.edges: dict[tuple[int, int], _Edge] = {}

    def _deliver(self, env: Envelope, mailbox: bool = True) -> None:
        self.transcript.append(env)
        edge = self.edges.setdefault((env.sender, env.receiver), _Edge())
        edge.messages += 1
        edge.bytes += len(env.pack())
        if mailbox:
            self._boxes.setdefault(env.receiver, []).append(env)

    def send(self, env: Envelope) -> None:
        """Deliver one envelope; user-to-user goes through the server.

        The server-bound leg of a relayed message is forwarded on the
        spot, so it is metered and recorded but never queued.
        """
        if env.sender != SERVER and env.receiver != SERVER:
            inner = env.pack()
            self._deliver(
                Envelope(env.session, PHASE_RELAY, env.sender, SERVER, inner), mailbox=False
            )
            self._deliver(Envelope(env.session, PHASE_RELAY, SERVER, env.receiver, inner))
        else:
            self._deliver(env)

    def collect(self, receiver: int, phase: int | None = None) -> list[Envelope]:
        """Drain the receiver's mailbox, unwrapping relayed envelopes."""
        box = self._boxes.get(receiver, [])
        keep, out = [], []
        for env in box:
            if env.phase == PHASE_RELAY:
                env = Envelope.unpack(env.payload)
            if phase is None or env.phase == phase:
                out.append(env)
            else:
                keep.append(env)
        self._boxes[receiver] = keep
        return out

    def total_bytes(self) -> int:
        return sum(e.bytes for e in self.edges.values())

    def bytes_between(self, a: int, b: int) -> int:
        fwd = self.edges.get((a, b), _Edge()).bytes
        rev = self.edges.get((b, a), _Edge()).bytes
        return fwd + rev

    def phases_seen(self) -> set[int]:
        return {e.phase for e in self.transcript}


def require(cond: bool, reason: str) -> None:
    if not cond:
        raise ProtocolAbort(reason)

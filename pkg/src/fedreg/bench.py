"""Benchmark tables: cipher ops, aggregation runs, gradient-share counts.

Three targets, each returning rows as dicts so callers can render or dump
them. Timings are wall-clock on this machine and only comparable to
themselves; the operation and traffic counts are exact and match the
closed-form formulas, which is what the tests pin down.
"""

from __future__ import annotations

import math
import random
import time

from .ahe import keygen
from .bus import STEP_MASKED, PermanentDrops, SimBus
from .fixedpoint import FpConfig
from .metrics import CountingDecryptor, CountingEval
from .secagg import AggConfig, AggSession, derive_agg_survivors, setup_users
from .slg import (
    encrypt_model,
    expected_user_comm_bits,
    expected_user_op_counts,
    fit_sigmoid_cubic,
    run_slg,
)


def _ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0


def bench_he(
    ns: tuple[int, ...] = (10, 20, 30, 40, 50),
    modulus_bits: int = 2048,
    k: int = 256,
    backend: str = "jl",
    seed: int = 1,
) -> list[dict]:
    """Vector encrypt / decrypt / scalar-power timings per dimension."""
    pk, sk = keygen(modulus_bits, k, backend, seed=seed)
    rng = random.Random(seed)
    rows = []
    for n in ns:
        msgs = [rng.getrandbits(k) for _ in range(n)]
        scalars = [rng.getrandbits(k) for _ in range(n)]
        t0 = time.perf_counter()
        cts = [pk.encrypt(m, rng) for m in msgs]
        enc_ms = _ms(t0)
        t0 = time.perf_counter()
        got = [sk.decrypt(c) for c in cts]
        dec_ms = _ms(t0)
        assert got == msgs
        t0 = time.perf_counter()
        for c, z in zip(cts, scalars):
            pk.scalar_mul(c, z)
        mul_ms = _ms(t0)
        rows += [
            {"target": "he", "op": "enc", "n": n, "ms": round(enc_ms, 3)},
            {"target": "he", "op": "dec", "n": n, "ms": round(dec_ms, 3)},
            {"target": "he", "op": "const-mul", "n": n, "ms": round(mul_ms, 3)},
        ]
    return rows


def bench_agg(
    ms_sizes: tuple[int, ...] = (50, 100, 150, 200, 250),
    dropout: float = 0.25,
    dim: int = 10,
    k: int = 256,
    seed: int = 1,
) -> list[dict]:
    """One aggregation per population size, dropout injected mid-protocol.

    The dropped quarter vanishes after sending shares and before sending
    masked vectors, which forces the expensive recovery path. Every row
    cross-checks the unmasked sum against the plaintext sum over the
    survivor set.
    """
    rows = []
    for m in ms_sizes:
        rng = random.Random(seed + m)
        t = math.ceil(m / 3)
        n_drop = round(m * dropout)
        schedule = PermanentDrops({u: (1, STEP_MASKED) for u in range(n_drop)})
        users = setup_users(list(range(m)), rng)
        inputs = {u: [rng.getrandbits(k) for _ in range(dim)] for u in range(m)}
        net = SimBus()
        t0 = time.perf_counter()
        res = AggSession(
            net,
            AggConfig(k=k, dim=dim, threshold=t, session=1, round_index=1, schedule_round=1),
            users,
            inputs,
            schedule,
            rng,
        ).run()
        wall = _ms(t0)
        expect_set = derive_agg_survivors(schedule, 1, sorted(inputs), t)
        mod = 1 << k
        expected = [0] * dim
        for u in expect_set:
            expected = [(a + b) % mod for a, b in zip(expected, inputs[u])]
        rows.append(
            {
                "target": "agg",
                "m": m,
                "t": t,
                "dropped": n_drop,
                "survivors": len(res.survivors),
                "sum_ok": res.total == expected and res.survivors == expect_set,
                "bus_bytes": net.total_bytes(),
                "ms": round(wall, 1),
            }
        )
    return rows


def bench_slg(
    ns: tuple[int, ...] = (1, 5, 10, 20),
    ds: tuple[int, ...] = (1, 5, 10),
    kinds: tuple[str, ...] = ("linear", "logistic"),
    modulus_bits: int = 2048,
    k: int = 256,
    backend: str = "jl",
    seed: int = 1,
) -> list[dict]:
    """Measured per-user op counts for gradient shares across a grid,
    checked live against the closed-form table."""
    pk, sk = keygen(modulus_bits, k, backend, seed=seed)
    fp = FpConfig(k=k)
    sig = fit_sigmoid_cubic(cfg=fp)
    rng = random.Random(seed)
    rows = []
    for kind in kinds:
        for n in ns:
            for d in ds:
                theta = [rng.uniform(-1, 1) for _ in range(n + 1)]
                data = [[rng.uniform(-1, 1) for _ in range(n)] for _ in range(d)]
                labels = [
                    float(rng.random() < 0.5) if kind == "logistic" else rng.uniform(-1, 1)
                    for _ in range(d)
                ]
                server_ev = CountingEval(pk)
                dec = CountingDecryptor(sk)
                user_ev = CountingEval(pk)
                enc_model = encrypt_model(server_ev, theta, fp, rng)
                t0 = time.perf_counter()
                run_slg(kind, user_ev, dec, server_ev, enc_model, data, labels, fp, rng, sig)
                wall = _ms(t0)
                want = expected_user_op_counts(kind, n, d)
                got = user_ev.counter
                comm_ok = (
                    got.bits_up + got.bits_down
                    == expected_user_comm_bits(kind, n, d, pk.ciphertext_bits)
                )
                rows.append(
                    {
                        "target": "slg",
                        "kind": kind,
                        "n": n,
                        "d": d,
                        "enc": got.enc,
                        "ct_mul": got.ct_mul,
                        "const_mul": got.const_mul,
                        "counts_ok": {
                            "enc": got.enc,
                            "ct_mul": got.ct_mul,
                            "const_mul": got.const_mul,
                        }
                        == want
                        and comm_ok,
                        "ms": round(wall, 1),
                    }
                )
    return rows


def render_table(rows: list[dict]) -> str:
    """Fixed-width text table over the union of row keys."""
    if not rows:
        return "(no rows)"
    cols: list[str] = []
    for r in rows:
        for c in r:
            if c not in cols:
                cols.append(c)
    widths = {
        c: max(len(c), max(len(str(r.get(c, ""))) for r in rows)) for c in cols
    }
    out = ["  ".join(c.ljust(widths[c]) for c in cols)]
    out.append("  ".join("-" * widths[c] for c in cols))
    for r in rows:
        out.append("  ".join(str(r.get(c, "")).ljust(widths[c]) for c in cols))
    return "\n".join(out)

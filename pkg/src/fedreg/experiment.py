"""Experiment runner: dataset to trained model to scored report.

run_experiment partitions a dataset, runs the secure training pipeline,
evaluates the final model on the held-out split (RMSE for the linear
flavors, confusion-matrix accuracy for logistic), and packs everything
into an ExperimentReport. A typed protocol abort does not vanish into a
stack trace: the report carries the abort reason and whatever rounds
completed.

Reports serialize as JSON lines (one meta line, one line per round), a
flat CSV for external plotting, and a human-readable summary. Two runs
with the same config and seed produce byte-identical reports except for
the wall-clock block.

The module also hosts the bus-level leak scanner: it greps every
envelope payload for every raw feature value in its float, string, and
ring encodings, and reports any hit outside what masking and encryption
should allow, which is none.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from struct import pack as struct_pack

from . import bus as wire
from .bus import SERVER, DropoutSchedule, NoDropout, SampledTransientDrops
from .data import Dataset, partition
from .errors import ProtocolAbort
from .fixedpoint import FpConfig, fp_encode
from .fedtrain import TrainConfig, TrainResult, train
from .slg import sigmoid

PHASE_GROUPS = {
    "agg": {
        wire.PHASE_ADVERTISE,
        wire.PHASE_SHARE,
        wire.PHASE_MASKED,
        wire.PHASE_RECOVER_REQ,
        wire.PHASE_RECOVER_RESP,
        wire.PHASE_RELAY,
    },
    "slg": {
        wire.PHASE_MODEL,
        wire.PHASE_SLG_MASKED_IP,
        wire.PHASE_SLG_ASSIST,
        wire.PHASE_SLG_SHARE,
    },
    "stats": {wire.PHASE_STATS},
    "predict": {wire.PHASE_PREDICT_REQ, wire.PHASE_PREDICT_RESP, wire.PHASE_PREDICT_FIN},
}


def _group_of(phase: int) -> str:
    for g, phases in PHASE_GROUPS.items():
        if phase in phases:
            return g
    return "other"


def bytes_by_party_and_phase(net) -> dict[str, dict[str, dict[str, int]]]:
    """Decompose bus traffic into per-party, per-phase-group up/down bytes.

    Both total bytes (with envelope headers) and payload bytes are kept,
    so counter cross-checks can work header-free.
    """
    out: dict[str, dict[str, dict[str, int]]] = {}

    def bucket(party: int, group: str) -> dict[str, int]:
        name = "server" if party == SERVER else str(party)
        return out.setdefault(name, {}).setdefault(
            group, {"up": 0, "down": 0, "up_payload": 0, "down_payload": 0}
        )

    for env in net.transcript:
        size = len(env.pack())
        group = _group_of(env.phase)
        snd = bucket(env.sender, group)
        snd["up"] += size
        snd["up_payload"] += len(env.payload)
        rcv = bucket(env.receiver, group)
        rcv["down"] += size
        rcv["down_payload"] += len(env.payload)
    return out


def scan_for_leaks(
    net, data: dict[int, tuple[list[list[float]], list[float]]], fp: FpConfig
) -> list[dict]:
    """Search every payload for raw feature values in any known encoding.

    Encodings checked per value: IEEE-754 doubles both endians, the ring
    encoding at scale 1, and the decimal string. Degenerate patterns
    (all bytes equal, as for 0.0) are skipped because they match masked
    payloads trivially without carrying information.
    """
    patterns: list[tuple[float, bytes]] = []
    seen: set[bytes] = set()
    for rows, _ in data.values():
        for row in rows:
            for v in row:
                for enc in (
                    struct_pack(">d", v),
                    struct_pack("<d", v),
                    fp_encode(v, 1, fp).to_bytes(fp.k // 8, "big"),
                    repr(v).encode(),
                ):
                    if len(set(enc)) <= 1 or enc in seen:
                        continue
                    seen.add(enc)
                    patterns.append((v, enc))
    hits = []
    for i, env in enumerate(net.transcript):
        for v, enc in patterns:
            if enc in env.payload:
                hits.append(
                    {"envelope": i, "phase": env.phase, "value": v, "sender": env.sender}
                )
    return hits


@dataclass
class ExperimentReport:
    config: dict
    dataset: dict
    scaling: dict | None
    rounds: list[dict]
    totals: dict
    traffic: dict
    metric: dict
    theta: list[float]
    abort: dict | None
    wall_clock: dict = field(default_factory=dict)

    def as_dict(self, with_wall_clock: bool = True) -> dict:
        d = {
            "config": self.config,
            "dataset": self.dataset,
            "scaling": self.scaling,
            "rounds": self.rounds,
            "totals": self.totals,
            "traffic": self.traffic,
            "metric": self.metric,
            "theta": self.theta,
            "abort": self.abort,
        }
        if with_wall_clock:
            d["wall_clock"] = self.wall_clock
        return d

    def to_jsonl(self, with_wall_clock: bool = True) -> str:
        meta = {k: v for k, v in self.as_dict(with_wall_clock).items() if k != "rounds"}
        lines = [json.dumps({"type": "meta", **meta}, sort_keys=True)]
        for r in self.rounds:
            lines.append(json.dumps({"type": "round", **r}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        n_theta = len(self.theta)
        if not n_theta and self.rounds:
            n_theta = len(self.rounds[0]["theta"])
        w = csv.writer(buf)
        w.writerow(
            ["round", "cohort_size", "slg_users", "survivors", "d_a"]
            + [f"theta_{j}" for j in range(n_theta)]
        )
        for r in self.rounds:
            w.writerow(
                [r["round"], len(r["cohort"]), len(r["slg_users"]), len(r["survivors"]), r["d_a"]]
                + list(r["theta"])
            )
        return buf.getvalue()

    def summary(self) -> str:
        lines = [
            f"dataset {self.dataset['name']}: n={self.dataset['n']} d={self.dataset['d']}",
            f"model {self.config['kind']}, m={self.config['n_users']} "
            f"ell={self.config['per_user']} rounds={self.config['rounds']} "
            f"eta={self.config['eta']} t={self.config['t']} M={self.config['m_cohort']}",
        ]
        if self.abort:
            lines.append(
                f"ABORTED: {self.abort['reason']} ({self.abort['detail']}) "
                f"after {len(self.rounds)} completed rounds"
            )
        for k, v in self.metric.items():
            if k != "confusion":
                lines.append(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}")
        if "confusion" in self.metric:
            (tn, fp), (fn, tp) = self.metric["confusion"]
            lines.append(f"confusion: tn={tn} fp={fp} fn={fn} tp={tp}")
        if self.theta:
            lines.append("theta: " + " ".join(f"{v:.5f}" for v in self.theta))
        tot = self.totals
        if tot.get("user"):
            lines.append(
                f"ops: user enc={tot['user']['enc']} ct_mul={tot['user']['ct_mul']} "
                f"const_mul={tot['user']['const_mul']} | server enc={tot['server']['enc']} "
                f"dec={tot['server']['dec']} ct_mul={tot['server']['ct_mul']} "
                f"const_mul={tot['server']['const_mul']}"
            )
            lines.append(f"bus bytes: {tot['bus_bytes']}")
        if self.wall_clock:
            stamps = " ".join(f"{k}={v:.2f}s" for k, v in self.wall_clock.items())
            lines.append(f"wall clock: {stamps}")
        return "\n".join(lines)


def evaluate(
    kind: str,
    theta: list[float],
    rows: list[list[float]],
    labels: list[float],
    mu: list[float] | None = None,
    sigma: list[float] | None = None,
) -> dict:
    """Score a trained model on held-out rows, scaling them the same way."""
    if not rows:
        return {}
    if mu is not None and sigma is not None:
        rows = [[(x - a) / s for x, a, s in zip(r, mu, sigma)] for r in rows]
    scores = [t0_dot(theta, r) for r in rows]
    if kind == "logistic":
        tn = fp = fn = tp = 0
        for s, y in zip(scores, labels):
            pred = 1 if sigmoid(s) >= 0.5 else 0
            if y == 1:
                tp, fn = (tp + 1, fn) if pred == 1 else (tp, fn + 1)
            else:
                fp, tn = (fp + 1, tn) if pred == 1 else (fp, tn + 1)
        acc = 100.0 * (tp + tn) / len(rows)
        return {"accuracy_pct": acc, "confusion": [[tn, fp], [fn, tp]]}
    err = [s - y for s, y in zip(scores, labels)]
    return {"rmse": math.sqrt(sum(e * e for e in err) / len(err))}


def t0_dot(theta: list[float], row: list[float]) -> float:
    return theta[0] + sum(t * x for t, x in zip(theta[1:], row))


def run_experiment(
    ds: Dataset,
    cfg: TrainConfig,
    split_ratio: float = 0.7,
    dropout_frac: float = 0.0,
    schedule: DropoutSchedule | None = None,
) -> ExperimentReport:
    """Partition, train, evaluate, report. Aborts land in the report."""
    seed = cfg.seed if cfg.seed is not None else 0
    users, test_rows, test_labels = partition(
        ds, cfg.n_users, cfg.per_user, split_ratio, seed
    )
    if schedule is None:
        schedule = (
            SampledTransientDrops(dropout_frac, seed=seed ^ 0x5EED)
            if dropout_frac > 0
            else NoDropout()
        )

    t0 = time.perf_counter()
    abort = None
    result: TrainResult | None = None
    try:
        result = train(users, cfg, schedule)
        theta = result.theta
        rounds = [r.as_dict() for r in result.rounds]
        scaling = result.scaling.as_dict() if result.scaling else None
    except ProtocolAbort as e:
        abort = {"reason": e.reason, "detail": e.detail}
        theta = []
        rounds = [r.as_dict() for r in getattr(e, "partial_rounds", [])]
        part_scaling = getattr(e, "partial_scaling", None)
        scaling = part_scaling.as_dict() if part_scaling else None
    train_s = time.perf_counter() - t0

    t1 = time.perf_counter()
    if abort is None and result is not None:
        mu = result.scaling.mu if result.scaling else None
        sigma = result.scaling.sigma if result.scaling else None
        metric = evaluate(cfg.kind, theta, test_rows, test_labels, mu, sigma)
        user_total = {"enc": 0, "dec": 0, "ct_mul": 0, "const_mul": 0, "bits_up": 0, "bits_down": 0}
        for c in result.user_ops.values():
            for k, v in c.as_dict().items():
                user_total[k] += v
        totals = {
            "user": user_total,
            "server": result.server_ops.as_dict(),
            "bus_bytes": result.bus_bytes,
            "ciphertext_bits": result.ciphertext_bits,
        }
        traffic = bytes_by_party_and_phase(result.net)
    else:
        metric = {}
        totals = {
            "user": {},
            "server": {},
            "bus_bytes": 0,
            "ciphertext_bits": 0,
        }
        traffic = {}
    eval_s = time.perf_counter() - t1

    return ExperimentReport(
        config={
            "kind": cfg.kind,
            "n_users": cfg.n_users,
            "per_user": cfg.per_user,
            "rounds": cfg.rounds,
            "eta": cfg.eta,
            "lam": cfg.lam,
            "t": cfg.t,
            "m_cohort": cfg.m_cohort,
            "epsilon": cfg.eps,
            "rho": cfg.rho,
            "tau": cfg.fp.tau,
            "k": cfg.fp.k,
            "modulus_bits": cfg.modulus_bits,
            "backend": cfg.backend,
            "seed": cfg.seed,
            "split_ratio": split_ratio,
            "dropout_frac": dropout_frac,
            "scale_features": cfg.scale_features,
        },
        dataset={"name": ds.name, "n": ds.n, "d": ds.d, "n_features": ds.n_features},
        scaling=scaling,
        rounds=rounds,
        totals=totals,
        traffic=traffic,
        metric=metric,
        theta=list(theta),
        abort=abort,
        wall_clock={"train_s": train_s, "eval_s": eval_s},
    )


def write_report(report: ExperimentReport, path: str) -> list[str]:
    """Write the JSONL report to path and the per-round CSV to path.csv."""
    with open(path, "w") as fh:
        fh.write(report.to_jsonl())
    csv_path = path + ".csv"
    with open(csv_path, "w") as fh:
        fh.write(report.to_csv())
    return [path, csv_path]

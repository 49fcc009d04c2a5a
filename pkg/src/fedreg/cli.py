"""Command line front end.

Subcommands: keygen, train, predict, bench, leakage-demo. The cipher
backend is picked by the FEDREG_AHE_BACKEND environment variable ("jl" or
"paillier", default "jl"); --backend overrides it per invocation.

Exit codes: 0 success, 2 typed protocol abort, 3 configuration error.
"""

from __future__ import annotations

import argparse
import base64
import json
import os
import random
import sys

from .ahe import key_from_bytes, keygen
from .bench import bench_agg, bench_he, bench_slg, render_table
from .data import gen_synthetic, load_dataset
from .errors import ConfigError, ProtocolAbort
from .experiment import run_experiment, write_report
from .fedtrain import TrainConfig, gradient_reveals_features
from .fixedpoint import FpConfig, fp_decode_vector, fp_encode_vector
from .metrics import CountingDecryptor, CountingEval
from .oblivpred import (
    lin_predict_finish,
    lin_predict_respond,
    log_predict_assist,
    log_predict_finish,
    log_predict_respond_final,
    log_predict_respond_score,
    predict_request,
)
from .slg import fit_sigmoid_cubic, local_gradient_float, share_scales


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; that code is reserved for protocol
    # aborts here, so route usage problems through ConfigError instead.
    def error(self, message):
        raise ConfigError(message)


def _backend(args) -> str:
    if getattr(args, "backend", None):
        return args.backend
    return os.environ.get("FEDREG_AHE_BACKEND", "jl")


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"expected comma separated integers, got {text!r}")


def _add_common_crypto(p) -> None:
    p.add_argument("--bits", type=int, default=2048, choices=(2048, 3072))
    p.add_argument("--backend", choices=("jl", "paillier"), default=None)


def _build_parser() -> _Parser:
    top = _Parser(prog="fedreg", description=__doc__.splitlines()[0])
    sub = top.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("keygen", help="generate a cipher keypair and store it")
    _add_common_crypto(p)
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="fedreg.key", help="secret key blob path")
    p.add_argument("--public-out", default=None, help="optional public-only blob path")
    p.set_defaults(func=_cmd_keygen)

    p = sub.add_parser("train", help="run a federated training experiment")
    p.add_argument("--model", required=True, choices=("linear", "ridge", "logistic"))
    p.add_argument("--dataset", default=None, help="CSV path, header row, label last")
    p.add_argument("--synthetic", default=None, metavar="N:D", help="generate N-feature, D-row data instead of reading a file")
    p.add_argument("--columns", default=None, help="comma separated feature subset")
    p.add_argument("--users", type=int, default=9)
    p.add_argument("--per-user", type=int, default=4)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--tau", type=int, default=16)
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--dropout-frac", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--report", default=None, help="write JSONL report here (plus .csv)")
    p.add_argument("--split", type=float, default=0.7, help="train fraction of the dataset")
    p.add_argument("--no-scale", action="store_true", help="skip the secure standardization step")
    p.add_argument("--model-out", default=None, help="write the trained model as JSON for `predict`")
    _add_common_crypto(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="oblivious prediction against a trained model")
    p.add_argument("--model-file", required=True)
    p.add_argument("--input", required=True, help="comma separated feature row")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dump-wire", default=None, help="write the JSON wire messages here")
    _add_common_crypto(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("bench", help="timing and counter tables")
    p.add_argument("target", choices=("he", "agg", "slg"))
    p.add_argument("--sizes", default=None, help="comma separated sizes (he/slg: n, agg: m)")
    p.add_argument("--points", default=None, help="slg: comma separated per-user point counts")
    p.add_argument("--dim", type=int, default=10, help="agg: vector dimension")
    p.add_argument("--dropout", type=float, default=0.25, help="agg: dropped fraction")
    p.add_argument("--seed", type=int, default=1)
    _add_common_crypto(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser(
        "leakage-demo",
        help="show what a raw gradient reveals and what a blinded share hides",
    )
    p.add_argument("--features", type=int, default=3)
    p.add_argument("--tau", type=int, default=16)
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_leakage)

    return top


def _cmd_keygen(args) -> int:
    pk, sk = keygen(args.bits, args.k, _backend(args), seed=args.seed)
    with open(args.out, "wb") as fh:
        fh.write(sk.to_bytes())
    print(f"wrote secret key: {args.out} ({args.bits}-bit {pk.params.backend}, k={args.k})")
    if args.public_out:
        with open(args.public_out, "wb") as fh:
            fh.write(pk.to_bytes())
        print(f"wrote public key: {args.public_out}")
    print(f"ciphertext bits: {pk.ciphertext_bits}")
    return 0


def _load_train_dataset(args):
    if (args.dataset is None) == (args.synthetic is None):
        raise ConfigError("pass exactly one of --dataset or --synthetic N:D")
    if args.dataset is not None:
        columns = [c.strip() for c in args.columns.split(",")] if args.columns else None
        return load_dataset(args.dataset, columns=columns)
    try:
        n_text, d_text = args.synthetic.split(":")
        n_feat, d_rows = int(n_text), int(d_text)
    except ValueError:
        raise ConfigError(f"--synthetic expects N:D, got {args.synthetic!r}")
    kind = "logistic" if args.model == "logistic" else "linear"
    return gen_synthetic(kind, n_feat, d_rows, seed=args.seed or 0, noise=0.05)


def _cmd_train(args) -> int:
    ds = _load_train_dataset(args)
    cfg = TrainConfig(
        kind=args.model,
        n_users=args.users,
        per_user=args.per_user,
        rounds=args.rounds,
        eta=args.eta,
        lam=args.lam,
        fp=FpConfig(k=args.k, tau=args.tau),
        seed=args.seed,
        modulus_bits=args.bits,
        backend=_backend(args),
        scale_features=not args.no_scale,
    )
    report = run_experiment(ds, cfg, split_ratio=args.split, dropout_frac=args.dropout_frac)
    print(report.summary())
    if args.report:
        paths = write_report(report, args.report)
        print("report written: " + ", ".join(paths))
    if args.model_out and report.theta is not None:
        scaling = report.scaling or {}
        model = {
            "kind": args.model,
            "theta": report.theta,
            "mu": scaling.get("mu"),
            "sigma": scaling.get("sigma"),
            "tau": args.tau,
            "k": args.k,
            "interval": cfg.sigmoid_interval,
        }
        with open(args.model_out, "w") as fh:
            json.dump(model, fh, indent=1)
        print(f"model written: {args.model_out}")
    if report.abort is not None:
        print(
            f"protocol abort: {report.abort['reason']}: {report.abort['detail']}",
            file=sys.stderr,
        )
        return 2
    return 0


def _b64_ct(pk, ct: int) -> str:
    return base64.b64encode(pk.ct_to_bytes(ct)).decode()


def _ct_b64(pk, text: str) -> int:
    return pk.ct_from_bytes(base64.b64decode(text))


def _cmd_predict(args) -> int:
    with open(args.model_file) as fh:
        model = json.load(fh)
    kind = model["kind"]
    theta = [float(v) for v in model["theta"]]
    n = len(theta) - 1
    try:
        x = [float(v) for v in args.input.split(",")]
    except ValueError:
        raise ConfigError(f"--input must be a comma separated float row, got {args.input!r}")
    if len(x) != n:
        raise ConfigError(f"model expects {n} features, input has {len(x)}")
    if model.get("mu") is not None:
        mu, sigma = model["mu"], model["sigma"]
        x = [(v - m) / s for v, m, s in zip(x, mu, sigma)]

    fp = FpConfig(k=int(model["k"]), tau=int(model["tau"]))
    rng = random.Random(args.seed)  # seeds from OS entropy when --seed is absent
    pk, sk = keygen(args.bits, fp.k, _backend(args), seed=args.seed)
    user_ev, server_ev = CountingEval(pk), CountingEval(pk)
    user_dec = CountingDecryptor(sk)
    wire: list[dict] = []

    # User -> server: encrypted feature vector.
    request = {"enc_input": [_b64_ct(pk, c) for c in predict_request(user_ev, x, fp, rng)]}
    wire.append(request)
    enc_input = [_ct_b64(pk, t) for t in request["enc_input"]]

    if kind in ("linear", "ridge"):
        resp = {"enc_output": _b64_ct(pk, lin_predict_respond(server_ev, theta, enc_input, fp, rng))}
        wire.append(resp)
        value = lin_predict_finish(user_ev, user_dec, _ct_b64(pk, resp["enc_output"]), fp)
        result = {"prediction": value}
    else:
        sig = fit_sigmoid_cubic(interval=float(model.get("interval", 8.0)), cfg=fp)
        state, e_z = log_predict_respond_score(server_ev, theta, enc_input, fp, rng)
        msg_z = {"enc_z": _b64_ct(pk, e_z)}
        wire.append(msg_z)
        e_z2, e_s3z = log_predict_assist(user_dec, user_ev, _ct_b64(pk, msg_z["enc_z"]), sig, fp, rng)
        msg_assist = {"enc_z2": _b64_ct(pk, e_z2), "enc_sig3z": _b64_ct(pk, e_s3z)}
        wire.append(msg_assist)
        final = log_predict_respond_final(
            server_ev,
            state,
            _ct_b64(pk, msg_assist["enc_z2"]),
            _ct_b64(pk, msg_assist["enc_sig3z"]),
            sig,
            fp,
            rng,
        )
        resp = {"enc_output": _b64_ct(pk, final)}
        wire.append(resp)
        prob, label = log_predict_finish(user_ev, user_dec, _ct_b64(pk, resp["enc_output"]), fp)
        result = {"prediction": prob, "class": label}

    if args.dump_wire:
        with open(args.dump_wire, "w") as fh:
            for msg in wire:
                fh.write(json.dumps(msg, sort_keys=True) + "\n")
    print(json.dumps(result))
    return 0


def _cmd_bench(args) -> int:
    backend = _backend(args)
    if args.target == "he":
        ns = _csv_ints(args.sizes) if args.sizes else (10, 20, 30, 40, 50)
        rows = bench_he(ns, args.bits, backend=backend, seed=args.seed)
    elif args.target == "agg":
        ms_sizes = _csv_ints(args.sizes) if args.sizes else (50, 100, 150, 200, 250)
        rows = bench_agg(ms_sizes, args.dropout, dim=args.dim, seed=args.seed)
    else:
        ns = _csv_ints(args.sizes) if args.sizes else (1, 5, 10, 20)
        ds_counts = _csv_ints(args.points) if args.points else (1, 5, 10)
        rows = bench_slg(ns, ds_counts, modulus_bits=args.bits, backend=backend, seed=args.seed)
    print(render_table(rows))
    return 0


def _cmd_leakage(args) -> int:
    n = args.features
    fp = FpConfig(k=args.k, tau=args.tau)
    rng = random.Random(args.seed)
    theta = [rng.uniform(-1, 1) for _ in range(n + 1)]
    x = [rng.uniform(-1, 1) for _ in range(n)]
    y = [sum(t * v for t, v in zip(theta[1:], x)) + theta[0] + 0.3]
    grad = local_gradient_float("linear", theta, [x], y, None)

    # What the aggregator would see if one user's gradient arrived bare.
    scales = share_scales("linear", n)
    ring = fp_encode_vector(grad, scales, fp)
    leaked = fp_decode_vector(ring, scales, fp)
    recovered = gradient_reveals_features(leaked)
    print("single-point gradient leak (linear model, one data row):")
    print(f"  true features:      {[round(v, 6) for v in x]}")
    print(f"  recovered from raw: {[round(v, 6) for v in (recovered or [])]}")
    errs = [abs(a - b) for a, b in zip(x, recovered or [])]
    print(f"  max error:          {max(errs):.2e}  (bound 2^-{fp.tau - 6})")

    print("\nblinded share of the same gradient (what the server actually gets):")
    mod = fp.modulus
    for trial in range(3):
        blind = [rng.getrandbits(fp.k) for _ in ring]
        share = [(a + b) % mod for a, b in zip(ring, blind)]
        decoded = fp_decode_vector(share, scales, fp)
        shown = ", ".join(f"{v:.3e}" for v in decoded)
        print(f"  share {trial}: decodes to [{shown}]")
    print("  each share is one-time-padded mod 2^k; decodes are uniform noise")
    return 0


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except ProtocolAbort as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

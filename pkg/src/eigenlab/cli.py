"""Command-line entry point: ``eigenlab <subcommand> [options]``.

Exit status is 0 on success, 1 when the library reports a domain error
(singular matrix, malformed data, divergence, ...) and 2 for usage errors
(bad flags, missing files, incompatible task and ensemble). Commands that
compute something print a JSON run record echoing every seed and config.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import codec, datagen, ensembles, evalkit, linalg, oodlab
from .errors import EigenlabError
from .nanoformer import (Model, TrainConfig, load_checkpoint, model_config_for, save_checkpoint,
                         train)


class UsageError(Exception):
    pass


def _dump(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _need_file(path, what="file"):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _need_dataset(path):
    for name in (datagen.DATA_FILE, datagen.MANIFEST_FILE):
        _need_file(os.path.join(path, name), "dataset file")


def _need_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"directory does not exist: {parent}")


def _read_json(path):
    _need_file(path, "config")
    with open(path, encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def _parse_matrix(text):
    """``"1,2;2,1"`` -> 2x2 array."""
    try:
        rows = [[float(v) for v in r.split(",")] for r in text.strip().split(";")]
        m = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise UsageError(f"cannot parse matrix {text!r}: {exc}") from exc
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise UsageError(f"matrix must be square, got shape {m.shape}")
    return m


def _fmt(a):
    return np.array2string(np.asarray(a), precision=6, suppress_small=True)


# -- subcommands -------------------------------------------------------------

def cmd_gen(args):
    ens = ensembles.EnsembleConfig(args.kind, args.n, sigma=args.sigma, seed=args.seed)
    spec = datagen.DatasetSpec(args.task, ens, args.in_scheme, args.out_scheme, count=args.count)
    manifest = datagen.build_dataset(spec, args.out, workers=args.workers)
    _dump({"command": "gen", "out": args.out, "workers": args.workers, "manifest": manifest})


def cmd_stats(args):
    cfg = ensembles.EnsembleConfig(args.kind, args.n, sigma=args.sigma, seed=args.seed)
    out = {"command": "stats", "ensemble": cfg.to_dict(), "count": args.count}
    if args.positive_fraction:
        frac = ensembles.positive_fraction(cfg, args.count, args.workers)
        out["positive_fraction"] = frac
        out["binomial_std"] = float(np.sqrt(frac * (1 - frac) / args.count))
    else:
        q = ensembles.condition_stats(cfg, args.count, args.workers)
        out.update({"median": q.median, "q3": q.q3, "p90": q.p90})
    _dump(out)


def cmd_encode(args):
    m = _parse_matrix(args.matrix)
    line = str(codec.encode_input(m, args.scheme))
    if args.task:
        target = datagen.solve(args.task, m)
        line += " | " + str(codec.encode_target(args.task, target, args.out_scheme or args.scheme))
    print(line)


def cmd_decode(args):
    text = args.line if args.line is not None else sys.stdin.readline()
    text = text.strip()
    src_text, sep, tgt_text = text.partition(" | ")
    src_toks = src_text.split()
    in_scheme = args.scheme or codec.detect_scheme(src_toks)
    m = codec.decode_input(src_toks, in_scheme)
    n = m.shape[0]
    print(f"n = {n}  input scheme = {in_scheme}")
    print("M =")
    print(_fmt(m))
    if not sep:
        return
    tgt_toks = tgt_text.split()
    out_scheme = args.out_scheme or codec.detect_scheme(tgt_toks)
    per = codec.get_scheme(out_scheme).tokens_per_value
    task = args.task or codec.infer_task(len(tgt_toks) // per, n)
    if task is None:
        raise UsageError(f"cannot infer the task from {len(tgt_toks)} target tokens for n={n}")
    sol = codec.decode_target(task, tgt_toks, n, out_scheme)
    print(f"task = {task}  target scheme = {out_scheme}")
    if task == "eigenvalues":
        print("Lambda =", _fmt(sol))
    elif task == "diagonalization":
        print("Lambda =", _fmt(sol[0]))
        print("H =")
        print(_fmt(sol[1]))
    else:
        print("P =")
        print(_fmt(sol))


def _train_config(args):
    return TrainConfig(lr_max=args.lr, batch=args.batch, warmup_steps=args.warmup,
                       cosine_period=args.cosine_period, max_steps=args.max_steps)


def _dataset_batches(path, batch):
    recs = list(datagen.read_dataset(path))
    src = np.array([r.input.ids for r in recs], dtype=np.int64)
    tgt = np.array([r.target.ids for r in recs], dtype=np.int64)
    count = len(recs)

    def batch_fn(step):
        idx = (np.arange(step * batch, (step + 1) * batch)) % count
        return src[idx], tgt[idx]

    return batch_fn


def cmd_train(args):
    if args.data:
        _need_dataset(args.data)
        dspec = datagen.spec_from_manifest(args.data)
    else:
        if not (args.task and args.kind and args.n):
            raise UsageError("train needs --data PATH or --task/--kind/--n to stream examples")
        ens = ensembles.EnsembleConfig(args.kind, args.n, seed=args.seed)
        tcount = args.max_steps * args.batch
        dspec = datagen.DatasetSpec(args.task, ens, args.in_scheme, args.out_scheme, count=tcount)
    _need_parent(args.checkpoint)
    if args.log:
        _need_parent(args.log)
    tcfg = _train_config(args)
    mcfg = model_config_for(dspec.input_scheme, dspec.target_scheme, dspec.n, dspec.task,
                            enc_layers=args.enc_layers, dec_layers=args.dec_layers, dim=args.dim,
                            heads=args.heads, seed=args.seed, dtype=args.dtype)
    model = Model(mcfg)
    if args.data:
        batch_fn = _dataset_batches(args.data, tcfg.batch)
    else:
        def batch_fn(step):
            return datagen.id_batch(dspec, step * tcfg.batch, (step + 1) * tcfg.batch)
    rows = train(model, tcfg, batch_fn, log_path=args.log)
    run = {"command": "train", "data": args.data, "dataset": dspec.manifest_fields(),
           "model": mcfg.to_dict(), "train": tcfg.to_dict(), "final_loss": rows[-1][2],
           "steps": len(rows)}
    save_checkpoint(args.checkpoint, model, step=len(rows), extra=run)
    _dump(dict(run, checkpoint=args.checkpoint))


def cmd_eval(args):
    _need_dataset(args.data)
    _need_file(args.checkpoint, "checkpoint")
    if args.eval_csv:
        _need_parent(args.eval_csv)
    model, header = load_checkpoint(args.checkpoint)
    dspec = datagen.spec_from_manifest(args.data)
    recs = list(datagen.read_dataset(args.data))
    if args.limit:
        recs = recs[:args.limit]
    tol = evalkit.ToleranceConfig(tau=args.tau)
    src = np.array([r.input.ids for r in recs], dtype=np.int64)
    mats = np.stack([codec.decode_input(r.input, dspec.input_scheme) for r in recs])
    if src.shape[1] != model.cfg.max_src_len:
        raise UsageError("checkpoint and dataset disagree on matrix size or input scheme")
    results = oodlab.evaluate_model(model, dspec.task, src, mats, dspec.target_scheme, tol)
    if args.eval_csv:
        evalkit.write_records_csv(args.eval_csv, results)
    report = evalkit.verifier_report(results, tol)
    _dump({"command": "eval", "data": args.data, "checkpoint": args.checkpoint,
           "tol": tol.to_dict(), "count": len(results), "accuracy": report.accuracy,
           "report": report.to_dict(), "eval_csv": args.eval_csv})


def cmd_verify(args):
    _need_file(args.eval_csv, "eval CSV")
    recs = [r for r in evalkit.read_records_csv(args.eval_csv) if r.task == args.task]
    if not recs:
        raise UsageError(f"{args.eval_csv}: no {args.task} records")
    tol = evalkit.ToleranceConfig(tau=args.tau, cond_h_threshold=args.cond_h,
                                  cond_m_threshold=args.cond_m)
    _dump({"command": "verify", "eval_csv": args.eval_csv, "tol": tol.to_dict(),
           "report": evalkit.verifier_report(recs, tol).to_dict()})


def cmd_grid(args):
    spec = oodlab.GridSpec.from_dict(_read_json(args.config))
    _need_parent(args.report)
    report = oodlab.run_grid(spec, workers=args.workers)
    manifest = oodlab.write_report(report, args.report)
    print(oodlab.emit_table(report, "markdown"), end="")
    _dump({"command": "grid", "config": args.config, "report": args.report, "manifest": manifest,
           "errors": report.errors})


def cmd_curve(args):
    cfg = dict(_read_json(args.config))
    try:
        task, kind, n = cfg.pop("task"), cfg.pop("kind"), cfg.pop("n")
        max_samples = cfg.pop("max_samples")
    except KeyError as exc:
        raise UsageError(f"{args.config}: missing key {exc}") from exc
    eval_kind = cfg.pop("eval_kind", kind)
    tcfg = TrainConfig.from_dict(cfg.pop("train", {}))
    tol = evalkit.ToleranceConfig.from_dict(cfg.pop("tol", {}))
    res = oodlab.learning_curve(task, kind, cfg.pop("model", {}), tcfg, args.target, eval_kind, n,
                                max_samples, tol=tol, **cfg)
    _dump({"command": "curve", "config": args.config, "target": args.target, **res.to_dict()})


# -- parser ------------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--enc-layers", type=int, default=2)
    p.add_argument("--dec-layers", type=int, default=1)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float32")
    p.add_argument("--lr", type=float, default=1e-3, help="peak learning rate")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--cosine-period", type=int, default=10_000_000)


def build_parser():
    ap = argparse.ArgumentParser(prog="eigenlab", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")
    schemes = ("P1000", "FP15")

    p = sub.add_parser("gen", help="generate a dataset directory")
    p.add_argument("--task", required=True, choices=codec.TASKS)
    p.add_argument("--kind", required=True, choices=ensembles.KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sigma", type=float, default=ensembles.DEFAULT_SIGMA)
    p.add_argument("--in-scheme", choices=schemes, default="P1000")
    p.add_argument("--out-scheme", choices=schemes, default="P1000")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("stats", help="condition-number quantiles or positive fraction")
    p.add_argument("--kind", required=True, choices=ensembles.KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sigma", type=float, default=ensembles.DEFAULT_SIGMA)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--cond", action="store_true", help="condition-number quantiles (default)")
    g.add_argument("--positive-fraction", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("encode", help="encode a matrix (and optionally its solution)")
    p.add_argument("--matrix", required=True, help='rows separated by ";", e.g. "1,0;0,1"')
    p.add_argument("--scheme", choices=schemes, default="P1000")
    p.add_argument("--out-scheme", choices=schemes)
    p.add_argument("--task", choices=codec.TASKS)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode one data line (argument or stdin)")
    p.add_argument("line", nargs="?")
    p.add_argument("--scheme", choices=schemes, help="input scheme (inferred by default)")
    p.add_argument("--out-scheme", choices=schemes, help="target scheme (inferred by default)")
    p.add_argument("--task", choices=codec.TASKS, help="inferred from the target length by default")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", metavar="PATH", help="dataset directory (cycled in file order)")
    p.add_argument("--task", choices=codec.TASKS, help="stream examples instead of --data")
    p.add_argument("--kind", choices=ensembles.KINDS)
    p.add_argument("--n", type=int)
    p.add_argument("--in-scheme", choices=schemes, default="P1000")
    p.add_argument("--out-scheme", choices=schemes, default="P1000")
    p.add_argument("--seed", type=int, required=True, help="model init and stream seed")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--max-steps", type=int, required=True)
    p.add_argument("--log", metavar="PATH", help="CSV training log")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--data", required=True, metavar="PATH")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--eval-csv", metavar="PATH", help="write per-example records")
    p.add_argument("--limit", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="verifier statistics from an eval CSV")
    p.add_argument("--eval-csv", required=True, metavar="PATH")
    p.add_argument("--task", required=True, choices=codec.TASKS)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--cond-h", type=float, default=evalkit.DEFAULT_TOL.cond_h_threshold)
    p.add_argument("--cond-m", type=float, default=evalkit.DEFAULT_TOL.cond_m_threshold)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("grid", help="run a train/test ensemble grid")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--report", required=True, metavar="PATH", help=".md for markdown, else CSV")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("curve", help="examples needed to reach a target accuracy")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--target", type=float, required=True, help="accuracy in [0, 1]")
    p.set_defaults(func=cmd_curve)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except EigenlabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ValueError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

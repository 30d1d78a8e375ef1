"""Command line interface.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import io
from . import parampool as pp
from .analysis import otd, pairwise_otd, weight_histogram
from .config import ConfigError, load_config
from .data import Dataset, load_dataset, permute_pixels, train_val_split
from .nn import NumericalError, ParamKind, arch_spec, init_params
from .pipeline import hide, write_outputs
from .postprocess import finetune_last_k, prune_weights
from .stealing import NoiseSpec, StealTarget, build_memorization_task, mse_sample, reconstruct, ssim, \
    synthetic_targets, to_pgm
from .trainer import RunLog, evaluate, task_stream_seed, train_model

EXIT_DATA = 3
EXIT_NUMERIC = 4


def _dataset(args):
    """Evaluation/fine-tuning data from tensor files or a (permuted) dataset split."""
    if getattr(args, "inputs", None):
        X, _ = io.load_tensor(args.inputs)
        if not args.labels:
            raise ConfigError("--inputs needs --labels")
        y, _ = io.load_tensor(args.labels)
        return Dataset(X, y[:, 0].astype(np.int64) if y.shape[1] == 1 else y)
    base = load_dataset(args.data, args.n_samples, args.data_seed)
    base = permute_pixels(base, args.perm_seed)
    if args.split == "all":
        return base
    train, val = train_val_split(base, args.val_fraction, args.data_seed)
    return train if args.split == "train" else val


def cmd_train_hide(args):
    cfg = load_config(args.config)
    outdir = args.output or cfg.output
    result = hide(cfg)
    write_outputs(result, outdir)
    for rec in result.runlog.records:
        if rec["epoch"] == result.runlog.records[-1]["epoch"]:
            print(f"{rec['task_id']}\tloss {rec['loss']:.6f}\tmetric {rec['metric']:.6f}")
    print(f"termination: {result.runlog.termination}")
    print(f"wrote {outdir}")


def cmd_decode(args):
    carrier = io.load_model(args.carrier)
    key = io.load_key(args.key)
    pool = pp.decode(carrier, key, args.fusion)
    if pool.uncovered:
        print("warning: some pool slots were not covered by any carrier copy", file=sys.stderr)
    io.save_pool(args.output, pool)
    print(f"decoded pool sizes {pool.sizes} -> {args.output}")


def cmd_assemble(args):
    pool = io.load_pool(args.pool)
    key = io.load_key(args.key)
    model = pp.assemble(pool, key)
    io.save_model(args.output, model)
    print(f"assembled {key.arch_id} -> {args.output}")


def cmd_make_targets(args):
    target = synthetic_targets(args.count, args.side, args.seed)
    io.save_tensor(args.output, target.values, target.shape)
    if args.pgm_dir:
        _export_pgm(target.values, target.shape, args.pgm_dir, "target")
    print(f"{args.count} targets of shape {target.shape} -> {args.output}")


def cmd_steal(args):
    values, shape = io.load_tensor(args.targets)
    target = StealTarget(values, shape)
    spec = arch_spec(args.arch)
    noise = NoiseSpec(args.noise_kind, spec.input_dim, len(values), args.noise_seed)
    key = pp.SecretKey(0, spec.arch_id, tuple(spec.counts().values()), noise_seed=args.noise_seed)
    task = build_memorization_task(target, noise, spec, key, optimizer={"kind": "adam", "lr": args.lr})
    model = train_model(init_params(spec, args.seed), task.train, task.optimizer, args.steps,
                        len(values), task_stream_seed(args.seed, 0))
    io.save_model(args.output, model)
    print(f"generator loss {evaluate(model, task.train, 'mse'):.6g} (norm-over-dim MSE) -> {args.output}")


def cmd_reconstruct(args):
    model = io.load_model(args.model)
    noise_seed = args.noise_seed
    if noise_seed is None and args.key:
        noise_seed = io.load_key(args.key).noise_seed
    if noise_seed is None:
        raise ConfigError("need --noise-seed or a key with a noise seed")
    noise = NoiseSpec(args.noise_kind, model.spec.input_dim, args.count, noise_seed)
    rec = reconstruct(model, noise)
    shape = None
    if args.targets:
        values, shape = io.load_tensor(args.targets)
        if values.shape != rec.shape:
            raise ConfigError(f"targets {values.shape} do not match reconstructions {rec.shape}")
        mses = [mse_sample(a, b) for a, b in zip(rec, values)]
        ssims = [ssim(a, b) for a, b in zip(rec, values)]
        print(f"MSE {np.mean(mses):.6f}")
        print(f"SSIM {np.mean(ssims):.6f}")
    if args.output:
        io.save_tensor(args.output, rec, shape)
    if args.pgm_dir:
        if shape is None:
            side = int(round(np.sqrt(rec.shape[1])))
            shape = (side, rec.shape[1] // side)
        _export_pgm(rec, shape, args.pgm_dir, "recon")


def _export_pgm(values, shape, directory, stem):
    os.makedirs(directory, exist_ok=True)
    for i, row in enumerate(values):
        with open(os.path.join(directory, f"{stem}-{i:04d}.pgm"), "wb") as fh:
            fh.write(to_pgm(row, shape))


def cmd_eval(args):
    model = io.load_model(args.model)
    ds = _dataset(args)
    value = evaluate(model, ds, args.metric)
    print(f"{args.metric.upper()} {value:.6f}")


def cmd_prune(args):
    model = io.load_model(args.model)
    io.save_model(args.output, prune_weights(model, args.beta))
    print(f"pruned beta={args.beta} -> {args.output}")


def cmd_finetune(args):
    model = io.load_model(args.model)
    ds = _dataset(args)
    tuned = finetune_last_k(model, ds, args.k, args.steps, {"kind": args.optimizer, "lr": args.lr},
                            args.batch_size, args.seed)
    io.save_model(args.output, tuned)
    print(f"fine-tuned last {args.k} layers for {args.steps} steps -> {args.output}")


def cmd_otd(args):
    models = [io.load_model(p) for p in args.models]
    kind = ParamKind(args.kind)
    if len(models) == 1:
        models = models * 2
    if len(models) == 2:
        h1 = weight_histogram(models[0].params[kind], args.bins)
        h2 = weight_histogram(models[1].params[kind], args.bins)
        print(f"{otd(h1, h2):.9g}")
        return
    mat = pairwise_otd(models, args.bins, kind)
    for row in mat:
        print("\t".join(f"{x:.9g}" for x in row))


def cmd_hist(args):
    model = io.load_model(args.model)
    h = weight_histogram(model.params[ParamKind(args.kind)], args.bins)
    print("center\tmass")
    for c, m in zip(h.centers, h.masses):
        print(f"{c:.6f}\t{m:.9g}")
    if h.clamped:
        print(f"# {h.clamped} values clamped into edge bins", file=sys.stderr)


def cmd_report(args):
    with open(args.runlog, encoding="utf-8") as fh:
        runlog = RunLog.from_jsonl(fh.read())
    print("epoch\ttask\tloss\tmetric")
    for r in runlog.records:
        print(f"{r['epoch']}\t{r['task_id']}\t{r['loss']:.6f}\t{r['metric']:.6f}")
    print(f"# termination: {runlog.termination}")


def _add_data_args(p):
    p.add_argument("--data", default="synthetic", help="MNIST IDX directory or 'synthetic'")
    p.add_argument("--n-samples", type=int, default=10000)
    p.add_argument("--data-seed", type=int, default=0, help="dataset and split seed ([run] seed)")
    p.add_argument("--perm-seed", type=int, default=None)
    p.add_argument("--split", choices=["train", "val", "all"], default="val")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--inputs", help="tensor file of inputs (overrides --data)")
    p.add_argument("--labels", help="tensor file of labels, one column")


def build_parser():
    parser = argparse.ArgumentParser(prog="poolhide", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-hide", help="jointly train carrier and secret tasks")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="output directory (overrides [run] output)")
    p.set_defaults(func=cmd_train_hide)

    p = sub.add_parser("decode", help="recover the pool from a carrier")
    p.add_argument("carrier")
    p.add_argument("key", help="the carrier's key file")
    p.add_argument("--fusion", choices=pp.FUSIONS, default="first-nonzero")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("assemble", help="rebuild a secret model from a pool and its key")
    p.add_argument("pool")
    p.add_argument("key")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("make-targets", help="write seeded synthetic grayscale targets")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--side", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pgm-dir")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_make_targets)

    p = sub.add_parser("steal", help="train a standalone noise-to-target generator")
    p.add_argument("targets")
    p.add_argument("--arch", default="gen-16-128-64")
    p.add_argument("--noise-seed", type=int, required=True)
    p.add_argument("--noise-kind", choices=["gaussian", "uniform"], default="gaussian")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_steal)

    p = sub.add_parser("reconstruct", help="regenerate memorised inputs from a generator")
    p.add_argument("model")
    p.add_argument("--key", help="key file carrying the noise seed")
    p.add_argument("--noise-seed", type=int)
    p.add_argument("--noise-kind", choices=["gaussian", "uniform"], default="gaussian")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--targets", help="ground-truth tensor file; prints MSE and SSIM")
    p.add_argument("--pgm-dir")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="evaluate a model")
    p.add_argument("model")
    p.add_argument("--metric", choices=["acc", "mse"], default="acc")
    _add_data_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prune", help="layer-wise magnitude pruning of weights")
    p.add_argument("model")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("finetune", help="fine-tune only the last K layers")
    p.add_argument("model")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--optimizer", choices=["sgd", "adam"], default="sgd")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    _add_data_args(p)
    p.set_defaults(func=cmd_finetune, split="train")

    p = sub.add_parser("otd", help="optimal transportation distance between weight histograms")
    p.add_argument("models", nargs="+")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--kind", choices=[k.value for k in ParamKind], default="weight")
    p.set_defaults(func=cmd_otd)

    p = sub.add_parser("hist", help="print a model's weight histogram")
    p.add_argument("model")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--kind", choices=[k.value for k in ParamKind], default="weight")
    p.set_defaults(func=cmd_hist)

    p = sub.add_parser("report", help="tabulate a run log")
    p.add_argument("runlog")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())

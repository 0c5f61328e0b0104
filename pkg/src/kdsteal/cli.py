"""Command line interface.

Every step reads and writes files: datasets are ``.npz`` pairs, models are
checkpoints, a chain is a directory of ``s1.ckpt .. sk.ckpt``. Each command
prints one JSON object on stdout. Exit codes: 0 ok, 2 configuration error,
3 data or file format error, 4 numeric failure.
"""

import argparse
import json
import logging
from pathlib import Path
import sys

from . import __version__, kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, config_from_dict, config_schema, load_config
from .data import SyntheticSpec, gen_dataset, load_dataset_pair, load_idx, save_dataset_pair, subset_data
from .distill import (ChainSpec, HtcConfig, KdConfig, NastyConfig, TrainBudget, attack_htc,
                      attack_scm, build_scm_chain, defend_scm, train_kd, train_nasty, train_vanilla)
from .errors import ConfigError, KdStealError
from .metrics import accuracy, kl_to_reference, peak_profile
from .pipeline import config_from_report, emit_report, load_report, report_json, run_pipeline

log = logging.getLogger("kdsteal")


def _dims(text):
    try:
        dims = [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must be comma-separated integers, got {text!r}")
    if len(dims) < 2 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"need at least two positive dims, got {text!r}")
    return dims


def _add_budget(p, epochs=30, lr=3e-3):
    g = p.add_argument_group("training budget")
    g.add_argument("--epochs", type=int, default=epochs)
    g.add_argument("--batch-size", type=int, default=128)
    g.add_argument("--optimizer", choices=("adam", "sgd_momentum"), default="adam")
    g.add_argument("--lr", type=float, default=lr)
    g.add_argument("--momentum", type=float, default=0.9)
    g.add_argument("--weight-decay", type=float, default=0.0)


def _add_student(p, dims="16,16,10"):
    p.add_argument("--data", required=True, help="dataset .npz from gen-data")
    p.add_argument("--dims", type=_dims, default=_dims(dims))
    p.add_argument("--activation", choices=("relu", "tanh"), default="relu")
    p.add_argument("--out", required=True, help="checkpoint to write")
    _add_budget(p)


def _budget(args, **extra):
    return TrainBudget(epochs=args.epochs, batch_size=args.batch_size, optimizer=args.optimizer,
                       learning_rate=args.lr, momentum=args.momentum,
                       weight_decay=args.weight_decay, seed=args.seed, **extra)


def _finish(args, model, test, extra=None):
    score = accuracy(model, test)
    meta = {"command": args.command, "seed": args.seed, "test_accuracy": score.value, **(extra or {})}
    save_checkpoint(model, args.out, meta=meta)
    return {"out": str(args.out), "test_accuracy": score.value, "correct": score.correct,
            "total": score.total, **(extra or {})}


def cmd_gen_data(args):
    if args.idx_train or args.idx_test:
        if not (args.idx_train and args.idx_test):
            raise ConfigError("--idx-train and --idx-test go together")
        train = load_idx(*args.idx_train, n_classes=args.n_classes)
        test = load_idx(*args.idx_test, n_classes=train.n_classes)
    else:
        spec = PipelineConfig().dataset
        if args.config:
            spec = load_config(args.config).dataset
        overrides = {k: getattr(args, k) for k in ("generator", "n_classes", "dim", "train_per_class",
                                                  "test_per_class", "separation", "noise", "modes")
                     if getattr(args, k) is not None}
        spec = SyntheticSpec(**{**spec.__dict__, **overrides, "seed": args.seed}).validate()
        train, test = gen_dataset(spec)
    save_dataset_pair(args.out, train, test)
    return {"out": str(args.out), "train": len(train), "test": len(test),
            "dim": train.dim, "n_classes": train.n_classes}


def cmd_train(args):
    train, test = load_dataset_pair(args.data)
    model = train_vanilla(args.dims, train, _budget(args), eval_data=test, activation=args.activation)
    return _finish(args, model, test)


def cmd_kd(args):
    train, test = load_dataset_pair(args.data)
    cfg = KdConfig(alpha=args.alpha, tau=args.tau, lam=args.lam)
    teacher = load_checkpoint(args.teacher)
    model = train_kd(args.dims, teacher, train, cfg, _budget(args), eval_data=test,
                     activation=args.activation)
    return _finish(args, model, test)


def cmd_nasty(args):
    train, test = load_dataset_pair(args.data)
    cfg = NastyConfig(omega=args.omega, tau_a=args.tau_a, reverse_kl=args.reverse_kl)
    reference = load_checkpoint(args.reference)
    dims = args.dims or list(reference.layer_dims)
    model = train_nasty(dims, reference, train, cfg, _budget(args, early_stop_acc=args.early_stop_acc),
                        eval_data=test, activation=args.activation, init=args.init)
    return _finish(args, model, test)


def _load_chain(directory):
    directory = Path(directory)
    paths = sorted(directory.glob("s*.ckpt"), key=lambda p: int(p.stem[1:]) if p.stem[1:].isdigit() else -1)
    paths = [p for p in paths if p.stem[1:].isdigit()]
    if not paths:
        raise ConfigError(f"{directory}: no chain checkpoints s1.ckpt..sk.ckpt")
    return [load_checkpoint(p) for p in paths]


def cmd_chain(args):
    train, test = load_dataset_pair(args.data)
    nasty = load_checkpoint(args.nasty)
    spec = ChainSpec(k=args.k, steps=[NastyConfig(omega=args.omega, tau_a=args.tau_a)])
    chain = build_scm_chain(nasty, spec, train, _budget(args), eval_data=test)
    out = Path(args.out)
    accs = []
    for i, member in enumerate(chain, start=1):
        acc = accuracy(member, test).value
        accs.append(acc)
        save_checkpoint(member, out / f"s{i}.ckpt", meta={"command": "chain", "index": i,
                                                          "seed": args.seed, "test_accuracy": acc})
    return {"out": str(out), "k": len(chain), "test_accuracy": accs}


def cmd_attack(args):
    train, test = load_dataset_pair(args.data)
    if args.data_fraction is not None:
        train = subset_data(train, args.data_fraction, args.seed)
    alpha = 1.0 if args.no_label else args.alpha
    cfg = HtcConfig(alpha=alpha, tau=args.tau, m=args.m)
    budget = _budget(args)
    if args.method == "htc":
        if not args.teacher:
            raise ConfigError("htc needs --teacher")
        model = attack_htc(args.dims, load_checkpoint(args.teacher), train, cfg, budget,
                           eval_data=test, activation=args.activation)
    else:
        if not args.chain:
            raise ConfigError("scm needs --chain")
        chain = _load_chain(args.chain)
        if args.k is not None:
            chain = chain[:args.k]
        model = attack_scm(args.dims, chain, train, cfg, budget, eval_data=test,
                           activation=args.activation, space=args.space)
    return _finish(args, model, test, {"method": args.method, "alpha": alpha,
                                       "train_size": len(train)})


def cmd_defend(args):
    chain = _load_chain(args.chain)
    model = defend_scm(chain, args.index)
    save_checkpoint(model, args.out, meta={"command": "defend", "index": args.index})
    return {"out": str(args.out), "index": args.index, "chain_length": len(chain)}


def cmd_eval(args):
    _, test = load_dataset_pair(args.data)
    model = load_checkpoint(args.model)
    score = accuracy(model, test)
    out = {"model": str(args.model), "test_accuracy": score.value, "correct": score.correct,
           "total": score.total, "mean_peaks": peak_profile(model, test, args.rho).mean_peaks}
    if args.reference:
        out["kl_to_reference"] = kl_to_reference(model, load_checkpoint(args.reference), test, args.tau)
    return out


def cmd_pipeline(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seeds is not None:
        cfg.seeds = args.seeds
    elif args.seed is not None:
        cfg.seeds = [args.seed]
    cfg = config_from_dict(cfg.to_dict())
    report = run_pipeline(cfg, args.out)
    return {"out": str(args.out), "run_id": report.run_id, "backend": report.backend,
            "summary": report.summary, "wall_seconds": report.wall_seconds}


def cmd_report(args):
    report = load_report(args.report)
    if args.rerun:
        again = run_pipeline(config_from_report(report))
        same = report_json(again, timing=False) == report_json(report, timing=False)
        if args.out:
            emit_report(again, args.out, args.format)
        return {"rerun_identical": same, "run_id": again.run_id}
    if args.out:
        emit_report(report, args.out, args.format)
        return {"out": str(args.out), "format": args.format or "json"}
    return {"run_id": report.run_id, "seeds": report.seeds, "summary": report.summary}


def cmd_schema(args):
    return config_schema()


def build_parser():
    parser = argparse.ArgumentParser(prog="kdsteal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=fn)
        return p

    p = add("gen-data", cmd_gen_data, "generate a synthetic dataset or convert IDX files")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="take the dataset section of a pipeline config")
    p.add_argument("--generator", choices=("gaussian_blobs", "two_spirals"))
    for flag, tp in (("--n-classes", int), ("--dim", int), ("--train-per-class", int),
                     ("--test-per-class", int), ("--separation", float), ("--noise", float),
                     ("--modes", int)):
        p.add_argument(flag, type=tp)
    p.add_argument("--idx-train", nargs=2, metavar=("IMAGES", "LABELS"))
    p.add_argument("--idx-test", nargs=2, metavar=("IMAGES", "LABELS"))

    p = add("train", cmd_train, "vanilla cross-entropy training")
    _add_student(p, "16,128,128,10")

    p = add("kd", cmd_kd, "knowledge distillation from a teacher checkpoint")
    _add_student(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--tau", type=float, default=4.0)
    p.add_argument("--lam", type=float, help="soft-term weight (default tau^2)")

    p = add("nasty", cmd_nasty, "train a nasty teacher against a reference")
    _add_student(p)
    p.set_defaults(dims=None)
    p.add_argument("--reference", required=True)
    p.add_argument("--omega", type=float, default=0.05)
    p.add_argument("--tau-a", type=float, default=4.0)
    p.add_argument("--reverse-kl", action="store_true")
    p.add_argument("--init", choices=("scratch", "reference"), default="scratch")
    p.add_argument("--early-stop-acc", type=float)

    p = add("chain", cmd_chain, "build a contrastive chain S^1..S^k")
    p.add_argument("--data", required=True)
    p.add_argument("--nasty", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--omega", type=float, default=0.01)
    p.add_argument("--tau-a", type=float, default=4.0)
    p.add_argument("--out", required=True, help="directory for s1.ckpt..sk.ckpt")
    _add_budget(p)

    p = add("attack", cmd_attack, "steal from a nasty teacher (htc) or a chain (scm)")
    _add_student(p)
    p.add_argument("--method", choices=("htc", "scm"), required=True)
    p.add_argument("--teacher", help="victim checkpoint (htc)")
    p.add_argument("--chain", help="chain directory (scm)")
    p.add_argument("--k", type=int, help="use the first k chain members")
    p.add_argument("--space", choices=("logit", "prob"), default="logit")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=50.0)
    p.add_argument("--m", type=float, default=1.0)
    p.add_argument("--no-label", action="store_true", help="alpha=1, ground truth unused")
    p.add_argument("--data-fraction", type=float)

    p = add("defend", cmd_defend, "select S^index of a chain as the deployed teacher")
    p.add_argument("--chain", required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "accuracy, peaks and KL of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--reference")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=0.1)

    p = add("pipeline", cmd_pipeline, "run the full experiment")
    p.set_defaults(seed=None)
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, "convert a report or re-run it from its embedded config")
    p.add_argument("report")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--out")
    p.add_argument("--rerun", action="store_true")

    add("schema", cmd_schema, "print the config JSON schema")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend %s", kernels.BACKEND)
    try:
        result = args.func(args)
    except KdStealError as exc:
        print(f"kdsteal: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"kdsteal: numeric failure: {exc}", file=sys.stderr)
        return 4
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())

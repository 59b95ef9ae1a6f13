"""Command-line entry point: ``cmpcal {synth,train,eval,sweep-lambda,logit-report}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import math
import sys
from pathlib import Path

from . import datasets, trainer
from ._config import CLIP_TEMPERATURE, DEFAULT_BINS, CmpError
from .losses import BASES, VARIANTS, CmpConfig


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _int_at_least(lo):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {v}")
        return v
    return parse


_nonneg_int = _int_at_least(0)


def _float_in(lo, hi, lo_open=False, hi_open=False):
    def parse(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        ok = math.isfinite(v) or (hi == math.inf and v == math.inf and not hi_open)
        ok = ok and (v > lo if lo_open else v >= lo) and (v < hi if hi_open else v <= hi)
        if not ok:
            lb = "(" if lo_open else "["
            rb = ")" if hi_open else "]"
            raise argparse.ArgumentTypeError(f"must lie in {lb}{lo}, {hi}{rb}, got {text}")
        return v
    return parse


_positive = _float_in(0.0, math.inf, lo_open=True, hi_open=True)
_nonneg = _float_in(0.0, math.inf, hi_open=True)


def _grid(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be comma-separated numbers, got {text!r}") from None
    if not vals or any(not math.isfinite(v) or v < 0 for v in vals):
        raise argparse.ArgumentTypeError("grid values must be non-negative reals")
    return vals


def _pct(v):
    return f"{100.0 * v:.2f}"


def _metrics_line(acc, rep):
    return f"acc={_pct(acc)} ece={_pct(rep.ece)} ace={_pct(rep.ace)} mce={_pct(rep.mce)}"


def _report_format(path):
    return "csv" if Path(path).suffix.lower() == ".csv" else "json"


def _add_train_flags(p):
    p.add_argument("--data", required=True, help="training embeddings (CSV or CMPB binary)")
    p.add_argument("--eval-data", help="evaluation embeddings; default is a seeded 80/20 split")
    p.add_argument("--lambda", dest="lam", type=_nonneg, default=0.01,
                   help="penalty strength (default 0.01)")
    p.add_argument("--epsilon", type=_positive, default=1e-8, help="denominator guard (default 1e-8)")
    p.add_argument("--variant", choices=VARIANTS, default="ratio", help="penalty form (default ratio)")
    p.add_argument("--base", choices=BASES, default="cross_entropy",
                   help="base loss (default cross_entropy)")
    p.add_argument("--lr", type=_positive, default=0.05, help="learning rate (default 0.05)")
    p.add_argument("--momentum", type=_float_in(0.0, 1.0, hi_open=True), default=0.9,
                   help="momentum in [0, 1) (default 0.9)")
    p.add_argument("--epochs", type=_positive_int, default=50, help="epochs (default 50)")
    p.add_argument("--batch", type=_positive_int, default=32, help="batch size (default 32)")
    p.add_argument("--seed", type=_nonneg_int, default=0, help="seed for init, shuffles and splits")
    p.add_argument("--temperature", type=_positive, default=CLIP_TEMPERATURE,
                   help=f"softmax temperature (default {CLIP_TEMPERATURE})")
    p.add_argument("--learn-temperature", action="store_true", help="also update the temperature")
    p.add_argument("--head", dest="head_kind", choices=("cosine", "dot"), default="cosine",
                   help="scoring rule (default cosine)")
    p.add_argument("--bins", type=_positive_int, default=DEFAULT_BINS,
                   help=f"calibration bins (default {DEFAULT_BINS})")


def build_parser():
    parser = argparse.ArgumentParser(prog="cmpcal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic Gaussian-blob embedding dataset")
    p.add_argument("--classes", type=_int_at_least(2), default=4,
                   help="number of classes (default 4)")
    p.add_argument("--dim", type=_positive_int, default=16, help="embedding dimension (default 16)")
    p.add_argument("--per-class", type=_positive_int, default=250, help="samples per class (default 250)")
    p.add_argument("--separation", type=_positive, default=3.0,
                   help="radius of the sphere holding the class means (default 3.0)")
    p.add_argument("--noise-std", type=_nonneg, default=1.0, help="Gaussian noise std (default 1.0)")
    p.add_argument("--label-noise", type=_float_in(0.0, 1.0, hi_open=True), default=0.0,
                   help="fraction of labels flipped, in [0, 1) (default 0)")
    p.add_argument("--seed", type=_nonneg_int, default=0, help="generator seed (default 0)")
    p.add_argument("--out", required=True, help="output path")
    p.add_argument("--format", choices=("csv", "binary"), default="binary", help="file format (default binary)")
    p.add_argument("--eval-per-class", type=_positive_int,
                   help="also draw an evaluation set from the same class means")
    p.add_argument("--eval-out", help="path for the evaluation set (needs --eval-per-class)")

    p = sub.add_parser("train", help="train a prototype head with base + lambda * CMP")
    _add_train_flags(p)
    p.add_argument("--history-out", help="per-epoch history CSV")
    p.add_argument("--report-out", help="calibration report (.json or .csv)")
    p.add_argument("--head-out", help="trained head parameters (JSON)")

    p = sub.add_parser("eval", help="evaluate a saved head on a dataset")
    p.add_argument("--head", required=True, help="head JSON written by train --head-out")
    p.add_argument("--data", required=True, help="evaluation embeddings")
    p.add_argument("--bins", type=_positive_int, default=DEFAULT_BINS,
                   help=f"calibration bins (default {DEFAULT_BINS})")
    p.add_argument("--out", help="calibration report (.json or .csv)")

    p = sub.add_parser("sweep-lambda", help="line search over the penalty strength")
    _add_train_flags(p)
    p.add_argument("--grid", type=_grid, default=list(trainer.DEFAULT_LAMBDA_GRID),
                   help="comma-separated lambdas (default 0.001,0.01,0.05,0.1,0.5,0.95)")
    p.add_argument("--out", required=True, help="lambda table CSV")

    p = sub.add_parser("logit-report", help="calibration report for exported logits")
    p.add_argument("--logits", required=True, help="CSV with header label,l0,...")
    p.add_argument("--bins", type=_positive_int, default=DEFAULT_BINS,
                   help=f"calibration bins (default {DEFAULT_BINS})")
    p.add_argument("--out", required=True, help="calibration report (.json or .csv)")
    return parser


def _train_config(args):
    return trainer.TrainConfig(
        learning_rate=args.lr, momentum=args.momentum, epochs=args.epochs, batch_size=args.batch,
        seed=args.seed, cmp=CmpConfig(args.lam, args.epsilon, args.variant), base=args.base,
        learn_temperature=args.learn_temperature, temperature=args.temperature,
        use_cosine=args.head_kind == "cosine", normalize_embeddings=args.head_kind == "cosine")


def _train_eval_sets(args):
    data = datasets.load_embeddings(args.data)
    if args.eval_data:
        return data, datasets.load_embeddings(args.eval_data, num_classes=data.num_classes)
    return data.split(0.8, args.seed)


def cmd_synth(args):
    spec = datasets.SynthSpec(args.classes, args.dim, args.per_class, args.separation,
                              args.noise_std, args.label_noise, args.seed)
    if args.eval_per_class:
        ds, ev = datasets.synth_pair(spec, args.eval_per_class)
    else:
        ds, _ = datasets.synth_generate(spec)
    datasets.save_embeddings(ds, args.out, args.format)
    print(f"synth: n={len(ds)} c={spec.num_classes} d={spec.dim} eta={spec.label_noise:g}")
    if args.eval_per_class:
        datasets.save_embeddings(ev, args.eval_out, args.format)
        print(f"synth-eval: n={len(ev)} path={args.eval_out}")


def cmd_train(args):
    train_set, eval_set = _train_eval_sets(args)
    head, history = trainer.train(train_set, _train_config(args))
    acc, rep = trainer.evaluate(head, eval_set, args.bins)
    if args.history_out:
        datasets._atomic_write(args.history_out, history.to_csv())
    if args.report_out:
        datasets.save_report(rep, args.report_out, _report_format(args.report_out))
    if args.head_out:
        datasets._atomic_write(args.head_out, head.to_json())
    print(_metrics_line(acc, rep))


def cmd_eval(args):
    try:
        text = Path(args.head).read_text(encoding="utf-8")
    except OSError as exc:
        raise CmpError(f"cannot read {args.head}: {exc.strerror}") from exc
    head = trainer.HeadParams.from_json(text)
    data = datasets.load_embeddings(args.data, num_classes=head.num_classes)
    acc, rep = trainer.evaluate(head, data, args.bins)
    if args.out:
        datasets.save_report(rep, args.out, _report_format(args.out))
    print(_metrics_line(acc, rep))


def cmd_sweep_lambda(args):
    train_set, eval_set = _train_eval_sets(args)
    best, rows = trainer.lambda_line_search(train_set, eval_set, args.grid, _train_config(args),
                                            args.bins, trainer.threads_from_env())
    datasets._atomic_write(args.out, trainer.lambda_table_to_csv(rows))
    for r in rows:
        note = f" error={r.error}" if r.error else ""
        print(f"lambda={r.lam:g} ece={_pct(r.ece)} accuracy={_pct(r.accuracy)}{note}")
    print(f"best_lambda={best:g}")


def cmd_logit_report(args):
    data = datasets.load_logits(args.logits)
    acc, rep = trainer.evaluate_logits(data.logits, data.labels, args.bins)
    datasets.save_report(rep, args.out, _report_format(args.out))
    print(_metrics_line(acc, rep))


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-lambda": cmd_sweep_lambda,
    "logit-report": cmd_logit_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth" and bool(args.eval_per_class) != bool(args.eval_out):
        parser.error("--eval-per-class and --eval-out go together")
    try:
        COMMANDS[args.command](args)
    except (CmpError, OSError) as exc:
        print(f"cmpcal {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

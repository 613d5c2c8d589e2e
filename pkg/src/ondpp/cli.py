"""Command line experiment runner: ``ondpp {gen,infer,learn,eval}``.

Every CSV written carries a reproduction header (package version, seed and
the full configuration, with output paths dropped and input files replaced
by content digests) so that reruns with the same arguments produce
byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import NdppError, load_model, save_model
from .data import (
    INFERENCE_COLUMNS,
    LEARNING_COLUMNS,
    ColumnStream,
    MetricTrace,
    SyntheticSpec,
    generate_baskets,
    generate_synthetic_model,
    load_baskets,
    permute_stream,
    write_baskets,
    write_column_stream,
    write_trace,
)
from .inference import (
    ALGORITHMS,
    OFFLINE_ALGORITHMS,
    ConfigurationError,
    run_offline,
    run_online,
    stream_from_model,
)
from .learning import LearningConfig, OnlineLearner, log_likelihood_report

OUTPUT_KEYS = {"out", "trace", "func", "baskets_out", "stream_out"}
# Input files are identified by content, not location.
INPUT_KEYS = {"model", "stream", "baskets"}


class UsageError(Exception):
    pass


def _file_digest(path: str) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _meta(args: argparse.Namespace) -> dict[str, str]:
    config = {}
    for k, v in sorted(vars(args).items()):
        if k in OUTPUT_KEYS:
            continue
        config[k] = _file_digest(v) if k in INPUT_KEYS and v is not None else v
    return {
        "ondpp": __version__,
        "command": args.command,
        "seed": str(args.seed),
        "config": json.dumps(config, sort_keys=True, default=str),
    }


def run_gen(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(n=args.n, d=args.d, length=args.count, seed=args.seed,
                         mean_basket=args.mean_basket, max_basket=args.dmax,
                         adversarial=args.adversarial, scale=args.scale)
    model = generate_synthetic_model(spec)
    if args.out:
        save_model(model, args.out)
        print(f"model n={model.n} d={model.d} -> {args.out}")
    if args.stream_out:
        order = np.random.default_rng(args.seed).permutation(model.n) if args.permute else None
        write_column_stream(model, args.stream_out, order)
        print(f"column stream -> {args.stream_out}")
    if args.baskets_out:
        count = write_baskets(generate_baskets(spec, model), args.baskets_out)
        print(f"{count} baskets -> {args.baskets_out}")
    return 0


def run_infer(args: argparse.Namespace) -> int:
    if (args.model is None) == (args.stream is None):
        raise UsageError("infer needs exactly one of --model or --stream")
    if args.k < 1 or args.epsilon < 0:
        raise UsageError("--k must be >= 1 and --epsilon >= 0")
    if args.alg in OFFLINE_ALGORITHMS and args.model is None:
        raise UsageError(f"--alg {args.alg} needs the whole model (--model)")
    alpha = 1.0 + args.epsilon
    if args.alg in OFFLINE_ALGORITHMS:
        model = load_model(args.model)
        result = run_offline(args.alg, model, args.k)
    else:
        if args.model is not None:
            model = load_model(args.model)
            C, n = model.C, model.n
            points = stream_from_model(model)
        else:
            stream = ColumnStream(args.stream)
            C, n = stream.C, args.n
            points = iter(stream)
            if args.alg == "partition" and n is None:
                raise UsageError("--alg partition with --stream needs the declared length --n")
        if args.n is not None:
            n = args.n
        if args.permute:
            points = permute_stream(points, args.seed)
        result = run_online(args.alg, points, C, args.k, alpha=alpha, n=n, strategy=args.strategy)
    if args.out:
        trace = MetricTrace(INFERENCE_COLUMNS, meta=_meta(args))
        for row in result.trace:
            trace.append(row.step, row.algorithm, row.objective, row.det_evals, row.swaps)
        write_trace(trace, args.out)
    print(f"algorithm: {result.algorithm}")
    print(f"S = {result.S}")
    print(f"f(S) = {float(result.value)!r}")
    print(f"det_evals = {result.det_evals}")
    print(f"swaps = {result.swap_count}")
    return 0


def run_learn(args: argparse.Namespace) -> int:
    config = LearningConfig(d=args.d, eta=args.eta, reg_alpha=args.reg_alpha,
                            reg_beta=args.reg_beta, decay=args.decay, seed=args.seed)
    reader = load_baskets(args.baskets, n=args.n, dmax=args.dmax)
    baskets = permute_stream(reader, args.seed) if args.permute else reader
    learner = OnlineLearner(config, n=args.n)
    trace = MetricTrace(LEARNING_COLUMNS, meta=_meta(args))
    start = time.perf_counter()
    for basket in baskets:
        s = learner.step(basket)
        trace.append(s.step, s.basket_size, s.psi, s.skipped)
    elapsed = time.perf_counter() - start
    if learner.t == 0:
        print("warning: no baskets read; writing the initialized model", file=sys.stderr)
    save_model(learner.model, args.out)
    trace_path = args.trace or str(Path(args.out).with_suffix(".trace.csv"))
    write_trace(trace, trace_path)
    print(f"baskets: {learner.t} (skipped {learner.skipped}, dropped {reader.dropped})")
    print(f"wall time: {elapsed:.3f} s")
    print(f"model -> {args.out}; trace -> {trace_path}")
    return 0


def run_eval(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    baskets = list(load_baskets(args.baskets, n=model.n, dmax=args.dmax))
    report = log_likelihood_report(model, baskets, None, args.reg_alpha, args.reg_beta)
    plain = report.value + report.regularizer
    print(f"baskets: {report.baskets} (singular {report.singular})")
    print(f"regularized log-likelihood: {float(report.value)!r}")
    print(f"log-likelihood: {float(plain)!r}")
    print(f"mean NLL: {float(-plain)!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ondpp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic model, column stream and baskets")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--d", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--scale", type=float, default=1.0)
    gen.add_argument("--out", help="model JSON path")
    gen.add_argument("--stream", dest="stream_out", help="write the model's columns as a column CSV")
    gen.add_argument("--permute", action="store_true", help="shuffle the written column stream")
    gen.add_argument("--baskets", dest="baskets_out", help="write sampled baskets here")
    gen.add_argument("--count", type=int, default=1000, help="number of baskets to write")
    gen.add_argument("--mean-basket", type=float, default=3.0)
    gen.add_argument("--dmax", type=int)
    gen.add_argument("--adversarial", action="store_true")
    gen.set_defaults(func=run_gen)

    infer = sub.add_parser("infer", help="run MAP inference over a stream")
    infer.add_argument("--alg", choices=ALGORITHMS, default="lss")
    infer.add_argument("--k", type=int, default=8)
    infer.add_argument("--epsilon", type=float, default=0.1)
    infer.add_argument("--seed", type=int, default=0)
    infer.add_argument("--model")
    infer.add_argument("--stream")
    infer.add_argument("--n", type=int, help="declared stream length")
    infer.add_argument("--permute", action="store_true", help="randomly reorder the stream by --seed")
    infer.add_argument("--strategy", choices=("first", "best"), default="first")
    infer.add_argument("--out", help="trace CSV path")
    infer.set_defaults(func=run_infer)

    learn = sub.add_parser("learn", help="single-pass online learning from a basket file")
    learn.add_argument("--baskets", required=True)
    learn.add_argument("--d", type=int, required=True)
    learn.add_argument("--eta", type=float, default=1e-3)
    learn.add_argument("--reg-alpha", type=float, default=0.01)
    learn.add_argument("--reg-beta", type=float, default=0.01)
    learn.add_argument("--decay", action="store_true", help="use eta / sqrt(t)")
    learn.add_argument("--dmax", type=int)
    learn.add_argument("--n", type=int, help="fixed universe size (default: grow lazily)")
    learn.add_argument("--seed", type=int, default=0)
    learn.add_argument("--permute", action="store_true")
    learn.add_argument("--out", required=True, help="learned model JSON path")
    learn.add_argument("--trace", help="trace CSV path (default: <out>.trace.csv)")
    learn.set_defaults(func=run_learn)

    ev = sub.add_parser("eval", help="regularized log-likelihood of a model on baskets")
    ev.add_argument("--model", required=True)
    ev.add_argument("--baskets", required=True)
    ev.add_argument("--reg-alpha", type=float, default=0.01)
    ev.add_argument("--reg-beta", type=float, default=0.01)
    ev.add_argument("--dmax", type=int)
    ev.add_argument("--seed", type=int, default=0)
    ev.set_defaults(func=run_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (NdppError, ValueError, IndexError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

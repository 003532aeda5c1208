"""Command-line entry point.

A failed validation exits with 1.  Usage errors, including unreadable input
files and refused requests, exit with 2.
Commands that write files also write a run manifest next to the output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .builders import ConvNetSpec, build_baseline_spn, build_conv_spqn, build_trianglefree_spqn
from .datasets import (MAX_ORACLE_VARS, DatasetFormatError, all_assignments, enumerate_distribution,
                       flatten_images, generate_path_dataset, read_dataset, write_dataset)
from .evaluate import EvaluationError, StarPatternError, evaluate_batch
from .graph import StructuralError, format_evidence
from .modelfile import ModelFormatError, load_model, save_model
from .rng import ALGORITHM
from .sampling import SamplingError, sample_batch
from .train import TrainConfig, ZeroProbabilitySample, train
from .validate import (ValidationReport, check_conditional_dnc, check_dnc, check_root_unconditional,
                       check_soundness_bruteforce, check_valid_cmo, infer_cmo_annotations)

# numpy generators drive everything except the sampler
INIT_RNG = "numpy-pcg64"
PROFILES = ("dnc-spn", "valid-cmo", "soundness-bruteforce", "all")


class UsageError(Exception):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _default_seed() -> int:
    raw = os.environ.get("SPQN_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SPQN_SEED must be an integer, got {raw!r}") from None


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(args, argv, inputs, outputs, seeds, started, rng=ALGORITHM):
    out = Path(args.manifest) if args.manifest else Path(str(outputs[0]) + ".manifest.json")
    manifest = {
        "command": ["spqn", *argv],
        "seeds": seeds,
        "rng_algorithm": rng,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "wall_clock_seconds": time.perf_counter() - started,
        "threads": args.threads,
        "version": __version__,
    }
    out.write_text(json.dumps(manifest, indent=2) + "\n")


def _load(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise UsageError(f"cannot read model {path}: {exc.strerror}") from None


def _read(path):
    try:
        return read_dataset(path)
    except OSError as exc:
        raise UsageError(f"cannot read dataset {path}: {exc.strerror}") from None


# subcommands -----------------------------------------------------------------

def cmd_build(args, argv, started):
    seed = args.seed if args.seed is not None else _default_seed()
    inputs = []
    if args.arch in ("conv", "baseline"):
        if args.spec is None:
            raise UsageError(f"--arch {args.arch} requires --spec")
        try:
            spec = ConvNetSpec.load(args.spec)
        except OSError as exc:
            raise UsageError(f"cannot read spec {args.spec}: {exc.strerror}") from None
        builder = build_conv_spqn if args.arch == "conv" else build_baseline_spn
        net, params, _ = builder(spec, seed)
        inputs.append(args.spec)
    else:
        if args.M is None:
            raise UsageError("--arch trianglefree requires --M")
        net, params = build_trianglefree_spqn(args.M)
    save_model(args.out, net, params)
    kinds = net.count_kinds()
    print(f"nodes={len(net)} params={net.num_params} " + " ".join(f"{k}={v}" for k, v in kinds.items()))
    _write_manifest(args, argv, inputs, [args.out], {"init": seed}, started, INIT_RNG)
    return 0


def _profile_report(net, params, profile) -> ValidationReport:
    report = ValidationReport()
    if profile == "dnc-spn":
        return report.extend(check_dnc(net))
    if profile == "valid-cmo":
        report.extend(check_conditional_dnc(net))
        report.extend(check_root_unconditional(net))
        return report.extend(check_valid_cmo(net, None, infer_cmo_annotations(net)))
    if profile == "soundness-bruteforce":
        if net.num_vars > MAX_ORACLE_VARS:
            raise UsageError(f"brute-force soundness is limited to {MAX_ORACLE_VARS} variables")
        report.extend(check_conditional_dnc(net))
        return report.extend(check_soundness_bruteforce(net, None, params))
    # all: the structural profile that fits the network, plus enumeration when feasible
    if not net.quotients:
        report.extend(check_dnc(net))
    else:
        report.extend(check_conditional_dnc(net))
        report.extend(check_root_unconditional(net))
    if net.num_vars <= MAX_ORACLE_VARS and report.passed:
        report.extend(check_soundness_bruteforce(net, None, params))
    return report


def cmd_validate(args, argv, started):
    try:
        net, params = _load(args.model)
    except ModelFormatError as exc:
        # a model that cannot even be assembled fails validation
        node = getattr(exc.__cause__, "node", None)
        print(f"structure\tnode={node if node is not None else -1}\t{exc}")
        print("FAIL")
        return 1
    report = _profile_report(net, params, args.profile)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def cmd_eval(args, argv, started):
    net, params = _load(args.model)
    x = _read(args.data)
    if x.shape[1] != net.num_vars:
        raise UsageError(f"dataset has {x.shape[1]} variables, model has {net.num_vars}")
    ll = evaluate_batch(net, params, x, unsafe=args.unsafe)
    for i, v in enumerate(ll):
        print(f"{i}\t{_fmt(v)}")
    mean = float(ll.mean()) if len(ll) else float("nan")
    print(f"mean={_fmt(mean)}")
    return 0


def cmd_sample(args, argv, started):
    net, params = _load(args.model)
    seed = args.seed if args.seed is not None else _default_seed()
    partial, inputs = None, [args.model]
    if args.condition:
        cond = _read(args.condition)
        if cond.shape != (1, net.num_vars):
            raise UsageError(f"condition file must hold exactly one line of {net.num_vars} characters")
        partial = cond[0]
        inputs.append(args.condition)
    try:
        x = sample_batch(net, params, partial=partial, count=args.count, rng_seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        write_dataset(args.out, x)
        _write_manifest(args, argv, inputs, [args.out], {"sample": seed}, started)
    else:
        sys.stdout.write(f"SPQN-DATA 1 N={net.num_vars}\n")
        sys.stdout.write("".join(format_evidence(r) + "\n" for r in x))
    return 0


def cmd_train(args, argv, started):
    net, params = _load(args.model)
    seed = args.seed if args.seed is not None else _default_seed()
    xtr, xva = _read(args.data), _read(args.valid)
    for name, x in (("training", xtr), ("validation", xva)):
        if x.shape[1] != net.num_vars:
            raise UsageError(f"{name} set has {x.shape[1]} variables, model has {net.num_vars}")
    try:
        config = TrainConfig(learning_rate=args.lr, beta1=args.beta1, beta2=args.beta2,
                             batch_size=args.batch, epochs=args.epochs, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    def report(rec):
        print(f"epoch={rec.epoch} train_ll={_fmt(rec.train_ll)} valid_ll={_fmt(rec.valid_ll)}", flush=True)

    result = train(net, params, xtr, xva, config, callback=report)
    save_model(args.out, net, result.params)
    _write_manifest(args, argv, [args.model, args.data, args.valid], [args.out], {"shuffle": seed}, started, INIT_RNG)
    return 0


def cmd_gen_dataset(args, argv, started):
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        images = generate_path_dataset(args.width, args.height, args.count, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_dataset(args.out, flatten_images(images))
    _write_manifest(args, argv, [], [args.out], {"dataset": seed}, started, INIT_RNG)
    return 0


def cmd_enumerate(args, argv, started):
    net, params = _load(args.model)
    if net.num_vars > MAX_ORACLE_VARS:
        raise UsageError(f"enumeration is limited to {MAX_ORACLE_VARS} variables, model has {net.num_vars}")
    dist = enumerate_distribution(net, params)
    for x, p in zip(all_assignments(net.num_vars), dist.table):
        print(f"{format_evidence(x)}\t{_fmt(p)}")
    print(f"total={_fmt(dist.total())}")
    return 0


# argument parsing ------------------------------------------------------------

def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _count(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive, default=1,
                        help="worker threads (the implementation is single-threaded; 1 is fully deterministic)")
    common.add_argument("--manifest", help="where to write the run manifest (default: <out>.manifest.json)")

    parser = argparse.ArgumentParser(prog="spqn", description="Sum-product-quotient networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("build", parents=[common], help="construct a network and write a model file")
    p.add_argument("--arch", choices=("conv", "baseline", "trianglefree"), required=True)
    p.add_argument("--spec", help="ConvNetSpec JSON file (conv, baseline)")
    p.add_argument("--M", type=_positive, help="number of graph vertices (trianglefree)")
    p.add_argument("--seed", type=int, help="seed for the initial logits (default: $SPQN_SEED or 0)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("validate", parents=[common], help="check structural and soundness conditions")
    p.add_argument("--model", required=True)
    p.add_argument("--profile", choices=PROFILES, default="all")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", parents=[common], help="log-likelihood of every line of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--unsafe", action="store_true",
                   help="evaluate Star patterns the network cannot marginalize exactly")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", parents=[common], help="draw samples")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=_count, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--condition", help="dataset file with one partial assignment")
    p.add_argument("--out", help="write a dataset file instead of printing")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", parents=[common], help="maximum-likelihood training with Adam")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--out", required=True)
    defaults = TrainConfig()
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--beta1", type=float, default=defaults.beta1)
    p.add_argument("--beta2", type=float, default=defaults.beta2)
    p.add_argument("--batch", type=_positive, default=defaults.batch_size)
    p.add_argument("--epochs", type=_count, default=defaults.epochs)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gen-dataset", parents=[common], help="generate the synthetic path dataset")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--count", type=_count, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("enumerate", parents=[common], help="print the probability of every assignment")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_enumerate)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.perf_counter()
    try:
        return args.func(args, argv, started)
    except (UsageError, ModelFormatError, DatasetFormatError, StarPatternError, StructuralError,
            EvaluationError, SamplingError, ZeroProbabilitySample, FloatingPointError) as exc:
        print(f"spqn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing

from ridgesparse.config import FAMILIES, ConfigLoader, ExperimentConfig, resolve_threads
from ridgesparse.diagnostics import Diagnostics
from ridgesparse.events import JsonLinesLog
from ridgesparse.instances import InstanceFactory, measure_class
from ridgesparse.rates import fit_rates, run_rates
from ridgesparse.reluk import DiscreteMeasure, ReluKernel, SignedNetwork
from ridgesparse.reporting import RateCsv, make_json_safe, write_json
from ridgesparse.sparsify import Sparsifier
from ridgesparse.zonoid import AbsKernel, SphericalMeasure, Zonoid

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_EXHAUSTED = 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Experiment config JSON.")
    common.add_argument("--seed", type=int, default=0, help="Base seed (default: 0).")
    common.add_argument("--out", help="Output path; JSON goes to stdout when omitted.")
    common.add_argument("--threads", type=int, default=None, help="Worker threads (overrides THREADS and config).")
    common.add_argument("--quiet", action="store_true", help="Only log warnings and errors.")

    parser = argparse.ArgumentParser(prog="ridgesparse",
                                     description="Sparsification of ReLU^k and zonoid generating measures.")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", parents=[common], help="Emit a random instance as measure JSON.")
    gen.add_argument("--family", choices=FAMILIES)
    gen.add_argument("--d", type=int)
    gen.add_argument("--N", type=int)

    sparsify = commands.add_parser("sparsify", parents=[common], help="Compress a measure to n atoms.")
    sparsify.add_argument("--in", dest="input", required=True, help="Measure JSON.")
    sparsify.add_argument("--n", type=int, required=True)
    sparsify.add_argument("--k", type=int, help="Activation order (default: from config).")
    sparsify.add_argument("--report", help="Step report JSON.")
    sparsify.add_argument("--log", help="JSON-lines run log.")

    compress = commands.add_parser("compress", parents=[common], help="Compress a signed network to n neurons.")
    compress.add_argument("--in", dest="input", required=True, help="Network JSON.")
    compress.add_argument("--n", type=int, required=True)
    compress.add_argument("--k", type=int)
    compress.add_argument("--log", help="JSON-lines run log.")

    zonoid = commands.add_parser("zonoid", parents=[common], help="Approximate a zonoid by a zonotope.")
    zonoid.add_argument("--in", dest="input", help="Spherical measure JSON (default: generated from config).")
    zonoid.add_argument("--n", type=int, required=True)
    zonoid.add_argument("--report", help="Deviation report JSON.")
    zonoid.add_argument("--log", help="JSON-lines run log.")

    rates = commands.add_parser("rates", parents=[common], help="Run a ladder study and write the rate CSV.")
    rates.add_argument("--fit", help="Write fitted slopes as JSON.")
    rates.add_argument("--log", help="JSON-lines run log.")

    oracle = commands.add_parser("oracle", parents=[common], help="Compare the coloring search with brute force.")
    oracle.add_argument("--t", type=int, default=12)
    oracle.add_argument("--trials", type=int, default=50)
    oracle.add_argument("--d", type=int, default=2)
    oracle.add_argument("--k", type=int, default=1)
    oracle.add_argument("--single-row", action="store_true",
                        help="Use one-row Gaussian systems, where the 4x bound is guaranteed.")

    diag = commands.add_parser("diag", parents=[common], help="Net statistics and entropy budget of one step.")
    diag.add_argument("--in", dest="input", help="Measure JSON (default: generated from config).")
    diag.add_argument("--samples", type=int, default=2000)

    fit = commands.add_parser("fit", parents=[common], help="Fit slopes from a rate CSV.")
    fit.add_argument("--in", dest="input", required=True, help="Rate CSV.")

    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ConfigLoader.load_experiment(args.config) if args.config else ExperimentConfig()

    threads = resolve_threads(args.threads, config.reduction.threads)
    config.reduction = dataclasses.replace(config.reduction, threads=threads)

    k = getattr(args, "k", None)
    if k is not None and k != config.k:
        config = dataclasses.replace(config, k=k)

    return config.validate()


def emit(payload, out: typing.Optional[str]):
    if out:
        write_json(payload, out)
    else:
        json.dump(make_json_safe(payload), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def attach_log(sparsifier: Sparsifier, path: typing.Optional[str]):
    if path:
        sparsifier.listener_manager.add_listener(JsonLinesLog(path))


def exit_code(sparsifier: Sparsifier) -> int:
    exhausted = [r.step for r in sparsifier.reports if r.exhausted]
    if exhausted:
        logger.warning(f"Coloring budget exhausted in steps {exhausted}")
        return EXIT_EXHAUSTED

    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    config = load_config(args)
    family = args.family or config.instance_family
    d = args.d if args.d is not None else config.d
    n = args.N if args.N is not None else config.N

    measure = InstanceFactory.generate_instance(family, d, n, args.seed)
    emit(measure.to_records(), args.out)
    return EXIT_OK


def cmd_sparsify(args: argparse.Namespace) -> int:
    config = load_config(args)
    tau = DiscreteMeasure.load(args.input)

    sparsifier = Sparsifier(ReluKernel(config.k), config.reduction)
    attach_log(sparsifier, args.log)

    result = sparsifier.sparsify_to(tau, args.n, args.seed)
    logger.info(f"Compressed {tau.support} atoms to {result.support}")

    emit(result.to_records(), args.out)
    if args.report:
        write_json({"input_support": tau.support, "output_support": result.support,
                    "steps": [r.to_dict() for r in sparsifier.reports]}, args.report)

    return exit_code(sparsifier)


def cmd_compress(args: argparse.Namespace) -> int:
    config = load_config(args)
    network = SignedNetwork.load(args.input)

    sparsifier = Sparsifier(ReluKernel(config.k), config.reduction)
    attach_log(sparsifier, args.log)

    result = sparsifier.compress_network(network, args.n, args.seed)
    logger.info(f"Compressed network of {network.support} neurons to {result.support}, "
                f"l1 {network.ell1_bound:.6g} -> {result.ell1_bound:.6g}")

    emit(result.to_records(), args.out)
    return exit_code(sparsifier)


def cmd_zonoid(args: argparse.Namespace) -> int:
    config = load_config(args)
    if args.input:
        tau = SphericalMeasure.load(args.input)
    else:
        tau = InstanceFactory.generate_instance("sphere_uniform", config.d, config.N, args.seed)

    sparsifier = Zonoid.sparsifier(config.reduction)
    attach_log(sparsifier, args.log)
    result = sparsifier.sparsify_to(tau, args.n, args.seed)

    kernel = AbsKernel()
    grid = kernel.sample_grid(config.reduction.effective_grid_size(tau.dim - 1, True), tau.dim)
    deviation = Zonoid.deviation(tau, result, grid)
    eps = Zonoid.containment_eps(tau, result, grid)
    logger.info(f"Zonotope with {result.support} summands: deviation {deviation:.4g}, containment eps {eps:.4g}")

    emit(result.to_records(), args.out)
    if args.report:
        write_json({"input_support": tau.support, "output_support": result.support, "deviation": deviation,
                    "containment_eps": eps, "theory_exponent": Zonoid.zonoid_exponent(tau.dim - 1),
                    "steps": [r.to_dict() for r in sparsifier.reports]}, args.report)

    return exit_code(sparsifier)


def cmd_rates(args: argparse.Namespace) -> int:
    if not args.config:
        raise ValueError("rates needs --config")

    config = load_config(args)
    listener = JsonLinesLog(args.log) if args.log else None
    rows = run_rates(config, threads=config.reduction.threads, listener=listener)

    if args.out:
        RateCsv.write(rows, args.out)
    else:
        sys.stdout.write(RateCsv.dumps(rows))

    if args.fit:
        write_json([f.to_dict() for f in fit_rates(rows)], args.fit)

    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    config = load_config(args)
    if args.single_row:
        trials = Diagnostics.single_bucket_trials(args.t, args.trials, seed=args.seed, config=config.reduction)
    else:
        trials = Diagnostics.oracle_trials(args.t, args.trials, d=args.d, k=args.k, seed=args.seed,
                                           config=config.reduction)

    passed = sum(1 for trial in trials if trial.passed)
    logger.info(f"Oracle comparison: {passed}/{len(trials)} trials within 4x of the optimum")

    emit({"t": args.t, "trials": [dict(dataclasses.asdict(trial), passed=trial.passed) for trial in trials],
          "passed": passed, "all_passed": passed == len(trials)}, args.out)
    return EXIT_OK


def cmd_diag(args: argparse.Namespace) -> int:
    config = load_config(args)
    if args.input:
        tau = measure_class(config.instance_family).load(args.input)
    else:
        tau = InstanceFactory.generate_instance(config.instance_family, config.d, config.N, args.seed)

    kernel = AbsKernel() if config.spherical else ReluKernel(config.k)
    reduction = config.reduction if not config.spherical else Zonoid.sparsifier(config.reduction).config
    emit(Diagnostics.diagnose(kernel, tau, reduction, args.seed, args.samples), args.out)
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    rows = RateCsv.read(args.input)
    fits = fit_rates(rows)

    for f in fits:
        logger.info(f"{f.family} d={f.d} k={f.k} {f.method} m={f.m}: slope {f.slope:.3f} (theory {f.theory:.3f})")

    emit([f.to_dict() for f in fits], args.out)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "sparsify": cmd_sparsify,
    "compress": cmd_compress,
    "zonoid": cmd_zonoid,
    "rates": cmd_rates,
    "oracle": cmd_oracle,
    "diag": cmd_diag,
    "fit": cmd_fit,
}


def main(argv: typing.Optional[typing.List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; 2 is reserved for exhausted budgets here
        return EXIT_OK if e.code == 0 else EXIT_INPUT_ERROR

    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as e:
        logger.error(str(e))
        return EXIT_INPUT_ERROR

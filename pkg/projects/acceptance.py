import argparse
import logging
import math
import os
import sys
import typing

import numpy as np

from ridgesparse.config import ConfigLoader, ExperimentConfig
from ridgesparse.diagnostics import Diagnostics
from ridgesparse.events import EventRecorder, StepEventType
from ridgesparse.instances import InstanceFactory
from ridgesparse.rates import RateFit, fit_rates, run_rates
from ridgesparse.reporting import RateCsv
from ridgesparse.zonoid import AbsKernel, Zonoid

logger = logging.getLogger(__name__)

CONFIGS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "configs")


def load(name: str) -> ExperimentConfig:
    return ConfigLoader.load_experiment(os.path.join(CONFIGS, name))


def slope(fits: typing.List[RateFit], method: str, m: int) -> float:
    for f in fits:
        if f.method == method and f.m == m:
            return f.slope

    return math.nan


def relaxed_fraction(recorder: EventRecorder) -> float:
    steps = len(recorder.of_type(StepEventType.REDUCED))
    return len(recorder.of_type(StepEventType.RELAXED)) / steps if steps else 0.0


def check(name: str, ok: bool, detail: str) -> bool:
    if ok:
        logger.info(f"PASS {name}: {detail}")
    else:
        logger.error(f"FAIL {name}: {detail}")
    return ok


def rate_check(config_name: str, threads: int, out_dir: str) -> bool:
    config = load(config_name)
    recorder = EventRecorder()
    rows = run_rates(config, threads=threads, listener=recorder)
    RateCsv.write(rows, os.path.join(out_dir, config_name.replace(".json", ".csv")))

    fits = fit_rates(rows)
    d0 = slope(fits, "discrepancy", 0)
    d1 = slope(fits, "discrepancy", 1)
    b0 = slope(fits, "baseline", 0)
    fraction = relaxed_fraction(recorder)

    return all([
        check(f"{config_name} m=0", d0 <= -0.90, f"slope {d0:.3f}"),
        check(f"{config_name} m=1", d1 <= -0.60, f"slope {d1:.3f}"),
        check(f"{config_name} baseline", -0.65 <= b0 <= -0.35, f"slope {b0:.3f}"),
        check(f"{config_name} gap", d0 <= b0 - 0.15, f"{d0:.3f} vs {b0:.3f}"),
        check(f"{config_name} relaxations", fraction <= 0.2, f"{fraction:.1%} of steps"),
    ])


def heaviside_check(threads: int, out_dir: str) -> bool:
    config = load("heaviside_d2.json")
    rows = run_rates(config, threads=threads)
    RateCsv.write(rows, os.path.join(out_dir, "heaviside_d2.csv"))

    d0 = slope(fit_rates(rows), "discrepancy", 0)
    return check("heaviside m=0", d0 <= -0.60, f"slope {d0:.3f}")


def zonoid_check(threads: int, out_dir: str) -> bool:
    config = load("zonoid_s2.json")
    rows = run_rates(config, threads=threads)
    RateCsv.write(rows, os.path.join(out_dir, "zonoid_s2.csv"))
    d0 = slope(fit_rates(rows), "discrepancy", 0)

    # containment eps against the relative deviation, per cell
    kernel = AbsKernel()
    grid = kernel.sample_grid(config.reduction.effective_grid_size(config.d, True), config.d + 1)
    consistent = True
    for seed in config.seeds:
        tau = InstanceFactory.generate_instance("sphere_uniform", config.d, config.N, seed)
        reference = float(np.mean(Zonoid.support_values(tau, grid)))
        path = Zonoid.sparsifier(config.reduction).sparsify_path(tau, config.n_ladder, seed)

        for n, measure in path.items():
            relative = Zonoid.deviation(tau, measure, grid) / reference
            eps = Zonoid.containment_eps(tau, measure, grid)
            if relative > 0 and not relative / 3 <= eps <= 3 * relative:
                logger.warning(f"seed={seed} n={n}: eps {eps:.4g} vs relative deviation {relative:.4g}")
                consistent = False

    return all([
        check("zonoid deviation", d0 <= -1.0, f"slope {d0:.3f}"),
        check("zonoid containment", consistent, "eps within a factor 3 of the relative deviation"),
    ])


def oracle_check(threads: int) -> bool:
    config = load("uniform_d2k1.json").reduction
    config.threads = threads
    trials = Diagnostics.oracle_trials(t=12, trials=50, config=config)
    passed = sum(1 for trial in trials if trial.passed)
    single = Diagnostics.single_bucket_trials(t=12, trials=50, config=config)
    single_passed = sum(1 for trial in single if trial.passed)

    return all([
        check("oracle", passed == len(trials), f"{passed}/{len(trials)} trials within 4x"),
        check("oracle single row", single_passed == len(single), f"{single_passed}/{len(single)} trials within 4x"),
    ])


def determinism_check(out_dir: str) -> bool:
    config = load("uniform_d2k1.json")
    single = RateCsv.dumps(run_rates(config, threads=1))
    parallel = RateCsv.dumps(run_rates(config, threads=os.cpu_count() or 2))

    with open(os.path.join(out_dir, "determinism.csv"), "w", encoding="utf-8", newline="") as f:
        f.write(single)

    return check("determinism", single == parallel, "CSV identical across thread counts")


def main(argv: typing.Optional[typing.List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Desk-scale acceptance runs.")
    parser.add_argument("checks", nargs="*", help="rates, clustered, zonoid, heaviside, oracle, determinism "
                                                  "(default: all but determinism)")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--out", default="output")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    os.makedirs(args.out, exist_ok=True)

    runners = {
        "rates": lambda: rate_check("uniform_d2k1.json", args.threads, args.out),
        "clustered": lambda: rate_check("clustered_d2k1.json", args.threads, args.out),
        "zonoid": lambda: zonoid_check(args.threads, args.out),
        "heaviside": lambda: heaviside_check(args.threads, args.out),
        "oracle": lambda: oracle_check(args.threads),
        "determinism": lambda: determinism_check(args.out),
    }

    checks = args.checks or ["rates", "clustered", "zonoid", "heaviside", "oracle"]
    unknown = [name for name in checks if name not in runners]
    if unknown:
        parser.error(f"unknown checks: {', '.join(unknown)}")

    results = [runners[name]() for name in checks]
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())

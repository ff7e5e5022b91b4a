from __future__ import annotations

import logging
import math
import typing
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import linregress

from ridgesparse.config import ExperimentConfig
from ridgesparse.events import StepEvent
from ridgesparse.instances import InstanceFactory
from ridgesparse.reluk import AtomMeasure, ReluKernel, RidgeKernel
from ridgesparse.reporting import RateRow
from ridgesparse.sparsify import Sparsifier
from ridgesparse.zonoid import AbsKernel

logger = logging.getLogger(__name__)


@dataclass
class RateFit:
    family: str
    d: int
    k: int
    method: str
    m: int
    slope: float
    intercept: float
    r_squared: float
    theory: float
    points: typing.List[typing.Tuple[int, float]] = field(default_factory=list)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "family": self.family,
            "d": self.d,
            "k": self.k,
            "method": self.method,
            "m": self.m,
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "theory": self.theory,
            "points": [[n, e] for n, e in self.points],
        }


class RateStudy:
    """
    Ladder study: every (seed, method) cell compresses one instance down the whole ladder and
    records the sup error per derivative order.
    """

    MIN_FIT_POINTS = 4
    BASELINE_STREAM = 2000

    def __init__(self, config: ExperimentConfig, threads: int = 1,
                 listener: typing.Callable[[StepEvent], None] = None):
        self.config = config.validate()
        self.threads = max(1, threads)
        self.listener = listener

    @staticmethod
    def kernel_for(config: ExperimentConfig) -> RidgeKernel:
        return AbsKernel() if config.spherical else ReluKernel(config.k)

    @staticmethod
    def baseline_seed(seed: int, n: int) -> int:
        return Sparsifier.step_seed(seed, RateStudy.BASELINE_STREAM + n)

    @staticmethod
    def ambient_dim(config: ExperimentConfig) -> int:
        return config.d + 1 if config.spherical else config.d

    def run_rates(self) -> typing.List[RateRow]:
        config = self.config
        kernel = RateStudy.kernel_for(config)
        dim = RateStudy.ambient_dim(config)
        grid = kernel.sample_grid(config.reduction.effective_grid_size(config.d, kernel.spherical), dim)

        cells = [(seed, method) for seed in config.seeds for method in config.methods()]
        logger.info(f"Rate study: {len(cells)} cells, ladder {config.n_ladder}, {self.threads} worker(s)")

        def work(cell):
            seed, method = cell
            return self._run_cell(kernel, grid, seed, method)

        if self.threads == 1:
            results = [work(cell) for cell in cells]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as executor:
                results = list(executor.map(work, cells))

        rows = [row for cell_rows in results for row in cell_rows]
        return sorted(rows, key=RateRow.sort_key)

    def _run_cell(self, kernel: RidgeKernel, grid: np.ndarray, seed: int, method: str) -> typing.List[RateRow]:
        config = self.config
        tau = InstanceFactory.generate_instance(config.instance_family, config.d, config.N, seed)
        k = kernel.k

        def row(n, m, error, support, relaxation):
            return RateRow(config.instance_family, config.d, k, method, n, seed, m, error, support, relaxation)

        try:
            if method == "baseline":
                compressed = {n: Sparsifier.sample_baseline(tau, n, RateStudy.baseline_seed(seed, n))
                              for n in config.n_ladder}
                relaxations = {n: 1.0 for n in config.n_ladder}
            else:
                compressed, relaxations = self._discrepancy_path(kernel, tau, seed)
        except (ValueError, RuntimeError) as e:
            logger.warning(f"Cell seed={seed} method={method} failed: {e}")
            return [row(n, m, math.nan, 0, math.nan) for n in config.n_ladder for m in range(k + 1)]

        rows = []
        for n in config.n_ladder:
            measure = compressed[n]
            for m in range(k + 1):
                error = Sparsifier.sup_error(kernel, tau, measure, grid, m)
                rows.append(row(n, m, error, measure.support, relaxations[n]))

        logger.info(f"Cell seed={seed} method={method} done")
        return rows

    def _discrepancy_path(self, kernel: RidgeKernel, tau: AtomMeasure,
                          seed: int) -> typing.Tuple[typing.Dict[int, AtomMeasure], typing.Dict[int, float]]:
        sparsifier = Sparsifier(kernel, self.config.reduction)
        if self.listener is not None:
            sparsifier.listener_manager.add_listener(self.listener)

        path = sparsifier.sparsify_path(tau, self.config.n_ladder, seed)

        # relaxation of entry n: the largest factor among the steps taken to reach it
        relaxations = {}
        for n in self.config.n_ladder:
            factors = [r.relaxation for r in sparsifier.reports if r.input_support > n]
            relaxations[n] = max(factors, default=1.0)

        return path, relaxations


def run_rates(config: ExperimentConfig, threads: int = 1,
              listener: typing.Callable[[StepEvent], None] = None) -> typing.List[RateRow]:
    return RateStudy(config, threads, listener).run_rates()


def theory_slope(family: str, d: int, k: int, m: int) -> float:
    # sphere families carry the |x.y| kernel, the k=1 case
    if family == "sphere_uniform":
        k = 1

    return Sparsifier.theory_exponent(d, k, m)


def fit_rates(rows: typing.Iterable[RateRow]) -> typing.List[RateFit]:
    """
    Least squares of log2(mean error over seeds) against log2(n), per (family, d, k, method, m).
    Failed cells are left out; groups with fewer than four ladder points are skipped.
    """
    groups: typing.Dict[typing.Tuple, typing.Dict[int, typing.List[float]]] = defaultdict(lambda: defaultdict(list))

    failures = 0
    for r in rows:
        if r.failed:
            failures += 1
            continue
        groups[(r.family, r.d, r.k, r.method, r.m)][r.n].append(r.sup_error)

    if failures:
        logger.warning(f"Excluded {failures} failed rows from the fit")

    fits = []
    for key in sorted(groups):
        family, d, k, method, m = key
        points = [(n, float(np.mean(errors))) for n, errors in sorted(groups[key].items())]
        points = [(n, e) for n, e in points if e > 0]

        if len(points) < RateStudy.MIN_FIT_POINTS:
            logger.warning(f"Skipping fit for {key}: {len(points)} usable ladder points, "
                           f"need {RateStudy.MIN_FIT_POINTS}")
            continue

        x = np.log2([n for n, _ in points])
        y = np.log2([e for _, e in points])
        result = linregress(x, y)

        fits.append(RateFit(family, d, k, method, m, slope=float(result.slope), intercept=float(result.intercept),
                            r_squared=float(result.rvalue ** 2), theory=theory_slope(family, d, k, m), points=points))
        logger.info(f"{family} d={d} k={k} {method} m={m}: slope {result.slope:.3f} "
                    f"(theory {fits[-1].theory:.3f}, R^2 {result.rvalue ** 2:.3f})")

    return fits

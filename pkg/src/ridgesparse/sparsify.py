from __future__ import annotations

import logging
import typing
from dataclasses import dataclass, field

import numpy as np

from ridgesparse.coloring import (Calibration, ColoringSchedule, ColoringSearch, PsiBuilder, PsiSystem,
                                  TriplePartition)
from ridgesparse.config import ReductionConfig
from ridgesparse.constants import Constants
from ridgesparse.events import Listenable, StepEvent, StepEventType
from ridgesparse.nets import HalfspaceMetric, MultiscaleNet
from ridgesparse.precision import Compare, Tolerance
from ridgesparse.reluk import AtomMeasure, RidgeKernel, SignedNetwork

logger = logging.getLogger(__name__)


class NoReduction(ValueError):
    """
    The measure is at or below the base case; the reduction step does not apply.
    """
    pass


@dataclass
class ReductionStepReport:
    step: int
    input_support: int
    output_support: int
    s_minus: int
    t: int
    sup_errors: typing.List[float]
    weight_residual: float
    coloring: typing.Dict[str, typing.Any]
    nets: typing.Dict[str, typing.Any]
    schedule: typing.Dict[str, typing.Any] = field(default_factory=dict)

    @property
    def removed(self) -> int:
        return self.input_support - self.output_support

    @property
    def realized_factor(self) -> float:
        return self.output_support / self.input_support

    @property
    def relaxation(self) -> float:
        return float(self.coloring.get("relaxation_factor", 1.0))

    @property
    def exhausted(self) -> bool:
        return bool(self.coloring.get("exhausted", False))

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "step": self.step,
            "input_support": self.input_support,
            "output_support": self.output_support,
            "s_minus": self.s_minus,
            "t": self.t,
            "sup_errors": self.sup_errors,
            "weight_residual": self.weight_residual,
            "realized_factor": self.realized_factor,
            "coloring": {k: v for k, v in self.coloring.items() if k != "chi"},
            "nets": self.nets,
            "schedule": {k: v for k, v in self.schedule.items() if k != "delta"},
        }


@dataclass
class StepSystem:
    minus: np.ndarray
    s_minus: AtomMeasure
    partition: TriplePartition
    nets: MultiscaleNet
    psi: PsiSystem
    schedule: ColoringSchedule


class Sparsifier(Listenable):
    """
    Repeated halving of the small-weight half of a measure by partial colorings of weight triples.
    """

    def __init__(self, kernel: RidgeKernel, config: ReductionConfig = None):
        super().__init__()
        self.kernel = kernel
        self.config = (config or ReductionConfig(k=kernel.k)).validate()
        self.reports: typing.List[ReductionStepReport] = []

        if self.config.k != kernel.k:
            raise ValueError(f"Config order k={self.config.k} does not match kernel order k={kernel.k}")

    @staticmethod
    def median_split_indices(tau: AtomMeasure) -> typing.Tuple[np.ndarray, np.ndarray]:
        if tau.support < Constants.min_support():
            raise NoReduction(f"Support {tau.support} is below {Constants.min_support()}")

        median = np.median(tau.weights)
        small = tau.weights <= median
        return np.flatnonzero(small), np.flatnonzero(~small)

    @staticmethod
    def median_split(tau: AtomMeasure) -> typing.Tuple[AtomMeasure, AtomMeasure]:
        minus, plus = Sparsifier.median_split_indices(tau)
        return tau.subset(minus), tau.subset(plus)

    @staticmethod
    def make_triples(s_minus: AtomMeasure) -> TriplePartition:
        if s_minus.support < 3:
            raise ValueError(f"Need at least 3 atoms to form triples, got {s_minus.support}")

        order = np.argsort(s_minus.weights, kind="stable")
        t = s_minus.support // 3
        groups = order[:3 * t].reshape(t, 3)

        return TriplePartition(groups[:, 0], groups[:, 1], groups[:, 2], s_minus.weights)

    @staticmethod
    def apply_coloring(s_minus: AtomMeasure, partition: TriplePartition,
                       chi: np.ndarray) -> typing.Tuple[np.ndarray, np.ndarray]:
        """
        chi = +1 drops u, doubles v; chi = -1 drops v, doubles u; w absorbs the difference.
        :return: keep mask over S_- and the new weights (zero where dropped)
        """
        chi = np.asarray(chi, dtype=int)
        if chi.size != partition.t:
            raise ValueError(f"Coloring length {chi.size} does not match t={partition.t}")

        a = s_minus.weights
        b = a.copy()
        keep = np.ones(s_minus.support, dtype=bool)
        u, v, w = partition.u, partition.v, partition.w

        plus = chi == 1
        minus = chi == -1

        b[u[plus]] = 0.0
        b[v[plus]] = 2.0 * a[v[plus]]
        keep[u[plus]] = False

        b[v[minus]] = 0.0
        b[u[minus]] = 2.0 * a[u[minus]]
        keep[v[minus]] = False

        b[w] = a[w] + chi * (a[u] - a[v])

        if np.any(b < 0):
            raise RuntimeError(f"Negative weight {b.min()} after coloring; triple ordering is broken")

        if not Compare.lin_eq(float(b.sum()), float(a.sum()), tol=Tolerance.mass()):
            raise RuntimeError(f"Coloring changed the mass from {a.sum()!r} to {b.sum()!r}")

        return keep, b

    def step_system(self, tau: AtomMeasure, seed: int = 0) -> StepSystem:
        """
        Median split, triples, nets, Psi and schedule of one reduction step, before any coloring.
        """
        config = self.config
        kernel = self.kernel
        n = tau.support

        minus, plus = Sparsifier.median_split_indices(tau)
        s_minus = tau.subset(minus)
        partition = Sparsifier.make_triples(s_minus)

        metric = HalfspaceMetric(kernel, s_minus.directions, s_minus.offsets)
        nets = MultiscaleNet.build(metric, max_levels=config.max_levels, pool_min=config.pool_min,
                                   pool_cap=config.pool_cap, max_net_points=config.max_net_points)

        psi = PsiBuilder.build_psi_system(kernel, s_minus, partition, nets, n_atoms=n,
                                          spot_checks=config.spot_checks, seed=seed)

        c_m = config.c_m if config.c_m is not None else \
            Calibration.calibrate_cm(psi, kernel.k, n, config.cm_factor, config.cm_quantile)
        d = kernel.intrinsic_dim(tau.dim)
        schedule = ColoringSchedule(n, d, kernel.k, config.alpha, config.beta, config.effective_kappa(d), c_m,
                                    nets.levels)

        return StepSystem(minus, s_minus, partition, nets, psi, schedule)

    def reduce_once(self, tau: AtomMeasure, seed: int = 0, step: int = 0,
                    measure_errors: bool = True) -> typing.Tuple[AtomMeasure, ReductionStepReport]:
        kernel = self.kernel
        n = tau.support

        system = self.step_system(tau, seed)
        minus, s_minus, partition, nets = system.minus, system.s_minus, system.partition, system.nets

        self.listener_manager.notify(StepEvent(self, StepEventType.STARTED,
                                               {"step": step, "support": n, "s_minus": int(minus.size),
                                                "t": partition.t}))
        logger.info(f"Step {step}: support {n}, |S_-| = {minus.size}, t = {partition.t}")

        coloring = ColoringSearch.from_config(self.config).find_partial_coloring(system.psi, system.schedule, seed)

        if coloring.relaxation > 1.0:
            self.listener_manager.notify(StepEvent(self, StepEventType.RELAXED,
                                                   {"step": step, "relaxation": coloring.relaxation}))

        keep, b = Sparsifier.apply_coloring(s_minus, partition, coloring.chi)

        weights = tau.weights.copy()
        weights[minus] = b
        survivors = np.ones(n, dtype=bool)
        survivors[minus[~keep]] = False

        result = tau.subset(np.flatnonzero(survivors)).with_weights(weights[survivors], tau.mode)
        residual = abs(result.mass - tau.mass)

        sup_errors = []
        if measure_errors:
            grid = np.vstack([self.grid(tau.dim), nets.points(nets.levels)])
            sup_errors = [Sparsifier.sup_error(kernel, tau, result, grid, m) for m in range(kernel.k + 1)]

        report = ReductionStepReport(step=step, input_support=n, output_support=result.support,
                                     s_minus=int(minus.size), t=partition.t, sup_errors=sup_errors,
                                     weight_residual=residual, coloring=coloring.to_dict(), nets=nets.summary(),
                                     schedule=system.schedule.to_dict())

        self.reports.append(report)
        self.listener_manager.notify(StepEvent(self, StepEventType.REDUCED, report.to_dict()))
        logger.info(f"Step {step}: support {n} -> {result.support}, errors {['%.3g' % e for e in sup_errors]}")

        return result, report

    def grid(self, dim: int) -> np.ndarray:
        size = self.config.effective_grid_size(self.kernel.intrinsic_dim(dim), self.kernel.spherical)
        return self.kernel.sample_grid(size, dim)

    @staticmethod
    def step_seed(seed: int, step: int) -> int:
        return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])

    def _iterate(self, tau: AtomMeasure, target: int, seed: int,
                 visit: typing.Callable[[AtomMeasure], None] = None) -> AtomMeasure:
        current = tau
        step = 0

        while current.support > target:
            try:
                reduced, report = self.reduce_once(current, Sparsifier.step_seed(seed, step), step,
                                                   measure_errors=False)
            except NoReduction as e:
                logger.info(f"Stopping at support {current.support}: {e}")
                break

            if reduced.support >= current.support:
                logger.warning(f"Step {step} removed no atoms; stopping at support {current.support}")
                break

            current = reduced
            step += 1
            if visit is not None:
                visit(current)

        self.listener_manager.notify(StepEvent(self, StepEventType.STOPPED,
                                               {"steps": step, "support": current.support}))
        return current

    def sparsify_to(self, tau: AtomMeasure, n: int, seed: int = 0) -> AtomMeasure:
        if n < Constants.min_support():
            raise ValueError(f"Target support must be >= {Constants.min_support()}, got {n}")

        if tau.support <= n:
            return tau

        return self._iterate(tau, n, seed)

    def sparsify_path(self, tau: AtomMeasure, ladder: typing.Sequence[int],
                      seed: int = 0) -> typing.Dict[int, AtomMeasure]:
        """
        One reduction run down to min(ladder); entry n is the first iterate with support <= n,
        which is what sparsify_to(tau, n, seed) returns.
        """
        ladder = sorted(set(int(n) for n in ladder))
        if not ladder or ladder[0] < Constants.min_support():
            raise ValueError(f"Ladder entries must be >= {Constants.min_support()}")

        recorded: typing.Dict[int, AtomMeasure] = {n: tau for n in ladder if tau.support <= n}

        def visit(measure: AtomMeasure):
            for n in ladder:
                if n not in recorded and measure.support <= n:
                    recorded[n] = measure

        final = self._iterate(tau, ladder[0], seed, visit) if tau.support > ladder[0] else tau

        for n in ladder:
            recorded.setdefault(n, final)

        return recorded

    def compress_network(self, network: SignedNetwork, n: int, seed: int = 0) -> SignedNetwork:
        if n < 2 * Constants.min_support():
            raise ValueError(f"Signed compression needs n >= {2 * Constants.min_support()}, got {n}")

        parts = []
        for index, sign in enumerate((1, -1)):
            mass, measure = network.part(sign)
            if measure is None:
                logger.info(f"Skipping empty {'positive' if sign > 0 else 'negative'} part")
                continue

            compressed = self.sparsify_to(measure, n // 2, Sparsifier.step_seed(seed, 1000 + index))
            parts.append((sign, mass, compressed))

        if not parts:
            raise ValueError("Network has no nonzero coefficients")

        return SignedNetwork.combine(parts)

    @staticmethod
    def sample_baseline(tau: AtomMeasure, n: int, seed: int = 0) -> AtomMeasure:
        """
        n i.i.d. draws from tau with weight 1/n each, duplicates merged.
        """
        if n < 1:
            raise ValueError(f"Sample size must be >= 1, got {n}")

        rng = np.random.default_rng(seed)
        p = tau.weights / tau.weights.sum()
        draws = rng.choice(tau.support, size=n, p=p)

        return tau.subset(draws).with_weights(np.full(n, 1.0 / n), AtomMeasure.PROBABILITY).merged()

    @staticmethod
    def sup_error(kernel: RidgeKernel, tau_a: AtomMeasure, tau_b: AtomMeasure, grid: np.ndarray, m: int) -> float:
        """
        max over grid of the tensor l-inf norm of the difference of m-th derivatives.
        """
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        if grid.shape[0] == 0 or grid.size == 0:
            raise ValueError("Error grid is empty")

        directions = np.concatenate([tau_a.directions, tau_b.directions])
        offsets = np.concatenate([tau_a.offsets, tau_b.offsets])
        weights = np.concatenate([tau_a.weights, -tau_b.weights])

        field = kernel.derivative_field(directions, offsets, weights, grid, m)
        return float(np.max(np.abs(field)))

    @staticmethod
    def theory_exponent(d: int, k: int, m: int) -> float:
        return -0.5 - (2 * (k - m) + 1) / (2.0 * d)

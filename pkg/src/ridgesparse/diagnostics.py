from __future__ import annotations

import dataclasses
import logging
import typing
from dataclasses import dataclass

import numpy as np

from ridgesparse.coloring import Calibration, ColoringSchedule, ColoringSearch, Discrepancy, PsiSystem
from ridgesparse.config import ReductionConfig
from ridgesparse.constants import Constants
from ridgesparse.instances import InstanceFactory
from ridgesparse.nets import MultiscaleNet
from ridgesparse.reluk import AtomMeasure, Decomposition, ReluKernel, RidgeKernel
from ridgesparse.sparsify import Sparsifier

logger = logging.getLogger(__name__)


@dataclass
class OracleTrial:
    trial: int
    t: int
    search_ratio: float
    oracle_ratio: float
    nonzeros: int
    stage: str

    @property
    def passed(self) -> bool:
        return self.nonzeros >= ColoringSearch.min_nonzeros(self.t) and \
            self.search_ratio <= 4.0 * self.oracle_ratio * (1.0 + 1e-9) + 1e-12


class Diagnostics:

    ORACLE_REFINE_LEVELS = 40
    ORACLE_RELAXATIONS = 60
    DECOMPOSITION_CHAINS = 200

    @staticmethod
    def oracle_search(config: ReductionConfig, t: int) -> ColoringSearch:
        """
        Full enumeration, whole buckets and scales down to 2^-40. On a single-row system a pair at
        distance 2 OPT then collides at every scale above 4 OPT, so the result is within 4x of the optimum.
        No extension pass, so the coloring stays comparable.
        """
        return ColoringSearch(samples=max(config.samples, 2 ** t), batch_size=config.batch_size,
                              refine_levels=max(config.refine_levels, Diagnostics.ORACLE_REFINE_LEVELS),
                              max_relaxations=max(config.max_relaxations, Diagnostics.ORACLE_RELAXATIONS),
                              local_search_iterations=config.local_search_iterations, threads=config.threads,
                              bucket_probe=None, extend=False)

    @staticmethod
    def oracle_trials(t: int, trials: int, d: int = 2, k: int = 1, seed: int = 0,
                      config: ReductionConfig = None) -> typing.List[OracleTrial]:
        """
        Compares the partial coloring search with the exhaustive optimum on small random instances.
        """
        if t < 1:
            raise ValueError(f"Oracle trials need t >= 1, got {t}")

        config = config or ReductionConfig(k=k)
        if config.k != k:
            config = dataclasses.replace(config, k=k, beta=None)

        sparsifier = Sparsifier(ReluKernel(k), config)
        search = Diagnostics.oracle_search(config, t)
        results = []

        for trial in range(trials):
            trial_seed = Sparsifier.step_seed(seed, trial)
            tau = InstanceFactory.generate_instance("uniform", d, 6 * t, trial_seed)
            system = sparsifier.step_system(tau, trial_seed)
            results.append(Diagnostics._compare(search, system.psi, system.schedule, trial, trial_seed))

        return results

    @staticmethod
    def single_bucket_trials(t: int, trials: int, seed: int = 0,
                             config: ReductionConfig = None) -> typing.List[OracleTrial]:
        """
        Oracle comparison on one-row systems with standard normal entries, scaled to the threshold.
        """
        if t < 1:
            raise ValueError(f"Oracle trials need t >= 1, got {t}")

        search = Diagnostics.oracle_search(config or ReductionConfig(k=0), t)
        schedule = ColoringSchedule(3 * t, 1, 0, Constants.default_alpha(), Constants.default_beta(0), 1.0, 1.0, 1)
        rng = np.random.default_rng(seed)

        return [Diagnostics._compare(search, PsiSystem.from_dense(rng.standard_normal((1, t)) * schedule.delta(1, 0)),
                                     schedule, trial, Sparsifier.step_seed(seed, trial))
                for trial in range(trials)]

    @staticmethod
    def _compare(search: ColoringSearch, psi: PsiSystem, schedule: ColoringSchedule, trial: int,
                 seed: int) -> OracleTrial:
        thresholds = schedule.row_thresholds(psi)
        oracle = Discrepancy.exhaustive_oracle(psi, thresholds)
        found = search.find_partial_coloring(psi, schedule, seed)
        ratio = Discrepancy.max_ratio(psi.values(found.chi), thresholds)

        result = OracleTrial(trial, psi.t, ratio, oracle.max_ratio, found.nonzero_count, found.stage)
        if not result.passed:
            logger.warning(f"Oracle trial {trial}: search ratio {ratio:.3g} vs optimum {oracle.max_ratio:.3g}")
        else:
            logger.debug(f"Oracle trial {trial}: search ratio {ratio:.3g} vs optimum {oracle.max_ratio:.3g}")

        return result

    @staticmethod
    def decomposition_check(kernel: RidgeKernel, reference: AtomMeasure, nets: MultiscaleNet, points: np.ndarray,
                            c: float) -> typing.Dict[str, typing.Any]:
        """
        Scaled Gamma norms ||Gamma_{i,l}|| 2^{il} and scaled phi norms ||phi^m|| 2^{l(k-m)} along the net
        chains of the sample points, against the constant c.
        :param reference: the atoms the nets were built for
        """
        decomposition = Decomposition(kernel.k)
        directions, offsets = reference.directions, reference.offsets
        top = np.abs(directions).max(axis=1)

        gamma_max = phi_max = 0.0
        gamma_failures = phi_failures = separated = 0

        for x in points:
            chain = nets.build_chain(x)
            if kernel.k > 0:
                scaled = decomposition.gammas(chain, 0, x).max_scaled_norm()
                gamma_max = max(gamma_max, scaled)
                gamma_failures += int(scaled > c)

            s = kernel.activation(np.vstack([chain, x[None, :]]), directions, offsets)
            active = kernel.active(s)
            separated += int(np.count_nonzero(active[-1] != active[-2]))

            for l in range(2, nets.levels + 1):
                for m in range(kernel.k + 1):
                    norms = np.abs(kernel.residual_scalars(s[l - 1], s[l - 2], m)) * top ** m
                    scaled = float(norms.max(initial=0.0)) * 2.0 ** (l * (kernel.k - m))
                    phi_max = max(phi_max, scaled)
                    phi_failures += int(scaled > c)

        if gamma_failures or phi_failures:
            logger.warning(f"Decomposition bounds exceeded: {gamma_failures} Gamma and {phi_failures} phi checks "
                           f"above {c:g}")

        return {
            "chains": int(points.shape[0]),
            "gamma_constant": c,
            "max_scaled_gamma": gamma_max,
            "gamma_failures": gamma_failures,
            "max_scaled_phi": phi_max,
            "phi_failures": phi_failures,
            "separated_pairs": separated,
        }

    @staticmethod
    def diagnose(kernel: RidgeKernel, tau: AtomMeasure, config: ReductionConfig = None, seed: int = 0,
                 samples: int = 2000) -> typing.Dict[str, typing.Any]:
        """
        Net statistics, entropy budget and tail frequencies of the first reduction step of tau.
        """
        config = config or ReductionConfig(k=kernel.k)
        sparsifier = Sparsifier(kernel, config)
        system = sparsifier.step_system(tau, seed)

        nets = system.nets
        schedule = system.schedule
        d = kernel.intrinsic_dim(tau.dim)
        rng = np.random.default_rng(seed)
        points = kernel.random_points(rng, samples, tau.dim)

        levels = []
        for l in range(1, nets.levels + 1):
            distances, fractions = nets.covering_stats(l, points)
            radius = nets.covering_radius(l, config.covering_constant)
            levels.append({
                "level": l,
                "size": nets.size(l),
                "delta": nets.delta(l),
                "haussler_bound": nets.haussler_bound(l, config.haussler_constant),
                "covering_radius": radius,
                "max_distance": float(distances.max(initial=0.0)),
                "distance_failures": int(np.count_nonzero(distances > radius)),
                "max_separated_fraction": float(fractions.max(initial=0.0)),
                "fraction_failures": int(np.count_nonzero(fractions > nets.delta(l))),
            })

        budget = Calibration.entropy_budget(schedule, nets.sizes(), kernel.k, d, system.partition.t)
        kappa = Calibration.calibrate_kappa(tau.support, d, kernel.k, config.alpha, config.beta, nets.sizes(),
                                            system.partition.t, config.effective_kappa(d))
        tails = Calibration.bernstein_tail_check(system.psi, schedule, seed=seed)

        decomposition = Diagnostics.decomposition_check(kernel, system.s_minus, nets,
                                                        points[:Diagnostics.DECOMPOSITION_CHAINS],
                                                        config.gamma_constant)

        logger.info(f"Entropy ratio {budget.ratio:.3g} at kappa {budget.kappa:g}; feasible kappa {kappa:g}")

        return {
            "support": tau.support,
            "t": system.partition.t,
            "psi_rows": system.psi.rows,
            "nets": levels,
            "entropy": dataclasses.asdict(budget),
            "calibrated_kappa": kappa,
            "bernstein": {str(a): {"observed": f, "reference": r} for a, (f, r) in tails.items()},
            "schedule": schedule.to_dict(),
            "decomposition": decomposition,
        }

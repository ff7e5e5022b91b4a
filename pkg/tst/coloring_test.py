import math
import unittest

import numpy as np

from ridgesparse.coloring import (Calibration, ColoringSchedule, ColoringSearch, Discrepancy, PsiBuilder, PsiSystem,
                                  TriplePartition)
from ridgesparse.config import ReductionConfig
from ridgesparse.diagnostics import Diagnostics
from ridgesparse.instances import InstanceFactory
from ridgesparse.nets import HalfspaceMetric, MultiscaleNet
from ridgesparse.reluk import ReluKernel
from ridgesparse.sparsify import Sparsifier


def flat_schedule(k: int = 0, levels: int = 1, c_m: float = 1.0) -> ColoringSchedule:
    return ColoringSchedule(n=100, d=2, k=k, alpha=0.25, beta=k + 1.0, kappa=0.5, c_m=c_m, levels=levels)


class TestTriplePartition(unittest.TestCase):

    def test_members(self):
        partition = TriplePartition([0, 3], [1, 4], [2, 5])
        self.assertEqual(2, partition.t)
        self.assertEqual(6, partition.covered)
        np.testing.assert_array_equal([[0, 1, 2], [3, 4, 5]], partition.members())

    def test_rejects_overlap(self):
        with self.assertRaises(ValueError):
            TriplePartition([0], [0], [1])

    def test_rejects_unordered(self):
        with self.assertRaises(ValueError):
            TriplePartition([0], [1], [2], weights=np.array([0.3, 0.2, 0.5]))


class TestPsiSystem(unittest.TestCase):

    def test_from_dense_values(self):
        psi = PsiSystem.from_dense([[1.0, 2.0, 0.0], [0.0, -1.0, 1.0]])

        self.assertEqual(2, psi.rows)
        self.assertEqual(3, psi.t)
        np.testing.assert_allclose([-1.0, 2.0], psi.values([1, -1, 1]))
        self.assertFalse(psi.is_zero)
        self.assertEqual({(1, 0): 2.0}, psi.column_norms(1))

    def test_zero_system(self):
        self.assertTrue(PsiSystem.from_dense(np.zeros((2, 3))).is_zero)


class TestPsiBuilder(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        kernel = ReluKernel(1)
        tau = InstanceFactory.generate_instance("uniform", 2, 60, seed=4)
        minus, _ = Sparsifier.median_split_indices(tau)

        cls.kernel = kernel
        cls.s_minus = tau.subset(minus)
        cls.partition = Sparsifier.make_triples(cls.s_minus)
        cls.nets = MultiscaleNet.build(HalfspaceMetric(kernel, cls.s_minus.directions, cls.s_minus.offsets),
                                       max_levels=3, pool_min=300, pool_cap=300)
        cls.psi = PsiBuilder.build_psi_system(kernel, cls.s_minus, cls.partition, cls.nets, n_atoms=tau.support)

    def test_shape(self):
        self.assertEqual(self.partition.t, self.psi.t)
        self.assertEqual(3, self.psi.levels)
        self.assertEqual(self.psi.rows, self.psi.matrix.shape[0])

    def test_spot_checks_agree_with_tensor_reference(self):
        mismatches = PsiBuilder.spot_check(self.kernel, self.s_minus, self.partition, self.nets, self.psi,
                                           count=150, seed=1)
        self.assertEqual(0, mismatches)

    def test_level_one_is_all_bad(self):
        np.testing.assert_array_equal(np.full(self.nets.size(1), self.partition.t), self.psi.bad_counts[0])

    def test_row_metadata_in_range(self):
        self.assertTrue(np.all((self.psi.level >= 1) & (self.psi.level <= 3)))
        self.assertTrue(np.all((self.psi.order >= 0) & (self.psi.order <= 1)))
        self.assertTrue(np.all(self.psi.entry < 2 ** self.psi.order))


class TestColoringSchedule(unittest.TestCase):

    def test_tau(self):
        self.assertEqual(4, ColoringSchedule.tau(4096, 2, 1 / 16))
        self.assertEqual(0, ColoringSchedule.tau(1, 2, 1.0))
        self.assertEqual(-1, ColoringSchedule.tau(2, 2, 1 / 4))

    def test_delta_formula(self):
        schedule = ColoringSchedule(n=4096, d=2, k=1, alpha=0.25, beta=2.0, kappa=1 / 16, c_m=3.0, levels=6)

        for l in range(1, 7):
            for m in range(2):
                expected_m = 3.0 * 2.0 ** (-(1 - m + 0.5) * l) / 64.0
                x = l - 4
                lam = 2.0 ** (0.25 * x) if x >= 0 else 2.0 ** (2.0 * x)
                self.assertAlmostEqual(expected_m, schedule.m_value(l, m), places=15)
                self.assertAlmostEqual(2.0 * expected_m * lam, schedule.delta(l, m), places=15)

    def test_relaxed_doubles(self):
        schedule = flat_schedule(k=1, levels=3)
        relaxed = schedule.relaxed(2.0)

        np.testing.assert_allclose(2.0 * schedule.delta_table, relaxed.delta_table)
        self.assertEqual(2.0, relaxed.relaxation)

    def test_validation_names_inequality(self):
        with self.assertRaisesRegex(ValueError, "alpha"):
            ColoringSchedule(100, 2, 1, 0.6, 2.0, 0.5, 1.0, 3)

        with self.assertRaisesRegex(ValueError, "beta"):
            ColoringSchedule(100, 2, 1, 0.25, 1.2, 0.5, 1.0, 3)

        with self.assertRaisesRegex(ValueError, "kappa"):
            ColoringSchedule(100, 2, 1, 0.25, 2.0, 1.5, 1.0, 3)

    def test_aggregate_bound(self):
        schedule = flat_schedule(k=1, levels=2)
        expected = sum(schedule.delta(l, 0) + 2.0 ** -l * schedule.delta(l, 1) for l in (1, 2))
        self.assertAlmostEqual(expected, schedule.aggregate_bound(0))


class TestCalibration(unittest.TestCase):

    def test_g_regimes(self):
        self.assertAlmostEqual(math.exp(-400.0 / 9.0), Calibration.g(20.0, 1.0))
        self.assertEqual(2.0, Calibration.g(1.0, 2.0))
        self.assertAlmostEqual(-math.log2(0.05), Calibration.g(0.05, 1.0))

    def test_calibrate_cm_scales_with_factor(self):
        psi = PsiSystem.from_dense([[1.0, 1.0], [0.5, 0.0]])
        one = Calibration.calibrate_cm(psi, 0, 100, factor=1.0, quantile=1.0)
        three = Calibration.calibrate_cm(psi, 0, 100, factor=3.0, quantile=1.0)

        self.assertAlmostEqual(3.0 * one, three)
        self.assertAlmostEqual(math.sqrt(2.0) / (2.0 ** -0.5 * 0.1), one)

    def test_calibrate_cm_zero_system(self):
        self.assertEqual(1.0, Calibration.calibrate_cm(PsiSystem.from_dense(np.zeros((1, 2))), 0, 10))

    def test_calibrate_kappa_keeps_feasible_start(self):
        sizes = [4, 12, 40]
        kappa = Calibration.calibrate_kappa(4096, 2, 1, 0.25, 2.0, sizes, t=2500)
        schedule = ColoringSchedule(4096, 2, 1, 0.25, 2.0, kappa, 1.0, 3)

        self.assertEqual(1 / 16, kappa)
        self.assertTrue(Calibration.entropy_budget(schedule, sizes, 1, 2, 2500).feasible)

    def test_calibrate_kappa_halves(self):
        kappa = Calibration.calibrate_kappa(4096, 2, 1, 0.25, 2.0, [4, 12, 40], t=600)

        self.assertLess(kappa, 1 / 16)
        self.assertGreater(kappa, 0.0)

    def test_entropy_budget_ratio(self):
        schedule = flat_schedule(k=0, levels=2)
        report = Calibration.entropy_budget(schedule, [2, 5], 0, 2, t=50)

        self.assertEqual(10.0, report.limit)
        self.assertAlmostEqual(sum(report.per_level) / 10.0, report.ratio)
        self.assertEqual(report.ratio <= 1.0, report.feasible)

    def test_bernstein_frequencies(self):
        psi = PsiSystem.from_dense(np.random.default_rng(0).standard_normal((5, 12)))
        tails = Calibration.bernstein_tail_check(psi, flat_schedule(), samples=100, seed=3)

        self.assertEqual([1, 2, 3], sorted(tails))
        for observed, reference in tails.values():
            self.assertTrue(0.0 <= observed <= 1.0)
            self.assertGreater(reference, 0.0)


class TestExhaustiveOracle(unittest.TestCase):

    def test_cancelling_pair(self):
        psi = PsiSystem.from_dense([[1.0, 1.0, 1.0]])
        result = Discrepancy.exhaustive_oracle(psi, np.ones(1))

        self.assertEqual(0.0, result.max_ratio)
        self.assertGreaterEqual(np.count_nonzero(result.chi), 1)

    def test_respects_nonzero_floor(self):
        psi = PsiSystem.from_dense([[1.0, 10.0, 100.0, 1000.0]])
        result = Discrepancy.exhaustive_oracle(psi, np.ones(1))

        # one nonzero is required, the cheapest is +-1 on the first triple
        self.assertEqual(1.0, result.max_ratio)

    def test_rejects_large_t(self):
        with self.assertRaises(ValueError):
            Discrepancy.exhaustive_oracle(PsiSystem.from_dense(np.ones((1, 21))), np.ones(1))


class TestColoringSearch(unittest.TestCase):

    def test_empty(self):
        psi = PsiSystem(np.zeros((0, 0)), [], [], [], [], 0, 1, 2, 0, 1)
        result = ColoringSearch().find_partial_coloring(psi, flat_schedule())

        self.assertEqual("empty", result.stage)
        self.assertEqual(0, result.chi.size)

    def test_zero_system_is_trivial(self):
        psi = PsiSystem.from_dense(np.zeros((3, 5)))
        result = ColoringSearch().find_partial_coloring(psi, flat_schedule())

        self.assertEqual("trivial", result.stage)
        np.testing.assert_array_equal(np.ones(5), result.chi)

    def test_min_nonzeros(self):
        self.assertEqual(1, ColoringSearch.min_nonzeros(1))
        self.assertEqual(3, ColoringSearch.min_nonzeros(12))
        self.assertEqual(4, ColoringSearch.min_nonzeros(13))

    def test_exact_collision_reaches_optimum(self):
        psi = PsiSystem.from_dense([[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]])
        schedule = flat_schedule()
        search = ColoringSearch(refine_levels=6, extend=False)

        result = search.find_partial_coloring(psi, schedule, seed=0)
        oracle = Discrepancy.exhaustive_oracle(psi, schedule)

        self.assertEqual(0.0, oracle.max_ratio)
        self.assertEqual(0.0, result.max_ratio)
        self.assertGreaterEqual(result.nonzero_count, 2)

    def test_random_system_within_thresholds(self):
        rng = np.random.default_rng(7)
        psi = PsiSystem.from_dense(rng.standard_normal((4, 30)))
        schedule = flat_schedule(c_m=Calibration.calibrate_cm(psi, 0, 100))

        result = ColoringSearch(samples=4000).find_partial_coloring(psi, schedule, seed=5)

        self.assertGreaterEqual(result.nonzero_count, ColoringSearch.min_nonzeros(30))
        self.assertFalse(result.exhausted)
        self.assertLessEqual(result.max_ratio, 1.0)
        thresholds = schedule.relaxed(result.relaxation).row_thresholds(psi)
        self.assertLessEqual(Discrepancy.max_ratio(psi.values(result.chi), thresholds), 1.0 + 1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        psi = PsiSystem.from_dense(rng.standard_normal((3, 25)))
        schedule = flat_schedule(c_m=Calibration.calibrate_cm(psi, 0, 100))

        first = ColoringSearch(samples=2000).find_partial_coloring(psi, schedule, seed=11)
        second = ColoringSearch(samples=2000, threads=3).find_partial_coloring(psi, schedule, seed=11)

        np.testing.assert_array_equal(first.chi, second.chi)
        self.assertEqual(first.to_dict(), second.to_dict())

    def test_relaxation_on_impossible_thresholds(self):
        psi = PsiSystem.from_dense([[1.0, 1.0, 1.0, 1.0]])
        schedule = flat_schedule(c_m=1e-6)

        result = ColoringSearch(samples=64, max_relaxations=2, local_search_iterations=10) \
            .find_partial_coloring(psi, schedule, seed=0)

        # +-1 pairs cancel exactly, so no relaxation is needed even for tiny thresholds
        self.assertEqual(1.0, result.relaxation)
        self.assertEqual(0.0, result.max_ratio)

    def test_exhausted_budget(self):
        psi = PsiSystem.from_dense([[1.0, 10.0, 100.0]])
        schedule = flat_schedule(c_m=1e-6)

        result = ColoringSearch(samples=16, max_relaxations=1, local_search_iterations=5) \
            .find_partial_coloring(psi, schedule, seed=0)

        self.assertTrue(result.exhausted)
        self.assertGreater(result.max_ratio, 1.0)
        self.assertGreaterEqual(result.nonzero_count, 1)

    def test_result_dict_keys(self):
        psi = PsiSystem.from_dense(np.zeros((1, 3)))
        keys = set(ColoringSearch().find_partial_coloring(psi, flat_schedule()).to_dict())

        self.assertEqual({"chi", "nonzero_count", "per_bucket_ratios", "relaxation_factor", "stage_used",
                          "samples_drawn", "max_ratio", "exhausted"}, keys)


class TestDiscrepancy(unittest.TestCase):

    def test_bucket_ratios_keys(self):
        psi = PsiSystem.from_dense([[1.0, 0.0], [0.0, 2.0]], level=[1, 2], order=[0, 1], k=1)
        schedule = flat_schedule(k=1, levels=2)
        ratios = Discrepancy.bucket_ratios(np.array([1, 1]), psi, schedule)

        self.assertEqual({"l=1,m=0", "l=1,m=1", "l=2,m=0", "l=2,m=1"}, set(ratios))
        self.assertEqual(0.0, ratios["l=1,m=1"])
        self.assertAlmostEqual(1.0 / schedule.delta(1, 0), ratios["l=1,m=0"])

    def test_report_aggregate_bound(self):
        psi = PsiSystem.from_dense([[1e-9, 0.0], [0.0, 1e-9]], level=[1, 2], order=[0, 1], k=1)
        schedule = flat_schedule(k=1, levels=2)
        report = Discrepancy.discrepancy_report(np.array([1, -1]), psi, schedule)

        self.assertEqual((2, 2), report.sup.shape)
        for aggregate, bound in zip(report.aggregate, report.bounds):
            self.assertLessEqual(aggregate, bound)


class TestOracleTrials(unittest.TestCase):

    def test_search_never_beats_optimum(self):
        config = ReductionConfig(k=1, max_levels=3, pool_min=256, pool_cap=256, samples=4096)
        trials = Diagnostics.oracle_trials(t=4, trials=2, d=2, k=1, seed=0, config=config)

        self.assertEqual(2, len(trials))
        for trial in trials:
            self.assertGreaterEqual(trial.t, 1)
            self.assertGreaterEqual(trial.nonzeros, ColoringSearch.min_nonzeros(trial.t))
            self.assertGreaterEqual(trial.search_ratio, trial.oracle_ratio - 1e-12)

    def test_single_row_within_four_times_optimum(self):
        for t in (6, 8, 10):
            trials = Diagnostics.single_bucket_trials(t=t, trials=5, seed=t)

            self.assertEqual(5, len(trials))
            for trial in trials:
                self.assertEqual(t, trial.t)
                self.assertGreaterEqual(trial.search_ratio, trial.oracle_ratio - 1e-12)
                self.assertLessEqual(trial.search_ratio, 4.0 * trial.oracle_ratio + 1e-12)
                self.assertTrue(trial.passed)

    def test_full_buckets_reach_fine_scales(self):
        schedule = flat_schedule()
        psi = PsiSystem.from_dense(np.array([[1.0, -0.7, 0.45, 0.3, -0.2, 0.11]]) * schedule.delta(1, 0))
        search = ColoringSearch(samples=64, refine_levels=30, bucket_probe=None, extend=False)

        result = search.find_partial_coloring(psi, schedule, seed=0)
        oracle = Discrepancy.exhaustive_oracle(psi, schedule)

        self.assertEqual("collision", result.stage)
        self.assertEqual(1.0, result.relaxation)
        self.assertLessEqual(result.max_ratio, 4.0 * oracle.max_ratio + 1e-12)
        self.assertGreaterEqual(result.nonzero_count, ColoringSearch.min_nonzeros(6))


if __name__ == '__main__':
    unittest.main()

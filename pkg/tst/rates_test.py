import math
import unittest

from ridgesparse.config import ExperimentConfig, ReductionConfig
from ridgesparse.events import EventRecorder, StepEventType
from ridgesparse.rates import RateStudy, fit_rates, run_rates, theory_slope
from ridgesparse.reporting import RateRow
from ridgesparse.zonoid import AbsKernel


def synthetic_rows(ladder, exponent: float, scale: float = 3.0, seeds=(0, 1), m: int = 0):
    return [RateRow("uniform", 2, 1, "discrepancy", n, seed, m, scale * n ** exponent, n, 1.0)
            for n in ladder for seed in seeds]


def small_experiment(**overrides) -> ExperimentConfig:
    reduction = ReductionConfig(max_levels=3, pool_min=256, pool_cap=256, samples=2000, local_search_iterations=200)
    values = dict(d=2, k=1, N=60, n_ladder=[15, 30], seeds=[0], grid_size=200, reduction=reduction)
    values.update(overrides)
    return ExperimentConfig(**values)


class TestFitRates(unittest.TestCase):

    def test_recovers_power_law(self):
        fits = fit_rates(synthetic_rows([32, 64, 128, 256], -1.0))

        self.assertEqual(1, len(fits))
        self.assertAlmostEqual(-1.0, fits[0].slope, places=10)
        self.assertAlmostEqual(1.0, fits[0].r_squared, places=10)
        self.assertAlmostEqual(math.log2(3.0), fits[0].intercept, places=10)
        self.assertEqual(-1.25, fits[0].theory)

    def test_groups_by_order(self):
        rows = synthetic_rows([32, 64, 128, 256], -1.0, m=0) + synthetic_rows([32, 64, 128, 256], -0.5, m=1)
        fits = fit_rates(rows)

        self.assertEqual([0, 1], [f.m for f in fits])
        self.assertAlmostEqual(-0.5, fits[1].slope, places=10)

    def test_skips_short_ladders(self):
        self.assertEqual([], fit_rates(synthetic_rows([32, 64, 128], -1.0)))

    def test_failed_rows_are_excluded(self):
        rows = synthetic_rows([32, 64, 128, 256], -1.0, seeds=(0,))
        rows.append(RateRow("uniform", 2, 1, "discrepancy", 512, 0, 0, math.nan, 0, math.nan))

        with self.assertLogs("ridgesparse.rates", level="WARNING"):
            fits = fit_rates(rows)

        self.assertEqual(4, len(fits[0].points))

    def test_mean_over_seeds(self):
        rows = synthetic_rows([32, 64, 128, 256], -1.0, seeds=(0,))
        rows += [RateRow("uniform", 2, 1, "discrepancy", n, 1, 0, 3.0 * 3.0 / n, n, 1.0) for n in (32, 64, 128, 256)]
        fits = fit_rates(rows)

        self.assertAlmostEqual(6.0 / 32, fits[0].points[0][1])
        self.assertAlmostEqual(-1.0, fits[0].slope, places=10)

    def test_to_dict(self):
        payload = fit_rates(synthetic_rows([32, 64, 128, 256], -1.0))[0].to_dict()

        self.assertEqual("discrepancy", payload["method"])
        self.assertEqual([32, 3.0 / 32], payload["points"][0])


class TestTheorySlope(unittest.TestCase):

    def test_relu(self):
        self.assertEqual(-1.25, theory_slope("uniform", 2, 1, 0))
        self.assertEqual(-0.75, theory_slope("clustered", 2, 0, 0))

    def test_sphere_uses_first_order(self):
        self.assertEqual(-1.25, theory_slope("sphere_uniform", 2, 0, 0))


class TestRateStudy(unittest.TestCase):

    def test_kernel_and_dimension(self):
        sphere = small_experiment(instance_family="sphere_uniform")

        self.assertIsInstance(RateStudy.kernel_for(sphere), AbsKernel)
        self.assertEqual(3, RateStudy.ambient_dim(sphere))
        self.assertEqual(2, RateStudy.ambient_dim(small_experiment()))

    def test_tiny_run(self):
        recorder = EventRecorder()
        rows = run_rates(small_experiment(), threads=1, listener=recorder)

        # 1 seed x 2 methods x 2 ladder entries x 2 orders
        self.assertEqual(8, len(rows))
        self.assertEqual(sorted(rows, key=RateRow.sort_key), rows)
        self.assertTrue(all(not r.failed for r in rows))
        self.assertTrue(all(r.support <= r.n for r in rows))
        self.assertGreater(len(recorder.of_type(StepEventType.REDUCED)), 0)

    def test_threads_do_not_change_rows(self):
        config = small_experiment(seeds=[0, 1], method="discrepancy")

        self.assertEqual(run_rates(config, threads=1), run_rates(config, threads=2))

    def test_baseline_only(self):
        rows = run_rates(small_experiment(method="baseline"))

        self.assertEqual({"baseline"}, {r.method for r in rows})
        self.assertTrue(all(r.relaxation == 1.0 for r in rows))


if __name__ == '__main__':
    unittest.main()

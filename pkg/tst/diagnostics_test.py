import unittest

from ridgesparse.config import ReductionConfig
from ridgesparse.diagnostics import Diagnostics, OracleTrial
from ridgesparse.instances import InstanceFactory
from ridgesparse.reluk import ReluKernel
from ridgesparse.zonoid import AbsKernel, Zonoid

SMALL = ReductionConfig(max_levels=3, pool_min=256, pool_cap=256, samples=2000, local_search_iterations=200)


class TestOracleTrial(unittest.TestCase):

    def test_passed(self):
        self.assertTrue(OracleTrial(0, 12, 0.4, 0.1, 3, "collision").passed)
        self.assertFalse(OracleTrial(0, 12, 0.5, 0.1, 3, "collision").passed)
        self.assertFalse(OracleTrial(0, 12, 0.1, 0.1, 2, "collision").passed)

    def test_oracle_search_enumerates(self):
        search = Diagnostics.oracle_search(SMALL, 12)

        self.assertEqual(4096, search.samples)
        self.assertFalse(search.extend)
        self.assertEqual(Diagnostics.ORACLE_REFINE_LEVELS, search.refine_levels)
        self.assertIsNone(search.bucket_probe)
        self.assertGreaterEqual(search.max_relaxations, Diagnostics.ORACLE_RELAXATIONS)

    def test_single_bucket_trials(self):
        trials = Diagnostics.single_bucket_trials(t=8, trials=4, seed=3)

        self.assertEqual([0, 1, 2, 3], [trial.trial for trial in trials])
        self.assertTrue(all(trial.passed for trial in trials))

    def test_single_bucket_trials_reject_empty(self):
        with self.assertRaises(ValueError):
            Diagnostics.single_bucket_trials(0, 1)

    def test_rejects_empty_trials(self):
        with self.assertRaises(ValueError):
            Diagnostics.oracle_trials(0, 1, config=SMALL)


class TestDiagnose(unittest.TestCase):

    def test_relu_report(self):
        tau = InstanceFactory.generate_instance("uniform", 2, 60, seed=2)
        report = Diagnostics.diagnose(ReluKernel(1), tau, SMALL, seed=1, samples=200)

        self.assertEqual(60, report["support"])
        self.assertEqual(10, report["t"])
        self.assertEqual(3, len(report["nets"]))
        self.assertEqual(["1", "2", "3"], sorted(report["bernstein"]))
        self.assertLessEqual(report["calibrated_kappa"], report["entropy"]["kappa"])

        for level in report["nets"]:
            self.assertLessEqual(level["size"], level["haussler_bound"])
            self.assertGreaterEqual(level["max_distance"], 0.0)

        decomposition = report["decomposition"]
        self.assertEqual(200, decomposition["chains"])
        self.assertEqual(SMALL.gamma_constant, decomposition["gamma_constant"])
        self.assertGreater(decomposition["max_scaled_gamma"], 0.0)
        # three levels at k = 1 keep both scaled norms at most 16
        self.assertEqual(0, decomposition["gamma_failures"])
        self.assertEqual(0, decomposition["phi_failures"])
        self.assertLessEqual(decomposition["max_scaled_phi"], 16.0)

    def test_sphere_report(self):
        tau = InstanceFactory.generate_instance("sphere_uniform", 2, 45, seed=3)
        report = Diagnostics.diagnose(AbsKernel(), tau, Zonoid.sparsifier(SMALL).config, seed=0, samples=100)

        self.assertEqual(45, report["support"])
        self.assertEqual(2, report["schedule"]["d"])
        self.assertEqual(100, report["decomposition"]["chains"])


if __name__ == '__main__':
    unittest.main()

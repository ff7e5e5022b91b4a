import json
import os
import tempfile
import unittest
from unittest import mock

from ridgesparse.config import ConfigError, ConfigLoader, ExperimentConfig, Ladder, ReductionConfig, resolve_threads


class TestLadder(unittest.TestCase):

    def test_range_doubles(self):
        self.assertEqual([32, 64, 128, 256, 512], Ladder.parse("32..512"))

    def test_range_with_step_and_singles(self):
        self.assertEqual([32, 128, 512, 1000], Ladder.parse("32..512x4, 1000"))
        self.assertEqual([64, 128], Ladder.parse("64,128"))
        self.assertEqual([100], Ladder.parse(" 100 "))

    def test_range_stops_below_bound(self):
        self.assertEqual([10, 30, 90], Ladder.parse("10..100x3"))

    def test_rejects_garbage(self):
        with self.assertRaises(ValueError):
            Ladder.parse("32...64")

        with self.assertRaises(ValueError):
            Ladder.parse("a..b")

    def test_rejects_invalid_ranges(self):
        with self.assertRaises(ValueError):
            Ladder.parse("512..32")

        with self.assertRaises(ValueError):
            Ladder.parse("32..512x1")


class TestReductionConfig(unittest.TestCase):

    def test_defaults(self):
        config = ReductionConfig(k=2)

        self.assertEqual(3.0, config.beta)
        self.assertEqual(1 / 32, config.effective_kappa(2))
        self.assertEqual(20000, config.effective_grid_size(2))
        self.assertEqual(40000, config.effective_grid_size(2, spherical=True))

    def test_validate(self):
        for values, key in [({"alpha": 0.5}, "alpha"), ({"beta": 1.0}, "beta"), ({"kappa": 0.0}, "kappa"),
                            ({"pool_min": 10, "pool_cap": 5}, "pool_min"), ({"samples": 1}, "samples"),
                            ({"threads": 0}, "threads")]:
            with self.assertRaises(ConfigError) as context:
                ReductionConfig(k=1, **values).validate()
            self.assertEqual(key, context.exception.key)

    def test_from_dict_rejects_unknown(self):
        with self.assertRaisesRegex(ConfigError, "unknown reduction key 'sampels'"):
            ReductionConfig.from_dict({"sampels": 10})


class TestExperimentConfig(unittest.TestCase):

    def test_reduction_follows_k(self):
        config = ExperimentConfig(k=2)

        self.assertEqual(2, config.reduction.k)
        self.assertEqual(3.0, config.reduction.beta)

    def test_methods(self):
        self.assertEqual(["discrepancy", "baseline"], ExperimentConfig().methods())
        self.assertEqual(["baseline"], ExperimentConfig(method="baseline").methods())

    def test_sphere_needs_first_order(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(instance_family="sphere_uniform", k=2).validate()

        self.assertTrue(ExperimentConfig(instance_family="sphere_uniform", k=1).validate().spherical)

    def test_ladder_checks(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(n_ladder=[64, 32]).validate()

        with self.assertRaises(ConfigError):
            ExperimentConfig(n_ladder=[4, 32]).validate()


class TestConfigLoader(unittest.TestCase):

    def test_parse(self):
        text = json.dumps({"d": 3, "k": 0, "N": 512, "n_ladder": "32..256", "seeds": 3,
                           "instance_family": "clustered", "reduction": {"samples": 5000, "refine_levels": 2}})
        config = ConfigLoader.parse_experiment(text)

        self.assertEqual([32, 64, 128, 256], config.n_ladder)
        self.assertEqual([0, 1, 2], config.seeds)
        self.assertEqual(0, config.reduction.k)
        self.assertEqual(5000, config.reduction.samples)
        self.assertEqual(2, config.reduction.refine_levels)

    def test_malformed_json_reports_line(self):
        with self.assertRaises(ConfigError) as context:
            ConfigLoader.parse_experiment('{\n  "d": 2,\n  "k": ,\n}', "bad.json")

        self.assertEqual(3, context.exception.line)
        self.assertTrue(str(context.exception).startswith("bad.json:3:"))

    def test_unknown_key_reports_line(self):
        text = '{\n  "d": 2,\n  "k": 1,\n  "seedz": [1, 2]\n}'
        with self.assertRaises(ConfigError) as context:
            ConfigLoader.parse_experiment(text, "exp.json")

        self.assertEqual(4, context.exception.line)
        self.assertEqual("seedz", context.exception.key)

    def test_nested_invalid_value_reports_line(self):
        text = '{\n  "d": 2,\n  "reduction": {\n    "alpha": 0.7\n  }\n}'
        with self.assertRaises(ConfigError) as context:
            ConfigLoader.parse_experiment(text)

        self.assertEqual(4, context.exception.line)

    def test_type_errors(self):
        with self.assertRaises(ConfigError):
            ConfigLoader.parse_experiment('{"d": 2.5}')

        with self.assertRaises(ConfigError):
            ConfigLoader.parse_experiment('{"seeds": "all"}')

        with self.assertRaises(ConfigError):
            ConfigLoader.parse_experiment('[1, 2]')

    def test_load_from_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "config.json")
            with open(path, "w", encoding="utf-8") as f:
                json.dump({"d": 2, "k": 1, "N": 256, "n_ladder": [16, 32]}, f)

            config = ConfigLoader.load_experiment(path)

        self.assertEqual(256, config.N)
        self.assertEqual([16, 32], config.n_ladder)


class TestResolveThreads(unittest.TestCase):

    def test_flag_wins(self):
        with mock.patch.dict(os.environ, {"THREADS": "8"}):
            self.assertEqual(2, resolve_threads(2, 4))

    def test_environment_then_config(self):
        with mock.patch.dict(os.environ, {"THREADS": "8"}):
            self.assertEqual(8, resolve_threads(None, 4))

        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertEqual(4, resolve_threads(None, 4))

    def test_bad_environment_is_ignored(self):
        with mock.patch.dict(os.environ, {"THREADS": "many"}):
            self.assertEqual(3, resolve_threads(None, 3))


if __name__ == '__main__':
    unittest.main()

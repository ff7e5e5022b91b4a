import math
import unittest

import numpy as np

from ridgesparse.pointsets import BallPoints, SpherePoints


class TestBallPoints(unittest.TestCase):

    def test_halton_inside_ball(self):
        points = BallPoints.halton(500, 3)

        self.assertEqual((500, 3), points.shape)
        self.assertTrue(np.all(np.linalg.norm(points, axis=1) <= 1.0))

    def test_halton_prefix(self):
        np.testing.assert_array_equal(BallPoints.halton(64, 2), BallPoints.halton(300, 2)[:64])

    def test_scrambled_is_deterministic(self):
        np.testing.assert_array_equal(BallPoints.halton(40, 2, scramble_seed=3),
                                      BallPoints.halton(40, 2, scramble_seed=3))

    def test_halton_empty(self):
        self.assertEqual((0, 2), BallPoints.halton(0, 2).shape)

    def test_halton_rejects_arguments(self):
        with self.assertRaises(ValueError):
            BallPoints.halton(-1, 2)

        with self.assertRaises(ValueError):
            BallPoints.halton(10, 0)

    def test_volume_fraction(self):
        self.assertAlmostEqual(math.pi / 4, BallPoints.volume_fraction(2))
        self.assertAlmostEqual(math.pi / 6, BallPoints.volume_fraction(3))

    def test_uniform_inside_ball(self):
        points = BallPoints.uniform(np.random.default_rng(0), 200, 2)
        self.assertTrue(np.all(np.linalg.norm(points, axis=1) <= 1.0))


class TestSpherePoints(unittest.TestCase):

    def test_spiral(self):
        points = SpherePoints.spiral(100)

        self.assertEqual((100, 3), points.shape)
        np.testing.assert_allclose(np.ones(100), np.linalg.norm(points, axis=1))
        self.assertAlmostEqual(0.0, float(points[:, 1].mean()), places=12)

    def test_spiral_rejects_empty(self):
        with self.assertRaises(ValueError):
            SpherePoints.spiral(0)

    def test_grid_dimensions(self):
        self.assertEqual((30, 3), SpherePoints.grid(30, 3).shape)
        self.assertEqual((30, 5), SpherePoints.grid(30, 5).shape)
        np.testing.assert_allclose(np.ones(30), np.linalg.norm(SpherePoints.grid(30, 5), axis=1))

    def test_uniform_unit(self):
        points = SpherePoints.uniform(np.random.default_rng(1), 50, 4)
        np.testing.assert_allclose(np.ones(50), np.linalg.norm(points, axis=1))

    def test_normalize(self):
        np.testing.assert_allclose([[0.6, 0.8]], SpherePoints.normalize([[3.0, 4.0]]))

        with self.assertRaises(ValueError):
            SpherePoints.normalize([[0.0, 0.0]])


if __name__ == '__main__':
    unittest.main()

import unittest

import numpy as np

from ridgesparse.tensors import Tensor, TensorMath


class TestTensor(unittest.TestCase):

    def test_vector_and_scalar(self):
        v = Tensor.vector([1, 2, 3])
        self.assertEqual(1, v.order)
        self.assertEqual(3, v.dim)
        self.assertEqual(2.0, v[1])

        s = Tensor.scalar(4.5, 3)
        self.assertEqual(0, s.order)
        self.assertEqual(4.5, s[()])

    def test_rejects_bad_shapes(self):
        with self.assertRaises(ValueError):
            Tensor(np.zeros(5), dim=2, order=2)

        with self.assertRaises(ValueError):
            Tensor([1.0], dim=0, order=1)

        with self.assertRaises(ValueError):
            Tensor.vector([1.0, np.nan])

    def test_immutable(self):
        t = Tensor.vector([1.0, 2.0])
        with self.assertRaises(ValueError):
            t.array[0] = 5.0

    def test_outer_orders_add(self):
        x = Tensor.vector([1.0, 2.0])
        y = Tensor.vector([3.0, -1.0])
        xy = x.outer(y)

        self.assertEqual(2, xy.order)
        self.assertEqual(-2.0, xy[1, 1])
        self.assertEqual(3.0, xy[0, 0])

    def test_outer_dim_mismatch(self):
        with self.assertRaises(ValueError):
            Tensor.vector([1.0, 2.0]).outer(Tensor.vector([1.0, 2.0, 3.0]))

    def test_contract_matrix_vector(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]], dim=2)
        v = Tensor.vector([1.0, -1.0])

        self.assertTrue(a.contract(v).almost_equal(Tensor.vector([-1.0, -1.0])))

    def test_contract_full(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]], dim=2)
        b = Tensor([[1.0, 0.0], [0.0, 1.0]], dim=2)

        result = a.contract(b)
        self.assertEqual(0, result.order)
        self.assertEqual(5.0, result[()])

    def test_contract_rejects_higher_order(self):
        with self.assertRaises(ValueError):
            Tensor.vector([1.0, 2.0]).contract(Tensor.zeros(2, 2))

    def test_iterated_contraction_symmetric(self):
        rng = np.random.default_rng(3)
        d = 3
        v = Tensor.vector(rng.standard_normal(d))
        x = TensorMath.tensor_power(v, 3)
        y = Tensor.vector(rng.standard_normal(d))
        z = Tensor.vector(rng.standard_normal(d))

        left = x.contract(y).contract(z)
        self.assertTrue(left.almost_equal(x.contract(y.outer(z)), rel=1e-10))
        self.assertTrue(left.almost_equal(x.contract(z.outer(y)), rel=1e-10))

    def test_iterated_contraction_general(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((2, 2, 2)), dim=2)
        y = Tensor.vector(rng.standard_normal(2))
        z = Tensor.vector(rng.standard_normal(2))

        self.assertTrue(x.contract(y).contract(z).almost_equal(x.contract(z.outer(y)), rel=1e-10))

    def test_tensor_power(self):
        v = Tensor.vector([2.0, 1.0])
        cube = TensorMath.tensor_power(v, 3)

        self.assertEqual(3, cube.order)
        self.assertEqual(8.0, cube[0, 0, 0])
        self.assertEqual(2.0, cube[1, 0, 1])
        self.assertEqual(0, TensorMath.tensor_power(v, 0).order)

    def test_flat_powers_match_tensor_power(self):
        rng = np.random.default_rng(5)
        vectors = rng.standard_normal((4, 3))
        flat = TensorMath.flat_powers(vectors, 2)

        self.assertEqual((4, 9), flat.shape)
        for i in range(4):
            expected = TensorMath.tensor_power(Tensor.vector(vectors[i]), 2).entries
            np.testing.assert_allclose(expected, flat[i], rtol=1e-12)

    def test_inf_norm(self):
        self.assertEqual(4.0, Tensor([[1.0, -4.0], [2.0, 3.0]], dim=2).inf_norm())
        self.assertEqual(0.0, Tensor.zeros(2, 3).inf_norm())

    def test_arithmetic(self):
        a = Tensor.vector([1.0, 2.0])
        b = Tensor.vector([0.5, 0.5])

        self.assertTrue((a + b).almost_equal(Tensor.vector([1.5, 2.5])))
        self.assertTrue((a - b).almost_equal(Tensor.vector([0.5, 1.5])))
        self.assertTrue((2 * a).almost_equal(Tensor.vector([2.0, 4.0])))
        self.assertTrue((-a).almost_equal(Tensor.vector([-1.0, -2.0])))

        with self.assertRaises(ValueError):
            a + Tensor.zeros(2, 2)


if __name__ == '__main__':
    unittest.main()

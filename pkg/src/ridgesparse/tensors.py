from __future__ import annotations

import typing

import numpy as np

from ridgesparse.precision import Compare

"""
Dense small-order tensors over R^d.

Entries are stored as a numpy array of shape (d,) * order; the flat view is the numpy C
(row-major) order, i.e. the last index varies fastest. Contraction sums over the trailing
indices of the left operand.
"""


class Tensor:

    def __init__(self, entries: typing.Union[np.ndarray, typing.Sequence[float], float], dim: int, order: int = None):
        if dim < 1:
            raise ValueError(f"Tensor dimension must be >= 1, got {dim}")

        array = np.array(entries, dtype=float)

        if order is None:
            order = array.ndim

        if order < 0:
            raise ValueError(f"Tensor order must be >= 0, got {order}")

        if array.size != dim ** order:
            raise ValueError(f"Expected {dim ** order} entries for order {order}, dim {dim}; got {array.size}")

        array = array.reshape((dim,) * order)

        if not np.all(np.isfinite(array)):
            raise ValueError("Tensor entries must be finite")

        array.setflags(write=False)

        self._array = array
        self._dim = dim
        self._order = order

    @staticmethod
    def scalar(value: float, dim: int) -> Tensor:
        return Tensor(value, dim, 0)

    @staticmethod
    def vector(values: typing.Sequence[float]) -> Tensor:
        values = np.asarray(values, dtype=float).ravel()
        return Tensor(values, values.size, 1)

    @staticmethod
    def zeros(order: int, dim: int) -> Tensor:
        return Tensor(np.zeros((dim,) * order), dim, order)

    @staticmethod
    def from_flat(entries: typing.Sequence[float], dim: int, order: int) -> Tensor:
        return Tensor(np.asarray(entries, dtype=float), dim, order)

    @property
    def order(self) -> int:
        return self._order

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def entries(self) -> np.ndarray:
        """
        :return: the d^m entries in row-major multi-index order.
        """
        return self._array.reshape(-1)

    def __getitem__(self, index: typing.Tuple[int, ...]) -> float:
        if not isinstance(index, tuple):
            index = (index,)

        return float(self._array[index])

    def __add__(self, other: Tensor) -> Tensor:
        self._check_same_shape(other)
        return Tensor(self._array + other._array, self._dim, self._order)

    def __sub__(self, other: Tensor) -> Tensor:
        self._check_same_shape(other)
        return Tensor(self._array - other._array, self._dim, self._order)

    def __mul__(self, factor: float) -> Tensor:
        return Tensor(self._array * float(factor), self._dim, self._order)

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return self * -1.0

    def __repr__(self) -> str:
        return f"Tensor(order={self._order}, dim={self._dim}, entries={self.entries.tolist()})"

    def outer(self, other: Tensor) -> Tensor:
        return TensorMath.outer(self, other)

    def contract(self, other: Tensor) -> Tensor:
        return TensorMath.contract(self, other)

    def inf_norm(self) -> float:
        return TensorMath.inf_norm(self)

    def almost_equal(self, other: Tensor, rel: float = 1e-12) -> bool:
        return self._order == other._order and self._dim == other._dim and \
            Compare.arrays_close(self._array, other._array, rel=rel)

    def _check_same_shape(self, other: Tensor):
        if self._order != other._order or self._dim != other._dim:
            raise ValueError(f"Shape mismatch: order {self._order}/dim {self._dim} "
                             f"vs order {other._order}/dim {other._dim}")


class TensorMath:

    @staticmethod
    def outer(x: Tensor, y: Tensor) -> Tensor:
        if x.dim != y.dim:
            raise ValueError(f"Dimension mismatch in outer product: {x.dim} vs {y.dim}")

        return Tensor(np.multiply.outer(x.array, y.array), x.dim, x.order + y.order)

    @staticmethod
    def tensor_power(v: Tensor, r: int) -> Tensor:
        if v.order != 1:
            raise ValueError(f"tensor_power expects an order-1 tensor, got order {v.order}")

        if r < 0:
            raise ValueError(f"tensor_power exponent must be >= 0, got {r}")

        result = np.ones(())
        for _ in range(r):
            result = np.multiply.outer(result, v.array)

        return Tensor(result, v.dim, r)

    @staticmethod
    def contract(x: Tensor, y: Tensor) -> Tensor:
        """
        <X,Y>_i = sum_j X_{ij} Y_j, summing over the trailing y.order indices of x.
        """
        if x.dim != y.dim:
            raise ValueError(f"Dimension mismatch in contraction: {x.dim} vs {y.dim}")

        if y.order > x.order:
            raise ValueError(f"Cannot contract order {x.order} with higher order {y.order}")

        return Tensor(np.tensordot(x.array, y.array, axes=y.order), x.dim, x.order - y.order)

    @staticmethod
    def inf_norm(x: Tensor) -> float:
        return float(np.max(np.abs(x.array), initial=0.0))

    @staticmethod
    def flat_powers(vectors: np.ndarray, r: int) -> np.ndarray:
        """
        Row-wise tensor powers of a batch of vectors, flattened in row-major order.
        :param vectors: (n, d) array
        :return: (n, d^r) array whose row i is vec(v_i^{⊗r})
        """
        vectors = np.asarray(vectors, dtype=float)
        n, d = vectors.shape

        result = np.ones((n, 1))
        for _ in range(r):
            result = (result[:, :, None] * vectors[:, None, :]).reshape(n, -1)

        return result

from __future__ import annotations

import json
import logging
import math
import typing

import numpy as np

from ridgesparse.constants import Constants
from ridgesparse.nets import HalfspaceMetric
from ridgesparse.pointsets import BallPoints
from ridgesparse.precision import Compare, Tolerance
from ridgesparse.tensors import Tensor, TensorMath

logger = logging.getLogger(__name__)


class SeparatedChainError(ValueError):
    """
    The atom's halfspace boundary separates x from the finest chain point, so the chain
    decomposition does not apply.
    """

    def __init__(self, level: int, message: str = None):
        self.level = level
        super().__init__(message or f"Atom separates x from its projection at chain level {level}")


class Atom:

    def __init__(self, omega: typing.Sequence[float], b: float = 0.0):
        omega = np.array(omega, dtype=float).ravel()
        omega.setflags(write=False)

        if not Compare.lin_eq(float(np.linalg.norm(omega)), 1.0, tol=Tolerance.unit_norm()):
            raise ValueError(f"Atom direction must have unit norm, got |omega| = {np.linalg.norm(omega)}")

        if not -1.0 <= b <= 1.0:
            raise ValueError(f"Atom offset must lie in [-1, 1], got {b}")

        self._omega = omega
        self._b = float(b)

    @property
    def omega(self) -> np.ndarray:
        return self._omega

    @property
    def b(self) -> float:
        return self._b

    @property
    def dim(self) -> int:
        return self._omega.size

    def activation(self, x: typing.Sequence[float]) -> float:
        return float(np.dot(self._omega, np.asarray(x, dtype=float)) + self._b)

    def __repr__(self):
        return f"Atom(omega={self._omega.tolist()}, b={self._b})"


class AtomMeasure:
    """
    Weighted atoms stored column-wise: directions (n, dim), offsets (n,), weights (n,).
    """

    PROBABILITY = "probability"
    SUBPROBABILITY = "subprobability"
    SIGNED = "signed"

    DIRECTION_KEY = "omega"
    OFFSET_KEY: typing.Optional[str] = "b"
    WEIGHT_KEY = "weight"

    def __init__(self,
                 directions: np.ndarray,
                 offsets: typing.Optional[np.ndarray],
                 weights: np.ndarray,
                 mode: str = PROBABILITY):
        directions = np.array(directions, dtype=float, ndmin=2)
        weights = np.array(weights, dtype=float).ravel()
        offsets = np.zeros(weights.size) if offsets is None else np.array(offsets, dtype=float).ravel()

        if directions.shape[0] != weights.size or offsets.size != weights.size:
            raise ValueError(f"Atom arrays disagree in length: {directions.shape[0]} directions, "
                             f"{offsets.size} offsets, {weights.size} weights")

        if mode not in (AtomMeasure.PROBABILITY, AtomMeasure.SUBPROBABILITY, AtomMeasure.SIGNED):
            raise ValueError(f"Unknown measure mode '{mode}'")

        if weights.size > 0:
            norms = np.linalg.norm(directions, axis=1)
            if np.any(np.abs(norms - 1.0) > Tolerance.unit_norm()):
                raise ValueError(f"Atom directions must have unit norm, worst deviation {np.max(np.abs(norms - 1.0))}")

        if np.any(np.abs(offsets) > 1.0):
            raise ValueError("Atom offsets must lie in [-1, 1]")

        if not np.all(np.isfinite(weights)):
            raise ValueError("Weights must be finite")

        if mode != AtomMeasure.SIGNED and np.any(weights < 0):
            raise ValueError(f"Weights must be nonnegative, minimum is {weights.min()}")

        if mode == AtomMeasure.PROBABILITY and not Compare.mass_eq(float(weights.sum()), 1.0):
            raise ValueError(f"Probability weights must sum to 1, got {weights.sum()!r}")

        for a in (directions, offsets, weights):
            a.setflags(write=False)

        self._directions = directions
        self._offsets = offsets
        self._weights = weights
        self._mode = mode

    def _new(self, directions, offsets, weights, mode) -> AtomMeasure:
        return type(self)(directions, offsets, weights, mode)

    @property
    def directions(self) -> np.ndarray:
        return self._directions

    @property
    def offsets(self) -> np.ndarray:
        return self._offsets

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def mode(self) -> str:
        return self._mode

    @property
    def support(self) -> int:
        return self._weights.size

    @property
    def dim(self) -> int:
        return self._directions.shape[1]

    @property
    def mass(self) -> float:
        return float(self._weights.sum())

    def atom(self, i: int) -> Atom:
        return Atom(self._directions[i], self._offsets[i])

    def atoms(self) -> typing.List[Atom]:
        return [self.atom(i) for i in range(self.support)]

    def subset(self, indices: typing.Sequence[int]) -> AtomMeasure:
        indices = np.asarray(indices, dtype=int)
        mode = AtomMeasure.SIGNED if self._mode == AtomMeasure.SIGNED else AtomMeasure.SUBPROBABILITY
        return self._new(self._directions[indices], self._offsets[indices], self._weights[indices], mode)

    def with_weights(self, weights: np.ndarray, mode: str = None) -> AtomMeasure:
        return self._new(self._directions, self._offsets, weights, mode or self._mode)

    def normalized(self) -> AtomMeasure:
        mass = self.mass
        if mass <= 0:
            raise ValueError("Cannot normalize a measure with zero mass")

        return self._new(self._directions, self._offsets, self._weights / mass, AtomMeasure.PROBABILITY)

    def merged(self) -> AtomMeasure:
        """
        Merges atoms with identical parameters (to 12 decimals) by adding weights. The first
        occurrence keeps its position.
        """
        if self.support == 0:
            return self

        keys = np.round(np.column_stack([self._directions, self._offsets]), 12)
        _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.ravel()

        if first.size == self.support:
            return self

        sums = np.bincount(inverse, weights=self._weights, minlength=first.size)
        order = np.argsort(first, kind="stable")

        logger.debug(f"Merged {self.support - first.size} duplicate atoms")

        return self._new(self._directions[first[order]], self._offsets[first[order]], sums[order], self._mode)

    def concatenate(self, other: AtomMeasure, mode: str = None) -> AtomMeasure:
        return self._new(np.concatenate([self._directions, other._directions]),
                         np.concatenate([self._offsets, other._offsets]),
                         np.concatenate([self._weights, other._weights]),
                         mode or self._mode)

    def to_records(self) -> typing.List[typing.Dict[str, typing.Any]]:
        records = []
        for i in range(self.support):
            record = {self.DIRECTION_KEY: self._directions[i].tolist()}
            if self.OFFSET_KEY is not None:
                record[self.OFFSET_KEY] = float(self._offsets[i])
            record[self.WEIGHT_KEY] = float(self._weights[i])
            records.append(record)

        return records

    @classmethod
    def from_records(cls, records: typing.Sequence[typing.Dict[str, typing.Any]], mode: str = None):
        """
        Builds a measure from serialized records, re-normalizing directions to unit length.
        """
        mode = mode or cls.default_mode()

        if len(records) == 0:
            raise ValueError("Measure record list is empty")

        try:
            directions = np.array([r[cls.DIRECTION_KEY] for r in records], dtype=float)
            weights = np.array([r[cls.WEIGHT_KEY] for r in records], dtype=float)
            offsets = None if cls.OFFSET_KEY is None else \
                np.array([r.get(cls.OFFSET_KEY, 0.0) for r in records], dtype=float)
        except (KeyError, TypeError) as e:
            raise ValueError(f"Malformed measure record: {e}") from e

        if directions.ndim != 2:
            raise ValueError("All atom directions must have the same length")

        lengths = np.linalg.norm(directions, axis=1)
        if np.any(lengths == 0):
            raise ValueError("Atom direction cannot be the zero vector")

        return cls(directions / lengths[:, None], offsets, weights, mode)

    @classmethod
    def default_mode(cls) -> str:
        return AtomMeasure.PROBABILITY

    def save(self, path: str):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.to_records(), f, indent=1)
            f.write("\n")

    @classmethod
    def load(cls, path: str, mode: str = None):
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_records(json.load(f), mode)


class DiscreteMeasure(AtomMeasure):
    pass


class SignedNetwork(AtomMeasure):

    WEIGHT_KEY = "coefficient"

    def __init__(self,
                 directions: np.ndarray,
                 offsets: typing.Optional[np.ndarray],
                 coefficients: np.ndarray,
                 mode: str = AtomMeasure.SIGNED,
                 ell1_bound: float = None):
        super().__init__(directions, offsets, coefficients, AtomMeasure.SIGNED)

        computed = float(np.abs(self.weights).sum())
        if ell1_bound is not None and not Compare.mass_eq(computed, float(ell1_bound)):
            raise ValueError(f"Declared l1 bound {ell1_bound} differs from computed {computed}")

        self._ell1_bound = computed

    @classmethod
    def default_mode(cls) -> str:
        return AtomMeasure.SIGNED

    @property
    def coefficients(self) -> np.ndarray:
        return self.weights

    @property
    def ell1_bound(self) -> float:
        return self._ell1_bound

    def part(self, sign: int) -> typing.Tuple[float, typing.Optional[DiscreteMeasure]]:
        """
        :param sign: +1 or -1
        :return: mass of the part and the part normalized to a probability measure (None if empty)
        """
        selected = np.flatnonzero(sign * self.weights > 0)
        mass = float(np.abs(self.weights[selected]).sum())

        if selected.size == 0 or mass <= 0:
            return 0.0, None

        return mass, DiscreteMeasure(self.directions[selected], self.offsets[selected],
                                     np.abs(self.weights[selected]) / mass)

    @staticmethod
    def combine(parts: typing.Sequence[typing.Tuple[int, float, DiscreteMeasure]]) -> SignedNetwork:
        directions, offsets, coefficients = [], [], []
        for sign, mass, measure in parts:
            directions.append(measure.directions)
            offsets.append(measure.offsets)
            coefficients.append(sign * mass * measure.weights)

        return SignedNetwork(np.concatenate(directions), np.concatenate(offsets), np.concatenate(coefficients))


class RidgeKernel:
    """
    A ridge dictionary x -> g(omega . x + b) with a piecewise polynomial profile g of degree k.
    The m-th derivative in x is g^(m)(s) * omega^{⊗m}; subclasses supply the scalar parts.
    """

    spherical = False

    def __init__(self, k: int):
        if not 0 <= k <= Constants.max_k():
            raise ValueError(f"Order k must be in [0, {Constants.max_k()}], got {k}")

        self._k = k

    @property
    def k(self) -> int:
        return self._k

    def intrinsic_dim(self, dim: int) -> int:
        """
        Dimension of the domain the atoms' points live in, given the ambient vector length.
        """
        return dim

    @property
    def name(self) -> str:
        raise NotImplementedError()

    def check_order(self, m: int):
        if not 0 <= m <= self._k:
            raise ValueError(f"Derivative order m must be in [0, {self._k}], got {m}")

    @staticmethod
    def activation(points: np.ndarray, directions: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ directions.T + offsets[None, :]

    @staticmethod
    def active(s: np.ndarray) -> np.ndarray:
        # boundary belongs to the active branch
        return s >= 0

    def derivative_scalars(self, s: np.ndarray, m: int) -> np.ndarray:
        raise NotImplementedError()

    def residual_scalars(self, s_x: np.ndarray, s_p: np.ndarray, m: int) -> np.ndarray:
        raise NotImplementedError()

    def continuous_separation(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def covering_constant(self, dim: int) -> float:
        raise NotImplementedError()

    def sample_pool(self, n: int, dim: int) -> np.ndarray:
        raise NotImplementedError()

    def sample_grid(self, n: int, dim: int) -> np.ndarray:
        raise NotImplementedError()

    def random_points(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        raise NotImplementedError()

    def derivative_tensor(self, theta: Atom, x: typing.Sequence[float], m: int) -> Tensor:
        self.check_order(m)
        x = np.asarray(x, dtype=float)

        scalar = float(self.derivative_scalars(np.array([theta.activation(x)]), m)[0])
        return TensorMath.tensor_power(Tensor.vector(theta.omega), m) * scalar

    def taylor(self, theta: Atom, x1: typing.Sequence[float], x2: typing.Sequence[float], m: int, r: int) -> Tensor:
        """
        r-th order Taylor polynomial of the m-th derivative, expanded at x1 and evaluated at x2.
        """
        self.check_order(m)
        if r < 0 or m + r > self._k:
            raise ValueError(f"Taylor order must satisfy 0 <= r and m + r <= {self._k}, got m={m}, r={r}")

        x1 = np.asarray(x1, dtype=float)
        step = Tensor.vector(np.asarray(x2, dtype=float) - x1)

        result = Tensor.zeros(m, theta.dim)
        for q in range(r + 1):
            term = self.derivative_tensor(theta, x1, m + q).contract(TensorMath.tensor_power(step, q))
            result = result + term * (1.0 / math.factorial(q))

        return result

    def phi(self, theta: Atom, x: typing.Sequence[float], proj: typing.Optional[typing.Sequence[float]], m: int) -> Tensor:
        derivative = self.derivative_tensor(theta, x, m)

        if proj is None:
            return derivative

        return derivative - self.taylor(theta, proj, x, m, self._k - m)

    def reference_phi(self, directions: np.ndarray, offsets: np.ndarray, x: np.ndarray,
                      proj: typing.Optional[np.ndarray], m: int) -> np.ndarray:
        """
        Tensor level phi for a batch of atoms, flattened to (t, dim^m).
        """
        return np.array([self.phi(Atom(directions[i], offsets[i]), x, proj, m).entries
                         for i in range(directions.shape[0])]).reshape(directions.shape[0], -1)

    def derivative_field(self, directions: np.ndarray, offsets: np.ndarray, weights: np.ndarray,
                         points: np.ndarray, m: int, chunk: int = 2048) -> np.ndarray:
        """
        sum_i w_i * g^(m)(omega_i . x + b_i) omega_i^{⊗m} for every row x of points.
        :return: (n, dim^m) array
        """
        self.check_order(m)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        powers = TensorMath.flat_powers(directions, m)

        result = np.empty((points.shape[0], powers.shape[1]))
        for start in range(0, points.shape[0], chunk):
            block = points[start:start + chunk]
            scalars = self.derivative_scalars(self.activation(block, directions, offsets), m) * weights[None, :]
            result[start:start + chunk] = scalars @ powers

        return result

    def measure_derivative(self, tau: AtomMeasure, x: typing.Sequence[float], m: int) -> Tensor:
        field = self.derivative_field(tau.directions, tau.offsets, tau.weights, np.asarray(x, dtype=float)[None, :], m)
        return Tensor.from_flat(field[0], tau.dim, m)


class ReluKernel(RidgeKernel):
    """
    sigma_k(t) = max(t, 0)^k, with 0^0 = 1.
    """

    def __init__(self, k: int):
        super().__init__(k)
        self._falling = [math.factorial(k) / math.factorial(k - m) for m in range(k + 1)]

    @property
    def name(self) -> str:
        return f"relu{self.k}"

    def derivative_scalars(self, s: np.ndarray, m: int) -> np.ndarray:
        self.check_order(m)
        s = np.asarray(s, dtype=float)
        return np.where(self.active(s), self._falling[m] * np.power(np.maximum(s, 0.0), self.k - m), 0.0)

    def residual_scalars(self, s_x: np.ndarray, s_p: np.ndarray, m: int) -> np.ndarray:
        # the Taylor residual of a piecewise polynomial vanishes unless the kink lies between x and p
        self.check_order(m)
        s_x = np.asarray(s_x, dtype=float)
        jump = self.active(s_x).astype(float) - self.active(np.asarray(s_p, dtype=float)).astype(float)
        return self._falling[m] * np.power(s_x, self.k - m) * jump

    def continuous_separation(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        distance = np.linalg.norm(np.atleast_2d(z) - np.asarray(x)[None, :], axis=1)
        return HalfspaceMetric.kappa(np.asarray(x).size) * distance / 2.0

    def covering_constant(self, dim: int) -> float:
        # a pool point left out of a delta/2 packing has continuous distance < delta to the net
        return 2.0 / (HalfspaceMetric.kappa(dim) * math.sqrt(dim))

    def sample_pool(self, n: int, dim: int) -> np.ndarray:
        return BallPoints.halton(n, dim)

    def sample_grid(self, n: int, dim: int) -> np.ndarray:
        return BallPoints.halton(n, dim, scramble_seed=0)

    def random_points(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        return BallPoints.uniform(rng, n, dim)


class DecompositionTensors:

    def __init__(self, m: int, k: int, tensors: typing.Dict[typing.Tuple[int, int], Tensor]):
        self._m = m
        self._k = k
        self._tensors = tensors

    @property
    def m(self) -> int:
        return self._m

    @property
    def orders(self) -> typing.List[int]:
        return list(range(1, self._k - self._m + 1))

    def __getitem__(self, key: typing.Tuple[int, int]) -> Tensor:
        return self._tensors[key]

    def __len__(self):
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def norms(self) -> typing.Dict[typing.Tuple[int, int], float]:
        return {key: t.inf_norm() for key, t in self._tensors.items()}

    def scaled_norms(self) -> typing.Dict[typing.Tuple[int, int], float]:
        """
        :return: ||Gamma_{i,l}|| 2^{il} per (i, l)
        """
        return {(i, l): t.inf_norm() * 2.0 ** (i * l) for (i, l), t in self._tensors.items()}

    def max_scaled_norm(self) -> float:
        return max(self.scaled_norms().values(), default=0.0)

    def within_bound(self, c: float) -> bool:
        return self.max_scaled_norm() <= c


class Decomposition:
    """
    Writes sigma^(m)(x) as a sum of level-wise Taylor residuals along a projection chain
    x_1, ..., x_L (x_l on level l) contracted against correction tensors Gamma_{i,l}(x).

    Inner tensors A_{i,j} over the chain do not depend on m:
        A^{l+1}_{i,j} = sum_{q=0}^{i} (1/q!) (x_{l+1} - x_l)^{⊗q} ⊗ A^l_{i-q,j},  A_{0,j} = 1, A^l_{i,l} = 0 (i >= 1)
        Gamma_{i,j}(x) = sum_{q=0}^{i} (1/q!) (x - x_L)^{⊗q} ⊗ A^L_{i-q,j}
    """

    def __init__(self, k: int):
        self._k = k
        self._cache: typing.Dict[bytes, typing.Dict[typing.Tuple[int, int], Tensor]] = {}

    def gammas(self, chain: np.ndarray, m: int, x: typing.Sequence[float]) -> DecompositionTensors:
        chain = np.atleast_2d(np.asarray(chain, dtype=float))
        x = np.asarray(x, dtype=float)
        key = chain.tobytes() + x.tobytes()

        if key not in self._cache:
            self._cache[key] = Decomposition._all_gammas(chain, x, self._k)

        full = self._cache[key]
        return DecompositionTensors(m, self._k, {(i, l): t for (i, l), t in full.items() if 1 <= i <= self._k - m})

    @staticmethod
    def _all_gammas(chain: np.ndarray, x: np.ndarray, k: int) -> typing.Dict[typing.Tuple[int, int], Tensor]:
        levels, d = chain.shape
        one = Tensor.scalar(1.0, d)

        def spread(inner: typing.List[Tensor], step: Tensor) -> typing.List[Tensor]:
            powers = [TensorMath.tensor_power(step, q) * (1.0 / math.factorial(q)) for q in range(k + 1)]
            out = []
            for i in range(k + 1):
                total = Tensor.zeros(i, d)
                for q in range(i + 1):
                    total = total + powers[q].outer(inner[i - q])
                out.append(total)
            return out

        # inner[j][i] holds A_{i,j+1} at the current chain level
        inner: typing.List[typing.List[Tensor]] = []
        for level in range(levels):
            if level > 0:
                step = Tensor.vector(chain[level] - chain[level - 1])
                inner = [spread(a, step) for a in inner]
            inner.append([one] + [Tensor.zeros(i, d) for i in range(1, k + 1)])

        tail = Tensor.vector(x - chain[-1])
        result = {}
        for j, a in enumerate(inner):
            gamma = spread(a, tail)
            for i in range(1, k + 1):
                result[(i, j + 1)] = gamma[i]

        return result

    @staticmethod
    def decomposition_gammas(chain: np.ndarray, m: int, x: typing.Sequence[float], k: int) -> DecompositionTensors:
        return Decomposition(k).gammas(chain, m, x)

    def reconstruct(self, kernel: RidgeKernel, theta: Atom, x: typing.Sequence[float], chain: np.ndarray, m: int) -> Tensor:
        chain = np.atleast_2d(np.asarray(chain, dtype=float))
        gammas = self.gammas(chain, m, x)

        total = Tensor.zeros(m, theta.dim)
        for l in range(1, chain.shape[0] + 1):
            proj = None if l == 1 else chain[l - 2]
            total = total + kernel.phi(theta, chain[l - 1], proj, m)
            for i in gammas.orders:
                total = total + kernel.phi(theta, chain[l - 1], proj, m + i).contract(gammas[(i, l)])

        return total

    def verify(self, kernel: RidgeKernel, theta: Atom, x: typing.Sequence[float], chain: np.ndarray, m: int) -> float:
        """
        :return: l-infinity residual between sigma^(m)(x) and its chain decomposition
        :raises SeparatedChainError: when theta separates x from the finest chain point
        """
        chain = np.atleast_2d(np.asarray(chain, dtype=float))
        kernel.check_order(m)

        if bool(kernel.active(theta.activation(x))) != bool(kernel.active(theta.activation(chain[-1]))):
            raise SeparatedChainError(chain.shape[0])

        residual = (kernel.derivative_tensor(theta, x, m) - self.reconstruct(kernel, theta, x, chain, m)).inf_norm()
        if residual > Tolerance.decomposition():
            logger.warning(f"decomposition residual {residual:.3e} at order {m} over {chain.shape[0]} levels")

        return residual

    @staticmethod
    def verify_decomposition(kernel: RidgeKernel, theta: Atom, x: typing.Sequence[float], chain: np.ndarray, m: int) -> float:
        return Decomposition(kernel.k).verify(kernel, theta, x, chain, m)

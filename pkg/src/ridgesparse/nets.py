from __future__ import annotations

import functools
import json
import logging
import math
import typing

import numpy as np
from scipy import integrate

from ridgesparse.constants import Constants

if typing.TYPE_CHECKING:
    from ridgesparse.reluk import RidgeKernel

logger = logging.getLogger(__name__)

# popcount of every byte value
_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


class HalfspaceMetric:
    """
    Mixed packing metric: half the probability that a random hyperplane of the kernel's family
    separates x and z, plus half the fraction of reference atoms whose boundary separates them.
    """

    def __init__(self, kernel: RidgeKernel, directions: np.ndarray, offsets: np.ndarray):
        self._kernel = kernel
        self._directions = np.asarray(directions, dtype=float)
        self._offsets = np.asarray(offsets, dtype=float)
        self._n = self._directions.shape[0]

        if self._n == 0:
            raise ValueError("Metric needs at least one reference atom")

    @staticmethod
    @functools.lru_cache(maxsize=None)
    def kappa(d: int) -> float:
        """
        E|omega . u| over uniform omega on S^{d-1}, for a fixed unit vector u.
        """
        if d < 1:
            raise ValueError(f"Dimension must be >= 1, got {d}")

        if d == 1:
            return 1.0

        # the density of omega . u on [-1, 1] is proportional to (1 - t^2)^((d-3)/2)
        a = (d - 3) / 2.0
        numerator, _ = integrate.quad(lambda t: t * (1.0 + t) ** a, 0.0, 1.0, weight="alg", wvar=(0.0, a),
                                      epsabs=1e-13, epsrel=1e-12)
        denominator, _ = integrate.quad(lambda t: (1.0 + t) ** a, 0.0, 1.0, weight="alg", wvar=(0.0, a),
                                        epsabs=1e-13, epsrel=1e-12)

        return numerator / denominator

    @property
    def kernel(self) -> RidgeKernel:
        return self._kernel

    @property
    def size(self) -> int:
        return self._n

    @property
    def dim(self) -> int:
        return self._directions.shape[1]

    def signs(self, points: np.ndarray) -> np.ndarray:
        return self._kernel.active(self._kernel.activation(points, self._directions, self._offsets))

    def sign_bits(self, points: np.ndarray) -> np.ndarray:
        return np.packbits(self.signs(points), axis=1)

    @staticmethod
    def count_differences(bits: np.ndarray, others: np.ndarray) -> np.ndarray:
        """
        :param bits: packed signs of one point, shape (B,)
        :param others: packed signs of several points, shape (n, B)
        """
        return _POPCOUNT[np.bitwise_xor(others, bits[None, :])].sum(axis=1)

    def separation_count(self, x: typing.Sequence[float], z: typing.Sequence[float]) -> int:
        signs = self.signs(np.vstack([np.asarray(x, dtype=float), np.asarray(z, dtype=float)]))
        return int(np.count_nonzero(signs[0] != signs[1]))

    def continuous(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        return self._kernel.continuous_separation(np.asarray(x, dtype=float), np.atleast_2d(z))

    def mixed_distance(self, x: typing.Sequence[float], z: typing.Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        continuous = float(self.continuous(x, z[None, :])[0])
        return 0.5 * continuous + 0.5 * self.separation_count(x, z) / self._n

    def mixed_distances(self, x: np.ndarray, others: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        bits = self.sign_bits(x[None, :])[0]
        return 0.5 * self.continuous(x, others) + \
            0.5 * self.count_differences(bits, self.sign_bits(others)) / self._n


class NetBuilder:

    @staticmethod
    def build_net(metric: HalfspaceMetric, delta: float, pool: np.ndarray,
                  max_points: int = None) -> np.ndarray:
        """
        Greedy maximal packing over the pool: a candidate is admitted iff its mixed distance to
        every admitted point is >= delta / 2.
        :return: indices into the pool of the admitted points, in admission order
        """
        pool = np.atleast_2d(np.asarray(pool, dtype=float))
        if pool.shape[0] == 0:
            raise ValueError("Cannot build a net from an empty pool")

        return NetBuilder._pack(metric, delta, pool, metric.sign_bits(pool), np.arange(pool.shape[0]), max_points)

    @staticmethod
    def _pack(metric: HalfspaceMetric, delta: float, pool: np.ndarray, bits: np.ndarray,
              order: np.ndarray, max_points: typing.Optional[int]) -> np.ndarray:
        admitted = np.empty(order.size, dtype=int)
        count = 0
        radius = delta / 2.0

        for candidate in order:
            if count > 0:
                chosen = admitted[:count]
                half_continuous = 0.5 * metric.continuous(pool[candidate], pool[chosen])
                close = np.flatnonzero(half_continuous < radius)

                if close.size > 0:
                    separated = metric.count_differences(bits[candidate], bits[chosen[close]])
                    if np.any(half_continuous[close] + 0.5 * separated / metric.size < radius):
                        continue

            if max_points is not None and count >= max_points:
                logger.warning(f"Net at delta={delta} capped at {max_points} points; pool maximality lost")
                break

            admitted[count] = candidate
            count += 1

        return admitted[:count].copy()


class MultiscaleNet:
    """
    Nested nets N_1 ⊂ N_2 ⊂ ... ⊂ N_L at scales delta_l = 2^-l, all drawn from one candidate pool.
    """

    def __init__(self,
                 metric: HalfspaceMetric,
                 pool: np.ndarray,
                 level_indices: typing.List[np.ndarray],
                 parents: typing.List[np.ndarray]):
        self._metric = metric
        self._pool = pool
        self._level_indices = level_indices
        self._parents = parents
        self._pool_bits = metric.sign_bits(pool)

    @staticmethod
    def level_count(n: int, max_levels: int = None) -> int:
        # smallest L with 2^L > n
        levels = max(1, int(n).bit_length())
        if max_levels is None or max_levels >= levels:
            return levels

        clamped = max(1, max_levels)
        logger.warning(f"Net depth clamped to {clamped} levels; {levels} are needed for 2^L > {n}, "
                       f"so finest-level chains may be separated")
        return clamped

    @staticmethod
    def pool_size(levels: int, dim: int, pool_min: int, pool_cap: int) -> int:
        return int(min(max(64 * 2 ** (min(levels, 30) * dim), pool_min), pool_cap))

    @staticmethod
    def build(metric: HalfspaceMetric,
              max_levels: int = None,
              pool_min: int = 4096,
              pool_cap: int = 20000,
              max_net_points: int = 20000) -> MultiscaleNet:
        kernel = metric.kernel
        levels = MultiscaleNet.level_count(metric.size, max_levels)
        pool = kernel.sample_pool(MultiscaleNet.pool_size(levels, metric.dim, pool_min, pool_cap), metric.dim)
        bits = metric.sign_bits(pool)

        logger.info(f"Building {levels} net levels over {metric.size} atoms from a pool of {pool.shape[0]} points")

        level_indices = []
        parents = []
        previous = np.zeros(0, dtype=int)

        for level in range(1, levels + 1):
            rest = np.setdiff1d(np.arange(pool.shape[0]), previous, assume_unique=True)
            order = np.concatenate([previous, rest])
            admitted = NetBuilder._pack(metric, 2.0 ** -level, pool, bits, order, max_net_points)

            if level == 1:
                parent = np.zeros(admitted.size, dtype=int)
            else:
                net = level_indices[-1]
                parent = np.array([MultiscaleNet._nearest(metric, pool[i], bits[i], pool[net], bits[net])
                                   for i in admitted], dtype=int)

            level_indices.append(admitted)
            parents.append(parent)
            previous = admitted

            logger.debug(f"Net level {level}: {admitted.size} points")

        return MultiscaleNet(metric, pool, level_indices, parents)

    @staticmethod
    def _nearest(metric: HalfspaceMetric, x: np.ndarray, x_bits: np.ndarray,
                 net_points: np.ndarray, net_bits: np.ndarray) -> int:
        """
        Position in the net of the point with minimal mixed distance to x; lowest position wins ties.
        Only points whose continuous part alone stays below the best full distance are fully evaluated.
        """
        half_continuous = 0.5 * metric.continuous(x, net_points)
        best = int(np.argmin(half_continuous))
        best_value = half_continuous[best] + \
            0.5 * metric.count_differences(x_bits, net_bits[best][None, :])[0] / metric.size

        candidates = np.flatnonzero(half_continuous <= best_value)
        mixed = half_continuous[candidates] + \
            0.5 * metric.count_differences(x_bits, net_bits[candidates]) / metric.size

        return int(candidates[np.argmin(mixed)])

    @property
    def metric(self) -> HalfspaceMetric:
        return self._metric

    @property
    def levels(self) -> int:
        return len(self._level_indices)

    def delta(self, level: int) -> float:
        return 2.0 ** -level

    def points(self, level: int) -> np.ndarray:
        return self._pool[self._level_indices[level - 1]]

    def size(self, level: int) -> int:
        return self._level_indices[level - 1].size

    def sizes(self) -> typing.List[int]:
        return [i.size for i in self._level_indices]

    def parents(self, level: int) -> np.ndarray:
        """
        For level >= 2, position in level - 1 of the projection of each level point.
        """
        return self._parents[level - 1]

    def parent_points(self, level: int) -> typing.Optional[np.ndarray]:
        if level == 1:
            return None

        return self.points(level - 1)[self._parents[level - 1]]

    def project_index(self, level: int, x: typing.Sequence[float]) -> int:
        x = np.asarray(x, dtype=float)
        x_bits = self._metric.sign_bits(x[None, :])[0]
        net = self._level_indices[level - 1]
        return MultiscaleNet._nearest(self._metric, x, x_bits, self._pool[net], self._pool_bits[net])

    def project(self, level: int, x: typing.Sequence[float]) -> np.ndarray:
        return self.points(level)[self.project_index(level, x)]

    def build_chain(self, x: typing.Sequence[float]) -> np.ndarray:
        """
        x_L = pi_L(x), x_l = pi_l(x_{l+1}).
        :return: (L, dim) array, row l - 1 holding x_l
        """
        chain = np.empty((self.levels, self._metric.dim))
        position = self.project_index(self.levels, x)
        chain[-1] = self.points(self.levels)[position]

        for level in range(self.levels - 1, 0, -1):
            position = self._parents[level][position]
            chain[level - 1] = self.points(level)[position]

        return chain

    def haussler_bound(self, level: int, c0: float = None) -> float:
        c0 = Constants.haussler_constant() if c0 is None else c0
        return (2.0 * c0 / self.delta(level)) ** self._metric.dim

    def covering_radius(self, level: int, c1: float = None) -> float:
        dim = self._metric.dim
        c1 = self._metric.kernel.covering_constant(dim) if c1 is None else c1
        return c1 * self.delta(level) * math.sqrt(dim)

    def covering_stats(self, level: int, samples: np.ndarray) -> typing.Tuple[np.ndarray, np.ndarray]:
        """
        :return: Euclidean distance to the projection and separated fraction, per sample
        """
        samples = np.atleast_2d(samples)
        distances = np.empty(samples.shape[0])
        fractions = np.empty(samples.shape[0])

        for i, x in enumerate(samples):
            z = self.project(level, x)
            distances[i] = np.linalg.norm(x - z)
            fractions[i] = self._metric.separation_count(x, z) / self._metric.size

        return distances, fractions

    def summary(self) -> typing.Dict[str, typing.Any]:
        return {
            "levels": self.levels,
            "sizes": self.sizes(),
            "pool": int(self._pool.shape[0]),
            "reference_atoms": self._metric.size,
        }

    def to_json(self) -> str:
        return json.dumps({
            "levels": [{"level": l, "delta": self.delta(l), "points": self.points(l).tolist()}
                       for l in range(1, self.levels + 1)]
        })

    def save(self, path: str):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_json())
            f.write("\n")


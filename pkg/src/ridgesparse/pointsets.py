from __future__ import annotations

import logging
import math

import numpy as np
from scipy.stats import norm, qmc

logger = logging.getLogger(__name__)

"""
Deterministic point sets on the unit ball B^d and on spheres, plus seeded random samplers.

Halton based sets are prefixes of one fixed sequence: the first n points of a size-n' set
(n' > n) are exactly the size-n set.
"""


class BallPoints:

    @staticmethod
    def halton(n: int, d: int, scramble_seed: int = None) -> np.ndarray:
        """
        First n points of a Halton sequence mapped to [-1,1]^d that fall inside B^d.
        :param scramble_seed: None for the plain sequence, else a fixed scrambling
        """
        if n < 0:
            raise ValueError(f"Point count must be >= 0, got {n}")

        if d < 1:
            raise ValueError(f"Dimension must be >= 1, got {d}")

        if scramble_seed is None:
            sampler = qmc.Halton(d=d, scramble=False)
            sampler.fast_forward(1)
        else:
            sampler = qmc.Halton(d=d, scramble=True, seed=scramble_seed)

        accept_rate = BallPoints.volume_fraction(d)
        chunks = []
        found = 0

        while found < n:
            draw = max(64, int(math.ceil(1.1 * (n - found) / accept_rate)))
            cube = 2.0 * sampler.random(draw) - 1.0
            inside = cube[np.einsum("ij,ij->i", cube, cube) <= 1.0]
            chunks.append(inside)
            found += inside.shape[0]

        if not chunks:
            return np.zeros((0, d))

        return np.concatenate(chunks)[:n]

    @staticmethod
    def volume_fraction(d: int) -> float:
        # vol(B^d) / 2^d
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) / 2 ** d

    @staticmethod
    def uniform(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
        directions = SpherePoints.uniform(rng, n, d)
        radii = rng.random(n) ** (1.0 / d)
        return directions * radii[:, None]


class SpherePoints:

    @staticmethod
    def spiral(n: int) -> np.ndarray:
        """
        Fibonacci spiral on S^2 in R^3.
        """
        if n < 1:
            raise ValueError(f"Point count must be >= 1, got {n}")

        offset = 2.0 / n
        increment = math.pi * (3.0 - math.sqrt(5.0))

        i = np.arange(n)
        y = i * offset - 1.0 + offset / 2.0
        r = np.sqrt(np.clip(1.0 - y * y, 0.0, None))
        angle = ((i + 1) % n) * increment

        return np.stack([np.cos(angle) * r, y, np.sin(angle) * r], axis=1)

    @staticmethod
    def gaussian_halton(n: int, dim: int) -> np.ndarray:
        """
        Halton points pushed through the normal quantile and normalized, on S^{dim-1} in R^dim.
        """
        if n < 0:
            raise ValueError(f"Point count must be >= 0, got {n}")

        sampler = qmc.Halton(d=dim, scramble=False)
        sampler.fast_forward(1)

        gaussian = norm.ppf(sampler.random(n))
        lengths = np.linalg.norm(gaussian, axis=1)

        return gaussian / lengths[:, None]

    @staticmethod
    def grid(n: int, dim: int) -> np.ndarray:
        if dim == 3:
            return SpherePoints.spiral(n)

        return SpherePoints.gaussian_halton(n, dim)

    @staticmethod
    def uniform(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        gaussian = rng.standard_normal((n, dim))
        lengths = np.linalg.norm(gaussian, axis=1)
        lengths[lengths == 0.0] = 1.0
        return gaussian / lengths[:, None]

    @staticmethod
    def normalize(vectors: np.ndarray) -> np.ndarray:
        vectors = np.asarray(vectors, dtype=float)
        lengths = np.linalg.norm(vectors, axis=-1, keepdims=True)

        if np.any(lengths == 0.0):
            raise ValueError("Cannot normalize a zero vector")

        return vectors / lengths

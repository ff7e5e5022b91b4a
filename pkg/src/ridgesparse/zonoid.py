from __future__ import annotations

import dataclasses
import logging
import math
import typing

import numpy as np

from ridgesparse.config import ReductionConfig
from ridgesparse.pointsets import SpherePoints
from ridgesparse.reluk import AtomMeasure, RidgeKernel
from ridgesparse.sparsify import Sparsifier

logger = logging.getLogger(__name__)


class SphericalMeasure(AtomMeasure):
    """
    Generating measure of a zonoid: weighted unit vectors y_i on S^d in R^{d+1}.
    """

    DIRECTION_KEY = "y"
    OFFSET_KEY = None

    def __init__(self, directions: np.ndarray, offsets: typing.Optional[np.ndarray], weights: np.ndarray,
                 mode: str = AtomMeasure.PROBABILITY):
        if offsets is not None and np.any(np.asarray(offsets) != 0):
            raise ValueError("Spherical atoms carry no offset")

        super().__init__(directions, None, weights, mode)

    @staticmethod
    def of(points: np.ndarray, weights: np.ndarray = None) -> SphericalMeasure:
        points = np.atleast_2d(points)
        if weights is None:
            weights = np.full(points.shape[0], 1.0 / points.shape[0])

        return SphericalMeasure(points, None, weights)


class AbsKernel(RidgeKernel):
    """
    K(x, y) = |x . y| on the sphere, with gradient sgn(x . y) y; sgn(0) = +1.
    """

    spherical = True

    def __init__(self):
        super().__init__(1)

    @property
    def name(self) -> str:
        return "abs"

    def intrinsic_dim(self, dim: int) -> int:
        return dim - 1

    @staticmethod
    def sign(s: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(s) >= 0, 1.0, -1.0)

    def derivative_scalars(self, s: np.ndarray, m: int) -> np.ndarray:
        self.check_order(m)
        s = np.asarray(s, dtype=float)
        return np.abs(s) if m == 0 else AbsKernel.sign(s)

    def residual_scalars(self, s_x: np.ndarray, s_p: np.ndarray, m: int) -> np.ndarray:
        self.check_order(m)
        s_x = np.asarray(s_x, dtype=float)
        jump = AbsKernel.sign(s_x) - AbsKernel.sign(s_p)
        return s_x * jump if m == 0 else jump

    def continuous_separation(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        # a uniformly random great circle separates x and z with probability angle / pi
        cosines = np.clip(np.atleast_2d(z) @ np.asarray(x, dtype=float), -1.0, 1.0)
        return np.arccos(cosines) / math.pi

    def covering_constant(self, dim: int) -> float:
        return math.pi / math.sqrt(dim)

    def sample_pool(self, n: int, dim: int) -> np.ndarray:
        return SpherePoints.gaussian_halton(n, dim)

    def sample_grid(self, n: int, dim: int) -> np.ndarray:
        return SpherePoints.grid(n, dim)

    def random_points(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        return SpherePoints.uniform(rng, n, dim)


class Zonoid:

    @staticmethod
    def support_values(tau: AtomMeasure, points: np.ndarray) -> np.ndarray:
        """
        sum_i w_i |x . y_i| for every row x.
        """
        return np.abs(np.atleast_2d(points) @ tau.directions.T) @ tau.weights

    @staticmethod
    def support_value(tau: AtomMeasure, x: typing.Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        if abs(np.linalg.norm(x) - 1.0) > 1e-12:
            raise ValueError(f"Support values are taken at unit vectors, got |x| = {np.linalg.norm(x)}")

        return float(Zonoid.support_values(tau, x[None, :])[0])

    @staticmethod
    def deviation(tau: AtomMeasure, tau_prime: AtomMeasure, grid: np.ndarray) -> float:
        return float(np.max(np.abs(Zonoid.support_values(tau, grid) - Zonoid.support_values(tau_prime, grid))))

    @staticmethod
    def containment_eps(tau: AtomMeasure, tau_prime: AtomMeasure, grid: np.ndarray) -> float:
        """
        Smallest eps with Z ⊂ c P ⊂ (1 + eps) Z for some scaling c, measured on the grid.
        """
        reference = Zonoid.support_values(tau, grid)
        if np.any(reference <= 0):
            raise ValueError("Degenerate zonoid: zero support value on the grid")

        ratio = Zonoid.support_values(tau_prime, grid) / reference
        if np.min(ratio) <= 0:
            return math.inf

        return float(np.max(ratio) / np.min(ratio) - 1.0)

    @staticmethod
    def zonoid_exponent(d: int) -> float:
        return -0.5 - 3.0 / (2.0 * d)

    @staticmethod
    def sparsifier(config: ReductionConfig = None) -> Sparsifier:
        config = config or ReductionConfig(k=1)
        if config.k != 1:
            config = dataclasses.replace(config, k=1, beta=config.beta if config.beta > 1.5 else None)

        return Sparsifier(AbsKernel(), config)

    @staticmethod
    def zonoid_sparsify(tau: SphericalMeasure, n: int, config: ReductionConfig = None, seed: int = 0) -> AtomMeasure:
        return Zonoid.sparsifier(config).sparsify_to(tau, n, seed)

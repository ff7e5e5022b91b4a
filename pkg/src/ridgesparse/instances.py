from __future__ import annotations

import logging
import typing

import numpy as np

from ridgesparse.config import FAMILIES
from ridgesparse.pointsets import SpherePoints
from ridgesparse.reluk import AtomMeasure, DiscreteMeasure
from ridgesparse.zonoid import SphericalMeasure

logger = logging.getLogger(__name__)


class InstanceFactory:
    """
    Seeded test measures. Every family is a pure function of (d, N, seed).
    """

    CLUSTERS = 8
    CLUSTER_SPREAD = 0.15
    MIN_SKEW = 10.0
    GREAT_CIRCLE_NOISE = 0.05

    @staticmethod
    def generate_instance(family: str, d: int, N: int, seed: int = 0) -> AtomMeasure:
        """
        :param family: one of uniform, clustered, lowdim, sphere_uniform
        :param d: ambient dimension of the ball; for sphere_uniform the sphere S^d in R^{d+1}
        """
        if family not in FAMILIES:
            raise ValueError(f"Unknown instance family '{family}', expected one of {', '.join(FAMILIES)}")

        if d < 1:
            raise ValueError(f"Dimension must be >= 1, got {d}")

        if N < 1:
            raise ValueError(f"Instance size must be >= 1, got {N}")

        rng = np.random.default_rng(seed)
        generator = {
            "uniform": InstanceFactory._uniform,
            "clustered": InstanceFactory._clustered,
            "lowdim": InstanceFactory._lowdim,
            "sphere_uniform": InstanceFactory._sphere_uniform,
        }[family]

        measure = generator(rng, d, N)
        logger.info(f"Generated {family} instance: d={d}, N={N}, seed={seed}")
        return measure

    @staticmethod
    def _uniform(rng: np.random.Generator, d: int, N: int) -> DiscreteMeasure:
        directions = SpherePoints.uniform(rng, N, d)
        offsets = rng.uniform(-1.0, 1.0, N)
        weights = rng.dirichlet(np.ones(N))
        return DiscreteMeasure(directions, offsets, InstanceFactory._renormalize(weights))

    @staticmethod
    def _clustered(rng: np.random.Generator, d: int, N: int) -> DiscreteMeasure:
        centers = SpherePoints.uniform(rng, InstanceFactory.CLUSTERS, d)
        center_offsets = rng.uniform(-0.8, 0.8, InstanceFactory.CLUSTERS)
        labels = rng.integers(0, InstanceFactory.CLUSTERS, N)

        directions = centers[labels] + InstanceFactory.CLUSTER_SPREAD * rng.standard_normal((N, d))
        directions = SpherePoints.normalize(directions)
        offsets = np.clip(center_offsets[labels] + InstanceFactory.CLUSTER_SPREAD * rng.standard_normal(N),
                          -1.0, 1.0)

        cluster_mass = rng.dirichlet(np.ones(InstanceFactory.CLUSTERS))
        noise = rng.standard_normal(N)

        sigma = 1.5
        while True:
            weights = cluster_mass[labels] * np.exp(sigma * noise)
            skew = weights.max() / np.median(weights)
            if N < 2 or skew >= InstanceFactory.MIN_SKEW:
                break
            sigma += 0.5

        logger.debug(f"Clustered weights: max/median = {skew:.1f} at sigma {sigma}")
        return DiscreteMeasure(directions, offsets, InstanceFactory._renormalize(weights))

    @staticmethod
    def _lowdim(rng: np.random.Generator, d: int, N: int) -> DiscreteMeasure:
        # directions near the great circle spanned by e_1, e_2
        angles = rng.uniform(0.0, 2 * np.pi, N)
        directions = InstanceFactory.GREAT_CIRCLE_NOISE * rng.standard_normal((N, d))
        directions[:, 0] += np.cos(angles)
        if d > 1:
            directions[:, 1] += np.sin(angles)

        directions = SpherePoints.normalize(directions)
        offsets = rng.uniform(-1.0, 1.0, N)
        weights = rng.dirichlet(np.ones(N))
        return DiscreteMeasure(directions, offsets, InstanceFactory._renormalize(weights))

    @staticmethod
    def _sphere_uniform(rng: np.random.Generator, d: int, N: int) -> SphericalMeasure:
        """
        Equal-weight quadrature of the uniform measure on S^d, randomly rotated by the seed.
        """
        dim = d + 1
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        rotation = q * np.sign(np.diag(r))

        points = SpherePoints.normalize(SpherePoints.grid(N, dim) @ rotation.T)
        return SphericalMeasure(points, None, np.full(N, 1.0 / N))

    @staticmethod
    def _renormalize(weights: np.ndarray) -> np.ndarray:
        weights = np.asarray(weights, dtype=float)
        return weights / weights.sum()

    @staticmethod
    def weight_skew(measure: AtomMeasure) -> float:
        return float(measure.weights.max() / np.median(measure.weights))


def generate_instance(family: str, d: int, N: int, seed: int = 0) -> AtomMeasure:
    return InstanceFactory.generate_instance(family, d, N, seed)


def measure_class(family: str) -> typing.Type[AtomMeasure]:
    return SphericalMeasure if family == "sphere_uniform" else DiscreteMeasure

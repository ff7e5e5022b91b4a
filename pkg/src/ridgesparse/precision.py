from __future__ import annotations

import math
import typing

import numpy as np

"""
Provides a set of tolerance comparisons shared by the tensor, measure and pipeline code.
"""


class Tolerance:

    @staticmethod
    def unit_norm() -> float:
        return 1e-12

    @staticmethod
    def mass() -> float:
        return 1e-10

    @staticmethod
    def decomposition() -> float:
        return 1e-8


class Compare:

    @staticmethod
    def lin_eq(*args: float, tol: float = 1e-12) -> bool:
        return Compare._compare_args(lambda a, b: math.fabs(a - b) < tol, *args)

    @staticmethod
    def mass_eq(a: float, b: float) -> bool:
        return Compare.lin_eq(a, b, tol=Tolerance.mass())

    @staticmethod
    def arrays_close(a: np.ndarray, b: np.ndarray, rel: float = 1e-10) -> bool:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != b.shape:
            return False

        scale = max(1.0, float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
        return bool(np.all(np.abs(a - b) <= rel * scale))

    @staticmethod
    def _compare_args(comparator: typing.Callable[[float, float], bool], *args):
        if len(args) == 0:
            raise ValueError("At least two arguments must be supplied")

        if len(args) % 2 != 0:
            raise ValueError("Number of arguments to compare cannot be odd")

        index_midpoint = math.floor(len(args) / 2)

        args_a = args[0:index_midpoint]
        args_b = args[index_midpoint:]

        return all(comparator(args_a[i], args_b[i]) for i in range(0, len(args_a)))

import typing


class Constants:

    # kappa per (d, k), chosen so that the entropy budget of a calibration instance
    # (N=4096, uniform family) reports a ratio <= 1
    _KAPPA_TABLE: typing.Dict[typing.Tuple[int, int], float] = {
        (2, 0): 1 / 8,
        (2, 1): 1 / 16,
        (2, 2): 1 / 32,
        (3, 0): 1 / 16,
        (3, 1): 1 / 32,
        (3, 2): 1 / 64,
    }

    @staticmethod
    def min_support() -> int:
        return 6

    @staticmethod
    def max_k() -> int:
        return 6

    @staticmethod
    def haussler_constant() -> float:
        return 50.0

    @staticmethod
    def default_alpha() -> float:
        return 0.25

    @staticmethod
    def default_beta(k: int) -> float:
        return k + 1.0

    @staticmethod
    def default_kappa(d: int, k: int) -> float:
        if (d, k) in Constants._KAPPA_TABLE:
            return Constants._KAPPA_TABLE[(d, k)]

        # outside the shipped table: halve per extra order and dimension
        return 1 / (8 * 2 ** (max(k, 0) + max(d - 2, 0)))

    @staticmethod
    def default_grid_size(d: int) -> int:
        return 20000 if d <= 2 else 50000

    @staticmethod
    def default_sphere_grid_size() -> int:
        return 40000

    @staticmethod
    def entropy_constant() -> float:
        return 1.0

    @staticmethod
    def max_oracle_t() -> int:
        return 20

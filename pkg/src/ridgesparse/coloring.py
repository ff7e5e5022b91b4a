from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import math
import time
import typing
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ridgesparse.constants import Constants
from ridgesparse.nets import MultiscaleNet
from ridgesparse.reluk import AtomMeasure, RidgeKernel
from ridgesparse.tensors import TensorMath

logger = logging.getLogger(__name__)

"""
Partial colorings of triples against the multiscale discrepancy system.

Each row of the system is one entry of one tensor Psi^m_{x,l,.}, i.e. a linear functional of the
coloring chi; the bucket (l, x, m) constraint ||sum_j chi_j Psi^m_{x,l,j}||_inf <= Delta^m_l is the
set of row constraints |row . chi| <= Delta^m_l over the bucket's rows.
"""


class TriplePartition:

    def __init__(self, u: np.ndarray, v: np.ndarray, w: np.ndarray, weights: np.ndarray = None):
        self._u = np.asarray(u, dtype=int)
        self._v = np.asarray(v, dtype=int)
        self._w = np.asarray(w, dtype=int)

        if not self._u.size == self._v.size == self._w.size:
            raise ValueError("Triple member arrays must have equal length")

        members = np.concatenate([self._u, self._v, self._w])
        if np.unique(members).size != members.size:
            raise ValueError("Triples must be disjoint")

        if weights is not None:
            weights = np.asarray(weights)
            if np.any(weights[self._u] > weights[self._v]) or np.any(weights[self._v] > weights[self._w]):
                raise ValueError("Triples must be ordered so that a_u <= a_v <= a_w")

    @property
    def t(self) -> int:
        return self._u.size

    @property
    def u(self) -> np.ndarray:
        return self._u

    @property
    def v(self) -> np.ndarray:
        return self._v

    @property
    def w(self) -> np.ndarray:
        return self._w

    @property
    def covered(self) -> int:
        return 3 * self.t

    def members(self) -> np.ndarray:
        """
        :return: (t, 3) array of atom indices
        """
        return np.stack([self._u, self._v, self._w], axis=1)


class PsiSystem:
    """
    Sparse rows x triples matrix. Row r carries its bucket (level[r], point[r], order[r]) and the
    position entry[r] of the row inside the flattened order-m tensor.
    """

    def __init__(self,
                 matrix: sparse.csr_matrix,
                 level: np.ndarray,
                 point: np.ndarray,
                 order: np.ndarray,
                 entry: np.ndarray,
                 t: int,
                 n_atoms: int,
                 dim: int,
                 k: int,
                 levels: int,
                 bad_counts: typing.List[np.ndarray] = None):
        self.matrix = sparse.csr_matrix(matrix)
        self.level = np.asarray(level, dtype=int)
        self.point = np.asarray(point, dtype=int)
        self.order = np.asarray(order, dtype=int)
        self.entry = np.asarray(entry, dtype=int)
        self.t = t
        self.n_atoms = n_atoms
        self.dim = dim
        self.k = k
        self.levels = levels
        self.bad_counts = bad_counts if bad_counts is not None else []

        if self.matrix.shape != (self.level.size, t):
            raise ValueError(f"Matrix shape {self.matrix.shape} disagrees with {self.level.size} rows and t={t}")

    @property
    def rows(self) -> int:
        return self.level.size

    @property
    def is_zero(self) -> bool:
        return self.matrix.nnz == 0 or not np.any(self.matrix.data)

    @staticmethod
    def from_dense(rows: np.ndarray,
                   level: typing.Sequence[int] = None,
                   order: typing.Sequence[int] = None,
                   n_atoms: int = None,
                   k: int = 0,
                   dim: int = 1) -> PsiSystem:
        """
        System from an explicit (R, t) array; rows default to level 1, order 0, one point each.
        """
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        count, t = rows.shape
        level = np.ones(count, dtype=int) if level is None else np.asarray(level, dtype=int)
        order = np.zeros(count, dtype=int) if order is None else np.asarray(order, dtype=int)

        return PsiSystem(sparse.csr_matrix(rows), level, np.arange(count), order, np.zeros(count, dtype=int),
                         t, n_atoms if n_atoms is not None else max(1, 3 * t), dim, k,
                         int(level.max()) if count else 1)

    def values(self, chi: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(chi, dtype=float)

    def column_norms(self, j: int) -> typing.Dict[typing.Tuple[int, int], float]:
        column = self.matrix[:, j].toarray().ravel()
        result = {}
        for r in np.flatnonzero(column):
            key = (int(self.level[r]), int(self.order[r]))
            result[key] = max(result.get(key, 0.0), abs(column[r]))
        return result


class PsiBuilder:

    @staticmethod
    def build_psi_system(kernel: RidgeKernel,
                         s_minus: AtomMeasure,
                         partition: TriplePartition,
                         nets: MultiscaleNet,
                         n_atoms: int,
                         spot_checks: int = 8,
                         seed: int = 0,
                         chunk: int = 64) -> PsiSystem:
        directions = s_minus.directions
        offsets = s_minus.offsets
        a = s_minus.weights
        members = partition.members()
        coefficients = np.stack([-a[partition.u], a[partition.v], a[partition.u] - a[partition.v]], axis=1)
        powers = [TensorMath.flat_powers(directions, m) for m in range(kernel.k + 1)]

        data, row_ids, col_ids = [], [], []
        meta = {"level": [], "point": [], "order": [], "entry": []}
        bad_counts = []
        row_count = 0

        for level in range(1, nets.levels + 1):
            points = nets.points(level)
            parents = nets.parent_points(level)
            level_bad = np.zeros(points.shape[0], dtype=int)

            for start in range(0, points.shape[0], chunk):
                x = points[start:start + chunk]
                s_x = kernel.activation(x, directions, offsets)

                if parents is None:
                    bad = np.ones((x.shape[0], partition.t), dtype=bool)
                    s_p = None
                else:
                    s_p = kernel.activation(parents[start:start + chunk], directions, offsets)
                    separated = kernel.active(s_x) != kernel.active(s_p)
                    bad = separated[:, members].any(axis=2)

                level_bad[start:start + chunk] = bad.sum(axis=1)

                for m in range(kernel.k + 1):
                    if s_p is None:
                        scalars = kernel.derivative_scalars(s_x, m)
                    else:
                        scalars = kernel.residual_scalars(s_x, s_p, m)

                    # (points, t, 3) scalar parts of the three member terms
                    parts = scalars[:, members] * coefficients[None, :, :]
                    values = np.einsum("pjc,jce->pje", parts, powers[m][members])
                    values[~bad] = 0.0

                    p_idx, j_idx, e_idx = np.nonzero(values)
                    if p_idx.size == 0:
                        continue

                    width = powers[m].shape[1]
                    keys, inverse = np.unique(p_idx * width + e_idx, return_inverse=True)

                    data.append(values[p_idx, j_idx, e_idx])
                    row_ids.append(row_count + inverse.ravel())
                    col_ids.append(j_idx)

                    meta["level"].append(np.full(keys.size, level))
                    meta["point"].append(start + keys // width)
                    meta["order"].append(np.full(keys.size, m))
                    meta["entry"].append(keys % width)
                    row_count += keys.size

            bad_counts.append(level_bad)
            logger.debug(f"Psi level {level}: {points.shape[0]} points, {int(level_bad.sum())} bad pairs")

        if data:
            matrix = sparse.csr_matrix((np.concatenate(data), (np.concatenate(row_ids), np.concatenate(col_ids))),
                                       shape=(row_count, partition.t))
            arrays = {key: np.concatenate(value) for key, value in meta.items()}
        else:
            matrix = sparse.csr_matrix((0, partition.t))
            arrays = {key: np.zeros(0, dtype=int) for key in meta}

        psi = PsiSystem(matrix, arrays["level"], arrays["point"], arrays["order"], arrays["entry"],
                        partition.t, n_atoms, s_minus.dim, kernel.k, nets.levels, bad_counts)

        logger.info(f"Psi system: {psi.rows} rows, {matrix.nnz} nonzeros over t={partition.t} triples")

        PsiBuilder.spot_check(kernel, s_minus, partition, nets, psi, spot_checks, seed)
        return psi

    @staticmethod
    def spot_check(kernel: RidgeKernel, s_minus: AtomMeasure, partition: TriplePartition, nets: MultiscaleNet,
                   psi: PsiSystem, count: int, seed: int) -> int:
        """
        Recomputes random entries with tensor level residuals. Good pairs must give zero.
        :return: number of mismatches (also logged)
        """
        if count <= 0 or partition.t == 0:
            return 0

        rng = np.random.default_rng(seed)
        members = partition.members()
        a = s_minus.weights
        mismatches = 0
        dense_columns = psi.matrix.tocsc()

        for _ in range(count):
            level = int(rng.integers(1, nets.levels + 1))
            p = int(rng.integers(nets.size(level)))
            j = int(rng.integers(partition.t))
            m = int(rng.integers(kernel.k + 1))

            x = nets.points(level)[p]
            proj = None if level == 1 else nets.parent_points(level)[p]
            trio = members[j]

            phis = kernel.reference_phi(s_minus.directions[trio], s_minus.offsets[trio], x, proj, m)
            a_u, a_v = a[trio[0]], a[trio[1]]
            expected = -a_u * phis[0] + a_v * phis[1] + (a_u - a_v) * phis[2]

            rows = np.flatnonzero((psi.level == level) & (psi.point == p) & (psi.order == m))
            stored = np.zeros(expected.size)
            if rows.size:
                stored[psi.entry[rows]] = dense_columns[rows, j].toarray().ravel()

            scale = max(1.0, float(np.max(np.abs(expected), initial=0.0)))
            if np.max(np.abs(stored - expected), initial=0.0) > 1e-9 * scale:
                mismatches += 1
                logger.warning(f"Psi spot check failed at level {level}, point {p}, triple {j}, order {m}")

        return mismatches


class ColoringSchedule:
    """
    Rounding thresholds Delta^m_l = 2 M^m_l Lambda(l - tau), with M^m_l = C_M 2^{-(k-m+1/2) l} N^{-1/2}
    and Lambda(x) = 2^{alpha x} for x >= 0, 2^{beta x} for x <= 0.
    """

    def __init__(self, n: int, d: int, k: int, alpha: float, beta: float, kappa: float, c_m: float,
                 levels: int, relaxation: float = 1.0):
        if not 0 < alpha < 0.5:
            raise ValueError(f"Schedule requires 0 < alpha < 1/2, got alpha={alpha}")

        if not beta > k + 0.5:
            raise ValueError(f"Schedule requires beta > k + 1/2, got beta={beta}, k={k}")

        if not 0 < kappa <= 1:
            raise ValueError(f"Schedule requires 0 < kappa <= 1, got kappa={kappa}")

        if not c_m > 0:
            raise ValueError(f"Schedule requires C_M > 0, got {c_m}")

        if n < 1 or levels < 1:
            raise ValueError(f"Schedule requires N >= 1 and at least one level, got N={n}, levels={levels}")

        self.n = n
        self.d = d
        self.k = k
        self.alpha = alpha
        self.beta = beta
        self.kappa = kappa
        self.c_m = c_m
        self.levels = levels
        self.relaxation = relaxation
        self.tau_int = ColoringSchedule.tau(n, d, kappa)

        l = np.arange(1, levels + 1)[:, None]
        m = np.arange(k + 1)[None, :]
        self.m_table = c_m * 2.0 ** (-(k - m + 0.5) * l) * n ** -0.5
        self.delta_table = 2.0 * self.m_table * self.lam(l - self.tau_int) * relaxation

    @staticmethod
    def make_schedule(n: int, d: int, k: int, alpha: float, beta: float, kappa: float, c_m: float,
                      levels: int = None) -> ColoringSchedule:
        return ColoringSchedule(n, d, k, alpha, beta, kappa, c_m,
                                levels if levels is not None else MultiscaleNet.level_count(n))

    @staticmethod
    def tau(n: int, d: int, kappa: float) -> int:
        # largest integer with 2^{d tau} <= kappa N
        target = kappa * n
        tau = math.floor(math.log2(target) / d)
        while 2.0 ** (d * (tau + 1)) <= target:
            tau += 1
        while 2.0 ** (d * tau) > target:
            tau -= 1
        return tau

    def lam(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, 2.0 ** (self.alpha * x), 2.0 ** (self.beta * x))

    def delta(self, level: int, m: int) -> float:
        return float(self.delta_table[level - 1, m])

    def m_value(self, level: int, m: int) -> float:
        return float(self.m_table[level - 1, m])

    def relaxed(self, factor: float) -> ColoringSchedule:
        return ColoringSchedule(self.n, self.d, self.k, self.alpha, self.beta, self.kappa, self.c_m, self.levels,
                                self.relaxation * factor)

    def row_thresholds(self, psi: PsiSystem) -> np.ndarray:
        return self.delta_table[psi.level - 1, psi.order]

    def row_m(self, psi: PsiSystem) -> np.ndarray:
        return self.m_table[psi.level - 1, psi.order]

    def aggregate_bound(self, m: int) -> float:
        """
        sum_l sum_{i=0}^{k-m} 2^{-il} Delta^{m+i}_l
        """
        total = 0.0
        for l in range(1, self.levels + 1):
            for i in range(self.k - m + 1):
                total += 2.0 ** (-i * l) * self.delta(l, m + i)
        return total

    def theory_scale(self, m: int) -> float:
        return self.n ** (-0.5 - (2 * (self.k - m) + 1) / (2.0 * self.d))

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "n": self.n, "d": self.d, "k": self.k, "alpha": self.alpha, "beta": self.beta,
            "kappa": self.kappa, "c_m": self.c_m, "tau_int": self.tau_int, "relaxation": self.relaxation,
            "delta": self.delta_table.tolist(),
        }


class Calibration:

    @staticmethod
    def calibrate_cm(psi: PsiSystem, k: int, n: int, factor: float = 3.0, quantile: float = 0.9) -> float:
        """
        C_M from the row standard deviations of E under uniform random colorings,
        sd_r = sqrt(sum_j Psi_rj^2), rescaled by 2^{-(k-m+1/2) l} N^{-1/2}.
        """
        if psi.rows == 0 or psi.is_zero:
            return 1.0

        sd = np.sqrt(np.asarray(psi.matrix.multiply(psi.matrix).sum(axis=1)).ravel())
        scale = 2.0 ** (-(k - psi.order + 0.5) * psi.level) * n ** -0.5
        implied = sd / scale
        implied = implied[implied > 0]

        if implied.size == 0:
            return 1.0

        return float(factor * np.quantile(implied, quantile))

    @staticmethod
    def g(lam: float, c0: float = None) -> float:
        c0 = Constants.entropy_constant() if c0 is None else c0
        if lam >= 10:
            return c0 * math.exp(-lam * lam / 9.0)
        if lam > 0.1:
            return c0
        return -c0 * math.log2(lam)

    @staticmethod
    def entropy_budget(schedule: ColoringSchedule, net_sizes: typing.Sequence[int], k: int, d: int, t: int,
                       c0: float = None) -> EntropyReport:
        per_level = []
        for l, size in enumerate(net_sizes, start=1):
            lam = float(schedule.lam(l - schedule.tau_int))
            per_level.append(sum(size * d ** m * Calibration.g(lam, c0) for m in range(k + 1)))

        total = float(sum(per_level))
        limit = t / 5.0
        ratio = total / limit if limit > 0 else math.inf

        return EntropyReport(total=total, limit=limit, ratio=ratio, feasible=ratio <= 1.0,
                             per_level=per_level, kappa=schedule.kappa, tau_int=schedule.tau_int)

    @staticmethod
    def calibrate_kappa(n: int, d: int, k: int, alpha: float, beta: float, net_sizes: typing.Sequence[int], t: int,
                        kappa: float = None, max_halvings: int = 30) -> float:
        kappa = Constants.default_kappa(d, k) if kappa is None else kappa

        for _ in range(max_halvings + 1):
            schedule = ColoringSchedule(n, d, k, alpha, beta, kappa, 1.0, max(1, len(net_sizes)))
            report = Calibration.entropy_budget(schedule, net_sizes, k, d, t)
            if report.feasible:
                return kappa
            kappa /= 2.0

        logger.warning(f"Entropy budget still infeasible at kappa={kappa * 2.0}")
        return kappa * 2.0

    @staticmethod
    def bernstein_tail_check(psi: PsiSystem, schedule: ColoringSchedule, samples: int = 200,
                             seed: int = 0) -> typing.Dict[int, typing.Tuple[float, float]]:
        """
        :return: {alpha: (observed frequency of |E_r| >= alpha M_r, reference 2 exp(-alpha^2 / 2))}
        """
        rng = np.random.default_rng(seed)
        if psi.rows == 0:
            return {a: (0.0, 2.0 * math.exp(-a * a / 2.0)) for a in (1, 2, 3)}

        eps = rng.choice(np.array([-1.0, 1.0]), size=(psi.t, samples))
        e = np.abs(psi.matrix @ eps)
        m = schedule.row_m(psi)[:, None]

        return {a: (float(np.mean(e >= a * m)), 2.0 * math.exp(-a * a / 2.0)) for a in (1, 2, 3)}


@dataclass
class EntropyReport:
    total: float
    limit: float
    ratio: float
    feasible: bool
    per_level: typing.List[float]
    kappa: float
    tau_int: int


@dataclass
class OracleResult:
    chi: np.ndarray
    max_ratio: float


@dataclass
class ColoringResult:
    chi: np.ndarray
    max_ratio: float
    stage: str
    relaxation: float
    samples_drawn: int
    exhausted: bool = False
    scale: float = 1.0
    per_bucket_ratios: typing.Dict[str, float] = field(default_factory=dict)

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.chi))

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "chi": self.chi.astype(int).tolist(),
            "nonzero_count": self.nonzero_count,
            "per_bucket_ratios": self.per_bucket_ratios,
            "relaxation_factor": self.relaxation,
            "stage_used": self.stage,
            "samples_drawn": self.samples_drawn,
            "max_ratio": self.max_ratio,
            "exhausted": self.exhausted,
        }


_SPLITMIX_A = np.uint64(0xBF58476D1CE4E5B9)
_SPLITMIX_B = np.uint64(0x94D049BB133111EB)
_Q_LIMIT = 2 ** 62


class SignatureHasher:
    """
    64-bit hash of rounded row vectors: wraparound weighted sum with random odd weights, then a
    splitmix64 finalizer.
    """

    def __init__(self, rows: int, seed: int):
        rng = np.random.default_rng(seed)
        self._weights = rng.integers(0, 2 ** 63, size=rows, dtype=np.uint64) * np.uint64(2) + np.uint64(1)

    def hash(self, rounded: np.ndarray) -> np.ndarray:
        """
        :param rounded: (rows, batch) int64
        :return: (batch,) uint64
        """
        with np.errstate(over="ignore"):
            z = (rounded.astype(np.uint64) * self._weights[:, None]).sum(axis=0, dtype=np.uint64)
            z = (z ^ (z >> np.uint64(30))) * _SPLITMIX_A
            z = (z ^ (z >> np.uint64(27))) * _SPLITMIX_B
            return z ^ (z >> np.uint64(31))


class ColoringSearch:
    """
    Stage A: collisions of rounded signatures between random full colorings.
    Stage B: local search from the best pair seen.
    Stage C: doubling of all thresholds.

    bucket_probe=None compares each coloring with every earlier one in its bucket.
    """

    def __init__(self,
                 samples: int = 200000,
                 batch_size: int = 256,
                 refine_levels: int = 0,
                 max_relaxations: int = 8,
                 local_search_iterations: int = 2000,
                 threads: int = 1,
                 time_budget: float = None,
                 bucket_probe: typing.Optional[int] = 32,
                 extend: bool = True):
        self.samples = samples
        self.batch_size = batch_size
        self.refine_levels = refine_levels
        self.max_relaxations = max_relaxations
        self.local_search_iterations = local_search_iterations
        self.threads = threads
        self.time_budget = time_budget
        self.bucket_probe = bucket_probe
        self.extend = extend

    @staticmethod
    def from_config(config) -> ColoringSearch:
        return ColoringSearch(samples=config.samples, batch_size=config.batch_size,
                              refine_levels=config.refine_levels, max_relaxations=config.max_relaxations,
                              local_search_iterations=config.local_search_iterations, threads=config.threads,
                              time_budget=config.step_time_budget)

    @staticmethod
    def min_nonzeros(t: int) -> int:
        return int(math.ceil(t / 4.0))

    def find_partial_coloring(self, psi: PsiSystem, schedule: ColoringSchedule, seed: int = 0) -> ColoringResult:
        t = psi.t
        if t == 0:
            return ColoringResult(np.zeros(0, dtype=int), 0.0, "empty", schedule.relaxation, 0)

        if psi.is_zero:
            chi = np.ones(t, dtype=int)
            return ColoringResult(chi, 0.0, "trivial", schedule.relaxation, 0,
                                  per_bucket_ratios=Discrepancy.bucket_ratios(chi, psi, schedule))

        deadline = None if self.time_budget is None else time.monotonic() + self.time_budget
        best: typing.Optional[ColoringResult] = None
        drawn = 0
        current = schedule

        for relaxation_step in range(self.max_relaxations + 1):
            thresholds = current.row_thresholds(psi)
            attempt_seed = np.random.SeedSequence([seed, relaxation_step])

            chi, scale, count, start = self._stage_a(psi, thresholds, attempt_seed, deadline)
            drawn += count

            if chi is not None:
                ratio = Discrepancy.max_ratio(psi.values(chi), thresholds)
                stage = "collision"
            else:
                chi = self._local_search(psi, thresholds, start)
                ratio = Discrepancy.max_ratio(psi.values(chi), thresholds)
                stage = "local_search"

            if ratio <= 1.0 and self.extend:
                chi = self._extend(psi, thresholds, chi)
                ratio = Discrepancy.max_ratio(psi.values(chi), thresholds)

            result = ColoringResult(chi.astype(int), ratio, stage, current.relaxation, drawn,
                                    scale=scale if stage == "collision" else 1.0,
                                    per_bucket_ratios=Discrepancy.bucket_ratios(chi, psi, current))

            if best is None or ratio * current.relaxation < best.max_ratio * best.relaxation:
                best = result

            if ratio <= 1.0:
                if relaxation_step > 0:
                    logger.warning(f"Coloring needed relaxation factor {current.relaxation:g}")
                logger.info(f"Coloring via {stage}: {result.nonzero_count}/{t} nonzeros, max ratio {ratio:.3g}")
                return result

            if relaxation_step < self.max_relaxations:
                logger.warning(f"Coloring failed at relaxation {current.relaxation:g} "
                               f"(max ratio {ratio:.3g}); doubling all thresholds")
                current = current.relaxed(2.0)

        best = dataclasses.replace(best, exhausted=True, samples_drawn=drawn)
        logger.warning(f"Coloring budget exhausted; best effort max ratio {best.max_ratio:.3g} "
                       f"at relaxation {best.relaxation:g}")
        return best

    def _colorings(self, t: int, batch: int, sequence: np.random.SeedSequence, enumerate_all: bool,
                   offset: int) -> np.ndarray:
        """
        :return: (t, batch) array of +-1
        """
        if enumerate_all:
            codes = np.arange(offset, offset + batch, dtype=np.int64)
            bits = (codes[None, :] >> np.arange(t, dtype=np.int64)[:, None]) & 1
            return (2 * bits - 1).astype(float)

        rng = np.random.default_rng(sequence)
        return rng.choice(np.array([-1.0, 1.0]), size=(t, batch))

    def _stage_a(self, psi: PsiSystem, thresholds: np.ndarray, sequence: np.random.SeedSequence,
                 deadline: typing.Optional[float]):
        t = psi.t
        need = ColoringSearch.min_nonzeros(t)
        enumerate_all = t < 63 and 2 ** t <= self.samples
        total = 2 ** t if enumerate_all else self.samples
        batch = max(1, min(self.batch_size, int(4e6 // max(1, psi.rows))))
        batch_count = int(math.ceil(total / batch))
        children = sequence.spawn(batch_count + 1)
        hasher = SignatureHasher(psi.rows, int(children[-1].generate_state(1)[0]))

        scales = [2.0 ** -r for r in range(self.refine_levels + 1)]
        tables: typing.Dict[typing.Tuple[int, int, int], typing.List[int]] = {}
        stored: typing.List[np.ndarray] = []
        start_chi: typing.Optional[np.ndarray] = None
        found: typing.Optional[np.ndarray] = None
        found_r = -1
        drawn = 0

        def work(b: int):
            size = min(batch, total - b * batch)
            eps = self._colorings(t, size, children[b], enumerate_all, b * batch)
            energy = np.asarray(psi.matrix @ eps)
            keys = []
            for r, s in enumerate(scales):
                scaled = energy / (thresholds[:, None] * s)
                for o, shift in enumerate((0.0, 0.5)):
                    rounded = np.clip(np.floor(scaled + shift), -_Q_LIMIT, _Q_LIMIT).astype(np.int64)
                    keys.append((r, o, hasher.hash(rounded)))
            return eps, keys

        window = max(1, 2 * self.threads)
        with concurrent.futures.ThreadPoolExecutor(max_workers=self.threads) as executor:
            for first in range(0, batch_count, window):
                if deadline is not None and time.monotonic() > deadline:
                    logger.warning("Step time budget exceeded during collision search")
                    break

                for eps, keys in executor.map(work, range(first, min(first + window, batch_count))):
                    base = drawn
                    signs = eps > 0
                    stored.append(np.packbits(signs, axis=0))
                    drawn += eps.shape[1]

                    if start_chi is None and eps.shape[1] >= 2:
                        start_chi = ((eps[:, 0] - eps[:, 1]) / 2.0).astype(int)

                    for r, o, hashes in keys:
                        if r <= found_r:
                            continue
                        s = scales[r]
                        for column, h in enumerate(hashes.tolist()):
                            bucket = tables.setdefault((r, o, h), [])
                            mine = signs[:, column]
                            for other in bucket[:self.bucket_probe]:
                                theirs = np.unpackbits(stored[other // batch][:, other % batch], count=t)
                                chi = mine.astype(int) - theirs.astype(int)
                                if np.count_nonzero(chi) < need:
                                    continue
                                if np.all(np.abs(psi.values(chi)) <= 0.5 * s * thresholds * (1 + 1e-9)):
                                    found, found_r = chi, r
                                    break
                            if found_r == r:
                                break
                            bucket.append(base + column)

                    if found is not None and (self.refine_levels == 0 or found_r == self.refine_levels):
                        return found, scales[found_r], drawn, start_chi

        if found is not None:
            return found, scales[found_r], drawn, start_chi

        return None, 1.0, drawn, start_chi

    def _local_search(self, psi: PsiSystem, thresholds: np.ndarray, start: typing.Optional[np.ndarray],
                      top: int = 64) -> np.ndarray:
        t = psi.t
        need = ColoringSearch.min_nonzeros(t)

        chi = np.zeros(t, dtype=int) if start is None else start.astype(int).copy()
        if np.count_nonzero(chi) < need:
            zeros = np.flatnonzero(chi == 0)
            chi[zeros[:need - np.count_nonzero(chi)]] = 1

        csr = psi.matrix
        csc = psi.matrix.tocsc()
        energy = psi.values(chi)
        ratios = np.abs(energy) / thresholds

        for _ in range(self.local_search_iterations):
            current = float(ratios.max())
            if current <= 1.0:
                break

            worst = int(np.argmax(ratios))
            row = csr.getrow(worst)
            if ratios.size > top:
                order = np.argpartition(-ratios, top)[:top]
                order = order[np.argsort(-ratios[order], kind="stable")]
            else:
                order = np.argsort(-ratios, kind="stable")

            best_move = None
            best_value = current
            nonzeros = np.count_nonzero(chi)

            for j in row.indices:
                rows = csc.indices[csc.indptr[j]:csc.indptr[j + 1]]
                column = csc.data[csc.indptr[j]:csc.indptr[j + 1]]
                outside = order[~np.isin(order, rows)]
                if outside.size:
                    rest = ratios[outside[0]]
                elif order.size == ratios.size:
                    rest = 0.0
                else:
                    mask = np.ones(ratios.size, dtype=bool)
                    mask[rows] = False
                    rest = float(ratios[mask].max(initial=0.0))

                for value in (-1, 0, 1):
                    if value == chi[j]:
                        continue
                    if value == 0 and nonzeros - 1 < need:
                        continue
                    updated = np.abs(energy[rows] + column * (value - chi[j])) / thresholds[rows]
                    candidate = max(rest, float(updated.max(initial=0.0)))
                    if candidate < best_value - 1e-15:
                        best_value = candidate
                        best_move = (j, value)

            if best_move is None:
                break

            j, value = best_move
            rows = csc.indices[csc.indptr[j]:csc.indptr[j + 1]]
            energy[rows] += csc.data[csc.indptr[j]:csc.indptr[j + 1]] * (value - chi[j])
            ratios[rows] = np.abs(energy[rows]) / thresholds[rows]
            chi[j] = value

        return chi

    @staticmethod
    def _extend(psi: PsiSystem, thresholds: np.ndarray, chi: np.ndarray) -> np.ndarray:
        """
        Turns zero coordinates on while every row stays within its threshold.
        """
        chi = chi.astype(int).copy()
        csc = psi.matrix.tocsc()
        energy = psi.values(chi)

        for j in np.flatnonzero(chi == 0):
            rows = csc.indices[csc.indptr[j]:csc.indptr[j + 1]]
            column = csc.data[csc.indptr[j]:csc.indptr[j + 1]]
            for value in (1, -1):
                if np.all(np.abs(energy[rows] + value * column) <= thresholds[rows] * (1 + 1e-12)):
                    energy[rows] += value * column
                    chi[j] = value
                    break

        return chi


class Discrepancy:

    @staticmethod
    def max_ratio(values: np.ndarray, thresholds: np.ndarray) -> float:
        if values.size == 0:
            return 0.0
        return float(np.max(np.abs(values) / thresholds))

    @staticmethod
    def bucket_ratios(chi: np.ndarray, psi: PsiSystem, schedule: ColoringSchedule) -> typing.Dict[str, float]:
        """
        Max ratio per (level, order), keyed "l=..,m=..".
        """
        ratios = np.abs(psi.values(chi)) / schedule.row_thresholds(psi) if psi.rows else np.zeros(0)
        result = {}
        for l in range(1, schedule.levels + 1):
            for m in range(schedule.k + 1):
                mask = (psi.level == l) & (psi.order == m)
                result[f"l={l},m={m}"] = float(ratios[mask].max(initial=0.0))
        return result

    @staticmethod
    def discrepancy_report(chi: np.ndarray, psi: PsiSystem, schedule: ColoringSchedule) -> DiscrepancyReport:
        values = np.abs(psi.values(chi)) if psi.rows else np.zeros(0)
        sup = np.zeros((schedule.levels, schedule.k + 1))
        np.maximum.at(sup, (psi.level - 1, psi.order), values)

        aggregate = []
        bounds = []
        for m in range(schedule.k + 1):
            total = 0.0
            for l in range(1, schedule.levels + 1):
                for i in range(schedule.k - m + 1):
                    total += 2.0 ** (-i * l) * sup[l - 1, m + i]
            aggregate.append(total)
            bounds.append(schedule.aggregate_bound(m))

        return DiscrepancyReport(ratios=Discrepancy.bucket_ratios(chi, psi, schedule), sup=sup,
                                 aggregate=aggregate, bounds=bounds)

    @staticmethod
    def exhaustive_oracle(psi: PsiSystem, schedule_or_thresholds, block: int = 1 << 16) -> OracleResult:
        """
        Minimizes the max row ratio over {-1, 0, 1}^t subject to at least ceil(t/4) nonzeros.
        """
        t = psi.t
        if t > Constants.max_oracle_t():
            raise ValueError(f"Exhaustive oracle supports t <= {Constants.max_oracle_t()}, got t={t}")

        if t == 0:
            return OracleResult(np.zeros(0, dtype=int), 0.0)

        thresholds = schedule_or_thresholds.row_thresholds(psi) \
            if isinstance(schedule_or_thresholds, ColoringSchedule) else np.asarray(schedule_or_thresholds)
        need = ColoringSearch.min_nonzeros(t)
        dense = psi.matrix.toarray()
        powers = 3 ** np.arange(t, dtype=np.int64)

        best_value = math.inf
        best_chi = None

        for start in range(0, 3 ** t, block):
            codes = np.arange(start, min(start + block, 3 ** t), dtype=np.int64)
            chi = (codes[:, None] // powers[None, :]) % 3 - 1
            valid = np.count_nonzero(chi, axis=1) >= need
            if not np.any(valid):
                continue

            chi = chi[valid]
            ratios = np.abs(chi @ dense.T) / thresholds[None, :] if dense.shape[0] else np.zeros((chi.shape[0], 1))
            worst = ratios.max(axis=1)
            i = int(np.argmin(worst))
            if worst[i] < best_value:
                best_value = float(worst[i])
                best_chi = chi[i].copy()

        return OracleResult(best_chi.astype(int), best_value)


@dataclass
class DiscrepancyReport:
    ratios: typing.Dict[str, float]
    sup: np.ndarray
    aggregate: typing.List[float]
    bounds: typing.List[float]

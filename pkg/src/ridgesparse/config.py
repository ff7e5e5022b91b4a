from __future__ import annotations

import dataclasses
import json
import logging
import os
import re
import typing
from dataclasses import dataclass, field

import parsimonious
from parsimonious import Grammar

from ridgesparse.constants import Constants

logger = logging.getLogger(__name__)

FAMILIES = ("uniform", "clustered", "lowdim", "sphere_uniform")
METHODS = ("discrepancy", "baseline", "both")


class ConfigError(ValueError):

    def __init__(self, message: str, path: str = "<config>", line: int = 1, key: str = None):
        self.message = message
        self.path = path
        self.line = line
        self.key = key
        super().__init__(f"{path}:{line}: {message}")


@dataclass
class ReductionConfig:
    k: int = 1
    alpha: float = Constants.default_alpha()
    beta: typing.Optional[float] = None
    kappa: typing.Optional[float] = None
    c_m: typing.Optional[float] = None
    cm_factor: float = 3.0
    cm_quantile: float = 0.9
    haussler_constant: float = Constants.haussler_constant()
    covering_constant: typing.Optional[float] = None
    gamma_constant: float = 64.0
    max_net_points: int = 20000
    pool_min: int = 4096
    pool_cap: int = 20000
    max_levels: typing.Optional[int] = None
    grid_size: typing.Optional[int] = None
    samples: int = 200000
    batch_size: int = 256
    refine_levels: int = 0
    max_relaxations: int = 8
    local_search_iterations: int = 2000
    step_time_budget: typing.Optional[float] = None
    spot_checks: int = 8
    threads: int = 1

    def __post_init__(self):
        if self.beta is None:
            self.beta = Constants.default_beta(self.k)

    @property
    def effective_beta(self) -> float:
        return self.beta

    def effective_kappa(self, d: int) -> float:
        return self.kappa if self.kappa is not None else Constants.default_kappa(d, self.k)

    def effective_grid_size(self, d: int, spherical: bool = False) -> int:
        if self.grid_size is not None:
            return self.grid_size

        return Constants.default_sphere_grid_size() if spherical else Constants.default_grid_size(d)

    def validate(self) -> ReductionConfig:
        checks = [
            (0 <= self.k <= Constants.max_k(), "k", f"k must be in [0, {Constants.max_k()}]"),
            (0 < self.alpha < 0.5, "alpha", "alpha must satisfy 0 < alpha < 1/2"),
            (self.beta > self.k + 0.5, "beta", "beta must satisfy beta > k + 1/2"),
            (self.kappa is None or 0 < self.kappa <= 1, "kappa", "kappa must lie in (0, 1]"),
            (self.c_m is None or self.c_m > 0, "c_m", "c_m must be positive"),
            (self.cm_factor > 0, "cm_factor", "cm_factor must be positive"),
            (0 < self.cm_quantile <= 1, "cm_quantile", "cm_quantile must lie in (0, 1]"),
            (self.covering_constant is None or self.covering_constant > 0, "covering_constant",
             "covering_constant must be positive"),
            (self.max_net_points >= 1, "max_net_points", "max_net_points must be >= 1"),
            (1 <= self.pool_min <= self.pool_cap, "pool_min", "pool sizes must satisfy 1 <= pool_min <= pool_cap"),
            (self.max_levels is None or self.max_levels >= 1, "max_levels", "max_levels must be >= 1"),
            (self.grid_size is None or self.grid_size >= 1, "grid_size", "grid_size must be >= 1"),
            (self.samples >= 2, "samples", "samples must be >= 2"),
            (self.batch_size >= 1, "batch_size", "batch_size must be >= 1"),
            (self.refine_levels >= 0, "refine_levels", "refine_levels must be >= 0"),
            (self.max_relaxations >= 0, "max_relaxations", "max_relaxations must be >= 0"),
            (self.local_search_iterations >= 0, "local_search_iterations", "local_search_iterations must be >= 0"),
            (self.step_time_budget is None or self.step_time_budget > 0, "step_time_budget",
             "step_time_budget must be positive"),
            (self.spot_checks >= 0, "spot_checks", "spot_checks must be >= 0"),
            (self.threads >= 1, "threads", "threads must be >= 1"),
        ]

        for ok, key, message in checks:
            if not ok:
                raise ConfigError(message, key=key)

        return self

    @staticmethod
    def from_dict(values: typing.Dict[str, typing.Any], k: int = None) -> ReductionConfig:
        known = {f.name for f in dataclasses.fields(ReductionConfig)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown reduction key '{unknown[0]}'", key=unknown[0])

        values = dict(values)
        if k is not None:
            values["k"] = k

        return ReductionConfig(**values).validate()


@dataclass
class ExperimentConfig:
    d: int = 2
    k: int = 1
    N: int = 4096
    n_ladder: typing.List[int] = field(default_factory=lambda: [32, 64, 128, 256, 512])
    seeds: typing.List[int] = field(default_factory=lambda: list(range(8)))
    instance_family: str = "uniform"
    grid_size: typing.Optional[int] = None
    method: str = "both"
    reduction: ReductionConfig = field(default_factory=ReductionConfig)

    def __post_init__(self):
        if self.reduction.k != self.k:
            self.reduction = dataclasses.replace(self.reduction, k=self.k, beta=None)
        if self.grid_size is not None and self.reduction.grid_size is None:
            self.reduction = dataclasses.replace(self.reduction, grid_size=self.grid_size)

    @property
    def spherical(self) -> bool:
        return self.instance_family == "sphere_uniform"

    def methods(self) -> typing.List[str]:
        return ["discrepancy", "baseline"] if self.method == "both" else [self.method]

    def validate(self) -> ExperimentConfig:
        checks = [
            (self.d >= 2, "d", "d must be >= 2"),
            (0 <= self.k <= Constants.max_k(), "k", f"k must be in [0, {Constants.max_k()}]"),
            (self.N >= 1, "N", "N must be >= 1"),
            (len(self.n_ladder) > 0, "n_ladder", "n_ladder must not be empty"),
            (all(a < b for a, b in zip(self.n_ladder, self.n_ladder[1:])), "n_ladder", "n_ladder must be ascending"),
            (all(n >= Constants.min_support() for n in self.n_ladder), "n_ladder",
             f"every ladder entry must be >= {Constants.min_support()}"),
            (len(self.seeds) > 0, "seeds", "seeds must not be empty"),
            (self.instance_family in FAMILIES, "instance_family",
             f"unknown instance family '{self.instance_family}', expected one of {', '.join(FAMILIES)}"),
            (self.method in METHODS, "method", f"unknown method '{self.method}', expected one of {', '.join(METHODS)}"),
            (self.grid_size is None or self.grid_size >= 1, "grid_size", "grid_size must be >= 1"),
            (not self.spherical or self.k == 1, "k", "the sphere_uniform family uses the |x.y| kernel and needs k = 1"),
        ]

        for ok, key, message in checks:
            if not ok:
                raise ConfigError(message, key=key)

        self.reduction.validate()
        return self


class LadderVisitor(parsimonious.NodeVisitor):

    def visit_ladder(self, node, visited_children):
        first, rest = visited_children
        values = list(first)
        # an unmatched repetition visits to the bare node
        for _, term in (rest if isinstance(rest, list) else []):
            values.extend(term)
        return values

    def visit_term(self, node, visited_children):
        # either a range or a single integer
        return visited_children[0]

    def visit_range(self, node, visited_children):
        start, _, stop, step = visited_children
        ratio = step[0] if isinstance(step, list) else 2

        if ratio < 2:
            raise ValueError(f"Ladder step must be >= 2, got x{ratio}")

        if start < 1 or stop < start:
            raise ValueError(f"Invalid ladder range {start}..{stop}")

        values = []
        n = start
        while n <= stop:
            values.append(n)
            n *= ratio
        return values

    def visit_single(self, node, visited_children):
        return [visited_children[0]]

    def visit_step(self, node, visited_children):
        return visited_children[1]

    def visit_integer(self, node, visited_children):
        return int(node.text)

    def generic_visit(self, node, visited_children):
        """ The generic visit method. """
        return visited_children or node


class Ladder:

    grammar = Grammar(
        r"""
        ladder          = term (separator term)*
        separator       = ws "," ws
        term            = range / single
        range           = integer ".." integer step?
        single          = integer
        step            = "x" integer
        integer         = ~"[0-9]+"
        ws              = ~"\s*"
        """)

    @staticmethod
    def parse(expression: str) -> typing.List[int]:
        """
        :param expression: e.g. "32..512", "32..512x4, 1000", "64, 128"
        """
        try:
            syntax_tree = Ladder.grammar.parse(expression.strip())
        except parsimonious.exceptions.ParseError as e:
            raise ValueError(f"Cannot parse ladder '{expression}' at column {e.pos + 1}") from e

        try:
            return LadderVisitor().visit(syntax_tree)
        except parsimonious.exceptions.VisitationError as e:
            raise ValueError(f"Invalid ladder '{expression}': ranges need 1 <= start <= stop and a step >= 2") from e


class ConfigLoader:

    @staticmethod
    def key_line(text: str, key: str) -> int:
        match = re.search(r'"' + re.escape(key) + r'"\s*:', text)
        if match is None:
            return 1

        return text.count("\n", 0, match.start()) + 1

    @staticmethod
    def parse_experiment(text: str, path: str = "<config>") -> ExperimentConfig:
        try:
            values = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed JSON: {e.msg}", path, e.lineno) from e

        if not isinstance(values, dict):
            raise ConfigError("config must be a JSON object", path, 1)

        try:
            return ConfigLoader._build_experiment(values)
        except ConfigError as e:
            line = ConfigLoader.key_line(text, e.key) if e.key is not None else 1
            raise ConfigError(e.message, path, line, e.key) from e

    @staticmethod
    def load_experiment(path: str) -> ExperimentConfig:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()

        logger.debug(f"Loaded config from {path}")
        return ConfigLoader.parse_experiment(text, path)

    @staticmethod
    def _build_experiment(values: typing.Dict[str, typing.Any]) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown key '{unknown[0]}'", key=unknown[0])

        values = dict(values)

        for key in ("d", "k", "N"):
            if key in values and not isinstance(values[key], int):
                raise ConfigError(f"{key} must be an integer", key=key)

        if "n_ladder" in values:
            values["n_ladder"] = ConfigLoader._ladder(values["n_ladder"])

        if "seeds" in values:
            seeds = values["seeds"]
            if isinstance(seeds, int):
                values["seeds"] = list(range(seeds))
            elif isinstance(seeds, list) and all(isinstance(s, int) for s in seeds):
                values["seeds"] = list(seeds)
            else:
                raise ConfigError("seeds must be a list of integers or a count", key="seeds")

        reduction = values.pop("reduction", {})
        if not isinstance(reduction, dict):
            raise ConfigError("reduction must be an object", key="reduction")

        try:
            values["reduction"] = ReductionConfig.from_dict(reduction, k=values.get("k", ExperimentConfig.k))
        except TypeError as e:
            raise ConfigError(f"invalid reduction settings: {e}", key="reduction") from e

        return ExperimentConfig(**values).validate()

    @staticmethod
    def _ladder(value) -> typing.List[int]:
        if isinstance(value, str):
            try:
                return Ladder.parse(value)
            except ValueError as e:
                raise ConfigError(str(e), key="n_ladder") from e

        if isinstance(value, list) and all(isinstance(n, int) for n in value):
            return list(value)

        raise ConfigError("n_ladder must be a list of integers or a ladder expression", key="n_ladder")


def resolve_threads(requested: typing.Optional[int], configured: int = 1) -> int:
    """
    CLI flag wins, then the THREADS environment variable, then the config value.
    """
    if requested is not None:
        return max(1, int(requested))

    env = os.environ.get("THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning(f"Ignoring non-integer THREADS={env!r}")

    return max(1, configured)

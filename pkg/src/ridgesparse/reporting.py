from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

RATE_COLUMNS = ("family", "d", "k", "method", "n", "seed", "m", "sup_error", "support", "relaxation")


@dataclass(frozen=True)
class RateRow:
    family: str
    d: int
    k: int
    method: str
    n: int
    seed: int
    m: int
    sup_error: float
    support: int
    relaxation: float

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.sup_error)

    def sort_key(self) -> typing.Tuple:
        return self.family, self.d, self.k, self.method, self.n, self.seed, self.m

    def cells(self) -> typing.List[str]:
        return [self.family, str(self.d), str(self.k), self.method, str(self.n), str(self.seed), str(self.m),
                repr(float(self.sup_error)), str(self.support), repr(float(self.relaxation))]

    @staticmethod
    def from_cells(cells: typing.Dict[str, str]) -> RateRow:
        try:
            return RateRow(family=cells["family"], d=int(cells["d"]), k=int(cells["k"]), method=cells["method"],
                           n=int(cells["n"]), seed=int(cells["seed"]), m=int(cells["m"]),
                           sup_error=float(cells["sup_error"]), support=int(cells["support"]),
                           relaxation=float(cells["relaxation"]))
        except (KeyError, ValueError) as e:
            raise ValueError(f"Malformed rate row {cells}: {e}") from e


class RateCsv:
    """
    Rate tables: fixed column order, header row, UTF-8, LF line endings, floats in repr form.
    """

    @staticmethod
    def dumps(rows: typing.Iterable[RateRow]) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(RATE_COLUMNS)
        for row in sorted(rows, key=RateRow.sort_key):
            writer.writerow(row.cells())

        return buffer.getvalue()

    @staticmethod
    def write(rows: typing.Iterable[RateRow], path: typing.Union[str, Path]):
        text = RateCsv.dumps(rows)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)

        logger.info(f"Wrote {text.count(chr(10)) - 1} rate rows to {path}")

    @staticmethod
    def loads(text: str) -> typing.List[RateRow]:
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or tuple(reader.fieldnames) != RATE_COLUMNS:
            raise ValueError(f"Rate CSV header must be {','.join(RATE_COLUMNS)}, got {reader.fieldnames}")

        return [RateRow.from_cells(cells) for cells in reader]

    @staticmethod
    def read(path: typing.Union[str, Path]) -> typing.List[RateRow]:
        with open(path, "r", encoding="utf-8", newline="") as f:
            return RateCsv.loads(f.read())


def make_json_safe(obj):
    """
    Recursively converts dataclasses, numpy values and paths into plain JSON types.
    Non-finite floats become None.
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = dataclasses.asdict(obj)

    if isinstance(obj, dict):
        return {str(k): make_json_safe(v) for k, v in obj.items()}

    if isinstance(obj, (list, tuple)):
        return [make_json_safe(v) for v in obj]

    if isinstance(obj, np.ndarray):
        return make_json_safe(obj.tolist())

    if isinstance(obj, np.bool_):
        return bool(obj)

    if isinstance(obj, (np.integer,)):
        return int(obj)

    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None

    if isinstance(obj, Path):
        return str(obj)

    return obj


def write_json(payload, path: typing.Union[str, Path]):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(make_json_safe(payload), f, indent=2, sort_keys=True)
        f.write("\n")

    logger.debug(f"Wrote JSON to {path}")

"""Schema-annotated CSV tables and deterministic splits."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptyInputError, ParseError, SchemaError
from .rng import Xoshiro256

NUMERICAL = "numerical"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    target: bool = False


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[Column, ...]
    task: str = "classification"

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in schema: {names}")
        for c in self.columns:
            if c.kind not in (NUMERICAL, CATEGORICAL):
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
        targets = [c for c in self.columns if c.target]
        if len(targets) != 1:
            raise SchemaError(f"schema needs exactly one target column, found {len(targets)}")
        if len(self.columns) < 2:
            raise SchemaError("schema needs at least one non-target column")
        if self.task not in ("classification", "regression"):
            raise SchemaError(f"unknown task {self.task!r}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def target(self) -> Column:
        return next(c for c in self.columns if c.target)

    @property
    def numerical(self) -> list[Column]:
        return [c for c in self.columns if c.kind == NUMERICAL]

    @property
    def categorical(self) -> list[Column]:
        return [c for c in self.columns if c.kind == CATEGORICAL]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"no column named {name!r}")

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "target": self.target.name,
            "columns": [{"name": c.name, "kind": c.kind} for c in self.columns],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TableSchema":
        try:
            target = doc["target"]
            cols = tuple(
                Column(c["name"], c["kind"], c["name"] == target) for c in doc["columns"]
            )
            return cls(cols, doc.get("task", "classification"))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc


def load_schema(path) -> TableSchema:
    with open(path, encoding="utf-8") as fh:
        return TableSchema.from_json(json.load(fh))


def save_schema(schema: TableSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2)


@dataclass(frozen=True)
class TableData:
    """Column-oriented table. Numerical columns are float64 arrays, categorical
    columns are object arrays of strings. Arrays are set read-only."""

    schema: TableSchema
    columns: dict = field(repr=False)

    def __post_init__(self):
        n = None
        cols = {}
        for c in self.schema.columns:
            if c.name not in self.columns:
                raise SchemaError(f"table lacks column {c.name!r}")
            if c.kind == NUMERICAL:
                arr = np.array(self.columns[c.name], dtype=np.float64)
                if not np.all(np.isfinite(arr)):
                    raise ParseError(f"column {c.name!r} has non-finite values")
            else:
                arr = np.array([str(v) for v in self.columns[c.name]], dtype=object)
            arr.setflags(write=False)
            if n is not None and len(arr) != n:
                raise SchemaError("columns have differing lengths")
            n = len(arr)
            cols[c.name] = arr
        object.__setattr__(self, "columns", cols)

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values())))

    def __len__(self) -> int:
        return self.n_rows

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def take(self, idx) -> "TableData":
        idx = np.asarray(idx, dtype=np.int64)
        return TableData(self.schema, {k: v[idx] for k, v in self.columns.items()})

    def rows(self):
        names = self.schema.names
        for i in range(self.n_rows):
            yield [self.columns[n][i] for n in names]

    def equals(self, other: "TableData") -> bool:
        if self.schema != other.schema or self.n_rows != other.n_rows:
            return False
        return all(np.array_equal(self[n], other[n]) for n in self.schema.names)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for c in self.schema.columns:
            h.update(c.name.encode())
            if c.kind == NUMERICAL:
                h.update(np.ascontiguousarray(self[c.name], dtype="<f8").tobytes())
            else:
                h.update("\x00".join(self[c.name]).encode())
        return h.hexdigest()


def load_csv(path, schema: TableSchema) -> TableData:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError(f"{path}: file is empty") from None
        index = {name: i for i, name in enumerate(header)}
        for c in schema.columns:
            if c.name not in index:
                raise SchemaError(f"{path}: header lacks column {c.name!r}")
        data = {c.name: [] for c in schema.columns}
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}", row_no)
            for c in schema.columns:
                cell = row[index[c.name]]
                if cell.strip() == "":
                    raise ParseError(f"{path}: row {row_no}: missing value in column {c.name!r}", row_no)
                if c.kind == NUMERICAL:
                    try:
                        v = float(cell)
                    except ValueError:
                        raise ParseError(
                            f"{path}: row {row_no}: cannot parse {cell!r} in numerical column {c.name!r}",
                            row_no,
                        ) from None
                    if not math.isfinite(v):
                        raise ParseError(f"{path}: row {row_no}: non-finite value in {c.name!r}", row_no)
                    data[c.name].append(v)
                else:
                    data[c.name].append(cell)
    if not data[schema.columns[0].name]:
        raise EmptyInputError(f"{path}: no data rows")
    return TableData(schema, data)


def _format(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(table: TableData, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.schema.names)
        for row in table.rows():
            w.writerow([_format(v) for v in row])


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        fr = (self.train, self.val, self.test)
        if any(not (f > 0) for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fr}")

    def sizes(self, n: int) -> tuple[int, int, int]:
        # the slack absorbs fractions like 28943/48842 that land a hair under an integer
        n_train = int(math.floor(self.train * n + 1e-9))
        n_val = int(math.floor(self.val * n + 1e-9))
        # each part gets at least one row; the remainder goes to test
        n_train = max(1, n_train)
        n_val = max(1, n_val)
        n_test = n - n_train - n_val
        if n_test < 1:
            raise ConfigError(f"{n} rows are too few for a three-way split")
        return n_train, n_val, n_test


def split_indices(n: int, spec: SplitSpec) -> tuple[list[int], list[int], list[int]]:
    spec.validate()
    if n < 3:
        raise ConfigError("splitting needs at least 3 rows")
    n_train, n_val, _ = spec.sizes(n)
    perm = Xoshiro256(spec.seed).permutation(n)
    return (
        sorted(perm[:n_train]),
        sorted(perm[n_train : n_train + n_val]),
        sorted(perm[n_train + n_val :]),
    )


def split(table: TableData, spec: SplitSpec) -> tuple[TableData, TableData, TableData]:
    """Disjoint train/val/test partition; row order within each part is preserved."""
    tr, va, te = split_indices(table.n_rows, spec)
    return table.take(tr), table.take(va), table.take(te)


def concat(tables: Sequence[TableData]) -> TableData:
    schema = tables[0].schema
    for t in tables[1:]:
        if t.schema != schema:
            raise SchemaError("cannot concatenate tables with different schemas")
    return TableData(schema, {n: np.concatenate([t[n] for t in tables]) for n in schema.names})

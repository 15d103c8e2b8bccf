"""Invertible encoding between raw tables and the model's continuous space.

Numerical columns go through an empirical quantile map onto N(0, 1);
categorical columns become one-hot blocks. The encoded layout is the
numerical block first (schema order), then one block per categorical column.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .data import CATEGORICAL, NUMERICAL, Column, TableData, TableSchema
from .errors import DecodeError, DimensionError, EncodeError, FitError

DEFAULT_N_QUANTILES = 1000
DEFAULT_EPS = 1e-7

# Wichura (1988), algorithm AS241 PPND16
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coef, x):
    out = np.zeros_like(x)
    for c in reversed(coef):
        out = out * x + c
    return out


def inverse_normal_cdf(p):
    """Standard normal quantile function for p in (0, 1), vectorized."""
    p = np.asarray(p, dtype=np.float64)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    if np.any((p <= 0) | (p >= 1) | ~np.isfinite(p)):
        raise ValueError("inverse_normal_cdf needs 0 < p < 1")
    q = p - 0.5
    out = np.empty_like(p)
    central = np.abs(q) <= 0.425
    r = 0.180625 - q[central] ** 2
    out[central] = q[central] * _poly(_A, r) / _poly(_B, r)
    tail = ~central
    r = np.sqrt(-np.log(np.where(q[tail] < 0, p[tail], 1.0 - p[tail])))
    near = r <= 5.0
    val = np.empty_like(r)
    rn = r[near] - 1.6
    val[near] = _poly(_C, rn) / _poly(_D, rn)
    rf = r[~near] - 5.0
    val[~near] = _poly(_E, rf) / _poly(_F, rf)
    out[tail] = np.where(q[tail] < 0, -val, val)
    return float(out[0]) if scalar else out


def normal_cdf(z):
    return ndtr(z)


@dataclass(frozen=True)
class QuantileMap:
    quantiles: np.ndarray
    eps: float = DEFAULT_EPS
    constant: bool = False

    def __post_init__(self):
        q = np.asarray(self.quantiles, dtype=np.float64)
        if q.ndim != 1 or len(q) < 1:
            raise FitError("quantile map needs at least one reference value")
        if np.any(np.diff(q) < 0):
            raise FitError("reference quantiles must be non-decreasing")
        if not 0 < self.eps < 0.5:
            raise FitError(f"cdf floor must lie in (0, 0.5), got {self.eps}")
        q = q.copy()
        q.setflags(write=False)
        object.__setattr__(self, "quantiles", q)

    @property
    def positions(self) -> np.ndarray:
        n = len(self.quantiles)
        return np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)

    def ecdf(self, x) -> np.ndarray:
        """Interpolated CDF at ``x``; plateaus of tied quantiles map to their midpoint."""
        q, pos = self.quantiles, self.positions
        x = np.asarray(x, dtype=np.float64)
        up = np.interp(x, q, pos)
        down = np.interp(-x, -q[::-1], -pos[::-1])
        return 0.5 * (up - down)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.constant:
            return np.zeros_like(x) if x.ndim else 0.0
        p = np.clip(self.ecdf(x), self.eps, 1.0 - self.eps)
        return inverse_normal_cdf(p)

    def inverse(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.constant:
            out = np.full_like(z, self.quantiles[0])
            return out if z.ndim else float(out)
        out = np.interp(normal_cdf(z), self.positions, self.quantiles)
        return out if z.ndim else float(out)


def fit_quantile(values, n_quantiles: int = DEFAULT_N_QUANTILES, eps: float = DEFAULT_EPS) -> QuantileMap:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise FitError("cannot fit a quantile map on an empty column")
    if not np.all(np.isfinite(v)):
        raise FitError("cannot fit a quantile map on non-finite values")
    if n_quantiles < 2:
        raise FitError("n_quantiles must be at least 2")
    if np.all(v == v[0]):
        return QuantileMap(np.array([v[0], v[0]]), eps, constant=True)
    n_q = min(n_quantiles, v.size)
    refs = np.quantile(v, np.linspace(0.0, 1.0, n_q))
    # np.quantile can produce tiny non-monotone jitter from interpolation
    refs = np.maximum.accumulate(refs)
    return QuantileMap(refs, eps)


def quantile_forward(qmap: QuantileMap, x):
    return qmap.forward(x)


def quantile_inverse(qmap: QuantileMap, z):
    return qmap.inverse(z)


@dataclass(frozen=True)
class CategoryVocab:
    categories: tuple[str, ...]

    def __post_init__(self):
        cats = tuple(str(c) for c in self.categories)
        if len(cats) == 0:
            raise FitError("category vocabulary is empty")
        if len(set(cats)) != len(cats):
            raise FitError("category vocabulary has duplicates")
        object.__setattr__(self, "categories", cats)

    @property
    def size(self) -> int:
        return len(self.categories)

    @property
    def constant(self) -> bool:
        return len(self.categories) == 1


@dataclass(frozen=True)
class Slot:
    name: str
    kind: str
    offset: int
    width: int


@dataclass(frozen=True)
class PreprocessState:
    columns: tuple[Column, ...]
    quantile_maps: dict = field(repr=False)
    vocabs: dict = field(repr=False)

    @property
    def numerical(self) -> list[Column]:
        return [c for c in self.columns if c.kind == NUMERICAL]

    @property
    def categorical(self) -> list[Column]:
        return [c for c in self.columns if c.kind == CATEGORICAL]

    @property
    def layout(self) -> list[Slot]:
        slots, off = [], 0
        for c in self.numerical:
            slots.append(Slot(c.name, NUMERICAL, off, 1))
            off += 1
        for c in self.categorical:
            k = self.vocabs[c.name].size
            slots.append(Slot(c.name, CATEGORICAL, off, k))
            off += k
        return slots

    @property
    def n_numerical(self) -> int:
        return len(self.numerical)

    @property
    def cat_widths(self) -> list[int]:
        return [self.vocabs[c.name].size for c in self.categorical]

    @property
    def width(self) -> int:
        return self.n_numerical + sum(self.cat_widths)

    def encode(self, table: TableData) -> np.ndarray:
        out = np.zeros((table.n_rows, self.width))
        for slot in self.layout:
            if slot.name not in table.columns:
                raise EncodeError(f"table lacks column {slot.name!r}")
            col = table[slot.name]
            if slot.kind == NUMERICAL:
                out[:, slot.offset] = self.quantile_maps[slot.name].forward(col)
            else:
                vocab = self.vocabs[slot.name].categories
                index = {c: i for i, c in enumerate(vocab)}
                try:
                    codes = np.fromiter((index[v] for v in col), dtype=np.int64, count=len(col))
                except KeyError as exc:
                    raise EncodeError(
                        f"column {slot.name!r}: unseen category {exc.args[0]!r}"
                    ) from None
                out[np.arange(len(col)), slot.offset + codes] = 1.0
        return out

    def decode(self, matrix: np.ndarray, schema: TableSchema) -> TableData:
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != self.width:
            raise DimensionError(f"decode expects width {self.width}, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            bad = int(np.argwhere(~np.isfinite(m))[0, 0])
            raise DecodeError(f"non-finite entries in encoded row {bad}")
        cols = {}
        for slot in self.layout:
            block = m[:, slot.offset : slot.offset + slot.width]
            if slot.kind == NUMERICAL:
                cols[slot.name] = self.quantile_maps[slot.name].inverse(block[:, 0])
            else:
                vocab = np.array(self.vocabs[slot.name].categories, dtype=object)
                # argmax returns the first maximum, i.e. ties go to the lowest index
                cols[slot.name] = vocab[np.argmax(block, axis=1)]
        return TableData(schema, cols)

    def to_json(self) -> dict:
        return {
            "columns": [{"name": c.name, "kind": c.kind, "target": c.target} for c in self.columns],
            "quantile_maps": {
                name: {"eps": q.eps, "constant": q.constant, "n": len(q.quantiles)}
                for name, q in self.quantile_maps.items()
            },
            "vocabs": {name: list(v.categories) for name, v in self.vocabs.items()},
        }

    def tensors(self) -> dict:
        return {f"preprocess/{name}/quantiles": q.quantiles for name, q in self.quantile_maps.items()}

    @classmethod
    def from_json(cls, doc: dict, tensors: dict) -> "PreprocessState":
        cols = tuple(Column(c["name"], c["kind"], c["target"]) for c in doc["columns"])
        qmaps = {
            name: QuantileMap(tensors[f"preprocess/{name}/quantiles"], m["eps"], m["constant"])
            for name, m in doc["quantile_maps"].items()
        }
        vocabs = {name: CategoryVocab(tuple(v)) for name, v in doc["vocabs"].items()}
        return cls(cols, qmaps, vocabs)


def fit_preprocess(
    table: TableData,
    columns: Sequence[Column] | None = None,
    n_quantiles: int = DEFAULT_N_QUANTILES,
    eps: float = DEFAULT_EPS,
) -> PreprocessState:
    """Fit quantile maps and vocabularies on ``table`` (optionally a column subset)."""
    cols = tuple(columns) if columns is not None else table.schema.columns
    qmaps, vocabs = {}, {}
    for c in cols:
        if c.kind == NUMERICAL:
            qmaps[c.name] = fit_quantile(table[c.name], n_quantiles, eps)
        else:
            vocabs[c.name] = CategoryVocab(tuple(sorted(set(table[c.name]))))
    return PreprocessState(cols, qmaps, vocabs)


def encode(table: TableData, state: PreprocessState) -> np.ndarray:
    return state.encode(table)


def decode(matrix: np.ndarray, state: PreprocessState, schema: TableSchema) -> TableData:
    return state.decode(matrix, schema)

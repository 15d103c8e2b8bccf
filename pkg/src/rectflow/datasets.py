"""Synthetic fixture tables for tests, examples and the desk-scale acceptance run."""

from __future__ import annotations

import numpy as np

from .data import CATEGORICAL, NUMERICAL, Column, TableData, TableSchema
from .rng import generator

DESK_SCHEMA = TableSchema(
    (
        Column("x1", NUMERICAL),
        Column("x2", NUMERICAL),
        Column("color", CATEGORICAL),
        Column("label", CATEGORICAL, target=True),
    ),
    task="classification",
)

_COLOR_GIVEN_LABEL = {"0": (0.6, 0.3, 0.1), "1": (0.15, 0.35, 0.5)}


def desk_fixture(n: int = 5000, seed: int = 0) -> TableData:
    """Two correlated gaussian columns, a label driven by them, and a colour
    column whose frequencies depend on the label."""
    rng = generator(seed, "desk-fixture")
    x1 = rng.standard_normal(n)
    x2 = 0.8 * x1 + 0.6 * rng.standard_normal(n)
    logits = 2.0 * x1 - 1.0 * x2 + 0.25
    label = np.where(rng.random(n) < 1.0 / (1.0 + np.exp(-logits)), "1", "0")
    colors = np.array(["red", "green", "blue"], dtype=object)
    u = rng.random(n)
    color = np.empty(n, dtype=object)
    for lab, probs in _COLOR_GIVEN_LABEL.items():
        sel = label == lab
        color[sel] = colors[np.searchsorted(np.cumsum(probs), u[sel], side="right").clip(0, 2)]
    return TableData(DESK_SCHEMA, {"x1": x1, "x2": 3.0 * x2 + 10.0, "color": color, "label": label})

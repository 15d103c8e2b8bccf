"""JSON run configuration shared by the ``train`` and ``ablate`` subcommands.

Relative paths resolve against the config file's directory. A single root
``seed`` is mandatory; every generator in a run is derived from it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import SplitSpec
from .errors import ConfigError
from .flow import FlowConfig
from .model import ModelConfig
from .rng import derive_seed
from .sampler import SolverConfig
from .training import TrainConfig

_SECTIONS = {"seed", "data", "split", "model", "flow", "train", "solver", "sample", "eval", "output"}


@dataclass
class RunConfig:
    seed: int
    csv: Path
    schema: Path
    split: SplitSpec
    model: ModelConfig
    flow: FlowConfig
    train: TrainConfig
    solver: SolverConfig
    n_samples: int | None = None
    eval_repeats: int = 20
    output_dir: Path = Path("out")
    source: Path | None = None

    @property
    def checkpoint_path(self) -> Path:
        return self.output_dir / "checkpoint.bin"

    @property
    def telemetry_path(self) -> Path:
        return self.output_dir / "telemetry.ndjson"

    @property
    def splits_dir(self) -> Path:
        return self.output_dir / "splits"


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(sec)


def _build(cls, kwargs: dict, name: str):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"config section {name!r}: {exc}") from None


def parse_config(doc: dict, base: Path = Path(".")) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "seed" not in doc:
        raise ConfigError("config is missing the root 'seed'")
    seed = doc["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("'seed' must be a non-negative integer")

    data = _section(doc, "data")
    for key in ("csv", "schema"):
        if key not in data:
            raise ConfigError(f"config 'data' section needs {key!r}")
    csv_path = (base / data["csv"]).resolve()
    schema_path = (base / data["schema"]).resolve()
    for p in (csv_path, schema_path):
        if not p.is_file():
            raise ConfigError(f"referenced file does not exist: {p}")

    for sec in ("model", "train"):
        if "seed" in _section(doc, sec):
            raise ConfigError(f"section {sec!r} may not set its own seed; it is derived from the root seed")
    split_kw = _section(doc, "split")
    split_kw["seed"] = derive_seed(seed, "split")
    split = _build(SplitSpec, split_kw, "split")
    split.validate()
    model_kw = _section(doc, "model")
    model_kw["seed"] = derive_seed(seed, "model")
    train_kw = _section(doc, "train")
    train_kw["seed"] = derive_seed(seed, "train")
    sample = _section(doc, "sample")
    ev = _section(doc, "eval")
    out = _section(doc, "output")
    return RunConfig(
        seed=seed,
        csv=csv_path,
        schema=schema_path,
        split=split,
        model=_build(ModelConfig, model_kw, "model"),
        flow=_build(FlowConfig, _section(doc, "flow"), "flow"),
        train=_build(TrainConfig, train_kw, "train"),
        solver=_build(SolverConfig, _section(doc, "solver"), "solver"),
        n_samples=sample.get("n"),
        eval_repeats=int(ev.get("repeats", 20)),
        output_dir=(base / out.get("dir", "out")).resolve(),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    cfg = parse_config(doc, path.parent)
    cfg.source = path
    return cfg

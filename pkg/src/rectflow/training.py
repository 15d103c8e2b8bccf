"""Adam training loop over the rectified-flow loss, plus checkpoint files.

Checkpoint layout (all integers little endian)::

    8 bytes   magic  b"RFLOWCKP"
    8 bytes   uint64 length of the JSON header
    N bytes   UTF-8 JSON header: format_version, configs, schema, preprocess
              metadata, training metadata and a tensor manifest
              [{"name", "shape"}, ...]
    ...       float64 payload of each manifest tensor, row major, in order
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

from .data import TableData, TableSchema
from .errors import ConfigError, CorruptFileError, DimensionError, DivergenceError, FormatError
from .flow import FlowConfig, NoiseLayout, rf_loss
from .model import ModelConfig, VelocityNet, param_shapes
from .preprocess import DEFAULT_EPS, DEFAULT_N_QUANTILES, PreprocessState, fit_preprocess
from .rng import generator

MAGIC = b"RFLOWCKP"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 30000
    batch_size: int = 4096
    seed: int = 0
    log_interval: int = 100
    n_quantiles: int = DEFAULT_N_QUANTILES
    cdf_eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be at least 1, got {self.batch_size}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be at least 1, got {self.iterations}")
        if self.log_interval < 1:
            raise ConfigError("log interval must be at least 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig):
    """Bias-corrected Adam update, applied in place; returns ``(params, state)``."""
    if set(grads) != set(params):
        raise DimensionError("gradient names do not match parameters")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise DimensionError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state


@dataclass
class Checkpoint:
    params: dict
    model_config: ModelConfig
    flow_config: FlowConfig
    preprocess: PreprocessState
    schema: TableSchema
    meta: dict = field(default_factory=dict)
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def model(self) -> VelocityNet:
        return VelocityNet(self.model_config, self.params)

    @property
    def layout(self) -> NoiseLayout:
        return NoiseLayout.from_state(self.preprocess)

    def equals(self, other: "Checkpoint") -> bool:
        if (self.model_config, self.flow_config, self.schema) != (
            other.model_config, other.flow_config, other.schema
        ):
            return False
        if self.meta != other.meta or self.preprocess.to_json() != other.preprocess.to_json():
            return False
        mine, theirs = self._tensors(), other._tensors()
        return mine.keys() == theirs.keys() and all(
            mine[k].shape == theirs[k].shape and mine[k].tobytes() == theirs[k].tobytes() for k in mine
        )

    def _tensors(self) -> dict:
        out = {f"model/{k}": self.params[k] for k in param_shapes(self.model_config, self.params["head.W"].shape[1])}
        out.update(self.preprocess.tensors())
        out["train/loss_history"] = np.asarray(self.loss_history, dtype=np.float64).reshape(1, -1)
        return out


def _check_finite(value: float, iteration: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"training diverged at iteration {iteration}: loss is {value}", iteration=iteration)


def train(
    data: TableData,
    model_config: ModelConfig,
    flow_config: FlowConfig,
    train_config: TrainConfig,
    log: IO[str] | None = None,
) -> Checkpoint:
    """Fit preprocessing, then run ``iterations`` Adam steps on batches drawn with replacement."""
    if data.n_rows < 1:
        raise ConfigError("training data is empty")
    state = fit_preprocess(data, n_quantiles=train_config.n_quantiles, eps=train_config.cdf_eps)
    x = state.encode(data)
    layout = NoiseLayout.from_state(state)
    net = VelocityNet.create(model_config, state.width)
    params = net.params
    adam = AdamState.zeros_like(params)
    rng_batch = generator(train_config.seed, "train-batch")
    rng_flow = generator(train_config.seed, "train-flow")
    rng_drop = generator(train_config.seed, "train-dropout")
    losses = np.empty(train_config.iterations)
    t_start = time.perf_counter()

    for it in range(train_config.iterations):
        idx = rng_batch.integers(0, x.shape[0], size=train_config.batch_size)
        leaves = {}

        def velocity(zt, t):
            out, lv = net.graph(zt, t, training=True, rng=rng_drop)
            leaves.update(lv)
            return out

        loss = rf_loss(velocity, x[idx], layout, flow_config, rng_flow)
        value = float(loss.value[0, 0])
        _check_finite(value, it)
        loss.backward()
        grads = {k: leaves[k].grad for k in params}
        grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if not math.isfinite(grad_norm):
            raise DivergenceError(f"training diverged at iteration {it}: non-finite gradient", iteration=it)
        adam_step(params, grads, adam, train_config)
        losses[it] = value
        if log is not None and (it % train_config.log_interval == 0 or it == train_config.iterations - 1):
            rec = {
                "iter": it,
                "loss": value,
                "grad_norm": grad_norm,
                "wall_ms": round((time.perf_counter() - t_start) * 1000.0, 3),
            }
            log.write(json.dumps(rec) + "\n")
            log.flush()

    meta = {
        "iterations": train_config.iterations,
        "final_loss": float(losses[-1]),
        "train_config": train_config.to_json(),
        "train_rows": data.n_rows,
    }
    return Checkpoint(params, model_config, flow_config, state, data.schema, meta, losses)


def save_checkpoint(cp: Checkpoint, path) -> None:
    tensors = cp._tensors()
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": cp.model_config.to_json(),
        "flow_config": cp.flow_config.to_json(),
        "schema": cp.schema.to_json(),
        "preprocess": cp.preprocess.to_json(),
        "meta": cp.meta,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CorruptFileError(f"{path}: not a rectflow checkpoint (bad magic bytes)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise CorruptFileError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable header: {exc}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{path}: checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})"
        )
    offset = 16 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(raw):
            raise CorruptFileError(f"{path}: truncated tensor data at {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise CorruptFileError(f"{path}: {len(raw) - offset} unexpected trailing bytes")

    model_config = ModelConfig.from_json(header["model_config"])
    params = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    state = PreprocessState.from_json(header["preprocess"], tensors)
    cp = Checkpoint(
        params=params,
        model_config=model_config,
        flow_config=FlowConfig.from_json(header["flow_config"]),
        preprocess=state,
        schema=TableSchema.from_json(header["schema"]),
        meta=header["meta"],
        loss_history=tensors["train/loss_history"].ravel(),
    )
    if cp.params["head.W"].shape[1] != state.width:
        raise CorruptFileError(f"{path}: model width does not match the preprocessing layout")
    VelocityNet(cp.model_config, cp.params)  # raises on shape mismatch
    return cp

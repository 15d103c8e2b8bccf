"""GLU-block velocity network v(z_t, t).

Sinusoidal time embedding -> Linear -> SiLU -> Linear gives a ``time_dim``
vector that is concatenated to z, projected to the first hidden width, then
passed through four GLU blocks and a linear head back to the data width.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, DomainError
from .rng import generator

DEFAULT_HIDDEN = (1024, 2048, 1024, 1024)


@dataclass(frozen=True)
class ModelConfig:
    width_factor: float = 1.0
    dropout: float = 0.0
    time_dim: int = 128
    seed: int = 0
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    # only concatenation is implemented; the field keeps room for additive conditioning
    time_combine: str = "concat"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.width_factor > 0:
            raise ConfigError(f"width_factor must be positive, got {self.width_factor}")
        if self.time_dim % 2 or self.time_dim < 4:
            raise ConfigError(f"time_dim must be even and >= 4, got {self.time_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.time_combine != "concat":
            raise ConfigError(f"unsupported time_combine {self.time_combine!r}")
        if not self.hidden:
            raise ConfigError("hidden sizes must not be empty")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(max(1, int(round(h * self.width_factor))) for h in self.hidden)

    def to_json(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def sin_time_embed(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of times in [0, 1]; returns ``len(t) x dim`` (or ``dim`` for scalar t)."""
    if dim % 2 or dim < 4:
        raise ConfigError(f"embedding dim must be even and >= 4, got {dim}")
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    t_arr = np.asarray(t, dtype=np.float64)
    args = 1000.0 * np.atleast_1d(t_arr)[:, None] * freqs[None, :]
    out = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    return out[0] if t_arr.ndim == 0 else out


def linear(x: ad.Node, w: ad.Node, b: ad.Node) -> ad.Node:
    return ad.add(ad.matmul(x, w), b)


def glu_block(x: ad.Node, w1, b1, w2, b2, p: float = 0.0, training: bool = False, rng=None) -> ad.Node:
    """Dropout((x W1 + b1) * sigmoid(x W2 + b2))."""
    if x.shape[1] != w1.shape[0] or w1.shape != w2.shape:
        raise DimensionError(f"GLU block expects input width {w1.shape[0]}, got {x.shape[1]}")
    gated = ad.hadamard(linear(x, w1, b1), ad.sigmoid(linear(x, w2, b2)))
    return ad.dropout(gated, p, training, rng)


def param_shapes(config: ModelConfig, d: int) -> dict[str, tuple[int, int]]:
    """Parameter names and shapes, in declaration (and serialization) order."""
    td = config.time_dim
    widths = config.widths
    shapes = {
        "time1.W": (td, td), "time1.b": (1, td),
        "time2.W": (td, td), "time2.b": (1, td),
        "proj.W": (d + td, widths[0]), "proj.b": (1, widths[0]),
    }
    fan_in = widths[0]
    for i, h in enumerate(widths):
        shapes[f"glu{i}.W1"] = (fan_in, h)
        shapes[f"glu{i}.b1"] = (1, h)
        shapes[f"glu{i}.W2"] = (fan_in, h)
        shapes[f"glu{i}.b2"] = (1, h)
        fan_in = h
    shapes["head.W"] = (fan_in, d)
    shapes["head.b"] = (1, d)
    return shapes


def init_params(config: ModelConfig, d: int) -> dict[str, np.ndarray]:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, seeded by ``config.seed``."""
    if d < 1:
        raise ConfigError("data width must be at least 1")
    rng = generator(config.seed, "model-init")
    params = {}
    for name, shape in param_shapes(config, d).items():
        if name.rsplit(".", 1)[1].startswith("b"):
            params[name] = np.zeros(shape)
        else:
            bound = math.sqrt(1.0 / shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


class VelocityNet:
    """Parameters plus config for the velocity field; the data width is read off the head."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        if set(params) != set(param_shapes(config, self.data_dim)):
            raise DimensionError("parameter names do not match the model config")
        for name, shape in param_shapes(config, self.data_dim).items():
            if params[name].shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {params[name].shape}")

    @classmethod
    def create(cls, config: ModelConfig, d: int) -> "VelocityNet":
        return cls(config, init_params(config, d))

    @property
    def data_dim(self) -> int:
        return self.params["head.W"].shape[1]

    def graph(self, z, t, training: bool = False, rng=None) -> tuple[ad.Node, dict[str, ad.Node]]:
        """Build the forward graph; returns the output node and the parameter leaves."""
        z = ad.as_matrix(z)
        if z.shape[1] != self.data_dim:
            raise DimensionError(f"expected input width {self.data_dim}, got {z.shape[1]}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (z.shape[0],))
        if np.any((t < 0) | (t > 1)) or not np.all(np.isfinite(t)):
            raise DomainError("time values must lie in [0, 1]")
        leaves = {k: ad.Node(v) for k, v in self.params.items()}
        p = self.config.dropout
        # ODE solvers query one shared t for the whole batch: embed it once
        shared = z.shape[0] > 1 and np.all(t == t[0])
        emb = ad.constant(sin_time_embed(t[:1] if shared else t, self.config.time_dim))
        h = linear(emb, leaves["time1.W"], leaves["time1.b"])
        temb = linear(ad.silu(h), leaves["time2.W"], leaves["time2.b"])
        if shared:
            temb = ad.broadcast_rows(temb, z.shape[0])
        x = linear(ad.concat_cols([ad.constant(z), temb]), leaves["proj.W"], leaves["proj.b"])
        for i in range(len(self.config.widths)):
            x = glu_block(
                x,
                leaves[f"glu{i}.W1"], leaves[f"glu{i}.b1"],
                leaves[f"glu{i}.W2"], leaves[f"glu{i}.b2"],
                p, training, rng,
            )
        out = linear(x, leaves["head.W"], leaves["head.b"])
        return out, leaves

    def forward(self, z, t, training: bool = False, rng=None) -> np.ndarray:
        return self.graph(z, t, training, rng)[0].value

    __call__ = forward


def forward(model: VelocityNet, z, t, training: bool = False, rng=None) -> np.ndarray:
    return model.forward(z, t, training, rng)

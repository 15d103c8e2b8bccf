"""Rectified-flow objective: interpolation, timestep and noise samplers, loss."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, DomainError

TIMESTEP_MODES = ("logit_normal", "uniform")
NOISE_MODES = ("hybrid", "gaussian")
CAT_NOISE_MODES = ("uniform", "vertex")


@dataclass(frozen=True)
class FlowConfig:
    m: float = 0.0
    s: float = 1.0
    timestep: str = "logit_normal"
    noise: str = "hybrid"
    # how categorical slots are drawn under hybrid noise: i.i.d. U(0,1) per slot,
    # or a uniformly chosen one-hot vertex
    cat_noise: str = "uniform"

    def __post_init__(self):
        if not self.s > 0:
            raise ConfigError(f"logit-normal scale must be positive, got {self.s}")
        if self.timestep not in TIMESTEP_MODES:
            raise ConfigError(f"timestep mode must be one of {TIMESTEP_MODES}")
        if self.noise not in NOISE_MODES:
            raise ConfigError(f"noise mode must be one of {NOISE_MODES}")
        if self.cat_noise not in CAT_NOISE_MODES:
            raise ConfigError(f"cat_noise must be one of {CAT_NOISE_MODES}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "FlowConfig":
        return cls(**d)


@dataclass(frozen=True)
class NoiseLayout:
    n_numerical: int
    cat_widths: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "cat_widths", tuple(int(k) for k in self.cat_widths))
        if self.n_numerical < 0 or any(k < 1 for k in self.cat_widths):
            raise ConfigError("invalid noise layout")

    @property
    def width(self) -> int:
        return self.n_numerical + sum(self.cat_widths)

    @classmethod
    def from_state(cls, state) -> "NoiseLayout":
        return cls(state.n_numerical, tuple(state.cat_widths))


def interpolate(z0, z1, t):
    """t * z1 + (1 - t) * z0; ``t`` may be a scalar or one value per row."""
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape != z1.shape:
        raise DimensionError(f"interpolate shape mismatch: {z0.shape} vs {z1.shape}")
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0) | (t > 1)):
        raise DomainError("interpolation time must lie in [0, 1]")
    if t.ndim == 1 and z0.ndim == 2:
        t = t[:, None]
    return t * z1 + (1.0 - t) * z0


def logit(t):
    return np.log(t) - np.log1p(-t)


def logit_normal_pdf(t, m: float = 0.0, s: float = 1.0):
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any((t_arr <= 0) | (t_arr >= 1)):
        raise DomainError("logit-normal density is defined on the open interval (0, 1)")
    if not s > 0:
        raise ConfigError("scale must be positive")
    val = np.exp(-((logit(t_arr) - m) ** 2) / (2 * s * s)) / (s * math.sqrt(2 * math.pi) * t_arr * (1 - t_arr))
    return float(val) if t_arr.ndim == 0 else val


def logit_normal_cdf(t, m: float = 0.0, s: float = 1.0):
    from scipy.special import ndtr

    return ndtr((logit(np.asarray(t, dtype=np.float64)) - m) / s)


def sample_timestep(config: FlowConfig, rng: np.random.Generator, size=None):
    """Draw training times strictly inside (0, 1)."""
    if config.timestep == "logit_normal":
        eta = rng.standard_normal(size)
        t = 1.0 / (1.0 + np.exp(-(config.m + config.s * eta)))
    else:
        t = rng.random(size)
    # keep endpoints out even when the draw saturates in float64
    tiny = np.finfo(np.float64).eps
    return np.clip(t, tiny, 1.0 - tiny)


def sample_noise(layout: NoiseLayout, config: FlowConfig, rng: np.random.Generator, n: int | None = None):
    """Source draws z0, one row per sample (a vector when ``n`` is None)."""
    rows = 1 if n is None else n
    if config.noise == "gaussian":
        out = rng.standard_normal((rows, layout.width))
    else:
        parts = [rng.standard_normal((rows, layout.n_numerical))]
        for k in layout.cat_widths:
            if config.cat_noise == "uniform":
                parts.append(rng.random((rows, k)))
            else:
                block = np.zeros((rows, k))
                block[np.arange(rows), rng.integers(0, k, size=rows)] = 1.0
                parts.append(block)
        out = np.concatenate(parts, axis=1)
    return out[0] if n is None else out


def rf_loss(
    velocity: Callable[[np.ndarray, np.ndarray], ad.Node],
    batch,
    layout: NoiseLayout,
    config: FlowConfig,
    rng: np.random.Generator,
    z0=None,
    t=None,
) -> ad.Node:
    """Mean over rows of ||v(z_t, t) - (z1 - z0)||^2.

    ``velocity`` maps (z_t, t) to a graph node; ``z0`` and ``t`` are drawn when not given.
    """
    z1 = ad.as_matrix(batch)
    if z1.shape[0] == 0:
        raise DimensionError("rf_loss needs a non-empty batch")
    if z1.shape[1] != layout.width:
        raise DimensionError(f"batch width {z1.shape[1]} does not match layout width {layout.width}")
    n = z1.shape[0]
    if z0 is None:
        z0 = sample_noise(layout, config, rng, n)
    if t is None:
        t = sample_timestep(config, rng, n)
    z0 = ad.as_matrix(z0)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    zt = interpolate(z0, z1, t)
    pred = velocity(zt, t)
    # mse_loss averages over all entries; rescale to a per-row squared norm
    return ad.scale(ad.mse_loss(pred, z1 - z0), float(z1.shape[1]))

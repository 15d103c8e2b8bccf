"""Generation by integrating dz/dt = v(z, t) forward from noise (t=0) to data (t=1)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import TableData
from .errors import ConfigError, DivergenceError, StiffnessError
from .flow import sample_noise
from .rng import generator

METHODS = ("euler", "rk4", "dopri54")

# Dormand-Prince 5(4), 7 stages, first-same-as-last
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


@dataclass(frozen=True)
class SolverConfig:
    method: str = "dopri54"
    steps: int = 100
    rtol: float = 1e-5
    atol: float = 1e-6
    max_steps: int = 10000
    h0: float = 0.05
    per_row: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"solver method must be one of {METHODS}, got {self.method!r}")
        if self.steps < 1 or self.max_steps < 1:
            raise ConfigError("step counts must be at least 1")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("tolerances must be positive")
        if not 0 < self.h0 <= 1:
            raise ConfigError("initial step must lie in (0, 1]")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "SolverConfig":
        return cls(**d)


@dataclass
class Trajectory:
    ts: list = field(default_factory=list)
    zs: list = field(default_factory=list)
    accepted: int = 0
    rejected: int = 0

    def dump(self, fh) -> None:
        """Write one JSON record per accepted state."""
        for t, z in zip(self.ts, self.zs):
            fh.write(json.dumps({"t": t, "z": np.asarray(z).tolist()}) + "\n")


def _finite_or_raise(z: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(z)):
        rows = np.argwhere(~np.isfinite(np.atleast_2d(z)))[:, 0]
        raise DivergenceError(f"state became non-finite at t={t:.6g}", row=int(rows[0]))


def _fixed(velocity, z0, steps, method, traj):
    z = z0.copy()
    h = 1.0 / steps
    for i in range(steps):
        t = i * h
        if method == "euler":
            z = z + h * velocity(z, t)
        else:
            k1 = velocity(z, t)
            k2 = velocity(z + 0.5 * h * k1, t + 0.5 * h)
            k3 = velocity(z + 0.5 * h * k2, t + 0.5 * h)
            k4 = velocity(z + h * k3, t + h)
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t_next = 1.0 if i == steps - 1 else (i + 1) * h
        _finite_or_raise(z, t_next)
        traj.accepted += 1
        traj.ts.append(t_next)
        traj.zs.append(z)
    return z


def _error_norm(err, z, z_new, rtol, atol):
    """Scaled RMS error, maximised over rows so the whole batch shares one step."""
    scale = atol + rtol * np.maximum(np.abs(z), np.abs(z_new))
    r = np.atleast_2d(err / scale)
    return float(np.max(np.sqrt(np.mean(r * r, axis=1))))


def _dopri(velocity, z0, cfg: SolverConfig, traj):
    t, z = 0.0, z0.copy()
    h = cfg.h0
    k1 = velocity(z, t)
    steps = 0
    while t < 1.0:
        if steps >= cfg.max_steps:
            raise StiffnessError(f"adaptive solver exceeded {cfg.max_steps} steps at t={t:.6g}")
        steps += 1
        h = min(h, 1.0 - t)
        ks = [k1]
        for i in range(1, 7):
            zi = z + h * sum(a * k for a, k in zip(_A[i], ks))
            ks.append(velocity(zi, t + _C[i] * h))
        z_new = z + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
        err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        en = _error_norm(err, z, z_new, cfg.rtol, cfg.atol)
        if not np.isfinite(en):
            _finite_or_raise(z_new, t + h)
            raise DivergenceError(f"error estimate is non-finite at t={t:.6g}")
        if en <= 1.0:
            t = 1.0 if t + h >= 1.0 - 1e-15 else t + h
            z = z_new
            k1 = ks[6]
            traj.accepted += 1
            traj.ts.append(t)
            traj.zs.append(z)
            factor = MAX_FACTOR if en == 0.0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * en ** -0.2))
        else:
            traj.rejected += 1
            factor = min(1.0, max(MIN_FACTOR, SAFETY * en ** -0.2))
        h *= factor
    return z


def integrate(velocity: Callable, z0, config: SolverConfig = SolverConfig()):
    """Integrate from t=0 to t=1; returns ``(z1, trajectory)``.

    ``velocity(z, t)`` receives the whole state array and a scalar time.
    With ``config.per_row`` a 2-D ``z0`` is integrated one row at a time
    (each row gets its own adaptive steps); the returned trajectory then holds
    the summed step counts and no states.
    """
    z0 = np.array(z0, dtype=np.float64)
    _finite_or_raise(z0, 0.0)
    if config.per_row and z0.ndim == 2:
        out = np.empty_like(z0)
        total = Trajectory()
        for i in range(z0.shape[0]):
            try:
                row, tr = integrate(lambda z, t: velocity(z[None, :], t)[0], z0[i], _single(config))
            except (DivergenceError, StiffnessError) as exc:
                exc.row = i
                raise
            out[i] = row
            total.accepted += tr.accepted
            total.rejected += tr.rejected
        return out, total
    traj = Trajectory(ts=[0.0], zs=[z0])
    if config.method == "dopri54":
        z = _dopri(velocity, z0, config, traj)
    else:
        z = _fixed(velocity, z0, config.steps, config.method, traj)
    return z, traj


def _single(config: SolverConfig) -> SolverConfig:
    d = config.to_json()
    d["per_row"] = False
    return SolverConfig(**d)


def generate(cp, n: int, solver: SolverConfig = SolverConfig(), seed: int = 0,
             batch_size: int = 4096, trajectories: list | None = None) -> TableData:
    """Draw ``n`` synthetic rows from checkpoint ``cp``; deterministic per seed.

    Rows are integrated in batches of ``batch_size``; pass a list as
    ``trajectories`` to collect each batch's :class:`Trajectory`.
    """
    if n < 1:
        raise ConfigError("row count must be at least 1")
    net = cp.model
    rng = generator(seed, "sample-noise")
    z0 = sample_noise(cp.layout, cp.flow_config, rng, n)

    def velocity(z, t):
        return net.forward(z, np.full(z.shape[0], t))

    parts = []
    for start in range(0, n, batch_size):
        try:
            z1, traj = integrate(velocity, z0[start : start + batch_size], solver)
        except (DivergenceError, StiffnessError) as exc:
            row = start + (exc.row or 0)
            raise type(exc)(f"rows {start}..{min(n, start + batch_size) - 1}: {exc}", row=row) from exc
        parts.append(z1)
        if trajectories is not None:
            trajectories.append(traj)
    return cp.preprocess.decode(np.concatenate(parts, axis=0), cp.schema)

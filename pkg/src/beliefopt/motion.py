"""Discrete-time stochastic motion models and finite-difference Jacobians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HOLONOMIC = "holonomic"
UNICYCLE = "unicycle"

_INPUT_DIMS = {HOLONOMIC: 3, UNICYCLE: 2}

# Central differences with this relative step give O(h^2) accuracy and are
# exact (up to roundoff) for the affine holonomic model.
FD_STEP_SCALE = 1e-5


@dataclass(frozen=True)
class MotionModel:
    """Stochastic motion model x' = f(x, u, v) with additive control noise.

    The noise v enters on the control channel, so the state-space process
    noise covariance is F_v Q F_v^T with F_v the noise Jacobian.
    """

    kind: str
    dt: float
    process_noise_cov: np.ndarray

    def __post_init__(self):
        if self.kind not in _INPUT_DIMS:
            raise ValueError(f"unknown motion model kind {self.kind!r}")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        q = np.asarray(self.process_noise_cov, dtype=float)
        m = _INPUT_DIMS[self.kind]
        if q.shape != (m, m):
            raise ValueError(f"process noise covariance must be {m}x{m}, got {q.shape}")
        if np.abs(q - q.T).max(initial=0.0) > 1e-12:
            raise ValueError("process noise covariance must be symmetric")
        if np.linalg.eigvalsh(q)[0] < -1e-12:
            raise ValueError("process noise covariance must be positive semi-definite")
        object.__setattr__(self, "process_noise_cov", q)

    @property
    def input_dim(self) -> int:
        return _INPUT_DIMS[self.kind]

    @property
    def state_dim(self) -> int:
        return 3


def holonomic(dt: float, process_noise_cov) -> MotionModel:
    return MotionModel(kind=HOLONOMIC, dt=dt, process_noise_cov=process_noise_cov)


def unicycle(dt: float, process_noise_cov) -> MotionModel:
    return MotionModel(kind=UNICYCLE, dt=dt, process_noise_cov=process_noise_cov)


def step(model: MotionModel, x, u, v) -> np.ndarray:
    """One deterministic-noise step of the motion model.

    Holonomic: x + dt*(u + v) componentwise.
    Unicycle:  x + dt*[cos(theta)*(u0+v0), sin(theta)*(u0+v0), u1+v1].

    The heading is deliberately not wrapped: wrapping creates an artificial
    discontinuity that breaks finite differencing.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    m = model.input_dim
    if x.shape != (3,):
        raise ValueError(f"state must have shape (3,), got {x.shape}")
    if u.shape != (m,) or v.shape != (m,):
        raise ValueError(f"control and noise must have shape ({m},), got {u.shape} and {v.shape}")
    if model.kind == HOLONOMIC:
        return x + model.dt * (u + v)
    w = u + v
    theta = x[2]
    return x + model.dt * np.array([np.cos(theta) * w[0], np.sin(theta) * w[0], w[1]])


def numeric_jacobian(fn, at, step_scale: float = FD_STEP_SCALE) -> np.ndarray:
    """Central-difference Jacobian of a vector function.

    Column i uses the per-coordinate step h_i = step_scale * max(1, |at_i|).
    """
    at = np.asarray(at, dtype=float)
    cols = []
    for i in range(at.shape[0]):
        h = step_scale * max(1.0, abs(at[i]))
        xp = at.copy()
        xp[i] += h
        xm = at.copy()
        xm[i] -= h
        fp = np.asarray(fn(xp), dtype=float)
        fm = np.asarray(fn(xm), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            bad = xp if not np.all(np.isfinite(fp)) else xm
            raise ValueError(f"non-finite function output at probe point {bad}")
        cols.append((fp - fm) / (2.0 * h))
    return np.stack(cols, axis=1)


def _step_batch(model: MotionModel, x_batch: np.ndarray, w_batch: np.ndarray) -> np.ndarray:
    """Vectorized step over rows of states and summed control+noise rows."""
    if model.kind == HOLONOMIC:
        return x_batch + model.dt * w_batch
    theta = x_batch[:, 2]
    delta = np.stack(
        [np.cos(theta) * w_batch[:, 0], np.sin(theta) * w_batch[:, 0], w_batch[:, 1]],
        axis=1,
    )
    return x_batch + model.dt * delta


def state_jacobian(model: MotionModel, x, u, step_scale: float = FD_STEP_SCALE) -> np.ndarray:
    """d step / d x at (x, u, 0), by central differences (batched probes)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    h = step_scale * np.maximum(1.0, np.abs(x))
    probes = np.vstack([x + np.diag(h), x - np.diag(h)])
    w = np.tile(u, (probes.shape[0], 1))
    out = _step_batch(model, probes, w)
    return (out[:3] - out[3:]).T / (2.0 * h)


def noise_jacobian(model: MotionModel, x, u, step_scale: float = FD_STEP_SCALE) -> np.ndarray:
    """d step / d v at (x, u, 0), by central differences (batched probes)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    m = model.input_dim
    h = np.full(m, step_scale)
    w = np.vstack([u + np.diag(h), u - np.diag(h)])
    probes = np.tile(x, (w.shape[0], 1))
    out = _step_batch(model, probes, w)
    return (out[:m] - out[m:]).T / (2.0 * h)


def state_noise_cov(model: MotionModel, x, u) -> np.ndarray:
    """Process noise mapped into state space: F_v Q F_v^T."""
    fv = noise_jacobian(model, x, u)
    q = fv @ model.process_noise_cov @ fv.T
    return 0.5 * (q + q.T)

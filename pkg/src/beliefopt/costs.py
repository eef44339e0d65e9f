"""Trajectory costs, covariance-bound constraints, and the AL penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import Belief, max_eigenvalue, vech_diag_indices, wrap_angle
from .sensing import FeatureMap


@dataclass(frozen=True)
class CostWeights:
    """Diagonal cost weights and the goal state.

    ``information`` prices tr(S_I * Sigma) in soft-cost (unconstrained) mode
    and is zero when covariance bounds are enforced as constraints instead.
    """

    terminal: np.ndarray
    information: np.ndarray
    control: np.ndarray
    collision: float
    goal: np.ndarray

    def __post_init__(self):
        for name in ("terminal", "information", "control", "goal"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
        for name in ("terminal", "information", "control"):
            if np.any(getattr(self, name) < 0.0):
                raise ValueError(f"{name} weights must be non-negative")
        if self.collision < 0.0:
            raise ValueError("collision weight must be non-negative")


@dataclass(frozen=True)
class ConstraintSpec:
    """Per-timestep linear constraints A b - sigma_max < 0 on belief variances.

    Each selector row picks exactly one covariance diagonal entry of the
    belief vector; bounds are variances (a user-facing 3-sigma bound v maps
    to (v/3)^2).
    """

    selector: np.ndarray
    bounds: np.ndarray

    def __post_init__(self):
        sel = np.asarray(self.selector, dtype=float)
        bounds = np.asarray(self.bounds, dtype=float)
        if sel.ndim != 2 or bounds.shape != (sel.shape[0],):
            raise ValueError("selector must be (J, belief_dim) with J matching bounds")
        belief_dim = sel.shape[1]
        n = int(round((-3.0 + np.sqrt(9.0 + 8.0 * belief_dim)) / 2.0))
        if n + n * (n + 1) // 2 != belief_dim:
            raise ValueError(f"selector width {belief_dim} is not a valid belief dimension")
        diag_positions = set((n + vech_diag_indices(n)).tolist())
        for j, row in enumerate(sel):
            ones = np.flatnonzero(row)
            if len(ones) != 1 or row[ones[0]] != 1.0 or int(ones[0]) not in diag_positions:
                raise ValueError(
                    f"selector row {j} must contain a single 1 at a covariance diagonal entry"
                )
        if np.any(bounds <= 0.0):
            raise ValueError("variance bounds must be positive")
        object.__setattr__(self, "selector", sel)
        object.__setattr__(self, "bounds", bounds)

    @property
    def n_constraints(self) -> int:
        return self.selector.shape[0]

    @classmethod
    def for_state_variances(cls, n: int, axes, three_sigma) -> "ConstraintSpec":
        """Bound the variance of the given state axes by (three_sigma/3)^2."""
        axes = list(axes)
        three_sigma = np.asarray(three_sigma, dtype=float)
        belief_dim = n + n * (n + 1) // 2
        sel = np.zeros((len(axes), belief_dim))
        diag_idx = vech_diag_indices(n)
        for j, axis in enumerate(axes):
            sel[j, n + diag_idx[axis]] = 1.0
        return cls(selector=sel, bounds=(three_sigma / 3.0) ** 2)


@dataclass(frozen=True)
class ALState:
    """Per-timestep, per-constraint multipliers, penalties, and thresholds."""

    lam: np.ndarray
    mu: np.ndarray
    threshold: np.ndarray

    def __post_init__(self):
        for name in ("lam", "mu", "threshold"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if np.any(arr <= 0.0):
                raise ValueError(f"{name} must stay strictly positive")
            object.__setattr__(self, name, arr)
        if not (self.lam.shape == self.mu.shape == self.threshold.shape):
            raise ValueError("lam, mu, threshold must share one shape")

    @classmethod
    def initialize(cls, horizon: int, n_constraints: int, initial_violation=None,
                   lam0: float = 1.0, mu0: float = 10.0) -> "ALState":
        shape = (horizon + 1, n_constraints)
        if initial_violation is None:
            threshold = np.full(shape, 1.0 / 5.0)
        else:
            threshold = np.maximum(1.0, np.asarray(initial_violation, dtype=float)) / 5.0
            if threshold.shape != shape:
                raise ValueError(f"initial violation must have shape {shape}")
        return cls(lam=np.full(shape, lam0), mu=np.full(shape, mu0), threshold=threshold)


def stage_cost(b: Belief, u, weights: CostWeights, fmap: FeatureMap) -> float:
    """Control effort + information cost + soft collision cost.

    The collision term sums exp(-d_i) with d_i the distance from the mean
    position to the obstacle surface divided by the covariance's largest
    eigenvalue; negative surface distances (mean inside an obstacle) make
    the penalty grow past 1 as intended.
    """
    u = np.asarray(u, dtype=float)
    total = float(u @ (weights.control * u))
    if np.any(weights.information > 0.0):
        cov = b.cov()
        total += float(weights.information @ np.diag(cov))
    if weights.collision > 0.0 and fmap.obstacles:
        lam_max = max_eigenvalue(b.cov())
        pos = b.mean[:2]
        for obs in fmap.obstacles:
            surf = float(np.hypot(*(pos - obs.center))) - obs.radius
            if lam_max > 0.0:
                d = surf / lam_max
            else:
                d = np.inf if surf > 0.0 else (-np.inf if surf < 0.0 else 0.0)
            with np.errstate(over="ignore"):
                total += weights.collision * float(np.exp(-d))
    return total


def terminal_cost(b: Belief, weights: CostWeights) -> float:
    """Quadratic goal error (heading wrapped) plus information cost."""
    err = weights.goal - b.mean
    err[2] = wrap_angle(err[2])
    total = float(err @ (weights.terminal * err))
    if np.any(weights.information > 0.0):
        total += float(weights.information @ np.diag(b.cov()))
    return total


def constraint_eval(b: Belief, spec: ConstraintSpec) -> np.ndarray:
    """psi = A b - sigma_max; negative entries are satisfied."""
    return spec.selector @ b.as_vector() - spec.bounds


def penalty_phi(t):
    """Smooth PHR penalty: 0.5 t^2 + t for t >= -1/2, else -log(-2t)/4 - 3/8."""
    t = np.asarray(t, dtype=float)
    quad = 0.5 * t * t + t
    log_branch = -0.25 * np.log(np.where(t < -0.5, -2.0 * t, 1.0)) - 0.375
    out = np.where(t >= -0.5, quad, log_branch)
    if t.ndim == 0:
        return float(out)
    return out


def penalty_phi_prime(t):
    """Derivative of the penalty: t + 1 for t >= -1/2, else -1/(4t); positive everywhere."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= -0.5, t + 1.0, -1.0 / np.where(t < -0.5, 4.0 * t, 1.0))
    if t.ndim == 0:
        return float(out)
    return out


def penalty_phi_second(t):
    """Second derivative: 1 for t >= -1/2, else 1/(4 t^2)."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= -0.5, 1.0, 1.0 / np.where(t < -0.5, 4.0 * t * t, 1.0))
    if t.ndim == 0:
        return float(out)
    return out


def penalty_total(psi, lam, mu) -> float:
    """Sum over constraints of (lam^2/mu) * phi(mu/lam * psi)."""
    psi = np.asarray(psi, dtype=float)
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return float(np.sum(lam * lam / mu * penalty_phi(mu / lam * psi)))


def penalty_gradient(psi, lam, mu, spec: ConstraintSpec) -> np.ndarray:
    """Analytic gradient of penalty_total w.r.t. the belief vector: A^T chain."""
    s = np.asarray(lam, dtype=float) * penalty_phi_prime(np.asarray(mu, dtype=float) / lam * psi)
    return spec.selector.T @ s


def penalty_hessian(psi, lam, mu, spec: ConstraintSpec) -> np.ndarray:
    """Analytic Hessian of penalty_total w.r.t. the belief vector."""
    d = np.asarray(mu, dtype=float) * penalty_phi_second(np.asarray(mu, dtype=float) / lam * psi)
    return (spec.selector.T * d) @ spec.selector


def multiplier_update(al: ALState, psi: np.ndarray) -> ALState:
    """Closed-form multiplier step lam' = lam * phi'((mu/lam) psi), everywhere.

    phi' is strictly positive, so positivity of the multipliers is preserved
    for any constraint values.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.shape != al.lam.shape:
        raise ValueError(f"constraint values must have shape {al.lam.shape}, got {psi.shape}")
    new_lam = al.lam * penalty_phi_prime(al.mu / al.lam * psi)
    return ALState(lam=new_lam, mu=al.mu.copy(), threshold=al.threshold.copy())

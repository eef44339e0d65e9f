"""EKF belief dynamics: deterministic propagation g and noise matrix w.

The belief recursion is b' = g(b, u) + w(b, u) * xi with xi a unit Gaussian.
g propagates the EKF mean and covariance; w collects the stochastic
mean-update directions [K H F, K H, K] whitened by the matrix square roots
of the current covariance, the state-space process noise, and the scaled
measurement noise, so the covariance rows of w are zero and xi has unit
covariance by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import Belief, symmetrize_and_clamp, unvech, vech
from .motion import MotionModel, step, state_jacobian, state_noise_cov
from .sensing import CameraParams, FeatureMap, MeasurementBlocks, P_MIN_DEFAULT, assemble_measurement

INNOVATION_COND_MAX = 1e12


class InnovationSingularError(RuntimeError):
    """Innovation covariance too ill-conditioned to invert."""


@dataclass(frozen=True)
class BeliefModel:
    """World model the belief dynamics are conditioned on.

    Any object with the same ``predict_mean`` / ``motion_jacobians`` /
    ``measurement`` surface (e.g. a synthetic linear-Gaussian system in
    tests) can be propagated by the functions below.
    """

    motion: MotionModel
    feature_map: FeatureMap
    camera: CameraParams
    smooth_visibility: bool = True
    p_min: float = P_MIN_DEFAULT

    @property
    def state_dim(self) -> int:
        return self.motion.state_dim

    @property
    def control_dim(self) -> int:
        return self.motion.input_dim

    @property
    def belief_dim(self) -> int:
        n = self.state_dim
        return n + n * (n + 1) // 2

    def predict_mean(self, x, u) -> np.ndarray:
        return step(self.motion, x, u, np.zeros(self.control_dim))

    def motion_jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        """State Jacobian F and state-space process noise F_v Q F_v^T."""
        return state_jacobian(self.motion, x, u), state_noise_cov(self.motion, x, u)

    def measurement(self, x, active_ids=None) -> MeasurementBlocks:
        return assemble_measurement(
            x,
            self.feature_map,
            self.camera,
            p_min=self.p_min,
            smooth=self.smooth_visibility,
            active_ids=active_ids,
        )


@dataclass(frozen=True)
class EkfStep:
    """Intermediate quantities of one EKF propagation."""

    mean_pred: np.ndarray
    cov_pred: np.ndarray
    cov_new: np.ndarray
    state_jac: np.ndarray
    noise_cov_state: np.ndarray
    measurement: MeasurementBlocks
    gain: np.ndarray | None


def _ekf_update(cov_pred: np.ndarray, meas) -> tuple[np.ndarray, np.ndarray]:
    """Kalman gain and posterior covariance for a nonempty measurement."""
    h = meas.jacobian
    innov_cov = h @ cov_pred @ h.T + meas.noise_cov
    ev = np.abs(np.linalg.eigvalsh(0.5 * (innov_cov + innov_cov.T)))
    cond = np.inf if ev.min() == 0.0 else ev.max() / ev.min()
    if not np.isfinite(cond) or cond > INNOVATION_COND_MAX:
        raise InnovationSingularError(
            f"innovation covariance condition number {cond:.3e} exceeds {INNOVATION_COND_MAX:.0e}"
        )
    gain = np.linalg.solve(innov_cov, h @ cov_pred).T
    n = cov_pred.shape[0]
    cov_new = symmetrize_and_clamp((np.eye(n) - gain @ h) @ cov_pred)
    return gain, cov_new


def ekf_step(model, b: Belief, u, active_ids=None) -> EkfStep:
    """Predict + expected-measurement update of the EKF.

    The measurement is assembled at the predicted mean; an empty measurement
    yields a prediction-only step (no gain).
    """
    u = np.asarray(u, dtype=float)
    cov = b.cov()
    mean_pred = model.predict_mean(b.mean, u)
    f_jac, q_state = model.motion_jacobians(b.mean, u)
    cov_pred = f_jac @ cov @ f_jac.T + q_state
    meas = model.measurement(mean_pred, active_ids)
    if meas.count == 0:
        gain, cov_new = None, symmetrize_and_clamp(cov_pred)
    else:
        gain, cov_new = _ekf_update(cov_pred, meas)
    return EkfStep(
        mean_pred=mean_pred,
        cov_pred=cov_pred,
        cov_new=cov_new,
        state_jac=f_jac,
        noise_cov_state=q_state,
        measurement=meas,
        gain=gain,
    )


def propagate(model, b: Belief, u, active_ids=None) -> Belief:
    """Deterministic belief dynamics g(b, u)."""
    ekf = ekf_step(model, b, u, active_ids)
    return Belief(mean=ekf.mean_pred, cov_vech=vech(ekf.cov_new))


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigendecomposition; PSD-but-singular is fine."""
    s = np.asarray(mat, dtype=float)
    sym = 0.5 * (s + s.T)
    w, v = np.linalg.eigh(sym)
    return (v * np.sqrt(np.maximum(w, 0.0))) @ v.T


def _noise_blocks(cov, f_jac, q_state, meas, gain, belief_dim: int) -> np.ndarray:
    """Assemble w = [[K H F cov^1/2, K H q^1/2, K R^1/2], [0]]."""
    n = cov.shape[0]
    p = 2 * n + 2 * meas.count
    if gain is None:
        return np.zeros((belief_dim, p))
    kh = gain @ meas.jacobian
    # The measurement noise block is diagonal by construction.
    meas_sqrt = np.sqrt(np.diagonal(meas.noise_cov))
    top = np.hstack([
        kh @ f_jac @ psd_sqrt(cov),
        kh @ psd_sqrt(q_state),
        gain * meas_sqrt,
    ])
    return np.vstack([top, np.zeros((belief_dim - n, p))])


def _noise_from_ekf(model, b: Belief, ekf: EkfStep) -> np.ndarray:
    return _noise_blocks(b.cov(), ekf.state_jac, ekf.noise_cov_state,
                         ekf.measurement, ekf.gain, b.dim)


def noise_matrix(model, b: Belief, u, active_ids=None) -> np.ndarray:
    """Whitened stochastic directions w(b, u); covariance rows are zero.

    Columns: n for estimation error, n for process noise, 2 per active
    feature for pixel noise. With an empty measurement the gain vanishes and
    so does every block.
    """
    ekf = ekf_step(model, b, u, active_ids)
    return _noise_from_ekf(model, b, ekf)


def propagate_with_noise(model, b: Belief, u, active_ids=None) -> tuple[Belief, np.ndarray]:
    """g and w from a single EKF evaluation (finite-difference hot path)."""
    ekf = ekf_step(model, b, u, active_ids)
    return Belief(mean=ekf.mean_pred, cov_vech=vech(ekf.cov_new)), _noise_from_ekf(model, b, ekf)


def active_feature_ids(model, b: Belief, u) -> tuple:
    """Active feature set of the measurement assembled at the predicted mean."""
    mean_pred = model.predict_mean(b.mean, np.asarray(u, dtype=float))
    return tuple(model.measurement(mean_pred).ids)


@dataclass(frozen=True)
class BeliefJacobians:
    """Finite-difference Jacobians of g and of each column of w."""

    g_b: np.ndarray  # (belief_dim, belief_dim)
    g_u: np.ndarray  # (belief_dim, m)
    w_b: np.ndarray  # (p, belief_dim, belief_dim)
    w_u: np.ndarray  # (p, belief_dim, m)
    w_bar: np.ndarray  # (belief_dim, p)


def belief_jacobians(model, b: Belief, u, step_scale: float = 1e-5) -> BeliefJacobians:
    """Central-difference Jacobians of propagate and noise_matrix.

    The active feature set is frozen at (b, u) for every probe so the noise
    column count cannot change mid-differencing; a feature entering or
    leaving the active set between probes would otherwise produce spurious
    gradients.

    Probes of the covariance coordinates leave the predicted mean, the motion
    Jacobians, and the measurement assembly untouched, so those columns reuse
    the nominal quantities and only redo the covariance algebra; the mean
    block of every covariance column is exactly zero.
    """
    u = np.asarray(u, dtype=float)
    active = active_feature_ids(model, b, u)
    n = b.n
    z0 = b.as_vector()
    nb = z0.shape[0]
    m = u.shape[0]

    ekf0 = ekf_step(model, b, u, active)
    w_bar = _noise_from_ekf(model, b, ekf0)
    p = w_bar.shape[1]
    meas = ekf0.measurement
    f_jac = ekf0.state_jac
    q_state = ekf0.noise_cov_state

    g_b = np.zeros((nb, nb))
    g_u = np.zeros((nb, m))
    w_b = np.zeros((p, nb, nb))
    w_u = np.zeros((p, nb, m))

    # Mean coordinates: the full chain moves.
    for i in range(n):
        h = step_scale * max(1.0, abs(z0[i]))
        zp = z0.copy()
        zp[i] += h
        zm = z0.copy()
        zm[i] -= h
        bp, wp = propagate_with_noise(model, Belief.from_vector(zp, n), u, active)
        bm, wm = propagate_with_noise(model, Belief.from_vector(zm, n), u, active)
        g_b[:, i] = (bp.as_vector() - bm.as_vector()) / (2.0 * h)
        w_b[:, :, i] = ((wp - wm) / (2.0 * h)).T

    # Covariance coordinates: reuse the nominal prediction and measurement.
    def _cov_probe(vech_probe):
        cov_p = unvech(vech_probe, n)
        cov_pred = f_jac @ cov_p @ f_jac.T + q_state
        if meas.count == 0:
            gain, cov_new = None, symmetrize_and_clamp(cov_pred)
        else:
            gain, cov_new = _ekf_update(cov_pred, meas)
        w = _noise_blocks(cov_p, f_jac, q_state, meas, gain, nb)
        return vech(cov_new), w

    for c in range(nb - n):
        i = n + c
        h = step_scale * max(1.0, abs(z0[i]))
        vp = b.cov_vech.copy()
        vp[c] += h
        vm = b.cov_vech.copy()
        vm[c] -= h
        cov_vech_p, wp = _cov_probe(vp)
        cov_vech_m, wm = _cov_probe(vm)
        g_b[n:, i] = (cov_vech_p - cov_vech_m) / (2.0 * h)
        w_b[:, :, i] = ((wp - wm) / (2.0 * h)).T

    for j in range(m):
        h = step_scale * max(1.0, abs(u[j]))
        up = u.copy()
        up[j] += h
        um = u.copy()
        um[j] -= h
        bp, wp = propagate_with_noise(model, b, up, active)
        bm, wm = propagate_with_noise(model, b, um, active)
        g_u[:, j] = (bp.as_vector() - bm.as_vector()) / (2.0 * h)
        w_u[:, :, j] = ((wp - wm) / (2.0 * h)).T

    return BeliefJacobians(g_b=g_b, g_u=g_u, w_b=w_b, w_u=w_u, w_bar=w_bar)

"""Closed-loop execution of a policy under sampled noise, with Monte Carlo batching.

The true state evolves under sampled process noise; feature detections are
sampled per step as Bernoulli draws of the matching probability evaluated at
the true pose, and detected features are measured under the unscaled pixel
noise. The onboard estimator is the same EKF the planner propagates, except
that it updates with the actually-detected feature set (it knows which
features matched, so no information scaling applies). The planner's scaled
prediction is deliberately conservative by comparison.

Randomness comes from numpy's seeded PCG64 generators, so every trace is
bit-reproducible within one build from its seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import Belief, symmetrize_and_clamp, vech
from .costs import ConstraintSpec
from .dynamics import ekf_step
from .motion import step
from .sensing import DEPTH_MIN, _project_raw, visibility_prob, world_to_camera
from .solver import Policy, SolverProblem


@dataclass(frozen=True)
class ExecutionTrace:
    """One closed-loop run: truth, estimate, and consistency envelopes."""

    true_states: np.ndarray
    estimated_beliefs: tuple
    applied_controls: np.ndarray
    estimation_errors: np.ndarray
    planned_3sigma: np.ndarray
    realized_3sigma: np.ndarray
    seed: int
    diverged: bool

    @property
    def steps(self) -> int:
        return self.applied_controls.shape[0]


@dataclass(frozen=True)
class MonteCarloSummary:
    """Aggregate violation and consistency statistics over seeded runs."""

    runs: int
    violation_counts: np.ndarray
    within_3sigma_fraction: np.ndarray
    mean_final_goal_error: float
    diverged_runs: int
    base_seed: int


def _planned_3sigma(policy: Policy) -> np.ndarray:
    rows = []
    for b in policy.nominal_beliefs:
        rows.append(3.0 * np.sqrt(np.maximum(np.diag(b.cov()), 0.0)))
    return np.vstack(rows)


def execute_once(problem: SolverProblem, policy: Policy, seed: int,
                 force_detection: bool = False) -> ExecutionTrace:
    """Simulate one closed-loop run under the policy.

    With ``force_detection`` the estimator runs the planner's own
    expected-measurement update (planner active set, scaled noise), which
    makes the covariance sequence identical to the plan; it exists for
    consistency checks, not as a physical model.
    """
    if policy.horizon != problem.horizon:
        raise ValueError(
            f"policy horizon {policy.horizon} does not match problem horizon {problem.horizon}"
        )
    model = problem.belief_model
    motion = model.motion
    cam = model.camera
    n = model.state_dim
    horizon = problem.horizon
    rng = np.random.default_rng(seed)

    belief = problem.initial_belief
    x_true = rng.multivariate_normal(belief.mean, belief.cov())

    true_states = [x_true.copy()]
    beliefs = [belief]
    controls = []
    diverged = False

    for k in range(horizon):
        u = policy.control(k, belief)
        v = rng.multivariate_normal(np.zeros(motion.input_dim), motion.process_noise_cov)
        x_true = step(motion, x_true, u, v)

        if force_detection:
            ekf = ekf_step(model, belief, u)
            detected = list(ekf.measurement.ids)
            noise_cov = ekf.measurement.noise_cov
        else:
            detected = []
            for feat in model.feature_map.sorted_features():
                pc = world_to_camera(x_true, feat.position)
                if pc[1] <= DEPTH_MIN:
                    continue
                p = visibility_prob(x_true, feat, cam)
                if p > 0.0 and rng.random() < p:
                    detected.append(feat.id)
            ekf = ekf_step(model, belief, u, active_ids=tuple(detected))
            noise_cov = np.diag(np.full(2 * len(detected), cam.pixel_noise_std**2))

        feats_by_id = {f.id: f for f in model.feature_map.features}
        z_meas = []
        for fid in detected:
            pc_true = world_to_camera(x_true, feats_by_id[fid].position)
            pix = _project_raw(pc_true, cam)
            z_meas.append(pix + rng.normal(0.0, cam.pixel_noise_std, size=2))

        if ekf.gain is None or not detected:
            mean_new = ekf.mean_pred
            cov_new = ekf.cov_new if force_detection else symmetrize_and_clamp(ekf.cov_pred)
        else:
            h = ekf.measurement.jacobian
            z_pred = ekf.measurement.pixels
            if force_detection:
                gain = ekf.gain
                cov_new = ekf.cov_new
            else:
                innov_cov = h @ ekf.cov_pred @ h.T + noise_cov
                gain = np.linalg.solve(innov_cov, h @ ekf.cov_pred).T
                cov_new = symmetrize_and_clamp((np.eye(n) - gain @ h) @ ekf.cov_pred)
            innovation = np.concatenate(z_meas) - z_pred
            mean_new = ekf.mean_pred + gain @ innovation

        if not (np.all(np.isfinite(mean_new)) and np.all(np.isfinite(cov_new))
                and np.all(np.isfinite(x_true))):
            diverged = True
            break

        belief = Belief(mean=mean_new, cov_vech=vech(cov_new))
        true_states.append(x_true.copy())
        beliefs.append(belief)
        controls.append(u)

    true_arr = np.vstack(true_states)
    errors = true_arr - np.vstack([b.mean for b in beliefs])
    realized = np.vstack([3.0 * np.sqrt(np.maximum(np.diag(b.cov()), 0.0)) for b in beliefs])
    planned = _planned_3sigma(policy)[: true_arr.shape[0]]
    return ExecutionTrace(
        true_states=true_arr,
        estimated_beliefs=tuple(beliefs),
        applied_controls=np.vstack(controls) if controls else np.zeros((0, motion.input_dim)),
        estimation_errors=errors,
        planned_3sigma=planned,
        realized_3sigma=realized,
        seed=seed,
        diverged=diverged,
    )


def monte_carlo(problem: SolverProblem, policy: Policy, n_runs: int, base_seed: int,
                bounds_spec: ConstraintSpec | None = None) -> MonteCarloSummary:
    """Aggregate execute_once over seeds base_seed .. base_seed + n_runs - 1.

    A violation is counted whenever a realized estimator covariance diagonal
    exceeds its variance bound, matching the planner's constraint
    definition. Diverged runs are excluded from the statistics and counted
    separately.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    spec = bounds_spec if bounds_spec is not None else problem.constraints
    n = problem.belief_model.state_dim
    n_constraints = spec.n_constraints if spec is not None else 0
    violation_counts = np.zeros(n_constraints, dtype=int)
    inside = np.zeros(n)
    total = 0
    final_errors = []
    diverged_runs = 0
    goal_xy = problem.weights.goal[:2]

    for seed in range(base_seed, base_seed + n_runs):
        trace = execute_once(problem, policy, seed)
        if trace.diverged:
            diverged_runs += 1
            continue
        if spec is not None:
            z = np.vstack([b.as_vector() for b in trace.estimated_beliefs])
            psi = z @ spec.selector.T - spec.bounds
            violation_counts += np.sum(psi > 0.0, axis=0)
        inside += np.sum(np.abs(trace.estimation_errors) <= trace.planned_3sigma, axis=0)
        total += trace.estimation_errors.shape[0]
        final_errors.append(float(np.hypot(*(trace.true_states[-1][:2] - goal_xy))))

    fraction = inside / total if total else np.zeros(n)
    mean_goal_err = float(np.mean(final_errors)) if final_errors else float("nan")
    return MonteCarloSummary(
        runs=n_runs,
        violation_counts=violation_counts,
        within_3sigma_fraction=fraction,
        mean_final_goal_error=mean_goal_err,
        diverged_runs=diverged_runs,
        base_seed=base_seed,
    )

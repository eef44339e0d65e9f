"""Augmented-Lagrangian iLQG over belief trajectories.

Inner loop: iterative LQG with a first-order expansion of the belief
dynamics including the stochastic noise-column terms, Levenberg-Marquardt
regularization on Q_uu, and a backtracking line search on the feedforward
term. Outer loop: multiplier / penalty / threshold schedule driving the
covariance-bound constraints toward feasibility, reporting the maximum
constraint violation explicitly when the bounds cannot be met.

The backward/forward passes operate on flat state vectors through a small
dynamics/cost interface, so the same recursion runs on synthetic
linear-quadratic problems (the test oracles) and on the belief-space
problem via the adapters below.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .belief import Belief, wrap_angle
from .costs import (
    ALState,
    ConstraintSpec,
    CostWeights,
    penalty_gradient,
    penalty_hessian,
    penalty_phi_prime,
    penalty_total,
    stage_cost,
    terminal_cost,
)
from .dynamics import BeliefModel, InnovationSingularError, belief_jacobians, propagate
from .motion import HOLONOMIC, MotionModel
from .sensing import FeatureMap


class SolverNumericsError(RuntimeError):
    """Non-finite quantities encountered while expanding the problem."""


# ---------------------------------------------------------------------------
# Problem containers


@dataclass(frozen=True)
class SolverProblem:
    """Complete uncertainty-constrained optimal control instance."""

    belief_model: BeliefModel
    weights: CostWeights
    constraints: ConstraintSpec | None
    horizon: int
    initial_belief: Belief
    initial_controls: np.ndarray

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        u0 = np.asarray(self.initial_controls, dtype=float)
        m = self.belief_model.control_dim
        if u0.shape != (self.horizon, m):
            raise ValueError(f"initial controls must have shape ({self.horizon}, {m}), got {u0.shape}")
        object.__setattr__(self, "initial_controls", u0)


@dataclass(frozen=True)
class Policy:
    """Affine belief-feedback policy around a nominal trajectory.

    u_k = nominal_controls[k] + feedforward[k]
          + feedback[k] @ (b_k - nominal_beliefs[k])
    """

    nominal_beliefs: tuple
    nominal_controls: np.ndarray
    feedforward: np.ndarray
    feedback: np.ndarray

    def __post_init__(self):
        k = self.nominal_controls.shape[0]
        if not (len(self.nominal_beliefs) == k + 1
                and self.feedforward.shape[0] == k
                and self.feedback.shape[0] == k):
            raise ValueError("policy arrays must agree on the horizon")

    @property
    def horizon(self) -> int:
        return self.nominal_controls.shape[0]

    def control(self, k: int, b: Belief) -> np.ndarray:
        dz = b.as_vector() - self.nominal_beliefs[k].as_vector()
        return self.nominal_controls[k] + self.feedforward[k] + self.feedback[k] @ dz


@dataclass(frozen=True)
class SolveReport:
    """Outcome of a constrained solve, including the go-or-no-go numbers."""

    converged: bool
    outer_iterations: int
    inner_iterations: int
    final_cost: float
    final_augmented_cost: float
    max_violation_per_constraint: np.ndarray
    feasible: bool
    history: tuple = field(default_factory=tuple)


# ---------------------------------------------------------------------------
# Belief-space adapters for the generic iLQG core


class BeliefDynamicsAdapter:
    """Flat-vector view of the EKF belief dynamics."""

    def __init__(self, model: BeliefModel):
        self.model = model
        self._n = model.state_dim

    @property
    def state_dim(self) -> int:
        return self.model.belief_dim

    @property
    def control_dim(self) -> int:
        return self.model.control_dim

    def step(self, z, u) -> np.ndarray:
        return propagate(self.model, Belief.from_vector(z, self._n), u).as_vector()

    def jacobians(self, z, u):
        bj = belief_jacobians(self.model, Belief.from_vector(z, self._n), u)
        return bj.g_b, bj.g_u, bj.w_b, bj.w_u, bj.w_bar


class BeliefCost:
    """Quadratizer for the (optionally AL-augmented) belief trajectory cost.

    Control derivatives and the linear information term are analytic; the
    penalty derivatives use the A^T chain; only the collision term falls
    back to finite differences.
    """

    def __init__(self, weights: CostWeights, fmap: FeatureMap,
                 spec: ConstraintSpec | None = None, al: ALState | None = None,
                 n: int = 3, fd_step: float = 1e-5):
        if (spec is None) != (al is None):
            raise ValueError("constraint spec and AL state must be supplied together")
        self.weights = weights
        self.fmap = fmap
        self.spec = spec
        self.al = al
        self._n = n
        self._fd_step = fd_step
        nb = n + n * (n + 1) // 2
        self._nb = nb
        from .belief import vech_diag_indices

        g_info = np.zeros(nb)
        g_info[n + vech_diag_indices(n)] = np.asarray(weights.information, dtype=float)
        self._g_info = g_info
        self._cuu = 2.0 * np.diag(np.asarray(weights.control, dtype=float))
        self._has_collision = weights.collision > 0.0 and len(fmap.obstacles) > 0

    # -- plain evaluation -------------------------------------------------

    def _belief(self, z) -> Belief:
        return Belief.from_vector(z, self._n)

    def _psi(self, z) -> np.ndarray:
        return self.spec.selector @ z - self.spec.bounds

    def stage(self, k: int, z, u) -> float:
        c = stage_cost(self._belief(z), u, self.weights, self.fmap)
        if self.spec is not None:
            c += penalty_total(self._psi(z), self.al.lam[k], self.al.mu[k])
        return c

    def terminal(self, z) -> float:
        c = terminal_cost(self._belief(z), self.weights)
        if self.spec is not None:
            c += penalty_total(self._psi(z), self.al.lam[-1], self.al.mu[-1])
        return c

    # -- quadratization ---------------------------------------------------

    def _collision_value(self, z) -> float:
        zero_info = CostWeights(
            terminal=self.weights.terminal,
            information=np.zeros(self._n),
            control=np.zeros_like(self.weights.control),
            collision=self.weights.collision,
            goal=self.weights.goal,
        )
        return stage_cost(self._belief(z), np.zeros(self.weights.control.shape[0]), zero_info, self.fmap)

    def _collision_grad_hess(self, z):
        f = self._collision_value
        nb = self._nb
        grad = np.zeros(nb)
        hess = np.zeros((nb, nb))
        hs = self._fd_step * np.maximum(1.0, np.abs(z))
        for i in range(nb):
            zp = z.copy()
            zp[i] += hs[i]
            zm = z.copy()
            zm[i] -= hs[i]
            grad[i] = (f(zp) - f(zm)) / (2.0 * hs[i])
        f0 = f(z)
        for i in range(nb):
            for j in range(i, nb):
                if i == j:
                    zp = z.copy()
                    zp[i] += 2.0 * hs[i]
                    zm = z.copy()
                    zm[i] -= 2.0 * hs[i]
                    hess[i, i] = (f(zp) - 2.0 * f0 + f(zm)) / (4.0 * hs[i] ** 2)
                else:
                    zpp = z.copy(); zpp[i] += hs[i]; zpp[j] += hs[j]
                    zpm = z.copy(); zpm[i] += hs[i]; zpm[j] -= hs[j]
                    zmp = z.copy(); zmp[i] -= hs[i]; zmp[j] += hs[j]
                    zmm = z.copy(); zmm[i] -= hs[i]; zmm[j] -= hs[j]
                    hess[i, j] = hess[j, i] = (f(zpp) - f(zpm) - f(zmp) + f(zmm)) / (4.0 * hs[i] * hs[j])
        return grad, hess

    def stage_quadratic(self, k: int, z, u):
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        m = u.shape[0]
        c0 = self.stage(k, z, u)
        cz = self._g_info.copy()
        czz = np.zeros((self._nb, self._nb))
        if self._has_collision:
            g, h = self._collision_grad_hess(z)
            cz += g
            czz += h
        if self.spec is not None:
            psi = self._psi(z)
            cz += penalty_gradient(psi, self.al.lam[k], self.al.mu[k], self.spec)
            czz += penalty_hessian(psi, self.al.lam[k], self.al.mu[k], self.spec)
        cu = 2.0 * self.weights.control * u
        cuz = np.zeros((m, self._nb))
        return c0, cz, cu, czz, self._cuu.copy(), cuz

    def terminal_quadratic(self, z):
        z = np.asarray(z, dtype=float)
        c0 = self.terminal(z)
        n = self._n
        cz = self._g_info.copy()
        czz = np.zeros((self._nb, self._nb))
        err = self.weights.goal - z[:n]
        err[2] = wrap_angle(err[2])
        cz[:n] += -2.0 * self.weights.terminal * err
        czz[:n, :n] += 2.0 * np.diag(self.weights.terminal)
        if self.spec is not None:
            psi = self._psi(z)
            cz += penalty_gradient(psi, self.al.lam[-1], self.al.mu[-1], self.spec)
            czz += penalty_hessian(psi, self.al.lam[-1], self.al.mu[-1], self.spec)
        return c0, cz, czz


# ---------------------------------------------------------------------------
# iLQG core


@dataclass(frozen=True)
class BackwardPassResult:
    feedforward: np.ndarray
    feedback: np.ndarray
    expected_reduction: float
    ok: bool


@dataclass(frozen=True)
class ForwardPassResult:
    z_traj: np.ndarray
    u_traj: np.ndarray
    cost: float


def backward_pass(dynamics, cost, z_traj, u_traj, reg: float) -> BackwardPassResult:
    """One value recursion along the nominal trajectory.

    Computes the six Q quantities including the noise-column sums, the
    affine policy terms from the regularized Q_uu, and the value update.
    Returns ok=False when the regularized Q_uu loses positive definiteness.
    """
    horizon = u_traj.shape[0]
    nz = z_traj.shape[1]
    m = u_traj.shape[1]
    ff = np.zeros((horizon, m))
    fb = np.zeros((horizon, m, nz))

    c0, vz, vzz = cost.terminal_quadratic(z_traj[horizon])
    vbar = c0
    vzz = 0.5 * (vzz + vzz.T)
    dv1 = 0.0
    dv2 = 0.0

    for k in reversed(range(horizon)):
        z = z_traj[k]
        u = u_traj[k]
        try:
            a, bmat, wz, wu, wbar = dynamics.jacobians(z, u)
        except InnovationSingularError as exc:
            raise SolverNumericsError(f"dynamics expansion failed at timestep {k}: {exc}") from exc
        s0, cz, cu, czz, cuu, cuz = cost.stage_quadratic(k, z, u)

        qz = cz + a.T @ vz
        qu = cu + bmat.T @ vz
        qzz = czz + a.T @ vzz @ a
        quu = cuu + bmat.T @ vzz @ bmat
        quz = cuz + bmat.T @ vzz @ a
        qconst = s0 + vbar
        if wbar.shape[1]:
            vw = vzz @ wbar
            qz = qz + np.einsum("pji,jp->i", wz, vw)
            qu = qu + np.einsum("pji,jp->i", wu, vw)
            qzz = qzz + np.einsum("pji,jk,pkl->il", wz, vzz, wz)
            quu = quu + np.einsum("pji,jk,pkl->il", wu, vzz, wu)
            quz = quz + np.einsum("pji,jk,pkl->il", wu, vzz, wz)
            qconst = qconst + 0.5 * float(np.sum(wbar * vw))

        pieces = (qz, qu, qzz, quu, quz)
        if not (np.isfinite(qconst) and all(np.all(np.isfinite(p)) for p in pieces)):
            raise SolverNumericsError(f"non-finite Q terms at timestep {k}")

        quu_reg = 0.5 * (quu + quu.T) + reg * np.eye(m)
        try:
            np.linalg.cholesky(quu_reg)
        except np.linalg.LinAlgError:
            return BackwardPassResult(ff, fb, 0.0, ok=False)

        d = -np.linalg.solve(quu_reg, qu)
        kmat = -np.linalg.solve(quu_reg, quz)
        ff[k] = d
        fb[k] = kmat

        vbar = qconst + 0.5 * float(qu @ d)
        vz = qz + quz.T @ d
        vzz = qzz + quz.T @ kmat
        vzz = 0.5 * (vzz + vzz.T)
        dv1 += float(qu @ d)
        dv2 += float(d @ quu_reg @ d)

    return BackwardPassResult(ff, fb, -(dv1 + 0.5 * dv2), ok=True)


def forward_pass(dynamics, cost, z_traj, u_traj, feedforward, feedback, eps: float):
    """Roll the updated affine policy from the initial state.

    Returns None when the rollout goes non-finite (rejected line-search
    candidate).
    """
    horizon = u_traj.shape[0]
    z_new = np.zeros_like(z_traj)
    u_new = np.zeros_like(u_traj)
    z = z_traj[0].copy()
    z_new[0] = z
    total = 0.0
    for k in range(horizon):
        u = u_traj[k] + eps * feedforward[k] + feedback[k] @ (z - z_traj[k])
        total += cost.stage(k, z, u)
        if not np.isfinite(total):
            return None
        try:
            z = dynamics.step(z, u)
        except InnovationSingularError:
            return None
        if not np.all(np.isfinite(z)):
            return None
        u_new[k] = u
        z_new[k + 1] = z
    total += cost.terminal(z)
    if not np.isfinite(total):
        return None
    return ForwardPassResult(z_new, u_new, float(total))


def rollout(dynamics, cost, z0, u_traj):
    """Open-loop rollout of a control sequence with its total cost."""
    horizon = u_traj.shape[0]
    z_traj = np.zeros((horizon + 1, z0.shape[0]))
    z_traj[0] = z0
    total = 0.0
    for k in range(horizon):
        total += cost.stage(k, z_traj[k], u_traj[k])
        z_traj[k + 1] = dynamics.step(z_traj[k], u_traj[k])
        if not np.all(np.isfinite(z_traj[k + 1])):
            raise SolverNumericsError(f"initial rollout diverged at timestep {k}")
    total += cost.terminal(z_traj[horizon])
    if not np.isfinite(total):
        raise SolverNumericsError("initial rollout cost is not finite")
    return z_traj, float(total)


@dataclass(frozen=True)
class InnerResult:
    z_traj: np.ndarray
    u_traj: np.ndarray
    feedforward: np.ndarray
    feedback: np.ndarray
    cost: float
    converged: bool
    iterations: int


def inner_solve(dynamics, cost, z0, u_init, *,
                max_iterations: int = 100,
                rel_tol: float = 1e-4,
                reg_init: float = 1e-6,
                reg_min: float = 1e-8,
                reg_max: float = 1e8,
                n_backtrack: int = 11) -> InnerResult:
    """Iterate backward/forward passes until the cost stops improving.

    Backtracking steps eps in {1, 1/2, ..., 2^-10}; the regularization grows
    tenfold on a failed backward pass or an exhausted line search and halves
    on success. A line search that cannot find anything more than rel_tol
    better than the incumbent counts as convergence.
    """
    u_traj = np.array(u_init, dtype=float)
    z_traj, cost_now = rollout(dynamics, cost, np.asarray(z0, dtype=float), u_traj)
    horizon, m = u_traj.shape
    nz = z_traj.shape[1]
    ff = np.zeros((horizon, m))
    fb = np.zeros((horizon, m, nz))
    reg = reg_init
    converged = False
    iterations = 0
    eps_schedule = 0.5 ** np.arange(n_backtrack)

    while iterations < max_iterations:
        iterations += 1
        try:
            bp = backward_pass(dynamics, cost, z_traj, u_traj, reg)
            ok = bp.ok
        except SolverNumericsError:
            ok = False
        if not ok:
            reg *= 10.0
            if reg > reg_max:
                break
            continue

        accepted = None
        best = None
        for eps in eps_schedule:
            cand = forward_pass(dynamics, cost, z_traj, u_traj, bp.feedforward, bp.feedback, eps)
            if cand is None:
                continue
            if best is None or cand.cost < best.cost:
                best = cand
            if cand.cost < cost_now:
                accepted = cand
                break

        if accepted is None:
            stalled = best is not None and (cost_now - best.cost) / max(1.0, abs(cost_now)) > -rel_tol
            if stalled:
                converged = True
                break
            reg *= 10.0
            if reg > reg_max:
                break
            continue

        improvement = (cost_now - accepted.cost) / max(1.0, abs(cost_now))
        z_traj = accepted.z_traj
        u_traj = accepted.u_traj
        cost_now = accepted.cost
        ff = bp.feedforward
        fb = bp.feedback
        reg = max(reg / 2.0, reg_min)
        if improvement < rel_tol:
            converged = True
            break

    # Export gains consistent with the final nominal trajectory.
    try:
        final_bp = backward_pass(dynamics, cost, z_traj, u_traj, max(reg, reg_min))
        if final_bp.ok:
            ff = final_bp.feedforward
            fb = final_bp.feedback
    except SolverNumericsError:
        pass

    return InnerResult(z_traj=z_traj, u_traj=u_traj, feedforward=ff, feedback=fb,
                       cost=cost_now, converged=converged, iterations=iterations)


# ---------------------------------------------------------------------------
# Outer AL loop


def trajectory_cost(cost, z_traj, u_traj) -> float:
    """Total cost of a trajectory under the given cost object."""
    total = 0.0
    for k in range(u_traj.shape[0]):
        total += cost.stage(k, z_traj[k], u_traj[k])
    return float(total + cost.terminal(z_traj[-1]))


def _constraint_trajectory(spec: ConstraintSpec, z_traj) -> np.ndarray:
    return z_traj @ spec.selector.T - spec.bounds


# Multipliers for constraints that stay deeply satisfied decay toward zero;
# a small floor keeps the strict-positivity invariant through roundoff.
_LAMBDA_FLOOR = 1e-12


def outer_solve(problem: SolverProblem, *,
                lam0: float = 1.0,
                mu0: float = 10.0,
                mu_growth: float = 5.0,
                threshold_shrink: float = 5.0,
                mu_cap: float = 1e8,
                max_outer: int = 30,
                feasibility_tol: float = 1e-6,
                inner_options: dict | None = None) -> tuple[Policy, SolveReport]:
    """Full constrained solve: AL schedule around the iLQG inner loop.

    Feasibility requires every planned constraint value to stay below
    feasibility_tol times its bound; infeasibility (penalty cap or
    iteration cap reached) is a report, not an error.
    """
    dynamics = BeliefDynamicsAdapter(problem.belief_model)
    z0 = problem.initial_belief.as_vector()
    inner_options = dict(inner_options or {})
    n = problem.belief_model.state_dim
    spec = problem.constraints

    if spec is None or spec.n_constraints == 0:
        cost = BeliefCost(problem.weights, problem.belief_model.feature_map, n=n)
        res = inner_solve(dynamics, cost, z0, problem.initial_controls, **inner_options)
        policy = _policy_from(res, n)
        report = SolveReport(
            converged=res.converged,
            outer_iterations=1,
            inner_iterations=res.iterations,
            final_cost=res.cost,
            final_augmented_cost=res.cost,
            max_violation_per_constraint=np.zeros(0),
            feasible=True,
            history=({"outer": 1, "inner_iterations": res.iterations,
                      "cost": res.cost, "augmented_cost": res.cost,
                      "max_violation": 0.0},),
        )
        return policy, report

    plain_cost = BeliefCost(problem.weights, problem.belief_model.feature_map, n=n)
    z_init, _ = rollout(dynamics, plain_cost, z0, problem.initial_controls)
    psi_init = _constraint_trajectory(spec, z_init)
    al = ALState.initialize(problem.horizon, spec.n_constraints,
                            initial_violation=psi_init, lam0=lam0, mu0=mu0)

    u_cur = problem.initial_controls
    history = []
    total_inner = 0
    res = None
    feasible = False
    psi = psi_init

    for outer in range(1, max_outer + 1):
        cost = BeliefCost(problem.weights, problem.belief_model.feature_map,
                          spec=spec, al=al, n=n)
        res = inner_solve(dynamics, cost, z0, u_cur, **inner_options)
        total_inner += res.iterations
        u_cur = res.u_traj
        psi = _constraint_trajectory(spec, res.z_traj)
        unaug = trajectory_cost(plain_cost, res.z_traj, res.u_traj)
        max_violation = float(np.max(np.maximum(psi, 0.0), initial=0.0))
        history.append({
            "outer": outer,
            "inner_iterations": res.iterations,
            "cost": unaug,
            "augmented_cost": res.cost,
            "max_violation": max_violation,
        })
        feasible = bool(np.all(psi <= feasibility_tol * spec.bounds))
        if feasible:
            break
        progressed = psi < al.threshold
        new_lam = np.where(progressed,
                           al.lam * penalty_phi_prime(al.mu / al.lam * psi),
                           al.lam)
        new_lam = np.maximum(new_lam, _LAMBDA_FLOOR)
        new_threshold = np.where(progressed, al.threshold / threshold_shrink, al.threshold)
        new_mu = np.where(progressed, al.mu, np.minimum(al.mu * mu_growth, mu_cap))
        al = ALState(lam=new_lam, mu=new_mu, threshold=new_threshold)
        if float(np.max(new_mu)) >= mu_cap:
            break

    final_unaug = trajectory_cost(plain_cost, res.z_traj, res.u_traj)
    violations = np.max(np.maximum(psi, 0.0), axis=0)
    policy = _policy_from(res, n)
    report = SolveReport(
        converged=res.converged,
        outer_iterations=len(history),
        inner_iterations=total_inner,
        final_cost=final_unaug,
        final_augmented_cost=res.cost,
        max_violation_per_constraint=violations,
        feasible=feasible,
        history=tuple(history),
    )
    return policy, report


def _policy_from(res: InnerResult, n: int) -> Policy:
    beliefs = tuple(Belief.from_vector(z, n) for z in res.z_traj)
    return Policy(
        nominal_beliefs=beliefs,
        nominal_controls=res.u_traj.copy(),
        feedforward=res.feedforward.copy(),
        feedback=res.feedback.copy(),
    )


# ---------------------------------------------------------------------------
# Initial guesses


def straight_line_controls(motion: MotionModel, start_mean, goal, horizon: int) -> np.ndarray:
    """Constant-rate initial control guess from the start mean to the goal.

    The holonomic model moves every state axis linearly. The unicycle first
    turns toward the goal, then drives; the endpoint is only approximate,
    which is all an initial guess needs.
    """
    start = np.asarray(start_mean, dtype=float)
    goal = np.asarray(goal, dtype=float)
    if motion.kind == HOLONOMIC:
        diff = goal - start
        diff[2] = wrap_angle(diff[2])
        return np.tile(diff / (horizon * motion.dt), (horizon, 1))
    controls = np.zeros((horizon, 2))
    delta = goal[:2] - start[:2]
    dist = float(np.hypot(delta[0], delta[1]))
    k_turn = max(1, horizon // 5)
    if dist > 1e-12:
        bearing = float(np.arctan2(delta[1], delta[0]))
        turn = wrap_angle(bearing - start[2])
        controls[:k_turn, 1] = turn / (k_turn * motion.dt)
        controls[k_turn:, 0] = dist / ((horizon - k_turn) * motion.dt)
    else:
        turn = wrap_angle(goal[2] - start[2])
        controls[:k_turn, 1] = turn / (k_turn * motion.dt)
    return controls

"""Declarative map/scenario files, result documents, and plot-ready tables.

All documents are YAML with floats written at 17 significant digits so that
every numeric value round-trips exactly; flat per-timestep tables are CSV
with the same precision.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .belief import Belief, unvech, vech
from .costs import ConstraintSpec, CostWeights
from .dynamics import BeliefModel
from .motion import HOLONOMIC, UNICYCLE, MotionModel
from .sensing import Bounds, CameraParams, Feature, FeatureMap, Obstacle
from .solver import Policy, SolveReport, SolverProblem, straight_line_controls

SOLVER_MODES = ("constrained", "unconstrained")
VISIBILITY_MODES = ("smooth", "hard")

# The paper-style constraint regimes: 3-sigma caps on [x, y, theta].
SWEEP_REGIMES = {
    "loose": (0.36, 0.36, 0.25),
    "medium": (0.25, 0.25, 0.2),
    "tight": (0.15, 0.15, 0.15),
}


class SchemaError(ValueError):
    """A document failed validation; the message names the offending field."""


# ---------------------------------------------------------------------------
# YAML with full-precision floats


def _format_float(value: float) -> str:
    if np.isnan(value):
        return ".nan"
    if np.isinf(value):
        return ".inf" if value > 0 else "-.inf"
    text = f"{value:.17g}"
    if not any(c in text for c in ".eE"):
        text += ".0"
    return text


class _Dumper(yaml.SafeDumper):
    pass


_Dumper.add_representer(
    float,
    lambda dumper, value: dumper.represent_scalar("tag:yaml.org,2002:float", _format_float(value)),
)


def _to_native(obj):
    if isinstance(obj, np.ndarray):
        return _to_native(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: _to_native(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_native(v) for v in obj]
    return obj


def dump_document(doc: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.dump(_to_native(doc), fh, Dumper=_Dumper, sort_keys=False, default_flow_style=None)


def load_document(path) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: document root must be a mapping")
    return doc


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_float(v) if isinstance(v, float) else v for v in row])


def bundled_path(name: str) -> Path:
    """Path of a bundled map/scenario file shipped with the package."""
    return Path(resources.files("beliefopt.data") / name)


# ---------------------------------------------------------------------------
# Validation helpers


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise SchemaError(f"{where}.{key}: missing required field")
    value = doc[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where}.{key}: expected a number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{where}.{key}: expected an integer, got {type(value).__name__}")
        return value
    if not isinstance(value, kind):
        raise SchemaError(f"{where}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _number_list(doc: dict, key: str, length: int | None, where: str) -> np.ndarray:
    raw = _require(doc, key, list, where)
    if length is not None and len(raw) != length:
        raise SchemaError(f"{where}.{key}: expected {length} entries, got {len(raw)}")
    out = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{where}.{key}[{i}]: expected a number")
        out.append(float(v))
    return np.array(out)


# ---------------------------------------------------------------------------
# Maps


def load_map(path) -> FeatureMap:
    """Parse a map document: features with normals (degrees), circular obstacles, bounds."""
    doc = load_document(path)
    where = str(path)
    features = []
    raw_features = _require(doc, "features", list, where)
    for i, item in enumerate(raw_features):
        fw = f"{where}.features[{i}]"
        if not isinstance(item, dict):
            raise SchemaError(f"{fw}: expected a mapping")
        fid = _require(item, "id", int, fw)
        fx = _require(item, "x", float, fw)
        fy = _require(item, "y", float, fw)
        normal_deg = _require(item, "normal_deg", float, fw)
        normal = np.deg2rad(normal_deg)
        normal = float(np.mod(normal + np.pi, 2.0 * np.pi) - np.pi)
        if normal == -np.pi:
            normal = np.pi
        features.append(Feature(position=np.array([fx, fy]), normal_angle=normal, id=fid))
    ids = [f.id for f in features]
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{where}.features: duplicate feature ids")
    obstacles = []
    for i, item in enumerate(doc.get("obstacles") or []):
        ow = f"{where}.obstacles[{i}]"
        if not isinstance(item, dict):
            raise SchemaError(f"{ow}: expected a mapping")
        cx = _require(item, "cx", float, ow)
        cy = _require(item, "cy", float, ow)
        r = _require(item, "r", float, ow)
        if r <= 0:
            raise SchemaError(f"{ow}.r: obstacle radius must be positive")
        obstacles.append(Obstacle(center=np.array([cx, cy]), radius=r))
    bounds = None
    if doc.get("bounds") is not None:
        bw = f"{where}.bounds"
        braw = _require(doc, "bounds", dict, where)
        try:
            bounds = Bounds(
                xmin=_require(braw, "xmin", float, bw),
                xmax=_require(braw, "xmax", float, bw),
                ymin=_require(braw, "ymin", float, bw),
                ymax=_require(braw, "ymax", float, bw),
            )
        except ValueError as exc:
            raise SchemaError(f"{bw}: {exc}") from exc
    return FeatureMap(features=tuple(features), obstacles=tuple(obstacles), bounds=bounds)


def save_map(fmap: FeatureMap, path) -> None:
    doc = {
        "features": [
            {"id": f.id, "x": float(f.position[0]), "y": float(f.position[1]),
             "normal_deg": float(np.rad2deg(f.normal_angle))}
            for f in fmap.sorted_features()
        ],
        "obstacles": [
            {"cx": float(o.center[0]), "cy": float(o.center[1]), "r": float(o.radius)}
            for o in fmap.obstacles
        ],
    }
    if fmap.bounds is not None:
        doc["bounds"] = {
            "xmin": fmap.bounds.xmin, "xmax": fmap.bounds.xmax,
            "ymin": fmap.bounds.ymin, "ymax": fmap.bounds.ymax,
        }
    dump_document(doc, path)


# ---------------------------------------------------------------------------
# Scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative planning scenario; ``build_problem`` turns it into a solve."""

    map_path: str
    motion_kind: str
    dt: float
    noise_cov: np.ndarray
    camera: CameraParams
    start_mean: np.ndarray
    start_cov: np.ndarray
    goal: np.ndarray
    horizon: int
    terminal_weight: np.ndarray
    information_weight: np.ndarray
    control_weight: np.ndarray
    collision_weight: float
    three_sigma: np.ndarray
    mode: str
    visibility: str
    al_overrides: dict = field(default_factory=dict)
    initial_controls: np.ndarray | str = "straight_line"


def load_scenario(path) -> ScenarioConfig:
    doc = load_document(path)
    where = str(path)

    map_path = _require(doc, "map", str, where)

    mw = f"{where}.motion"
    motion = _require(doc, "motion", dict, where)
    kind = _require(motion, "kind", str, mw)
    if kind not in (HOLONOMIC, UNICYCLE):
        raise SchemaError(f"{mw}.kind: must be one of {HOLONOMIC!r}, {UNICYCLE!r}")
    dt = _require(motion, "dt", float, mw)
    m = 3 if kind == HOLONOMIC else 2
    if "noise_std" in motion:
        stds = _number_list(motion, "noise_std", m, mw)
        noise_cov = np.diag(stds**2)
    elif "noise_cov" in motion:
        rows = _require(motion, "noise_cov", list, mw)
        noise_cov = np.array(rows, dtype=float)
        if noise_cov.shape != (m, m):
            raise SchemaError(f"{mw}.noise_cov: expected a {m}x{m} matrix")
    else:
        raise SchemaError(f"{mw}: needs noise_std or noise_cov")

    cw = f"{where}.camera"
    cam_doc = _require(doc, "camera", dict, where)
    try:
        camera = CameraParams(
            focal_px=_require(cam_doc, "focal_px", float, cw),
            baseline_m=_require(cam_doc, "baseline_m", float, cw),
            alpha_max=np.deg2rad(_require(cam_doc, "fov_deg", float, cw)) / 2.0,
            beta_max=np.deg2rad(_require(cam_doc, "beta_max_deg", float, cw)),
            pixel_noise_std=_require(cam_doc, "pixel_noise_std", float, cw),
        )
    except ValueError as exc:
        raise SchemaError(f"{cw}: {exc}") from exc

    sw = f"{where}.start"
    start = _require(doc, "start", dict, where)
    start_mean = _number_list(start, "mean", 3, sw)
    if "sigma" in start:
        sig = _number_list(start, "sigma", 3, sw)
        start_cov = np.diag(sig**2)
    elif "cov" in start:
        start_cov = np.array(_require(start, "cov", list, sw), dtype=float)
        if start_cov.shape != (3, 3):
            raise SchemaError(f"{sw}.cov: expected a 3x3 matrix")
    else:
        raise SchemaError(f"{sw}: needs sigma or cov")

    goal = _number_list(doc, "goal", 3, where)
    horizon = _require(doc, "horizon", int, where)
    if horizon < 2:
        raise SchemaError(f"{where}.horizon: must be at least 2")

    ww = f"{where}.weights"
    weights = _require(doc, "weights", dict, where)
    terminal = _number_list(weights, "terminal", 3, ww)
    information = _number_list(weights, "information", 3, ww)
    control = _number_list(weights, "control", m, ww)
    collision = _require(weights, "collision", float, ww)

    mode = doc.get("mode", "constrained")
    if mode not in SOLVER_MODES:
        raise SchemaError(f"{where}.mode: must be one of {SOLVER_MODES}")
    visibility = doc.get("visibility", "smooth")
    if visibility not in VISIBILITY_MODES:
        raise SchemaError(f"{where}.visibility: must be one of {VISIBILITY_MODES}")

    three_sigma = np.zeros(3)
    if mode == "constrained":
        cw2 = f"{where}.constraints"
        constraints = _require(doc, "constraints", dict, where)
        three_sigma = _number_list(constraints, "three_sigma", 3, cw2)
        if np.any(three_sigma <= 0):
            raise SchemaError(f"{cw2}.three_sigma: bounds must be positive")
    elif doc.get("constraints") is not None:
        constraints = _require(doc, "constraints", dict, where)
        three_sigma = _number_list(constraints, "three_sigma", 3, f"{where}.constraints")

    al_overrides = doc.get("al") or {}
    if not isinstance(al_overrides, dict):
        raise SchemaError(f"{where}.al: expected a mapping")

    initial = doc.get("initial_controls", "straight_line")
    if isinstance(initial, str):
        if initial != "straight_line":
            raise SchemaError(f"{where}.initial_controls: unknown keyword {initial!r}")
    else:
        initial = np.array(initial, dtype=float)
        if initial.shape != (horizon, m):
            raise SchemaError(f"{where}.initial_controls: expected shape ({horizon}, {m})")

    return ScenarioConfig(
        map_path=map_path,
        motion_kind=kind,
        dt=dt,
        noise_cov=noise_cov,
        camera=camera,
        start_mean=start_mean,
        start_cov=start_cov,
        goal=goal,
        horizon=horizon,
        terminal_weight=terminal,
        information_weight=information,
        control_weight=control,
        collision_weight=collision,
        three_sigma=three_sigma,
        mode=mode,
        visibility=visibility,
        al_overrides=dict(al_overrides),
        initial_controls=initial,
    )


def save_scenario(config: ScenarioConfig, path) -> None:
    doc = {
        "map": config.map_path,
        "motion": {
            "kind": config.motion_kind,
            "dt": config.dt,
            "noise_cov": config.noise_cov,
        },
        "camera": {
            "focal_px": config.camera.focal_px,
            "baseline_m": config.camera.baseline_m,
            "fov_deg": float(np.rad2deg(config.camera.alpha_max) * 2.0),
            "beta_max_deg": float(np.rad2deg(config.camera.beta_max)),
            "pixel_noise_std": config.camera.pixel_noise_std,
        },
        "start": {"mean": config.start_mean, "cov": config.start_cov},
        "goal": config.goal,
        "horizon": config.horizon,
        "weights": {
            "terminal": config.terminal_weight,
            "information": config.information_weight,
            "control": config.control_weight,
            "collision": config.collision_weight,
        },
        "mode": config.mode,
        "visibility": config.visibility,
    }
    if config.mode == "constrained" or np.any(config.three_sigma > 0):
        doc["constraints"] = {"three_sigma": config.three_sigma}
    if config.al_overrides:
        doc["al"] = config.al_overrides
    if isinstance(config.initial_controls, str):
        doc["initial_controls"] = config.initial_controls
    else:
        doc["initial_controls"] = config.initial_controls
    dump_document(doc, path)


def resolve_map_path(config: ScenarioConfig, scenario_path) -> Path:
    candidate = Path(config.map_path)
    if candidate.is_absolute():
        return candidate
    base = Path(scenario_path).parent
    local = base / candidate
    if local.exists():
        return local
    bundled = bundled_path(config.map_path)
    if bundled.exists():
        return bundled
    return local


def build_problem(config: ScenarioConfig, fmap: FeatureMap,
                  mode: str | None = None,
                  visibility: str | None = None,
                  three_sigma=None) -> SolverProblem:
    """Assemble a SolverProblem from a scenario and a loaded map.

    ``mode``/``visibility``/``three_sigma`` override the scenario. In
    constrained mode the information weight is forced to zero: uncertainty
    is priced by the constraints, not the cost.
    """
    mode = mode or config.mode
    visibility = visibility or config.visibility
    if mode not in SOLVER_MODES:
        raise ValueError(f"mode must be one of {SOLVER_MODES}")
    if visibility not in VISIBILITY_MODES:
        raise ValueError(f"visibility must be one of {VISIBILITY_MODES}")

    motion = MotionModel(kind=config.motion_kind, dt=config.dt, process_noise_cov=config.noise_cov)
    model = BeliefModel(
        motion=motion,
        feature_map=fmap,
        camera=config.camera,
        smooth_visibility=(visibility == "smooth"),
    )
    information = config.information_weight if mode == "unconstrained" else np.zeros(3)
    weights = CostWeights(
        terminal=config.terminal_weight,
        information=information,
        control=config.control_weight,
        collision=config.collision_weight,
        goal=config.goal,
    )
    constraints = None
    if mode == "constrained":
        sigmas = np.asarray(three_sigma if three_sigma is not None else config.three_sigma, dtype=float)
        if np.any(sigmas <= 0):
            raise ValueError("constrained mode requires positive 3-sigma bounds")
        constraints = ConstraintSpec.for_state_variances(3, (0, 1, 2), sigmas)
    initial_belief = Belief.from_moments(config.start_mean, config.start_cov)
    if isinstance(config.initial_controls, str):
        u0 = straight_line_controls(motion, config.start_mean, config.goal, config.horizon)
    else:
        u0 = config.initial_controls
    return SolverProblem(
        belief_model=model,
        weights=weights,
        constraints=constraints,
        horizon=config.horizon,
        initial_belief=initial_belief,
        initial_controls=u0,
    )


def initial_trajectory_hash(problem: SolverProblem) -> str:
    """Hash of the initial state-space trajectory shared by paired solves."""
    motion = problem.belief_model.motion
    x = problem.initial_belief.mean
    states = [x]
    zero_v = np.zeros(motion.input_dim)
    from .motion import step as motion_step

    for k in range(problem.horizon):
        states.append(motion_step(motion, states[-1], problem.initial_controls[k], zero_v))
    payload = np.concatenate([np.concatenate(states), problem.initial_controls.ravel()])
    return hashlib.sha256(payload.tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# Policies, reports, traces


def serialize_policy(policy: Policy, path) -> None:
    doc = {
        "horizon": policy.horizon,
        "state_dim": policy.nominal_beliefs[0].n,
        "nominal_means": [b.mean for b in policy.nominal_beliefs],
        "nominal_cov_vech": [b.cov_vech for b in policy.nominal_beliefs],
        "nominal_controls": policy.nominal_controls,
        "feedforward": policy.feedforward,
        "feedback": policy.feedback,
    }
    dump_document(doc, path)


def load_policy(path) -> Policy:
    doc = load_document(path)
    where = str(path)
    horizon = _require(doc, "horizon", int, where)
    n = _require(doc, "state_dim", int, where)
    means = np.array(_require(doc, "nominal_means", list, where), dtype=float)
    vechs = np.array(_require(doc, "nominal_cov_vech", list, where), dtype=float)
    if means.shape != (horizon + 1, n):
        raise SchemaError(f"{where}.nominal_means: expected shape ({horizon + 1}, {n})")
    beliefs = tuple(Belief(mean=means[k], cov_vech=vechs[k]) for k in range(horizon + 1))
    return Policy(
        nominal_beliefs=beliefs,
        nominal_controls=np.array(_require(doc, "nominal_controls", list, where), dtype=float),
        feedforward=np.array(_require(doc, "feedforward", list, where), dtype=float),
        feedback=np.array(_require(doc, "feedback", list, where), dtype=float),
    )


def report_document(report: SolveReport) -> dict:
    return {
        "feasible": report.feasible,
        "converged": report.converged,
        "outer_iterations": report.outer_iterations,
        "inner_iterations": report.inner_iterations,
        "final_cost": report.final_cost,
        "final_augmented_cost": report.final_augmented_cost,
        "max_violation_per_constraint": report.max_violation_per_constraint,
        "history": [dict(h) for h in report.history],
    }


def plan_table_rows(problem: SolverProblem, policy: Policy):
    """One row per timestep: mean, cov diagonal, 3-sigma, controls, psi."""
    spec = problem.constraints
    header = ["k", "x", "y", "theta", "var_x", "var_y", "var_theta",
              "sig3_x", "sig3_y", "sig3_theta", "u0", "u1", "u2"]
    if spec is not None:
        header += [f"psi_{j}" for j in range(spec.n_constraints)]
    rows = []
    m = problem.belief_model.control_dim
    for k, b in enumerate(policy.nominal_beliefs):
        diag = np.diag(b.cov())
        row = [k, *b.mean.tolist(), *diag.tolist(), *(3.0 * np.sqrt(np.maximum(diag, 0.0))).tolist()]
        if k < policy.horizon:
            u = policy.nominal_controls[k]
            row += [float(u[i]) if i < m else 0.0 for i in range(3)]
        else:
            row += [0.0, 0.0, 0.0]
        if spec is not None:
            psi = spec.selector @ b.as_vector() - spec.bounds
            row += psi.tolist()
        rows.append(row)
    return header, rows


def trace_table_rows(trace) -> tuple[list, list]:
    header = ["k", "true_x", "true_y", "true_theta",
              "est_x", "est_y", "est_theta",
              "err_x", "err_y", "err_theta",
              "planned_sig3_x", "planned_sig3_y", "planned_sig3_theta",
              "realized_sig3_x", "realized_sig3_y", "realized_sig3_theta"]
    rows = []
    for k in range(trace.true_states.shape[0]):
        b = trace.estimated_beliefs[k]
        rows.append([
            k, *trace.true_states[k].tolist(), *b.mean.tolist(),
            *trace.estimation_errors[k].tolist(),
            *trace.planned_3sigma[k].tolist(), *trace.realized_3sigma[k].tolist(),
        ])
    return header, rows


def trace_document(trace) -> dict:
    return {
        "seed": trace.seed,
        "diverged": trace.diverged,
        "steps": trace.steps,
        "true_states": trace.true_states,
        "estimated_means": [b.mean for b in trace.estimated_beliefs],
        "estimated_cov_vech": [b.cov_vech for b in trace.estimated_beliefs],
        "applied_controls": trace.applied_controls,
        "estimation_errors": trace.estimation_errors,
        "planned_3sigma": trace.planned_3sigma,
        "realized_3sigma": trace.realized_3sigma,
    }


def summary_document(summary) -> dict:
    return {
        "runs": summary.runs,
        "base_seed": summary.base_seed,
        "diverged_runs": summary.diverged_runs,
        "violation_counts": {
            axis: int(c) for axis, c in zip(("x", "y", "theta"), summary.violation_counts)
        } if summary.violation_counts.size else {},
        "within_3sigma_fraction": {
            axis: float(f) for axis, f in zip(("x", "y", "theta"), summary.within_3sigma_fraction)
        },
        "mean_final_goal_error": summary.mean_final_goal_error,
    }

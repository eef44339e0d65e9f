"""Stereo-camera pixel measurements over a known feature map.

Implements the planar specialization: features live on a horizontal plane,
only the horizontal pixel coordinates of the left and right camera are
measured, so each feature contributes two measurement rows.

Feature matching is modelled probabilistically with a cosine falloff in the
view angle alpha (camera axis to feature bearing) and the perspective-shift
angle beta (feature normal to the feature->robot direction). Scaling the
measurement information by that probability keeps the belief dynamics smooth
as features approach the edge of the field of view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Projection is undefined at the camera plane; features this close cannot be
# matched and are excluded from assembly.
DEPTH_MIN = 0.1

# Features with matching probability below this contribute information below
# numerical noise (noise scales as R/p) and are dropped entirely.
P_MIN_DEFAULT = 1e-6

# When re-evaluating a frozen active set during Jacobian probes the
# probability may graze zero; clamp to keep R/p finite.
_P_FLOOR = 1e-12


class NotVisibleError(ValueError):
    """Raised when projecting a point the visibility model should have excluded."""


@dataclass(frozen=True)
class Feature:
    """Mapped visual feature: world position, surface-normal direction, id."""

    position: np.ndarray
    normal_angle: float
    id: int

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        if p.shape != (2,):
            raise ValueError(f"feature position must be 2-D, got shape {p.shape}")
        object.__setattr__(self, "position", p)
        na = float(self.normal_angle)
        if not (-np.pi < na <= np.pi):
            raise ValueError(f"normal_angle must lie in (-pi, pi], got {na}")
        object.__setattr__(self, "normal_angle", na)


@dataclass(frozen=True)
class CameraParams:
    """Stereo camera intrinsics and visibility-cone limits."""

    focal_px: float = 400.0
    baseline_m: float = 0.2
    alpha_max: float = np.deg2rad(15.0)
    beta_max: float = np.deg2rad(60.0)
    pixel_noise_std: float = 1.0

    def __post_init__(self):
        for name in ("focal_px", "baseline_m", "alpha_max", "beta_max", "pixel_noise_std"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.alpha_max > np.pi / 2:
            raise ValueError("alpha_max must not exceed pi/2")


@dataclass(frozen=True)
class Obstacle:
    """Circular obstacle."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.shape != (2,):
            raise ValueError(f"obstacle center must be 2-D, got shape {c.shape}")
        object.__setattr__(self, "center", c)
        if not self.radius > 0.0:
            raise ValueError("obstacle radius must be positive")


@dataclass(frozen=True)
class Bounds:
    """Rectangular workspace bounds."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError("bounds must satisfy xmin < xmax and ymin < ymax")


@dataclass(frozen=True)
class FeatureMap:
    """Known world geometry: features with normals plus circular obstacles."""

    features: tuple
    obstacles: tuple = ()
    bounds: Bounds | None = None

    def __post_init__(self):
        feats = tuple(sorted(self.features, key=lambda f: f.id))
        ids = [f.id for f in feats]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate feature ids: {dup}")
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "_sorted", feats)
        # Cached geometry in ascending-id order for the vectorized assembly.
        object.__setattr__(self, "_ids", np.array(ids, dtype=int))
        if feats:
            object.__setattr__(self, "_positions", np.vstack([f.position for f in feats]))
            normals = np.array([[np.cos(f.normal_angle), np.sin(f.normal_angle)] for f in feats])
            object.__setattr__(self, "_normals", normals)
        else:
            object.__setattr__(self, "_positions", np.zeros((0, 2)))
            object.__setattr__(self, "_normals", np.zeros((0, 2)))

    def sorted_features(self) -> tuple:
        return self._sorted


@dataclass(frozen=True)
class MeasurementBlocks:
    """Stacked measurement prediction for the active feature set.

    Per active feature (ascending id): two pixel rows [u_L, u_R], a 2x3
    Jacobian block, and a 2x2 noise block R / p.
    """

    ids: tuple
    pixels: np.ndarray
    jacobian: np.ndarray
    noise_cov: np.ndarray
    probs: np.ndarray

    @property
    def count(self) -> int:
        return len(self.ids)


def world_to_camera(x, p) -> np.ndarray:
    """Transform a world point into the camera frame: (lateral, depth).

    The camera optical axis coincides with the robot heading; the transform
    rotates p - [x, y] by -theta.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    dx = p[0] - x[0]
    dy = p[1] - x[1]
    c = np.cos(x[2])
    s = np.sin(x[2])
    lateral = -s * dx + c * dy
    depth = c * dx + s * dy
    return np.array([lateral, depth])


def _project_raw(pc, cam: CameraParams) -> np.ndarray:
    """Pinhole stereo projection without the depth guard (for FD probes)."""
    lateral, depth = float(pc[0]), float(pc[1])
    u_left = cam.focal_px * lateral / depth
    u_right = cam.focal_px * (lateral - cam.baseline_m) / depth
    return np.array([u_left, u_right])


def project_stereo(pc, cam: CameraParams) -> np.ndarray:
    """Horizontal pixel coordinates (u_L, u_R) of a camera-frame point."""
    if float(pc[1]) <= DEPTH_MIN:
        raise NotVisibleError(f"point at depth {float(pc[1]):.4f} m is behind the minimum depth {DEPTH_MIN} m")
    return _project_raw(pc, cam)


def view_angles(x, feat: Feature) -> tuple[float, float]:
    """View angle alpha and perspective-shift angle beta, both in [0, pi].

    alpha is the angle between the camera axis and the feature bearing;
    beta the angle between the feature->robot vector and the feature normal.
    Either is pi (never visible) when the corresponding vector degenerates.
    """
    x = np.asarray(x, dtype=float)
    pc = world_to_camera(x, feat.position)
    rng = float(np.hypot(pc[0], pc[1]))
    if rng == 0.0:
        return np.pi, np.pi
    alpha = float(np.arccos(np.clip(pc[1] / rng, -1.0, 1.0)))
    to_robot = x[:2] - feat.position
    dist = float(np.hypot(to_robot[0], to_robot[1]))
    normal = np.array([np.cos(feat.normal_angle), np.sin(feat.normal_angle)])
    beta = float(np.arccos(np.clip(float(to_robot @ normal) / dist, -1.0, 1.0)))
    return alpha, beta


def visibility_prob(x, feat: Feature, cam: CameraParams) -> float:
    """Probability of the feature being matched: p1(alpha) * p2(beta).

    Each factor is the cosine falloff 0.5*(cos(angle/angle_max * pi) + 1),
    dropping continuously to zero at the cone boundary; outside either cone
    the probability is exactly zero. A feature at the robot position returns
    zero by convention.
    """
    alpha, beta = view_angles(x, feat)
    if alpha >= cam.alpha_max or beta >= cam.beta_max:
        return 0.0
    p1 = 0.5 * (np.cos(alpha / cam.alpha_max * np.pi) + 1.0)
    p2 = 0.5 * (np.cos(beta / cam.beta_max * np.pi) + 1.0)
    return float(p1 * p2)


def hard_visible(x, feat: Feature, cam: CameraParams) -> bool:
    """Indicator visibility: inside both cones."""
    alpha, beta = view_angles(x, feat)
    return bool(alpha < cam.alpha_max and beta < cam.beta_max)


def _camera_frame_all(x, positions):
    """Lateral/depth of many world points in the camera frame at pose x."""
    d = positions - x[:2]
    c = np.cos(x[2])
    s = np.sin(x[2])
    lateral = -s * d[:, 0] + c * d[:, 1]
    depth = c * d[:, 0] + s * d[:, 1]
    return lateral, depth


def _pixels_batch(states, positions, cam: CameraParams):
    """Stereo pixels for a batch of poses against many features: (B, A, 2)."""
    d = positions[None, :, :] - states[:, None, :2]
    c = np.cos(states[:, 2])[:, None]
    s = np.sin(states[:, 2])[:, None]
    lateral = -s * d[:, :, 0] + c * d[:, :, 1]
    depth = c * d[:, :, 0] + s * d[:, :, 1]
    u_left = cam.focal_px * lateral / depth
    u_right = cam.focal_px * (lateral - cam.baseline_m) / depth
    return np.stack([u_left, u_right], axis=2)


def _visibility_all(x, fmap: FeatureMap, cam: CameraParams):
    """Vectorized matching probabilities and cone indicators for all features."""
    lateral, depth = _camera_frame_all(x, fmap._positions)
    rng = np.hypot(lateral, depth)
    safe_rng = np.where(rng > 0.0, rng, 1.0)
    alpha = np.arccos(np.clip(depth / safe_rng, -1.0, 1.0))
    to_robot = x[:2] - fmap._positions
    dist = np.hypot(to_robot[:, 0], to_robot[:, 1])
    safe_dist = np.where(dist > 0.0, dist, 1.0)
    cos_beta = np.sum(to_robot * fmap._normals, axis=1) / safe_dist
    beta = np.arccos(np.clip(cos_beta, -1.0, 1.0))
    degenerate = rng == 0.0
    alpha = np.where(degenerate, np.pi, alpha)
    beta = np.where(degenerate, np.pi, beta)
    inside = (alpha < cam.alpha_max) & (beta < cam.beta_max)
    p1 = 0.5 * (np.cos(alpha / cam.alpha_max * np.pi) + 1.0)
    p2 = 0.5 * (np.cos(beta / cam.beta_max * np.pi) + 1.0)
    probs = np.where(inside, p1 * p2, 0.0)
    return probs, inside, depth


def assemble_measurement(
    x,
    fmap: FeatureMap,
    cam: CameraParams,
    p_min: float = P_MIN_DEFAULT,
    smooth: bool = True,
    active_ids=None,
    jac_step_scale: float = 1e-5,
) -> MeasurementBlocks:
    """Stacked predicted pixels, Jacobian, and scaled noise for visible features.

    In smooth mode a feature is active when its matching probability is at
    least p_min, and its noise block is inflated to R / p. In hard-cutoff
    mode (the ablation) the probability is replaced by the inside-the-cones
    indicator and active features carry the unscaled R.

    When ``active_ids`` is given the inclusion decision is frozen to exactly
    that set (used to keep finite-difference probes from changing the active
    set); probabilities are still re-evaluated at ``x``.
    """
    if not (0.0 < p_min < 1.0):
        raise ValueError("p_min must lie strictly between 0 and 1")
    x = np.asarray(x, dtype=float)
    empty = MeasurementBlocks(
        ids=(), pixels=np.zeros(0), jacobian=np.zeros((0, 3)),
        noise_cov=np.zeros((0, 0)), probs=np.zeros(0),
    )
    if fmap._ids.shape[0] == 0:
        return empty
    probs_all, inside_all, depth_all = _visibility_all(x, fmap, cam)
    if active_ids is None:
        usable = depth_all > DEPTH_MIN
        if smooth:
            mask = usable & (probs_all >= p_min)
            probs = probs_all[mask]
        else:
            mask = usable & inside_all
            probs = np.ones(int(np.count_nonzero(mask)))
    else:
        mask = np.isin(fmap._ids, np.asarray(tuple(active_ids), dtype=int))
        probs = np.maximum(probs_all[mask], _P_FLOOR) if smooth else np.ones(int(np.count_nonzero(mask)))
    if not np.any(mask):
        return empty
    positions = fmap._positions[mask]
    ids = tuple(int(i) for i in fmap._ids[mask])

    # Central-difference Jacobian of the projection chain, batched over the
    # three pose coordinates and all active features at once.
    h = jac_step_scale * np.maximum(1.0, np.abs(x))
    states = np.vstack([x, x + np.diag(h), x - np.diag(h)])
    pix = _pixels_batch(states, positions, cam)
    pixels = pix[0].reshape(-1)
    a = positions.shape[0]
    jac = ((pix[1:4] - pix[4:7]) / (2.0 * h)[:, None, None]).reshape(3, 2 * a).T

    noise_diag = np.repeat(cam.pixel_noise_std**2 / probs, 2)
    return MeasurementBlocks(
        ids=ids,
        pixels=pixels,
        jacobian=jac,
        noise_cov=np.diag(noise_diag),
        probs=probs,
    )

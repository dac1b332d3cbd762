"""Planar 4-link arm plus cube: deterministic dynamics and an analytic
multiview scene encoder.

A configuration is a float64 vector of length 7 laid out as

    [joint_0, joint_1, joint_2, joint_3, cube_x, cube_y, cube_theta]

The arm hangs off the origin with four links of length 0.5; the cube is an
axis-free square of half-width 0.1 resting on the floor. Admissibility means:
joint_0 in [-pi, pi], joints 1..3 in [-2.4, 2.4], cube_x in [-2, 2],
cube_theta in [-pi, pi], cube supported by the floor, and the cube center at
least 0.15 away from the arm base.

The encoder replaces rendering + image encoding: each view projects nine
scene keypoints (five arm joints/tip, four cube corners) to (lateral, depth)
coordinates with a simple occlusion rule, then maps the 18 numbers through a
random-Fourier feature bank. A small high-frequency cosine term makes the
resulting scores oscillate rapidly along configuration-space lines, like the
scores the encoder stands in for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import multiview_embed
from .errors import (
    EmptyViewList,
    EpisodeOver,
    InadmissibleConfiguration,
    NonFiniteInput,
)

CONFIG_DIM = 7
N_JOINTS = 4
LINK_LENGTH = 0.5
CUBE_HALF = 0.1
BASE_CLEARANCE = 0.15
CUBE_X_MIN, CUBE_X_MAX = -2.0, 2.0

JOINT_LO = np.array([-np.pi, -2.4, -2.4, -2.4])
JOINT_HI = np.array([np.pi, 2.4, 2.4, 2.4])

DT = 0.05
HORIZON = 100
TORQUE_GAIN = 8.0
JOINT_DAMPING = 2.0
CUBE_FRICTION = 0.9
GRIP_RADIUS = 0.15
RESET_NOISE = 0.01
DEFAULT_CUBE_XY = (0.8, 0.2)

# index aliases into the 7-vector
IDX_JOINTS = slice(0, 4)
IDX_CUBE_X = 4
IDX_CUBE_Y = 5
IDX_CUBE_THETA = 6

N_KEYPOINTS = 9  # 5 arm points + 4 cube corners
FEATURE_DIM = 2 * N_KEYPOINTS

ADMISSIBLE_TOL = 1e-9


@dataclass(frozen=True)
class Configuration:
    """Named view over the canonical 7-vector layout."""

    joint_angles: np.ndarray
    cube_x: float
    cube_y: float
    cube_theta: float

    @classmethod
    def from_array(cls, q: np.ndarray) -> "Configuration":
        q = np.asarray(q, dtype=np.float64)
        return cls(q[IDX_JOINTS].copy(), float(q[IDX_CUBE_X]), float(q[IDX_CUBE_Y]),
                   float(q[IDX_CUBE_THETA]))

    def to_array(self) -> np.ndarray:
        out = np.empty(CONFIG_DIM)
        out[IDX_JOINTS] = self.joint_angles
        out[IDX_CUBE_X] = self.cube_x
        out[IDX_CUBE_Y] = self.cube_y
        out[IDX_CUBE_THETA] = self.cube_theta
        return out


@dataclass
class State:
    config: np.ndarray      # (7,)
    velocities: np.ndarray  # (7,) joint rates + cube (vx, vy, vtheta)
    timestep: int


@dataclass(frozen=True)
class Action:
    torques: np.ndarray  # (4,), clamped to [-1, 1]
    grip: float          # clamped to [-1, 1]; grip > 0 engages the cube

    @classmethod
    def from_array(cls, a: np.ndarray) -> "Action":
        a = np.asarray(a, dtype=np.float64)
        return cls(a[:4].copy(), float(a[4]))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.torques, [self.grip]])


@dataclass(frozen=True)
class ViewSpec:
    angle: float
    feature_seed: int = 7
    occlusion_threshold: float = 0.05


DEFAULT_VIEWS = (
    ViewSpec(angle=-np.pi / 4),
    ViewSpec(angle=0.0),
    ViewSpec(angle=np.pi / 4),
)
HOLDOUT_VIEWS = (
    ViewSpec(angle=-np.pi / 8),
    ViewSpec(angle=np.pi / 8),
)


def wrap_angle(theta):
    """Wrap into [-pi, pi); exact identity for values already in range."""
    return np.where(
        (theta >= -np.pi) & (theta < np.pi),
        theta,
        np.mod(theta + np.pi, 2.0 * np.pi) - np.pi,
    )


def floor_support_height(theta):
    """Lowest admissible cube-center height for orientation theta."""
    return CUBE_HALF * (np.abs(np.cos(theta)) + np.abs(np.sin(theta)))


def project_many(Q: np.ndarray) -> np.ndarray:
    """Vectorized projection of (n, 7) rows onto the admissible set.

    Order: clamp joints -> clamp cube_x / wrap theta -> floor support ->
    base clearance (radial push, which cannot undo the floor constraint
    because it scales cube_y up) -> floor re-check.
    """
    Q = np.asarray(Q, dtype=np.float64)
    if not np.all(np.isfinite(Q)):
        raise NonFiniteInput("configuration contains non-finite entries")
    out = Q.copy()
    out[:, IDX_JOINTS] = np.clip(out[:, IDX_JOINTS], JOINT_LO, JOINT_HI)
    out[:, IDX_CUBE_X] = np.clip(out[:, IDX_CUBE_X], CUBE_X_MIN, CUBE_X_MAX)
    out[:, IDX_CUBE_THETA] = wrap_angle(out[:, IDX_CUBE_THETA])
    support = floor_support_height(out[:, IDX_CUBE_THETA])
    out[:, IDX_CUBE_Y] = np.maximum(out[:, IDX_CUBE_Y], support)
    r = np.hypot(out[:, IDX_CUBE_X], out[:, IDX_CUBE_Y])
    # strict margin keeps re-projection from re-triggering on rounding noise
    need = r < BASE_CLEARANCE * (1.0 - 1e-12)
    if np.any(need):
        scale = BASE_CLEARANCE / r[need]
        out[need, IDX_CUBE_X] *= scale
        out[need, IDX_CUBE_Y] *= scale
        out[:, IDX_CUBE_Y] = np.maximum(out[:, IDX_CUBE_Y], support)
    return out


def project(q: np.ndarray) -> np.ndarray:
    """Project a single configuration onto the admissible set (idempotent)."""
    return project_many(np.asarray(q, dtype=np.float64)[None, :])[0]


def admissibility_violations(q: np.ndarray) -> list[str]:
    q = np.asarray(q, dtype=np.float64)
    bad = []
    if not np.all(np.isfinite(q)):
        return ["non-finite entries"]
    if np.any(q[IDX_JOINTS] < JOINT_LO - ADMISSIBLE_TOL) or np.any(
        q[IDX_JOINTS] > JOINT_HI + ADMISSIBLE_TOL
    ):
        bad.append("joint limits")
    if not (CUBE_X_MIN - ADMISSIBLE_TOL <= q[IDX_CUBE_X] <= CUBE_X_MAX + ADMISSIBLE_TOL):
        bad.append("cube_x range")
    if not (-np.pi - ADMISSIBLE_TOL <= q[IDX_CUBE_THETA] <= np.pi + ADMISSIBLE_TOL):
        bad.append("cube_theta range")
    if q[IDX_CUBE_Y] < floor_support_height(q[IDX_CUBE_THETA]) - ADMISSIBLE_TOL:
        bad.append("floor support")
    if np.hypot(q[IDX_CUBE_X], q[IDX_CUBE_Y]) < BASE_CLEARANCE - ADMISSIBLE_TOL:
        bad.append("base clearance")
    return bad


def is_admissible(q: np.ndarray) -> bool:
    return not admissibility_violations(q)


def arm_points_many(joints: np.ndarray) -> np.ndarray:
    """Forward kinematics: (n, 4) joint angles -> (n, 5, 2) base..tip points."""
    joints = np.asarray(joints, dtype=np.float64)
    cum = np.cumsum(joints, axis=-1)
    pts = np.zeros(joints.shape[:-1] + (5, 2))
    seg = LINK_LENGTH * np.stack([np.cos(cum), np.sin(cum)], axis=-1)
    pts[..., 1:, :] = np.cumsum(seg, axis=-2)
    return pts


def cube_corners_many(Q: np.ndarray) -> np.ndarray:
    """(n, 7) configs -> (n, 4, 2) cube corner positions."""
    Q = np.asarray(Q, dtype=np.float64)
    theta = Q[..., IDX_CUBE_THETA]
    c, s = np.cos(theta), np.sin(theta)
    offsets = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]) * CUBE_HALF
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)  # (n, 2, 2)
    world = np.einsum("...ij,kj->...ki", rot, offsets)
    center = Q[..., (IDX_CUBE_X, IDX_CUBE_Y)]
    return center[..., None, :] + world


def scene_keypoints_many(Q: np.ndarray) -> np.ndarray:
    """(n, 7) -> (n, 9, 2): five arm points followed by four cube corners."""
    Q = np.asarray(Q, dtype=np.float64)
    return np.concatenate(
        [arm_points_many(Q[..., IDX_JOINTS]), cube_corners_many(Q)], axis=-2
    )


def view_features_many(Q: np.ndarray, view: ViewSpec) -> np.ndarray:
    """Project keypoints into a view and apply the occlusion rule.

    Returns (n, 18): interleaved (lateral, depth) per keypoint. A keypoint is
    occluded when another keypoint sits within `occlusion_threshold` of its
    lateral coordinate at strictly smaller depth; its coordinates are then
    replaced by the front-most such occluder's (original coordinates are used
    for all comparisons; ties go to the lowest keypoint index).
    """
    pts = scene_keypoints_many(np.atleast_2d(Q))
    u = np.array([np.cos(view.angle), np.sin(view.angle)])
    u_perp = np.array([-np.sin(view.angle), np.cos(view.angle)])
    lat = pts @ u_perp  # (n, 9)
    dep = pts @ u
    near = (
        np.abs(lat[:, None, :] - lat[:, :, None]) < view.occlusion_threshold
    )  # [i, j]: j laterally close to i
    in_front = dep[:, None, :] < dep[:, :, None]  # [i, j]: j strictly nearer
    occluders = near & in_front
    # front-most occluder, ties by lowest index
    dep_key = np.where(occluders, dep[:, None, :], np.inf)
    j_star = np.argmin(dep_key, axis=2)  # (n, 9)
    has_occ = occluders.any(axis=2)
    rows = np.arange(pts.shape[0])[:, None]
    lat_final = np.where(has_occ, lat[rows, j_star], lat)
    dep_final = np.where(has_occ, dep[rows, j_star], dep)
    feats = np.empty((pts.shape[0], FEATURE_DIM))
    feats[:, 0::2] = lat_final
    feats[:, 1::2] = dep_final
    return feats


class SceneEncoder:
    """Analytic per-view embedding: random-Fourier features of the projected
    keypoints plus a controlled high-frequency oscillation term.

    feature_scale sets the bandwidth of the dominant smooth component (wide
    enough structure for a small surrogate to learn); osc_feature_scale,
    osc_frequency and osc_amplitude control the fast term, sized so that the
    exact score's total variation along configuration-space lines is
    dominated by oscillation the surrogate cannot and should not track.
    """

    def __init__(
        self,
        dim: int = 64,
        feature_scale: float = 0.3,
        osc_amplitude: float = 0.05,
        osc_frequency: float = 40.0,
        osc_feature_scale: float = 8.0,
    ):
        self.dim = int(dim)
        self.feature_scale = float(feature_scale)
        self.osc_amplitude = float(osc_amplitude)
        self.osc_frequency = float(osc_frequency)
        self.osc_feature_scale = float(osc_feature_scale)
        self._banks: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def _bank(self, feature_seed: int):
        bank = self._banks.get(feature_seed)
        if bank is None:
            rng = np.random.default_rng(feature_seed)
            omega = self.feature_scale * rng.standard_normal((self.dim, FEATURE_DIM))
            phase = rng.uniform(0.0, 2.0 * np.pi, size=self.dim)
            omega_hf = self.osc_feature_scale * rng.standard_normal(
                (self.dim, FEATURE_DIM)
            )
            bank = (omega, phase, omega_hf)
            self._banks[feature_seed] = bank
        return bank

    def render_features_many(
        self, Q: np.ndarray, view: ViewSpec, check: bool = True
    ) -> np.ndarray:
        """Per-view unit embeddings for (n, 7) admissible configurations."""
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        if check:
            for q in Q:
                bad = admissibility_violations(q)
                if bad:
                    raise InadmissibleConfiguration(", ".join(bad))
        v = view_features_many(Q, view)
        omega, phase, omega_hf = self._bank(view.feature_seed)
        raw = np.cos(v @ omega.T + phase)
        if self.osc_amplitude != 0.0:
            raw = raw + self.osc_amplitude * np.cos(self.osc_frequency * (v @ omega_hf.T))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        return raw / norms

    def render_features(self, q: np.ndarray, view: ViewSpec) -> np.ndarray:
        return self.render_features_many(q, view)[0]

    def config_embedding_many(
        self, Q: np.ndarray, views=DEFAULT_VIEWS, check: bool = True
    ) -> np.ndarray:
        """Multiview configuration embeddings (mean over per-view embeddings)."""
        if len(views) == 0:
            raise EmptyViewList("need at least one view")
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        acc = np.zeros((Q.shape[0], self.dim))
        for view in views:
            acc += self.render_features_many(Q, view, check=check)
            check = False  # one pass of validation is enough
        return acc / len(views)

    def config_embedding(self, q: np.ndarray, views=DEFAULT_VIEWS) -> np.ndarray:
        return self.config_embedding_many(q, views)[0]


def true_config_embedding(
    q: np.ndarray, views=DEFAULT_VIEWS, encoder: SceneEncoder | None = None
) -> np.ndarray:
    """Ground-truth multiview embedding of one configuration."""
    if encoder is None:
        encoder = SceneEncoder()
    if len(views) == 0:
        raise EmptyViewList("need at least one view")
    return multiview_embed([encoder.render_features(q, view) for view in views])


def default_config() -> np.ndarray:
    q = np.zeros(CONFIG_DIM)
    q[IDX_CUBE_X], q[IDX_CUBE_Y] = DEFAULT_CUBE_XY
    return q


def reset(seed: int, cube_y_range: tuple[float, float] | None = None) -> State:
    """Deterministic initial state: the default pose plus +/-0.01 uniform
    noise on all 14 pose/velocity dims, then projection.

    cube_y_range replaces the cube-height entry with a uniform draw on that
    interval (used by the random-policy dataset generator only).
    """
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-RESET_NOISE, RESET_NOISE, size=2 * CONFIG_DIM)
    q = default_config() + noise[:CONFIG_DIM]
    vel = noise[CONFIG_DIM:].copy()
    if cube_y_range is not None:
        q[IDX_CUBE_Y] = rng.uniform(*cube_y_range)
    return State(config=project(q), velocities=vel, timestep=0)


def step(state: State, action: Action) -> State:
    """Semi-implicit Euler step; pure function of (state, action)."""
    if state.timestep >= HORIZON:
        raise EpisodeOver(f"episode ended at t={state.timestep}")
    torques = np.clip(np.asarray(action.torques, dtype=np.float64), -1.0, 1.0)
    grip = float(np.clip(action.grip, -1.0, 1.0))

    q = state.config
    vel = state.velocities
    joints = q[IDX_JOINTS].copy()
    jvel = vel[IDX_JOINTS].copy()

    accel = TORQUE_GAIN * torques - JOINT_DAMPING * jvel
    jvel = jvel + DT * accel
    tip_old = arm_points_many(joints[None, :])[0, -1]
    new_joints = joints + DT * jvel
    low = new_joints < JOINT_LO
    high = new_joints > JOINT_HI
    new_joints = np.clip(new_joints, JOINT_LO, JOINT_HI)
    jvel[low | high] = 0.0
    tip_new = arm_points_many(new_joints[None, :])[0, -1]

    cube_pos = q[IDX_CUBE_X:IDX_CUBE_Y + 1].copy()
    cube_theta = q[IDX_CUBE_THETA]
    cube_vel = vel[IDX_CUBE_X:IDX_CUBE_Y + 1].copy()
    cube_avel = vel[IDX_CUBE_THETA]

    gripped = grip > 0.0 and float(np.linalg.norm(tip_old - cube_pos)) <= GRIP_RADIUS
    if gripped:
        cube_vel = (tip_new - tip_old) / DT
        cube_avel = float(np.sum(new_joints) - np.sum(joints)) / DT
    else:
        cube_vel = CUBE_FRICTION * cube_vel
        cube_avel = CUBE_FRICTION * cube_avel
    cube_pos = cube_pos + DT * cube_vel
    cube_theta = cube_theta + DT * cube_avel

    new_q = np.empty(CONFIG_DIM)
    new_q[IDX_JOINTS] = new_joints
    new_q[IDX_CUBE_X:IDX_CUBE_Y + 1] = cube_pos
    new_q[IDX_CUBE_THETA] = cube_theta
    new_q = project(new_q)

    new_vel = np.empty(CONFIG_DIM)
    new_vel[IDX_JOINTS] = jvel
    new_vel[IDX_CUBE_X:IDX_CUBE_Y + 1] = cube_vel
    new_vel[IDX_CUBE_THETA] = cube_avel
    return State(config=new_q, velocities=new_vel, timestep=state.timestep + 1)


def config_of(state: State) -> np.ndarray:
    """Pose part of a state (velocities and timestep dropped)."""
    return state.config.copy()


@dataclass
class VecEnv:
    """Lockstep batch of independent environments for rollout collection.

    Same dynamics as `step`, vectorized over n instances. Each instance
    resets itself when it reaches the horizon.
    """

    n: int
    seed: int = 0
    configs: np.ndarray = field(init=False)
    velocities: np.ndarray = field(init=False)
    timesteps: np.ndarray = field(init=False)
    _episode_counter: int = field(init=False, default=0)

    def __post_init__(self):
        self.configs = np.zeros((self.n, CONFIG_DIM))
        self.velocities = np.zeros((self.n, CONFIG_DIM))
        self.timesteps = np.zeros(self.n, dtype=np.int64)
        for i in range(self.n):
            self._reset_one(i)

    def _reset_one(self, i: int):
        st = reset(hash((self.seed, i, self._episode_counter)) % (2**31))
        self.configs[i] = st.config
        self.velocities[i] = st.velocities
        self.timesteps[i] = 0
        self._episode_counter += 1

    def observations(self) -> np.ndarray:
        t = (self.timesteps / HORIZON)[:, None]
        return np.concatenate([self.configs, self.velocities, t], axis=1)

    def step(self, actions: np.ndarray):
        """Advance every instance one step; returns (next_configs, dones).

        `actions` is (n, 5); entries are clamped like the scalar path.
        """
        torques = np.clip(actions[:, :4], -1.0, 1.0)
        grips = np.clip(actions[:, 4], -1.0, 1.0)
        joints = self.configs[:, IDX_JOINTS]
        jvel = self.velocities[:, IDX_JOINTS]

        jvel = jvel + DT * (TORQUE_GAIN * torques - JOINT_DAMPING * jvel)
        tip_old = arm_points_many(joints)[:, -1]
        new_joints = joints + DT * jvel
        hit = (new_joints < JOINT_LO) | (new_joints > JOINT_HI)
        new_joints = np.clip(new_joints, JOINT_LO, JOINT_HI)
        jvel = np.where(hit, 0.0, jvel)
        tip_new = arm_points_many(new_joints)[:, -1]

        cube_pos = self.configs[:, IDX_CUBE_X:IDX_CUBE_Y + 1]
        cube_vel = self.velocities[:, IDX_CUBE_X:IDX_CUBE_Y + 1]
        cube_avel = self.velocities[:, IDX_CUBE_THETA]
        dist = np.linalg.norm(tip_old - cube_pos, axis=1)
        gripped = (grips > 0.0) & (dist <= GRIP_RADIUS)
        cube_vel = np.where(gripped[:, None], (tip_new - tip_old) / DT,
                            CUBE_FRICTION * cube_vel)
        cube_avel = np.where(gripped, (new_joints.sum(1) - joints.sum(1)) / DT,
                             CUBE_FRICTION * cube_avel)
        cube_pos = cube_pos + DT * cube_vel
        cube_theta = self.configs[:, IDX_CUBE_THETA] + DT * cube_avel

        Q = np.empty_like(self.configs)
        Q[:, IDX_JOINTS] = new_joints
        Q[:, IDX_CUBE_X:IDX_CUBE_Y + 1] = cube_pos
        Q[:, IDX_CUBE_THETA] = cube_theta
        self.configs = project_many(Q)
        self.velocities = np.concatenate(
            [jvel, cube_vel, cube_avel[:, None]], axis=1
        )
        self.timesteps += 1

        dones = self.timesteps >= HORIZON
        next_configs = self.configs.copy()
        for i in np.flatnonzero(dones):
            self._reset_one(int(i))
        return next_configs, dones

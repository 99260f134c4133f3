"""Planar kinematic reacher with a fully sparse reward.

The arm is a chain of revolute joints in the plane. Actions are joint
velocity commands in [-1, 1], scaled by ``action_scale`` radians per step.
An episode succeeds when the end effector comes within ``reach_threshold``
of the target, and always ends after ``max_steps`` steps.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

HOME_BEND = 0.3  # joint 2 offset in the home pose


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    num_joints: int = 4
    link_lengths: tuple = (0.25, 0.25, 0.25, 0.25)
    action_scale: float = 0.05
    reach_threshold: float = 0.05
    max_steps: int = 100
    sparse_reward: float = 100.0
    target_region: tuple = (0.3, 0.95)

    def __post_init__(self):
        object.__setattr__(self, "link_lengths", tuple(float(l) for l in self.link_lengths))
        object.__setattr__(self, "target_region", tuple(float(r) for r in self.target_region))
        if len(self.link_lengths) != self.num_joints:
            raise ValueError(
                f"link_lengths has {len(self.link_lengths)} entries, expected {self.num_joints}"
            )
        if any(l <= 0 for l in self.link_lengths):
            raise ValueError("link lengths must be positive")
        r_min, r_max = self.target_region
        if not 0 <= r_min <= r_max:
            raise ValueError(f"bad target_region {self.target_region}")
        if r_max > sum(self.link_lengths) + 1e-12:
            raise ValueError("target_region outer radius exceeds arm reach")
        if self.reach_threshold <= 0:
            raise ValueError("reach_threshold must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    @property
    def obs_dim(self) -> int:
        return 3 * self.num_joints + 4

    @property
    def act_dim(self) -> int:
        return self.num_joints

    def env_hash(self) -> str:
        """Short stable identifier of this configuration."""
        canon = ";".join(f"{k}={v!r}" for k, v in sorted(asdict(self).items()))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class ReacherState:
    joint_angles: np.ndarray
    joint_velocities: np.ndarray
    ee_position: np.ndarray
    target_position: np.ndarray
    step_count: int = 0
    done: bool = False
    success: bool = False

    def copy(self) -> "ReacherState":
        return replace(
            self,
            joint_angles=self.joint_angles.copy(),
            joint_velocities=self.joint_velocities.copy(),
            ee_position=self.ee_position.copy(),
            target_position=self.target_position.copy(),
        )


def forward_kinematics(joint_angles, link_lengths) -> np.ndarray:
    """End-effector position of a planar chain rooted at the origin."""
    cum = np.cumsum(np.asarray(joint_angles, dtype=np.float64))
    lengths = np.asarray(link_lengths, dtype=np.float64)
    return np.array([np.dot(lengths, np.cos(cum)), np.dot(lengths, np.sin(cum))])


def jacobian(joint_angles, link_lengths) -> np.ndarray:
    """2 x num_joints Jacobian of the end-effector position."""
    cum = np.cumsum(np.asarray(joint_angles, dtype=np.float64))
    lengths = np.asarray(link_lengths, dtype=np.float64)
    # joint j moves every link i >= j
    dx = -np.cumsum((lengths * np.sin(cum))[::-1])[::-1]
    dy = np.cumsum((lengths * np.cos(cum))[::-1])[::-1]
    return np.stack([dx, dy])


def home_angles(config: EnvConfig) -> np.ndarray:
    angles = np.zeros(config.num_joints)
    if config.num_joints > 1:
        angles[1] = HOME_BEND
    return angles


def sample_target(config: EnvConfig, rng: np.random.Generator) -> np.ndarray:
    r_min, r_max = config.target_region
    # uniform by area
    radius = math.sqrt(rng.uniform(r_min**2, r_max**2))
    phi = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([radius * math.cos(phi), radius * math.sin(phi)])


def make_state(joint_angles, target, config: EnvConfig, joint_velocities=None) -> ReacherState:
    angles = np.array(joint_angles, dtype=np.float64)
    vel = np.zeros(config.num_joints) if joint_velocities is None else np.array(joint_velocities, dtype=np.float64)
    return ReacherState(
        joint_angles=angles,
        joint_velocities=vel,
        ee_position=forward_kinematics(angles, config.link_lengths),
        target_position=np.array(target, dtype=np.float64),
    )


def reset(config: EnvConfig, rng: np.random.Generator) -> ReacherState:
    """Home pose, fresh target."""
    return make_state(home_angles(config), sample_target(config, rng), config)


def step(state: ReacherState, action, config: EnvConfig):
    """Advance one step. Returns ``(next_state, reward, done, success)``."""
    if state.done:
        raise EnvError("step() called on a terminal state; reset first")
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    if a.shape != (config.num_joints,):
        raise ValueError(f"action shape {a.shape}, expected ({config.num_joints},)")
    delta = config.action_scale * a
    angles = state.joint_angles + delta
    ee = forward_kinematics(angles, config.link_lengths)
    count = state.step_count + 1
    success = bool(np.linalg.norm(ee - state.target_position) < config.reach_threshold)
    done = success or count >= config.max_steps
    reward = config.sparse_reward if success else 0.0
    nxt = ReacherState(
        joint_angles=angles,
        joint_velocities=delta,
        ee_position=ee,
        target_position=state.target_position.copy(),
        step_count=count,
        done=done,
        success=success,
    )
    return nxt, reward, done, success


def observe(state: ReacherState) -> np.ndarray:
    """[sin(q), cos(q), qdot, ee_xy, target_xy], length 3*num_joints + 4."""
    return np.concatenate(
        [
            np.sin(state.joint_angles),
            np.cos(state.joint_angles),
            state.joint_velocities,
            state.ee_position,
            state.target_position,
        ]
    )


def state_from_observation(obs, config: EnvConfig) -> ReacherState:
    """Inverse of :func:`observe` (used to restart from demonstration states)."""
    obs = np.asarray(obs, dtype=np.float64)
    j = config.num_joints
    angles = np.arctan2(obs[:j], obs[j : 2 * j])
    return make_state(angles, obs[-2:], config, joint_velocities=obs[2 * j : 3 * j])


@dataclass
class ReacherEnv:
    """Stateful wrapper with a reset/step API for the training loop."""

    config: EnvConfig = field(default_factory=EnvConfig)
    state: ReacherState | None = None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = reset(self.config, rng)
        return observe(self.state)

    def reset_to(self, state: ReacherState) -> np.ndarray:
        self.state = state.copy()
        self.state.step_count = 0
        self.state.done = False
        self.state.success = False
        return observe(self.state)

    def step(self, action):
        if self.state is None:
            raise EnvError("reset() must be called before step()")
        self.state, reward, done, success = step(self.state, action, self.config)
        return observe(self.state), reward, done, success

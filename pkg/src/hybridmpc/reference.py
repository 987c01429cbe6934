"""Reference generation: squat trajectories, desired interaction torques
(gravity compensation), and the admittance-style desired robot state.

The squat trajectory is a parametric stand-in for motion-capture data: a
periodic raised-cosine blend between a standing and a deep pose,

    q_ref(t) = stand + (deep - stand) * w(t),   w(t) = [(1 - cos(2 pi t / T)) / 2]^p

with smoothness exponent p >= 1.  w and its first two derivatives are
analytic and periodic, so the profile is C^2 (C-infinity for integer p).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coupling import StrapModel
from .dynamics import BodyParams, JointState, gravity_vector

DEG = math.pi / 180.0

STAND_POSE_DEFAULT = (85.0 * DEG, 0.0 * DEG, 0.0 * DEG)
# Moderate sit-back squat: shank leans forward, knees flex 75 deg, trunk
# pitches to ~70 deg absolute.  Keeps every joint gravity-loaded through the
# cycle (the assist strategy is gravity support, which cannot help a joint
# whose torque is inertia-dominated).
DEEP_POSE_DEFAULT = (55.0 * DEG, 75.0 * DEG, -60.0 * DEG)

# The training-diversity grid replacing the unavailable motion dataset:
# 5 squat depths x 5 smoothness exponents = 25 profiles.
DEPTH_FACTORS = (0.6, 0.7, 0.8, 0.9, 1.0)
SMOOTHNESS_GRID = (1.0, 1.5, 2.0, 2.5, 3.0)


@dataclass(frozen=True)
class SquatProfile:
    cycle_duration: float
    stand_pose: np.ndarray
    deep_pose: np.ndarray
    smoothness: float = 1.0

    def __post_init__(self) -> None:
        stand = np.asarray(self.stand_pose, dtype=np.float64).reshape(3)
        deep = np.asarray(self.deep_pose, dtype=np.float64).reshape(3)
        object.__setattr__(self, "stand_pose", stand)
        object.__setattr__(self, "deep_pose", deep)
        if not self.cycle_duration > 0.0:
            raise ValueError("cycle_duration must be > 0")
        if not self.smoothness >= 1.0:
            raise ValueError("smoothness must be >= 1 (C^2 continuity)")
        if np.any(np.abs(stand) > np.pi) or np.any(np.abs(deep) > np.pi):
            raise ValueError("poses must lie within the |q| <= pi envelope")


def default_profile(cycle_duration: float = 1.75, smoothness: float = 1.0) -> SquatProfile:
    return SquatProfile(
        cycle_duration=cycle_duration,
        stand_pose=np.array(STAND_POSE_DEFAULT),
        deep_pose=np.array(DEEP_POSE_DEFAULT),
        smoothness=smoothness,
    )


def profile_grid(cycle_duration: float = 1.75) -> list[SquatProfile]:
    """The documented 25-profile depth x smoothness grid at one cycle time."""
    stand = np.array(STAND_POSE_DEFAULT)
    deep = np.array(DEEP_POSE_DEFAULT)
    profiles = []
    for depth in DEPTH_FACTORS:
        for p in SMOOTHNESS_GRID:
            profiles.append(
                SquatProfile(
                    cycle_duration=cycle_duration,
                    stand_pose=stand,
                    deep_pose=stand + depth * (deep - stand),
                    smoothness=p,
                )
            )
    return profiles


def squat_reference(profile: SquatProfile, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(q_ref, qd_ref, qdd_ref) at time t; exact analytic derivatives."""
    omega = 2.0 * math.pi / profile.cycle_duration
    p = profile.smoothness
    phase = omega * t
    u = 0.5 * (1.0 - math.cos(phase))          # in [0, 1]
    du = 0.5 * omega * math.sin(phase)
    ddu = 0.5 * omega * omega * math.cos(phase)
    if u == 0.0:
        # Removable endpoint: w = w' = 0 there for every p >= 1, and the
        # curvature term p(p-1)u^(p-2)du^2 vanishes in the limit.
        w = 0.0
        dw = 0.0
        ddw = ddu if p == 1.0 else 0.0
    else:
        up1 = u ** (p - 1.0)
        w = up1 * u
        dw = p * up1 * du
        ddw = p * (p - 1.0) * (up1 / u) * du * du + p * up1 * ddu
    span = profile.deep_pose - profile.stand_pose
    return (
        profile.stand_pose + span * w,
        span * dw,
        span * ddw,
    )


@dataclass(frozen=True)
class AdmittanceGains:
    """Diagonal admittance gains of the desired-state law (rad/N, rad/(s N))."""

    c1: np.ndarray
    c2: np.ndarray

    def __post_init__(self) -> None:
        c1 = np.asarray(self.c1, dtype=np.float64).reshape(3)
        c2 = np.asarray(self.c2, dtype=np.float64).reshape(3)
        if np.any(c1 < 0.0) or np.any(c2 < 0.0):
            raise ValueError("admittance gains must be >= 0")
        object.__setattr__(self, "c1", c1)
        object.__setattr__(self, "c2", c2)

    def c1_matrix(self) -> np.ndarray:
        return np.diag(self.c1)

    def c2_matrix(self) -> np.ndarray:
        return np.diag(self.c2)


def default_admittance() -> AdmittanceGains:
    return AdmittanceGains(c1=np.array([0.05, 0.05, 0.1]), c2=np.array([0.01, 0.01, 0.03]))


@dataclass(frozen=True)
class DesiredInteraction:
    """Gravity-compensation target: torque T_intd and strap force F_intd = T/r."""

    torque: np.ndarray
    force: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "torque", np.asarray(self.torque, dtype=np.float64).reshape(3))
        object.__setattr__(self, "force", np.asarray(self.force, dtype=np.float64).reshape(3))


def desired_interaction_torque(
    human_params: BodyParams,
    robot_q: np.ndarray,
    torque_arm: np.ndarray | None = None,
) -> DesiredInteraction:
    """T_intd = -G_human(robot_q): the robot should carry the wearer's gravity.

    The human gravity vector is estimated at the ROBOT's joint angles (the
    measurable ones).  ``torque_arm`` converts to the force-space target
    F_intd; it defaults to the standard strap geometry.
    """
    if torque_arm is None:
        torque_arm = np.array([0.25, 0.30, 0.30])
    arm = np.asarray(torque_arm, dtype=np.float64).reshape(3)
    torque = -gravity_vector(human_params, np.asarray(robot_q, dtype=np.float64).reshape(3))
    return DesiredInteraction(torque=torque, force=torque / arm)


def desired_state(
    robot: JointState,
    f_int: np.ndarray,
    f_intd: np.ndarray,
    gains: AdmittanceGains,
) -> tuple[np.ndarray, np.ndarray]:
    """Admittance update: move the desired robot state along the force error.

    theta_d  = theta  + C1 (F_int - F_intd)
    thetad_d = thetad + C2 (F_int - F_intd)
    """
    err = np.asarray(f_int, dtype=np.float64).reshape(3) - np.asarray(f_intd, dtype=np.float64).reshape(3)
    return robot.q + gains.c1 * err, robot.qd + gains.c2 * err


def desired_interaction_for_strap(
    human_params: BodyParams, robot_q: np.ndarray, strap: StrapModel
) -> DesiredInteraction:
    """Convenience wrapper using the strap's torque arms."""
    return desired_interaction_torque(human_params, robot_q, strap.torque_arm)

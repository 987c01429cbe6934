"""Human-robot coupling: compliant straps and the simulated human "brain".

Sign convention for the interaction torque
------------------------------------------

``T_int`` is the torque the *human* exerts on the *robot* through the
straps (a rotational spring-damper per joint):

    T_int = k * (q_h - q_R) + b * (qd_h - qd_R)

It enters the robot plant as ``u = T_R + T_int + d`` and the human plant
as ``T_h - T_int`` (equal and opposite reaction).  With this orientation
the strap is attractive -- each body is pulled toward the other -- and
driving ``T_int`` to the gravity-compensation target ``-G_human`` makes
the robot carry the wearer's gravity load, which is the whole point of
the assistance scheme.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics as dyn
from .dynamics import BodyParams, DisturbanceSpec, JointState

_NO_DISTURBANCE = DisturbanceSpec()


def _vec3(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(3)


@dataclass(frozen=True)
class StrapModel:
    """Per-joint rotational spring-damper with a torque arm.

    torque_arm converts between joint torque and the strap force a sensor
    would read: F = T / r.
    """

    stiffness: np.ndarray
    damping: np.ndarray
    torque_arm: np.ndarray

    def __post_init__(self) -> None:
        k = _vec3(self.stiffness)
        b = _vec3(self.damping)
        r = _vec3(self.torque_arm)
        if np.any(k < 0.0) or np.any(b < 0.0):
            raise ValueError("strap stiffness and damping must be >= 0")
        if np.any(r <= 0.0):
            raise ValueError("torque_arm must be > 0")
        object.__setattr__(self, "stiffness", k)
        object.__setattr__(self, "damping", b)
        object.__setattr__(self, "torque_arm", r)


def default_strap() -> StrapModel:
    # Stiff enough that strap deflection under full gravity support stays a
    # few hundredths of a radian: the robot estimates the wearer's gravity
    # load from its own joint angles, and a soft strap lets that estimate
    # drift by roughly G/k radians of lean.
    return StrapModel(
        stiffness=np.array([2000.0, 2000.0, 2000.0]),
        damping=np.array([10.0, 10.0, 10.0]),
        torque_arm=np.array([0.25, 0.30, 0.30]),
    )


@dataclass(frozen=True)
class HumanController:
    """Feedback-linearization tracking law standing in for the human CNS.

    ``compensate_interaction`` controls whether the human is assumed to feel
    and cancel the strap torque inside the linearization (on by default) or
    to treat it as an external disturbance.
    """

    kp: np.ndarray
    kd: np.ndarray
    compensate_interaction: bool = True

    def __post_init__(self) -> None:
        kp = _vec3(self.kp)
        kd = _vec3(self.kd)
        if np.any(kp <= 0.0) or np.any(kd <= 0.0):
            raise ValueError("human controller gains must be > 0")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)


def default_human_controller() -> HumanController:
    return HumanController(kp=np.full(3, 400.0), kd=np.full(3, 40.0))


@dataclass(frozen=True)
class CoupledState:
    human: JointState
    robot: JointState
    t: float = 0.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.t) and self.t >= 0.0):
            raise ValueError("t must be finite and >= 0")


def interaction_torque(strap: StrapModel, robot: JointState, human: JointState) -> np.ndarray:
    """Strap torque on the robot: k*(q_h - q_R) + b*(qd_h - qd_R)."""
    return strap.stiffness * (human.q - robot.q) + strap.damping * (human.qd - robot.qd)


def torque_to_force(strap: StrapModel, torque) -> np.ndarray:
    return _vec3(torque) / strap.torque_arm


def force_to_torque(strap: StrapModel, force) -> np.ndarray:
    return _vec3(force) * strap.torque_arm


def preload_equilibrium(
    human_params: BodyParams,
    q_h,
    strap: StrapModel,
    tol: float = 1e-12,
    max_iter: int = 60,
) -> np.ndarray:
    """Robot pose where the static strap load carries the wearer's gravity.

    Solves k * (q_R - q_h) = G_human(q_R) by Newton iteration with a
    finite-difference gravity Jacobian.  Starting a simulation from this
    deflected pose instead of q_R = q_h avoids slamming the loop with a
    G/k-sized strap transient at t = 0.  Plain fixed-point iteration is not
    used because |dG/dq| can rival or exceed the strap stiffness.
    """
    k = np.asarray(strap.stiffness, dtype=np.float64)
    if np.any(k <= 0.0):
        raise ValueError("preload needs strictly positive strap stiffness")
    q_h = _vec3(q_h)
    q_r = q_h.copy()
    h = 1e-7
    for _ in range(max_iter):
        g = dyn.gravity_vector(human_params, q_r)
        resid = k * (q_r - q_h) - g
        if np.max(np.abs(resid)) < tol:
            break
        jac = np.diag(k)
        for j in range(3):
            dq = np.zeros(3)
            dq[j] = h
            jac[:, j] -= (dyn.gravity_vector(human_params, q_r + dq) - g) / h
        q_r = q_r - np.linalg.solve(jac, resid)
    return q_r


def human_muscle_torque(
    human_params: BodyParams,
    human: JointState,
    ref_point: tuple[np.ndarray, np.ndarray, np.ndarray],
    t_int: np.ndarray,
    ctrl: HumanController,
) -> np.ndarray:
    """Muscle torque from the feedback-linearization tracking law.

    With an exact model the closed-loop tracking error obeys
    e'' + kd e' + kp e = 0.
    """
    q_ref, qd_ref, qdd_ref = ref_point
    e = _vec3(q_ref) - human.q
    ed = _vec3(qd_ref) - human.qd
    v = _vec3(qdd_ref) + ctrl.kd * ed + ctrl.kp * e
    m = dyn.inertia_matrix(human_params, human.q)
    c = dyn.coriolis_matrix(human_params, human.q, human.qd)
    torque = m @ v + c @ human.qd + dyn.gravity_vector(human_params, human.q)
    if ctrl.compensate_interaction:
        torque = torque + _vec3(t_int)
    return torque


def human_alone_step(
    human_params: BodyParams,
    human: JointState,
    ref_point,
    ctrl: HumanController,
    t: float,
    dt: float,
    substeps: int = 1,
    disturbance: DisturbanceSpec = _NO_DISTURBANCE,
) -> tuple[JointState, np.ndarray]:
    """Advance the human alone (no robot, T_int = 0); returns (state, T_h)."""
    t_h = human_muscle_torque(human_params, human, ref_point, np.zeros(3), ctrl)
    state = human
    sub_dt = dt / substeps
    for i in range(substeps):
        state = dyn.rk4_step(human_params, state, t_h, disturbance, t + i * sub_dt, sub_dt)
    return state, t_h


def coupled_step(
    human_params: BodyParams,
    robot_params: BodyParams,
    state: CoupledState,
    robot_torque,
    ref_point,
    strap: StrapModel,
    ctrl: HumanController,
    disturbance: DisturbanceSpec,
    dt: float,
    substeps: int = 1,
    disturb_human: bool = False,
) -> CoupledState:
    """Advance both plants one control period with frozen coupling torques.

    T_int and T_h are evaluated once from the pre-step states (explicit weak
    coupling) and held for the whole period; ``substeps`` splits the RK4
    integration under that hold without re-evaluating the coupling, which is
    what a convergence study of the integrator itself must refine.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    t_int = interaction_torque(strap, state.robot, state.human)
    t_h = human_muscle_torque(human_params, state.human, ref_point, t_int, ctrl)
    u_robot = _vec3(robot_torque) + t_int
    u_human = t_h - t_int
    human_disturbance = disturbance if disturb_human else _NO_DISTURBANCE

    robot = state.robot
    human = state.human
    sub_dt = dt / substeps
    for i in range(substeps):
        t_i = state.t + i * sub_dt
        robot = dyn.rk4_step(robot_params, robot, u_robot, disturbance, t_i, sub_dt)
        human = dyn.rk4_step(human_params, human, u_human, human_disturbance, t_i, sub_dt)
    return CoupledState(human=human, robot=robot, t=state.t + dt)

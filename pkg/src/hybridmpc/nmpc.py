"""Receding-horizon nonlinear MPC for the robot, solved by Gauss-Newton SQP.

At every control instant the controller predicts P steps of the RK4-discretized
robot model under M free torque moves (move-blocking beyond M), minimizes a
quadratic tracking + torque-increment cost, and applies only the first move.
The decision variables are the per-step increments ``delta_u`` of the actuator
torque, box-limited to ``|delta_u| <= delta_u_max`` per step; the interaction
torque from the wearer is assumed measurable and is frozen at its current value
over the short horizon, so the plant input inside the prediction is
``u_seq[k] + t_int_hold``.

The SQP loop linearizes the rollout by forward finite differences, solves a
dense box-constrained QP subproblem exactly with a projected active-set
method, and globalizes with a damped line search on the true cost.  It never
raises on numerical trouble: the best feasible iterate is returned with
``converged=False``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .boxqp import solve_box_qp
from .coupling import StrapModel, default_strap, force_to_torque
from .dynamics import BodyParams, JointState, _rk4_arrays, gravity_vector
from .errors import IntegrationDivergedError
from .reference import AdmittanceGains, default_admittance, desired_state

_FD_STEP = 1e-5  # forward-difference step on the torque increments, N*m
_STEP_TOL = 1e-6  # terminate when the increment change falls below this, N*m
_MAX_SQP_ITER = 30
_LINE_SEARCH_TRIALS = 8


@dataclass(frozen=True)
class HorizonConfig:
    """Prediction/control horizon lengths, control period and rate box."""

    prediction_horizon: int = 3
    control_horizon: int = 3
    dt: float = 0.002
    delta_u_max: float = 5.0

    def __post_init__(self) -> None:
        p, m = self.prediction_horizon, self.control_horizon
        if not (isinstance(p, int) and isinstance(m, int) and 1 <= m <= p):
            raise ValueError("horizons must be integers with 1 <= M <= P")
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError("dt must be positive")
        if not (np.isfinite(self.delta_u_max) and self.delta_u_max > 0.0):
            raise ValueError("delta_u_max must be positive")


@dataclass(frozen=True)
class CostWeights:
    """Quadratic weights: r1 on the stacked output error, r2 on the increments.

    ``r1`` is (6P)x(6P), built per-step block-diagonal; ``r2`` is (3M)x(3M).
    Both must be symmetric positive semidefinite.
    """

    r1: np.ndarray
    r2: np.ndarray

    def __post_init__(self) -> None:
        for name in ("r1", "r2"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ValueError(f"{name} must be a square matrix")
            if not np.allclose(w, w.T, rtol=0.0, atol=1e-9):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(w)[0] < -1e-9 * max(1.0, float(np.abs(w).max())):
                raise ValueError(f"{name} must be positive semidefinite")
            object.__setattr__(self, name, w)

    @staticmethod
    def default(horizon: HorizonConfig) -> "CostWeights":
        """Unit angle weights, 0.05 on velocities, 1e-5 on each increment."""
        step_weight = np.diag([1.0, 1.0, 1.0, 0.05, 0.05, 0.05])
        r1 = np.kron(np.eye(horizon.prediction_horizon), step_weight)
        r2 = 1e-5 * np.eye(3 * horizon.control_horizon)
        return CostWeights(r1=r1, r2=r2)


@dataclass(frozen=True)
class NmpcProblem:
    """One receding-horizon instance: plant, state, target and weights."""

    robot_params: BodyParams
    state: JointState
    y_d: np.ndarray  # (6P,) stacked desired output, angles then velocities per step
    weights: CostWeights
    horizon: HorizonConfig
    u_prev: np.ndarray  # (3,) previously applied actuator torque
    t_int_hold: np.ndarray  # (3,) measured interaction torque, frozen over the horizon

    def __post_init__(self) -> None:
        p, m = self.horizon.prediction_horizon, self.horizon.control_horizon
        y_d = np.asarray(self.y_d, dtype=np.float64).reshape(-1)
        if y_d.size != 6 * p:
            raise ValueError(f"y_d must have length 6P = {6 * p}, got {y_d.size}")
        if self.weights.r1.shape != (6 * p, 6 * p) or self.weights.r2.shape != (3 * m, 3 * m):
            raise ValueError("weight dimensions do not match the horizon")
        object.__setattr__(self, "y_d", y_d)
        object.__setattr__(self, "u_prev", np.asarray(self.u_prev, np.float64).reshape(3))
        object.__setattr__(self, "t_int_hold", np.asarray(self.t_int_hold, np.float64).reshape(3))


@dataclass(frozen=True)
class NmpcSolution:
    delta_u: np.ndarray  # (M, 3) torque increments
    u_seq: np.ndarray  # (M, 3) absolute torques, u_seq[i] = u_prev + sum(delta_u[:i+1])
    cost: float
    iterations: int
    converged: bool
    cost_trace: tuple  # true cost after each accepted iterate, starting at the warm start


def _predict(coef, q0, qd0, total_seq, horizon: HorizonConfig) -> np.ndarray:
    """Stacked (..., 6P) output of P RK4 steps under the (..., M, 3) total torque."""
    p, m, dt = horizon.prediction_horizon, horizon.control_horizon, horizon.dt
    batch = total_seq.shape[:-2]
    out = np.empty(batch + (6 * p,), dtype=np.float64)
    q, qd = q0, qd0
    for k in range(p):
        tau = total_seq[..., min(k, m - 1), :]
        q, qd = _rk4_arrays(coef, q, qd, tau, dt)
        out[..., 6 * k : 6 * k + 3] = q
        out[..., 6 * k + 3 : 6 * k + 6] = qd
    return out


def rollout(
    robot_params: BodyParams,
    state: JointState,
    u_seq: np.ndarray,
    horizon: HorizonConfig,
    t_int_hold: np.ndarray,
) -> np.ndarray:
    """Predicted output for an actuator-torque sequence (nominal model, d = 0).

    Composes P plain RK4 steps; torque beyond step M-1 is held at the last
    move (move-blocking); the interaction torque is frozen at ``t_int_hold``.
    Returns the 6P stacked vector: per step, 3 angles then 3 velocities.
    """
    m = horizon.control_horizon
    u_seq = np.asarray(u_seq, dtype=np.float64)
    if u_seq.shape != (m, 3):
        raise ValueError(f"u_seq must have shape ({m}, 3)")
    hold = np.asarray(t_int_hold, dtype=np.float64).reshape(3)
    y = _predict(robot_params._coef, state.q, state.qd, u_seq + hold, horizon)
    if not np.all(np.isfinite(y)):
        raise IntegrationDivergedError("prediction rollout produced non-finite state")
    return y


def cost(y: np.ndarray, y_d: np.ndarray, delta_u: np.ndarray, weights: CostWeights) -> float:
    """J = (y_d - y)^T R1 (y_d - y) + delta_u^T R2 delta_u."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_d = np.asarray(y_d, dtype=np.float64).reshape(-1)
    z = np.asarray(delta_u, dtype=np.float64).reshape(-1)
    if y.size != y_d.size or y.size != weights.r1.shape[0]:
        raise ValueError("output dimensions do not match r1")
    if z.size != weights.r2.shape[0]:
        raise ValueError("increment dimensions do not match r2")
    r = y_d - y
    return float(r @ weights.r1 @ r + z @ weights.r2 @ z)


def sqp_solve(
    problem: NmpcProblem,
    warm_start: np.ndarray | None = None,
    *,
    predict_batch: Callable[[np.ndarray], np.ndarray] | None = None,
) -> NmpcSolution:
    """Gauss-Newton SQP over the torque increments with an exact box QP.

    ``predict_batch`` maps a (..., M, 3) total-torque sequence to the stacked
    (..., 6P) output; by default it is the RK4 robot model.  Injectable so the
    solver can be validated against analytically tractable plants.
    """
    hz = problem.horizon
    p, m, dmax = hz.prediction_horizon, hz.control_horizon, hz.delta_u_max
    n = 3 * m
    r1, r2 = problem.weights.r1, problem.weights.r2
    y_d = problem.y_d
    u_prev = problem.u_prev
    hold = problem.t_int_hold

    if predict_batch is None:
        coef = problem.robot_params._coef
        q0, qd0 = problem.state.q, problem.state.qd

        def predict_batch(total_seq):
            return _predict(coef, q0, qd0, total_seq, hz)

    def total_from_z(z_flat):
        # (..., n) increments -> (..., M, 3) absolute total torque
        du = z_flat.reshape(z_flat.shape[:-1] + (m, 3))
        return u_prev + np.cumsum(du, axis=-2) + hold

    def true_cost(z_flat, y):
        if not np.all(np.isfinite(y)):
            return np.inf
        r = y_d - y
        return float(r @ r1 @ r + z_flat @ r2 @ z_flat)

    z = np.zeros(n) if warm_start is None else np.asarray(warm_start, np.float64).reshape(n).copy()
    np.clip(z, -dmax, dmax, out=z)
    y = predict_batch(total_from_z(z))
    j_val = true_cost(z, y)
    if not np.isfinite(j_val) and np.any(z):
        # Warm start itself diverges: fall back to holding the previous torque.
        z = np.zeros(n)
        y = predict_batch(total_from_z(z))
        j_val = true_cost(z, y)
    trace = [j_val]
    converged = False
    iterations = 0

    while iterations < _MAX_SQP_ITER:
        iterations += 1
        if not np.isfinite(j_val):
            break  # cannot even evaluate the model here; return the hold
        perturbed = z + _FD_STEP * np.eye(n)
        y_pert = predict_batch(total_from_z(perturbed))  # (n, 6P)
        jac = (y_pert - y).T / _FD_STEP  # (6P, n)
        bad = ~np.all(np.isfinite(y_pert), axis=1)
        if bad.any():
            jac[:, bad] = 0.0
        resid = y_d - y
        hess = 2.0 * (jac.T @ r1 @ jac + r2)
        grad = 2.0 * (r2 @ z - jac.T @ (r1 @ resid))
        qp = solve_box_qp(hess, grad, -dmax - z, dmax - z)
        step = qp.z
        step_norm = float(np.max(np.abs(step)))
        if step_norm < _STEP_TOL:
            converged = True
            break
        # All backtracking candidates are rolled out in one batched call
        # (per-row results are bitwise those of one-at-a-time calls, and the
        # call overhead dominates the per-row work at these sizes); the scan
        # below still accepts the first improving alpha, exactly like a
        # sequential backtracking loop.  Overflow in a candidate that a
        # sequential search would never have evaluated is expected and
        # handled by its infinite cost, so it is not worth a warning.
        alphas = 0.5 ** np.arange(_LINE_SEARCH_TRIALS)
        z_cands = z + alphas[:, None] * step
        with np.errstate(over="ignore", invalid="ignore"):
            y_cands = predict_batch(total_from_z(z_cands))
        accepted = False
        for i in range(_LINE_SEARCH_TRIALS):
            j_try = true_cost(z_cands[i], y_cands[i])
            if j_try <= j_val:
                accepted = True
                break
        if not accepted:
            break  # no improving damped step: stalled at the FD noise floor
        z, y, j_val = z_cands[i].copy(), y_cands[i].copy(), j_try
        trace.append(j_val)
        if float(alphas[i]) * step_norm < _STEP_TOL:
            converged = True
            break

    delta_u = z.reshape(m, 3)
    return NmpcSolution(
        delta_u=delta_u,
        u_seq=u_prev + np.cumsum(delta_u, axis=0),
        cost=j_val,
        iterations=iterations,
        converged=converged,
        cost_trace=tuple(trace),
    )


class NmpcController:
    """Stateful receding-horizon controller: one instance per control loop.

    Holds the previously applied torque and the shifted warm start between
    calls, so instances must not be shared across loops; distinct instances
    are fully independent.
    """

    def __init__(
        self,
        robot_params: BodyParams,
        horizon: HorizonConfig | None = None,
        weights: CostWeights | None = None,
        admittance: AdmittanceGains | None = None,
        strap: StrapModel | None = None,
    ):
        self.robot_params = robot_params
        self.horizon = horizon if horizon is not None else HorizonConfig()
        self.weights = weights if weights is not None else CostWeights.default(self.horizon)
        self.admittance = admittance if admittance is not None else default_admittance()
        self.strap = strap if strap is not None else default_strap()
        p, m = self.horizon.prediction_horizon, self.horizon.control_horizon
        if self.weights.r1.shape != (6 * p, 6 * p) or self.weights.r2.shape != (3 * m, 3 * m):
            raise ValueError("weight dimensions do not match the horizon")
        self.reset()

    def reset(self) -> None:
        self._u_prev_total: np.ndarray | None = None
        self._warm = np.zeros((self.horizon.control_horizon, 3))
        self.last_solution: NmpcSolution | None = None
        self.last_solve_ms = 0.0

    def step(self, robot: JointState, f_int, f_intd) -> tuple[np.ndarray, dict]:
        """One control instant: returns (actuator torque, info).

        The desired output holds the admittance-shifted (theta_d, thetad_d)
        constant over the horizon; only the first optimized move is applied.
        The optimizer works on total joint torque (actuator + interaction),
        so the rate constraint bounds net-torque increments and the actuator
        torque T_R = u - T_int absorbs measured strap-load swings directly.
        ``info`` carries the full NmpcSolution and the wall-clock solve time.
        """
        t0 = time.perf_counter()
        t_int = force_to_torque(self.strap, f_int)
        if self._u_prev_total is None:
            # Bumpless start: gravity-holding total torque.
            self._u_prev_total = gravity_vector(self.robot_params, robot.q)
        theta_d, thetad_d = desired_state(robot, f_int, f_intd, self.admittance)
        y_d = np.tile(np.concatenate([theta_d, thetad_d]), self.horizon.prediction_horizon)
        problem = NmpcProblem(
            robot_params=self.robot_params,
            state=robot,
            y_d=y_d,
            weights=self.weights,
            horizon=self.horizon,
            u_prev=self._u_prev_total - t_int,
            t_int_hold=t_int,
        )
        solution = sqp_solve(problem, warm_start=self._warm)
        u = solution.u_seq[0].copy()
        self._u_prev_total = u + t_int
        self._warm = np.vstack([solution.delta_u[1:], np.zeros((1, 3))])
        self.last_solution = solution
        self.last_solve_ms = (time.perf_counter() - t0) * 1e3
        return u, {"solution": solution, "solve_ms": self.last_solve_ms}

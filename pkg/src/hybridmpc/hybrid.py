"""Distilled-network feedforward plus PI interaction-force correction.

The deployed controller computes

    T_R(k) = O(k) + K_P e(k) + K_I * sum_{i<=k} e(i),    e = F_int - F_intd

where O is the network's unscaled torque prediction.  The integral is a plain
per-step sum (no dt factor), so K_I is a per-step gain: running the loop at a
different control period changes the effective integral strength, which is
why the control dt is part of the scenario config rather than a free knob.

Per step this costs one forward pass and a handful of vector operations --
there is no optimization loop, which is the entire latency story compared to
the receding-horizon controller.

The PI accumulator is anti-windup clamped so the integral *contribution*
never exceeds ``windup_limit`` N*m per joint; the squat task's persistent
gravity-scale force errors would otherwise wind the sum without bound on
long runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dynamics import JointState
from .mlp import MlpNetwork, Scaler, forward


def _vec3(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = np.full(3, float(a))
    if a.shape != (3,):
        raise ValueError(f"expected scalar or 3-vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class PiState:
    """PI gains plus the running force-error sum; immutable value object."""

    kp: np.ndarray
    ki: np.ndarray
    integral: np.ndarray = None  # type: ignore[assignment]
    windup_limit: float = 50.0

    def __post_init__(self) -> None:
        kp = _vec3(self.kp)
        ki = _vec3(self.ki)
        if np.any(kp < 0.0) or np.any(ki < 0.0):
            raise ValueError("PI gains must be >= 0")
        if not self.windup_limit > 0.0:
            raise ValueError("windup_limit must be > 0")
        integral = np.zeros(3) if self.integral is None else _vec3(self.integral)
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "ki", ki)
        object.__setattr__(self, "integral", _clamp_integral(integral, ki, self.windup_limit))

    def contribution(self) -> np.ndarray:
        """Current integral term K_I * sum(e), always within the windup limit."""
        return self.ki * self.integral


def _clamp_integral(integral: np.ndarray, ki: np.ndarray, limit: float) -> np.ndarray:
    # Clamp the accumulator so |ki * integral| <= limit; joints with ki = 0
    # carry no integral contribution and need no clamp.
    out = integral.copy()
    active = ki > 0.0
    bound = np.divide(limit, ki, out=np.full(3, np.inf), where=active)
    return np.clip(out, -bound, bound)


def default_pi() -> PiState:
    return PiState(kp=0.2, ki=0.13)


def reset(pi: PiState) -> PiState:
    """Zero the accumulator, keep gains and limit."""
    return PiState(kp=pi.kp, ki=pi.ki, integral=np.zeros(3), windup_limit=pi.windup_limit)


def _evaluate(net, scaler, robot, f_int, f_intd, pi):
    """Shared core: network feedforward O, error e, post-update PiState."""
    f_int = _vec3(f_int)
    f_intd = _vec3(f_intd)
    x = np.concatenate([robot.q, robot.qd, f_int, f_intd])
    o = scaler.unscale_targets(forward(net, scaler.scale_inputs(x)))
    e = f_int - f_intd
    new_pi = PiState(kp=pi.kp, ki=pi.ki, integral=pi.integral + e, windup_limit=pi.windup_limit)
    return o, e, new_pi


def hybrid_torque(
    net: MlpNetwork,
    scaler: Scaler,
    robot: JointState,
    f_int,
    f_intd,
    pi: PiState,
) -> tuple[np.ndarray, PiState]:
    """One control instant of the hybrid law; returns (T_R, updated PiState).

    The error sum includes the current step (k = 1 of a constant unit error
    already carries one K_I increment).
    """
    o, e, new_pi = _evaluate(net, scaler, robot, f_int, f_intd, pi)
    t_r = o + (new_pi.kp * e + new_pi.contribution())
    return t_r, new_pi


class HybridController:
    """Stateful wrapper with the same step contract as the receding-horizon
    controller, so the harness swaps them freely.

    ``pi_gains=(0, 0)`` degenerates to the network-only controller.
    """

    def __init__(self, net: MlpNetwork, scaler: Scaler, pi: PiState | None = None):
        self.net = net
        self.scaler = scaler
        self._pi0 = pi if pi is not None else default_pi()
        self.reset()

    def reset(self) -> None:
        self.pi = reset(self._pi0)
        self.last_solve_ms = 0.0

    def step(self, robot: JointState, f_int, f_intd) -> tuple[np.ndarray, dict]:
        t0 = time.perf_counter()
        o, e, self.pi = _evaluate(self.net, self.scaler, robot, f_int, f_intd, self.pi)
        pi_term = self.pi.kp * e + self.pi.contribution()
        u = o + pi_term
        self.last_solve_ms = (time.perf_counter() - t0) * 1e3
        return u, {"o": o, "pi_term": pi_term, "solve_ms": self.last_solve_ms}

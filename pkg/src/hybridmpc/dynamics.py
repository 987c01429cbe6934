"""Planar three-link rigid-body dynamics (shank, thigh, upper body).

The kinematic chain is a sagittal-plane 3R linkage pinned at the ankle:
link 1 = shank (both legs lumped), link 2 = thigh (lumped), link 3 = the
upper body (head-arms-trunk).  Angle convention:

* ``q[0]`` (ankle) is measured from the horizontal ground plane,
* ``q[1]`` (knee) and ``q[2]`` (hip) are relative to the previous link,

so the absolute link inclinations are ``q1``, ``q1+q2`` and ``q1+q2+q3``
and the gravity terms carry ``cos(q1)``, ``cos(q1+q2)``, ``cos(q1+q2+q3)``.

All heavy-duty functions broadcast over leading axes: pass ``q`` of shape
``(3,)`` for a single configuration or ``(batch, 3)`` for many.  The same
code path serves both, which keeps single and batched evaluations
bit-for-bit consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import IntegrationDivergedError, JointLimitError

GRAVITY_ACCEL = 9.81

# Standard sagittal-plane anthropometry fractions (Winter's table), with the
# two legs lumped into single shank/thigh links.  Per segment:
#   (mass fraction of body mass, length fraction of height,
#    COM distance from the lower joint as a fraction of segment length,
#    radius of gyration about the COM as a fraction of segment length)
# Shank is measured from the ankle, thigh from the knee, HAT from the hip.
ANTHROPOMETRY_TABLE = (
    ("shank", 0.0930, 0.246, 0.567, 0.302),
    ("thigh", 0.2000, 0.245, 0.567, 0.323),
    ("upper_body", 0.6780, 0.288, 0.626, 0.496),
)

# Default exoskeleton hardware: link masses in kg ordered (shank, thigh,
# back frame); lengths follow the wearer, COM at mid-link, uniform-rod
# inertia m*L^2/12.
ROBOT_LINK_MASSES = (2.5, 3.5, 5.0)


@dataclass(frozen=True)
class LinkParams:
    """One rigid link: mass [kg], length [m], COM offset [m], inertia [kg m^2].

    ``com_distance`` is measured from the link's lower joint; ``inertia`` is
    about the link's own COM (not the joint).
    """

    mass: float
    length: float
    com_distance: float
    inertia: float

    def __post_init__(self) -> None:
        vals = (self.mass, self.length, self.com_distance, self.inertia)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite link parameter: {self}")
        if self.mass < 0.0 or self.inertia < 0.0:
            raise ValueError(f"mass and inertia must be >= 0: {self}")
        if self.length <= 0.0 or not 0.0 < self.com_distance <= self.length:
            raise ValueError(
                f"need length > 0 and 0 < com_distance <= length: {self}"
            )


@dataclass(frozen=True)
class BodyParams:
    """Parameters of one 3-link body (human or exoskeleton)."""

    links: tuple[LinkParams, LinkParams, LinkParams]
    gravity_accel: float = GRAVITY_ACCEL

    def __post_init__(self) -> None:
        if len(self.links) != 3:
            raise ValueError("exactly three links required (shank, thigh, upper body)")
        if not (math.isfinite(self.gravity_accel) and self.gravity_accel >= 0.0):
            raise ValueError("gravity_accel must be finite and >= 0")
        object.__setattr__(self, "links", tuple(self.links))

    @cached_property
    def _coef(self) -> tuple[float, ...]:
        """Closed-form dynamics coefficients (a1,a2,a3,b12,b13,b23,gc1,gc2,gc3)."""
        l1, l2, l3 = self.links
        m1, m2, m3 = l1.mass, l2.mass, l3.mass
        a1 = l1.inertia + m1 * l1.com_distance**2 + (m2 + m3) * l1.length**2
        a2 = l2.inertia + m2 * l2.com_distance**2 + m3 * l2.length**2
        a3 = l3.inertia + m3 * l3.com_distance**2
        b12 = (m2 * l2.com_distance + m3 * l2.length) * l1.length
        b13 = m3 * l3.com_distance * l1.length
        b23 = m3 * l3.com_distance * l2.length
        g = self.gravity_accel
        gc1 = (m1 * l1.com_distance + (m2 + m3) * l1.length) * g
        gc2 = (m2 * l2.com_distance + m3 * l2.length) * g
        gc3 = m3 * l3.com_distance * g
        return (a1, a2, a3, b12, b13, b23, gc1, gc2, gc3)


@dataclass(frozen=True)
class JointState:
    """Joint angles and velocities (ankle, knee, hip).

    Construction enforces the simulation validity envelope: entries must be
    finite and |q| <= pi.  Violations raise the matching instability error,
    which is how every integration loop in the package aborts.
    """

    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=np.float64).reshape(3)
        qd = np.asarray(self.qd, dtype=np.float64).reshape(3)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise IntegrationDivergedError(
                f"non-finite joint state: q={q.tolist()} qd={qd.tolist()}"
            )
        if np.any(np.abs(q) > np.pi):
            raise JointLimitError(
                f"joint angle outside |q| <= pi envelope: q={q.tolist()}"
            )


@dataclass(frozen=True)
class DisturbanceSpec:
    """Unmodeled torque d(t) = sum_i A_i sin(w_i t + phi_i), same on all joints."""

    terms: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "terms", tuple((float(a), float(w), float(p)) for a, w, p in self.terms)
        )

    def value(self, t: float) -> float:
        d = 0.0
        for amp, omega, phase in self.terms:
            d += amp * math.sin(omega * t + phase)
        return d


def default_disturbance() -> DisturbanceSpec:
    """The benchmark disturbance 5 sin(t) + 0.2 sin(1000 t + pi/2)."""
    return DisturbanceSpec(terms=((5.0, 1.0, 0.0), (0.2, 1000.0, math.pi / 2)))


def anthropometry(total_mass: float, height: float) -> BodyParams:
    """Build human BodyParams from total mass [kg] and height [m].

    Uses the fixed segment-fraction table above; deterministic and monotone
    in both arguments.
    """
    if not (total_mass > 0.0 and height > 0.0):
        raise ValueError("total_mass and height must be positive")
    links = []
    for _, m_frac, l_frac, com_frac, gyr_frac in ANTHROPOMETRY_TABLE:
        mass = m_frac * total_mass
        length = l_frac * height
        com = com_frac * length
        inertia = mass * (gyr_frac * length) ** 2
        links.append(LinkParams(mass=mass, length=length, com_distance=com, inertia=inertia))
    return BodyParams(links=(links[0], links[1], links[2]))


def robot_params(wearer: BodyParams, link_masses: Sequence[float] = ROBOT_LINK_MASSES) -> BodyParams:
    """Exoskeleton BodyParams: catalog masses, wearer-matched link lengths."""
    links = []
    for wl, mass in zip(wearer.links, link_masses):
        length = wl.length
        links.append(
            LinkParams(
                mass=float(mass),
                length=length,
                com_distance=0.5 * length,
                inertia=float(mass) * length**2 / 12.0,
            )
        )
    return BodyParams(links=(links[0], links[1], links[2]), gravity_accel=wearer.gravity_accel)


# ---------------------------------------------------------------------------
# Core array functions.  q, qd, tau have shape (..., 3); outputs broadcast.
# ---------------------------------------------------------------------------


def _trig(q: np.ndarray):
    q1 = q[..., 0]
    q2 = q[..., 1]
    q3 = q[..., 2]
    q23 = q2 + q3
    return q1, q2, q3, np.cos(q2), np.sin(q2), np.cos(q3), np.sin(q3), np.cos(q23), np.sin(q23)


def inertia_matrix(params: BodyParams, q: np.ndarray) -> np.ndarray:
    """Symmetric positive-definite inertia matrix M(q), shape (..., 3, 3)."""
    a1, a2, a3, b12, b13, b23, _, _, _ = params._coef
    q = np.asarray(q, dtype=np.float64)
    _, _, _, c2, _, c3, _, c23, _ = _trig(q)
    m11 = a1 + a2 + a3 + 2.0 * (b12 * c2 + b13 * c23 + b23 * c3)
    m12 = a2 + a3 + b12 * c2 + b13 * c23 + 2.0 * b23 * c3
    m13 = a3 + b13 * c23 + b23 * c3
    m22 = a2 + a3 + 2.0 * b23 * c3
    m23 = a3 + b23 * c3
    m33 = np.broadcast_to(np.float64(a3), m11.shape)
    row1 = np.stack((m11, m12, m13), axis=-1)
    row2 = np.stack((m12, m22, m23), axis=-1)
    row3 = np.stack((m13, m23, m33), axis=-1)
    return np.stack((row1, row2, row3), axis=-2)


def coriolis_matrix(params: BodyParams, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
    """Coriolis/centrifugal matrix C(q, qd) from Christoffel symbols.

    Built so that dM/dt - 2C is skew-symmetric.
    """
    _, _, _, b12, b13, b23, _, _, _ = params._coef
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    _, _, _, _, s2, _, s3, _, s23 = _trig(q)
    v1 = qd[..., 0]
    v2 = qd[..., 1]
    v3 = qd[..., 2]
    h2 = b12 * s2 + b13 * s23
    f3 = b13 * s23 + b23 * s3
    g3 = b23 * s3
    v123 = v1 + v2 + v3
    c11 = -h2 * v2 - f3 * v3
    c12 = -h2 * (v1 + v2) - f3 * v3
    c13 = -f3 * v123
    c21 = h2 * v1 - g3 * v3
    c22 = -g3 * v3
    c23 = -g3 * v123
    c31 = f3 * v1 + g3 * v2
    c32 = g3 * (v1 + v2)
    c33 = np.zeros_like(c11)
    row1 = np.stack((c11, c12, c13), axis=-1)
    row2 = np.stack((c21, c22, c23), axis=-1)
    row3 = np.stack((c31, c32, c33), axis=-1)
    return np.stack((row1, row2, row3), axis=-2)


def gravity_vector(params: BodyParams, q: np.ndarray) -> np.ndarray:
    """Gravity torque vector G(q) = dV/dq, shape (..., 3)."""
    _, _, _, _, _, _, gc1, gc2, gc3 = params._coef
    q = np.asarray(q, dtype=np.float64)
    q1 = q[..., 0]
    q12 = q1 + q[..., 1]
    q123 = q12 + q[..., 2]
    t1 = gc1 * np.cos(q1)
    t2 = gc2 * np.cos(q12)
    t3 = gc3 * np.cos(q123)
    return np.stack((t1 + t2 + t3, t2 + t3, t3), axis=-1)


def potential_energy(params: BodyParams, q: np.ndarray) -> np.ndarray:
    """Gravitational potential energy relative to all COMs at ankle height."""
    _, _, _, _, _, _, gc1, gc2, gc3 = params._coef
    q = np.asarray(q, dtype=np.float64)
    q1 = q[..., 0]
    q12 = q1 + q[..., 1]
    q123 = q12 + q[..., 2]
    return gc1 * np.sin(q1) + gc2 * np.sin(q12) + gc3 * np.sin(q123)


def kinetic_energy(params: BodyParams, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
    """Total kinetic energy 0.5 qd^T M(q) qd."""
    m = inertia_matrix(params, q)
    qd = np.asarray(qd, dtype=np.float64)
    return 0.5 * np.einsum("...i,...ij,...j->...", qd, m, qd)


def _accel(coef: tuple[float, ...], q: np.ndarray, qd: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """qdd = M(q)^-1 (tau - C qd - G); elementwise closed form, broadcastable.

    The 3x3 solve uses the explicit symmetric adjugate so that single and
    batched calls run the identical sequence of floating-point operations.
    """
    a1, a2, a3, b12, b13, b23, gc1, gc2, gc3 = coef
    q1 = q[..., 0]
    q2 = q[..., 1]
    q3 = q[..., 2]
    q23 = q2 + q3
    c2 = np.cos(q2)
    s2 = np.sin(q2)
    c3 = np.cos(q3)
    s3 = np.sin(q3)
    c23 = np.cos(q23)
    s23 = np.sin(q23)

    m11 = a1 + a2 + a3 + 2.0 * (b12 * c2 + b13 * c23 + b23 * c3)
    m12 = a2 + a3 + b12 * c2 + b13 * c23 + 2.0 * b23 * c3
    m13 = a3 + b13 * c23 + b23 * c3
    m22 = a2 + a3 + 2.0 * b23 * c3
    m23 = a3 + b23 * c3
    m33 = a3

    v1 = qd[..., 0]
    v2 = qd[..., 1]
    v3 = qd[..., 2]
    h2 = b12 * s2 + b13 * s23
    f3 = b13 * s23 + b23 * s3
    g3 = b23 * s3
    v123 = v1 + v2 + v3
    # C(q, qd) @ qd, written out
    cv1 = (-h2 * v2 - f3 * v3) * v1 + (-h2 * (v1 + v2) - f3 * v3) * v2 + (-f3 * v123) * v3
    cv2 = (h2 * v1 - g3 * v3) * v1 + (-g3 * v3) * v2 + (-g3 * v123) * v3
    cv3 = (f3 * v1 + g3 * v2) * v1 + (g3 * (v1 + v2)) * v2

    q12 = q1 + q2
    q123 = q12 + q3
    gt3 = gc3 * np.cos(q123)
    gt2 = gc2 * np.cos(q12)
    gt1 = gc1 * np.cos(q1)

    r1 = tau[..., 0] - cv1 - (gt1 + gt2 + gt3)
    r2 = tau[..., 1] - cv2 - (gt2 + gt3)
    r3 = tau[..., 2] - cv3 - gt3

    # Symmetric 3x3 solve by adjugate.
    a11 = m22 * m33 - m23 * m23
    a12 = m13 * m23 - m12 * m33
    a13 = m12 * m23 - m13 * m22
    a22 = m11 * m33 - m13 * m13
    a23 = m12 * m13 - m11 * m23
    a33 = m11 * m22 - m12 * m12
    det = m11 * a11 + m12 * a12 + m13 * a13
    x1 = (a11 * r1 + a12 * r2 + a13 * r3) / det
    x2 = (a12 * r1 + a22 * r2 + a23 * r3) / det
    x3 = (a13 * r1 + a23 * r2 + a33 * r3) / det
    out = np.empty(x1.shape + (3,), dtype=np.float64)
    out[..., 0] = x1
    out[..., 1] = x2
    out[..., 2] = x3
    return out


def forward_dynamics(
    params: BodyParams,
    state: JointState,
    total_torque: np.ndarray,
    disturbance_value: np.ndarray | float = 0.0,
) -> np.ndarray:
    """Joint accelerations qdd = M^-1 (u - C qd - G - d)."""
    tau = np.asarray(total_torque, dtype=np.float64) - np.asarray(disturbance_value, dtype=np.float64)
    return _accel(params._coef, state.q, state.qd, np.broadcast_to(tau, (3,)))


def _rk4_arrays(
    coef: tuple[float, ...],
    q: np.ndarray,
    qd: np.ndarray,
    tau: np.ndarray,
    dt: float,
    d1: float = 0.0,
    d2: float = 0.0,
    d4: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """One classic RK4 step of (q, qd) with zero-order-hold torque.

    ``d1``, ``d2``, ``d4`` are the disturbance values at the stage times
    t, t + dt/2 and t + dt (the two middle stages share t + dt/2).
    """
    u1 = tau - d1
    u2 = tau - d2
    u4 = tau - d4
    half = 0.5 * dt

    k1q = qd
    k1v = _accel(coef, q, qd, u1)
    k2q = qd + half * k1v
    k2v = _accel(coef, q + half * k1q, k2q, u2)
    k3q = qd + half * k2v
    k3v = _accel(coef, q + half * k2q, k3q, u2)
    k4q = qd + dt * k3v
    k4v = _accel(coef, q + dt * k3q, k4q, u4)

    sixth = dt / 6.0
    q_next = q + sixth * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    qd_next = qd + sixth * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return q_next, qd_next


def rk4_step(
    params: BodyParams,
    state: JointState,
    torque_hold: np.ndarray,
    disturbance: DisturbanceSpec,
    t: float,
    dt: float,
) -> JointState:
    """Advance one fixed RK4 step with the torque held constant over dt.

    The disturbance is evaluated at the RK4 stage times.  Raises
    IntegrationDivergedError on non-finite results and JointLimitError when
    the new angles leave |q| <= pi.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    tau = np.asarray(torque_hold, dtype=np.float64).reshape(3)
    d1 = disturbance.value(t)
    d2 = disturbance.value(t + 0.5 * dt)
    d4 = disturbance.value(t + dt)
    q_next, qd_next = _rk4_arrays(params._coef, state.q, state.qd, tau, dt, d1, d2, d4)
    return JointState(q=q_next, qd=qd_next)

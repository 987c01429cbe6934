"""Strap coupling, human model, and coupled integration tests."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

import oracles
from hybridmpc import coupling as cpl
from hybridmpc import dynamics as dyn
from hybridmpc import reference as ref

# End-to-end deterministic snapshot (50 coupled steps at 2 ms, matched start,
# robot under its own exact inverse dynamics); generated once, frozen here.
SNAPSHOT_HUMAN_Q = [1.4667244405134143, 0.04198712994556257, -0.03355486125209717]
SNAPSHOT_ROBOT_Q = [1.4667307786848887, 0.041980562702964436, -0.03356041303946772]
SNAPSHOT_HUMAN_QD = [-0.332703322146367, 0.8311864634775739, -0.6641935158675901]
SNAPSHOT_ROBOT_QD = [-0.3326083885997509, 0.8310890566122804, -0.6642357238767945]


@pytest.fixture(scope="module")
def strap():
    return cpl.default_strap()


@pytest.fixture(scope="module")
def ctrl():
    return cpl.default_human_controller()


def _state(q, qd):
    return dyn.JointState(q=np.array(q, dtype=float), qd=np.array(qd, dtype=float))


# ---------------------------------------------------------------------------
# interaction torque and force conversion
# ---------------------------------------------------------------------------


def test_interaction_torque_zero_at_matched_states(strap):
    s = _state([0.4, -0.5, 0.2], [1.0, -2.0, 0.5])
    assert_allclose(cpl.interaction_torque(strap, s, s), np.zeros(3), atol=0)


def test_interaction_torque_linear_law():
    strap = cpl.StrapModel(
        stiffness=np.array([100.0, 100.0, 100.0]),
        damping=np.zeros(3),
        torque_arm=np.array([0.25, 0.3, 0.3]),
    )
    robot = _state([0.5, 0.1, -0.3], [0.0, 0.0, 0.0])
    human = _state([0.51, 0.1, -0.32], [0.0, 0.0, 0.0])  # q_h - q_R = (0.01, 0, -0.02)
    assert_allclose(cpl.interaction_torque(strap, robot, human), [1.0, 0.0, -2.0], atol=1e-12)


def test_interaction_torque_damping_term(strap):
    robot = _state([0.5, 0.1, -0.3], [1.0, 0.0, -2.0])
    human = _state([0.5, 0.1, -0.3], [1.5, 0.0, -2.0])
    assert_allclose(cpl.interaction_torque(strap, robot, human), [10.0 * 0.5, 0.0, 0.0], atol=1e-12)


def test_strap_energy_bookkeeping(strap, rng):
    """Power absorbed from the two bodies = spring-energy rate + dissipation."""
    for _ in range(20):
        robot = _state(rng.uniform(-1, 1, 3), rng.uniform(-3, 3, 3))
        human = _state(rng.uniform(-1, 1, 3), rng.uniform(-3, 3, 3))
        t_int = cpl.interaction_torque(strap, robot, human)
        dq = human.q - robot.q
        dqd = human.qd - robot.qd
        # Torque on human is -t_int, torque on robot is +t_int.
        power_absorbed = float(t_int @ human.qd - t_int @ robot.qd)
        spring_rate = float((strap.stiffness * dq) @ dqd)
        dissipation = float((strap.damping * dqd) @ dqd)
        assert power_absorbed == pytest.approx(spring_rate + dissipation, abs=1e-6)
        assert dissipation >= 0.0


def test_torque_force_conversion_hand_values(strap):
    f = cpl.torque_to_force(strap, np.array([1.0, 3.0, -6.0]))
    assert_allclose(f, [4.0, 10.0, -20.0], atol=1e-12)
    assert_allclose(cpl.torque_to_force(strap, np.zeros(3)), np.zeros(3), atol=0)


def test_torque_force_roundtrip(strap, rng):
    for _ in range(30):
        t = rng.uniform(-80, 80, 3)
        assert_allclose(cpl.force_to_torque(strap, cpl.torque_to_force(strap, t)), t, atol=1e-12)
        f = rng.uniform(-300, 300, 3)
        assert_allclose(cpl.torque_to_force(strap, cpl.force_to_torque(strap, f)), f, atol=1e-12)


def test_strap_validation():
    with pytest.raises(ValueError):
        cpl.StrapModel(stiffness=np.array([-1.0, 0, 0]), damping=np.zeros(3), torque_arm=np.ones(3))
    with pytest.raises(ValueError):
        cpl.StrapModel(stiffness=np.zeros(3), damping=np.zeros(3), torque_arm=np.array([0.0, 0.3, 0.3]))


# ---------------------------------------------------------------------------
# human muscle model
# ---------------------------------------------------------------------------


def test_muscle_torque_is_pure_gravity_at_rest(body80, ctrl):
    q = np.array([0.9, -1.1, 0.7])
    state = _state(q, [0.0, 0.0, 0.0])
    rp = (q.copy(), np.zeros(3), np.zeros(3))
    t_h = cpl.human_muscle_torque(body80, state, rp, np.zeros(3), ctrl)
    assert_allclose(t_h, dyn.gravity_vector(body80, q), atol=1e-12)


def test_muscle_torque_kp_linearity(body80):
    state = _state([0.8, -0.9, 0.5], [0.2, -0.1, 0.3])
    rp = (np.array([0.9, -0.8, 0.45]), state.qd.copy(), np.zeros(3))  # ed = 0
    base = cpl.HumanController(kp=np.full(3, 200.0), kd=np.full(3, 40.0))
    double = cpl.HumanController(kp=np.full(3, 400.0), kd=np.full(3, 40.0))
    t_int = np.array([2.0, -1.0, 0.5])
    m = dyn.inertia_matrix(body80, state.q)
    c = dyn.coriolis_matrix(body80, state.q, state.qd)
    feedfwd = c @ state.qd + dyn.gravity_vector(body80, state.q) + t_int
    prop_base = cpl.human_muscle_torque(body80, state, rp, t_int, base) - feedfwd
    prop_double = cpl.human_muscle_torque(body80, state, rp, t_int, double) - feedfwd
    assert_allclose(prop_double, 2.0 * prop_base, rtol=1e-12)
    # and the proportional term is M @ (kp * e)
    assert_allclose(prop_base, m @ (base.kp * (rp[0] - state.q)), rtol=1e-12)


def test_muscle_torque_compensation_flag(body80, ctrl):
    state = _state([0.8, -0.9, 0.5], [0.2, -0.1, 0.3])
    rp = (np.array([0.85, -0.8, 0.45]), np.zeros(3), np.zeros(3))
    t_int = np.array([4.0, -2.0, 1.0])
    no_comp = cpl.HumanController(kp=ctrl.kp, kd=ctrl.kd, compensate_interaction=False)
    with_comp = cpl.human_muscle_torque(body80, state, rp, t_int, ctrl)
    without = cpl.human_muscle_torque(body80, state, rp, t_int, no_comp)
    assert_allclose(with_comp - without, t_int, atol=1e-12)


def test_human_error_follows_closed_form_ode(body80, ctrl):
    """Exact-model closed loop: e'' + kd e' + kp e = 0 (critically damped at
    kp=400, kd=40 => e(t) = e0 (1 + 20 t) exp(-20 t)).  dt small because the
    zero-order torque hold adds O(dt) deviation from the continuous loop."""
    q_ref = np.array([1.0, -0.5, 0.4])
    rp = (q_ref, np.zeros(3), np.zeros(3))
    state = _state(q_ref - np.array([0.1, 0.0, 0.0]), np.zeros(3))
    dt = 1e-4
    worst = 0.0
    for k in range(3000):
        state, _ = cpl.human_alone_step(body80, state, rp, ctrl, k * dt, dt)
        t = (k + 1) * dt
        e_closed_form = 0.1 * (1.0 + 20.0 * t) * np.exp(-20.0 * t)
        worst = max(worst, abs((q_ref[0] - state.q[0]) - e_closed_form))
        assert_allclose(state.q[1:], q_ref[1:], rtol=0, atol=5e-6)  # decoupled joints stay put
    assert worst < 1e-4


def test_human_tracks_squat_reference_tightly(body80, ctrl):
    """Exact model, no robot: RMS tracking error < 2e-4 rad over one cycle.

    The residual is pure zero-order-hold error (the feedback linearization is
    exact in continuous time), so its size scales with dt and the profile's
    torque rates; the bound is tuned to the default profile at dt = 0.5 ms.
    """
    profile = ref.default_profile()
    dt = 5e-4
    q0, qd0, _ = ref.squat_reference(profile, 0.0)
    state = dyn.JointState(q=q0, qd=qd0)
    sq_sum = np.zeros(3)
    n = round(profile.cycle_duration / dt)
    for k in range(n):
        rp = ref.squat_reference(profile, k * dt)
        state, _ = cpl.human_alone_step(body80, state, rp, ctrl, k * dt, dt)
        err = ref.squat_reference(profile, (k + 1) * dt)[0] - state.q
        sq_sum += err**2
    rms = np.sqrt(sq_sum / n)
    assert np.all(rms < 2e-4), f"tracking RMS {rms}"


# ---------------------------------------------------------------------------
# coupled stepping
# ---------------------------------------------------------------------------


def test_coupled_step_sign_audit(body80, robot80, strap, ctrl):
    """The torque added to the human is exactly minus what the robot gains."""
    profile = ref.default_profile()
    state = cpl.CoupledState(
        human=_state([1.45, -0.1, 0.05], [0.3, -0.5, 0.2]),
        robot=_state([1.44, -0.08, 0.06], [0.2, -0.4, 0.1]),
        t=0.0,
    )
    t_int = cpl.interaction_torque(strap, state.robot, state.human)
    rp = ref.squat_reference(profile, 0.0)
    t_r = np.array([5.0, 1.0, -2.0])
    t_h = cpl.human_muscle_torque(body80, state.human, rp, t_int, ctrl)
    # Reproduce the plant inputs used by coupled_step and check antisymmetry.
    u_robot = t_r + t_int
    u_human = t_h - t_int
    assert_allclose((u_robot - t_r) + (u_human - t_h), np.zeros(3), atol=1e-12)
    nxt = cpl.coupled_step(body80, robot80, state, t_r, rp, strap, ctrl, dyn.DisturbanceSpec(), 0.002)
    expected_robot = dyn.rk4_step(robot80, state.robot, u_robot, dyn.DisturbanceSpec(), 0.0, 0.002)
    expected_human = dyn.rk4_step(body80, state.human, u_human, dyn.DisturbanceSpec(), 0.0, 0.002)
    assert np.array_equal(nxt.robot.q, expected_robot.q)
    assert np.array_equal(nxt.human.q, expected_human.q)
    assert nxt.t == 0.002


def test_zero_strap_factorizes_bitwise(body80, robot80, ctrl):
    """With k = b = 0 the human trajectory equals the human-alone simulation
    bit for bit, robot presence notwithstanding."""
    profile = ref.default_profile()
    strap0 = cpl.StrapModel(stiffness=np.zeros(3), damping=np.zeros(3), torque_arm=np.array([0.25, 0.3, 0.3]))
    q0, qd0, _ = ref.squat_reference(profile, 0.0)
    state = cpl.CoupledState(
        human=dyn.JointState(q=q0, qd=qd0),
        robot=dyn.JointState(q=q0 + 0.01, qd=qd0),
        t=0.0,
    )
    alone = state.human
    dist = dyn.DisturbanceSpec()
    for k in range(100):
        rp = ref.squat_reference(profile, state.t)
        t_r = dyn.gravity_vector(robot80, state.robot.q)
        state = cpl.coupled_step(body80, robot80, state, t_r, rp, strap0, ctrl, dist, 0.002)
        alone, _ = cpl.human_alone_step(body80, alone, rp, ctrl, k * 0.002, 0.002)
        assert np.array_equal(state.human.q, alone.q)
        assert np.array_equal(state.human.qd, alone.qd)


def test_coupled_regression_snapshot(body80, robot80, strap, ctrl):
    """Matched start + robot inverse dynamics => both bodies ride the squat
    reference; endpoint frozen from the original oracle-verified run."""
    profile = ref.default_profile()
    q0, qd0, _ = ref.squat_reference(profile, 0.0)
    state = cpl.CoupledState(human=dyn.JointState(q=q0, qd=qd0), robot=dyn.JointState(q=q0, qd=qd0), t=0.0)
    for _ in range(50):
        rp = ref.squat_reference(profile, state.t)
        e = rp[0] - state.robot.q
        ed = rp[1] - state.robot.qd
        v = rp[2] + ctrl.kd * ed + ctrl.kp * e
        m = dyn.inertia_matrix(robot80, state.robot.q)
        c = dyn.coriolis_matrix(robot80, state.robot.q, state.robot.qd)
        t_r = m @ v + c @ state.robot.qd + dyn.gravity_vector(robot80, state.robot.q)
        state = cpl.coupled_step(body80, robot80, state, t_r, rp, strap, ctrl, dyn.DisturbanceSpec(), 0.002)
    assert_allclose(state.human.q, SNAPSHOT_HUMAN_Q, rtol=1e-10)
    assert_allclose(state.robot.q, SNAPSHOT_ROBOT_Q, rtol=1e-10)
    assert_allclose(state.human.qd, SNAPSHOT_HUMAN_QD, rtol=1e-9)
    assert_allclose(state.robot.qd, SNAPSHOT_ROBOT_QD, rtol=1e-9)
    q_ref_end = ref.squat_reference(profile, state.t)[0]
    assert np.abs(state.human.q - q_ref_end).max() < 1e-3
    assert np.abs(state.robot.q - q_ref_end).max() < 1e-3


def test_coupled_convergence_order(body80, robot80, strap, ctrl):
    """Substep refinement of one frozen-torque window shows RK4's order.

    Torques are held over the whole window by design (zero-order hold), so
    the study refines the integrator under that hold; the reference is a
    high-accuracy integration of the same frozen-torque plants."""
    profile = ref.default_profile()
    t0 = 0.35
    q0, qd0, _ = ref.squat_reference(profile, t0)
    state = cpl.CoupledState(
        human=dyn.JointState(q=q0, qd=qd0),
        robot=dyn.JointState(q=q0 + np.array([0.004, -0.006, 0.005]), qd=qd0 * 0.97),
        t=t0,
    )
    rp = ref.squat_reference(profile, t0)
    t_r = dyn.gravity_vector(robot80, state.robot.q)
    dist = dyn.DisturbanceSpec(terms=((5.0, 1.0, 0.0),))
    t_int = cpl.interaction_torque(strap, state.robot, state.human)
    t_h = cpl.human_muscle_torque(body80, state.human, rp, t_int, ctrl)
    window = 0.02
    ref_robot = oracles.reference_trajectory(
        robot80, state.robot.q, state.robot.qd, t_r + t_int, (t0, t0 + window), disturbance=dist.value
    ).sol(t0 + window)
    ref_human = oracles.reference_trajectory(
        body80, state.human.q, state.human.qd, t_h - t_int, (t0, t0 + window)
    ).sol(t0 + window)
    errs = []
    subs = (1, 2, 4, 8)
    for n_sub in subs:
        out = cpl.coupled_step(body80, robot80, state, t_r, rp, strap, ctrl, dist, window, substeps=n_sub)
        err = max(
            np.abs(np.concatenate([out.robot.q, out.robot.qd]) - ref_robot).max(),
            np.abs(np.concatenate([out.human.q, out.human.qd]) - ref_human).max(),
        )
        errs.append(err)
    slope = np.polyfit(np.log([window / n for n in subs]), np.log(errs), 1)[0]
    assert slope >= 3.8, f"observed order {slope:.2f}, errors {errs}"


def test_coupled_step_validation(body80, robot80, strap, ctrl):
    profile = ref.default_profile()
    state = cpl.CoupledState(human=_state([1.4, 0, 0], [0, 0, 0]), robot=_state([1.4, 0, 0], [0, 0, 0]))
    rp = ref.squat_reference(profile, 0.0)
    with pytest.raises(ValueError):
        cpl.coupled_step(body80, robot80, state, np.zeros(3), rp, strap, ctrl, dyn.DisturbanceSpec(), 0.0)
    with pytest.raises(ValueError):
        cpl.coupled_step(body80, robot80, state, np.zeros(3), rp, strap, ctrl, dyn.DisturbanceSpec(), 0.002, substeps=0)
    with pytest.raises(ValueError):
        cpl.CoupledState(human=state.human, robot=state.robot, t=-1.0)


# ---------------------------------------------------------------------------
# preload equilibrium
# ---------------------------------------------------------------------------


def test_preload_equilibrium_balances_gravity(body80, strap):
    profile = ref.default_profile()
    q_h = ref.squat_reference(profile, 0.0)[0]
    q_r = cpl.preload_equilibrium(body80, q_h, strap)
    resid = strap.stiffness * (q_r - q_h) - dyn.gravity_vector(body80, q_r)
    assert np.abs(resid).max() < 1e-10
    # static check: with both bodies at rest the strap torque carries the
    # wearer's gravity load exactly
    t_int = cpl.interaction_torque(strap, _state(q_r, [0, 0, 0]), _state(q_h, [0, 0, 0]))
    assert_allclose(t_int, -dyn.gravity_vector(body80, q_r), atol=1e-9)


def test_preload_equilibrium_requires_stiffness(body80):
    soft = cpl.StrapModel(stiffness=np.zeros(3), damping=np.zeros(3), torque_arm=np.array([0.25, 0.3, 0.3]))
    with pytest.raises(ValueError):
        cpl.preload_equilibrium(body80, np.array([1.4, 0.0, 0.0]), soft)

"""Closed-loop experiment engine: run, measure, export, compare, bench.

One control step is always: measure the strap load, build the gravity-support
force target, ask the selected controller for an actuator torque, then advance
the coupled plants one period.  Controllers are interchangeable behind the
same ``step(robot_state, f_int, f_intd) -> (torque, info)`` contract, so the
loop body never branches on which one is installed.

``controller = "none"`` simulates the wearer without the exoskeleton (the
no-robot baseline of the torque-reduction experiments): straps detached, so
interaction and actuator columns are zero and the robot kinematic columns
mirror the human's.  This is the honest baseline — a powered-off but attached
shell would still load the wearer through the straps.

Determinism: a run is a pure function of its ScenarioConfig (plus the loaded
network for learned controllers), and CSV export formats floats by repr, so
repeated runs of one config produce byte-identical files.  Controller wall
time is therefore kept out of the CSV; it lives in the metrics report.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace

import numpy as np

from . import coupling as cpl
from . import dynamics as dyn
from . import reference as ref
from .errors import ConfigError, SimulationUnstableError
from .hybrid import HybridController, PiState
from .mlp import MlpNetwork, Scaler, load_model
from .nmpc import NmpcController
from .scenario import ScenarioConfig

CSV_COLUMNS = (
    ("t",)
    + tuple(f"q_r_{j}" for j in ("ankle", "knee", "hip"))
    + tuple(f"qd_r_{j}" for j in ("ankle", "knee", "hip"))
    + tuple(f"q_h_{j}" for j in ("ankle", "knee", "hip"))
    + tuple(f"qd_h_{j}" for j in ("ankle", "knee", "hip"))
    + tuple(f"t_r_{j}" for j in ("ankle", "knee", "hip"))
    + tuple(f"t_int_{j}" for j in ("ankle", "knee", "hip"))
    + tuple(f"t_intd_{j}" for j in ("ankle", "knee", "hip"))
    + tuple(f"t_h_{j}" for j in ("ankle", "knee", "hip"))
    + tuple(f"o_{j}" for j in ("ankle", "knee", "hip"))
    + tuple(f"pi_{j}" for j in ("ankle", "knee", "hip"))
)

_ZERO3 = np.zeros(3)


@dataclass
class SimulationResult:
    """Fixed-schema time series of one run, possibly truncated by instability."""

    data: np.ndarray  # (steps, len(CSV_COLUMNS))
    stable: bool
    error: str | None
    latencies_ms: np.ndarray  # per-step controller wall time; empty for "none"
    config: ScenarioConfig

    def column(self, name: str) -> np.ndarray:
        return self.data[:, CSV_COLUMNS.index(name)]

    def block(self, prefix: str) -> np.ndarray:
        """(steps, 3) slice of the ankle/knee/hip triple named by prefix."""
        i = CSV_COLUMNS.index(f"{prefix}_ankle")
        return self.data[:, i : i + 3]


@dataclass(frozen=True)
class MetricsReport:
    """Computed outcomes of one run, analysis window = everything after the
    first squat cycle (the preload/settling transient is never scored)."""

    controller: str
    stable: bool
    steps: int
    duration: float
    tracking_rms: tuple | None
    human_torque_rms: tuple | None
    baseline_human_torque_rms: tuple | None
    torque_reduction_pct: tuple | None
    latency_ms_mean: float | None
    latency_ms_median: float | None
    latency_ms_p99: float | None
    human_abs_power_mean_w: tuple | None
    robot_abs_power_mean_w: tuple | None

    def to_dict(self) -> dict:
        return {
            "controller": self.controller,
            "stable": self.stable,
            "steps": self.steps,
            "duration_s": self.duration,
            "tracking_rms_nm": _as_opt_list(self.tracking_rms),
            "human_torque_rms_nm": _as_opt_list(self.human_torque_rms),
            "baseline_human_torque_rms_nm": _as_opt_list(self.baseline_human_torque_rms),
            "torque_reduction_pct": _as_opt_list(self.torque_reduction_pct),
            "latency_ms": {
                "mean": self.latency_ms_mean,
                "median": self.latency_ms_median,
                "p99": self.latency_ms_p99,
            },
            "human_abs_power_mean_w": _as_opt_list(self.human_abs_power_mean_w),
            "robot_abs_power_mean_w": _as_opt_list(self.robot_abs_power_mean_w),
        }


def _as_opt_list(v):
    return None if v is None else [float(x) for x in v]


def rms(series) -> float:
    """Root mean square of a 1-D window; empty windows are a caller bug."""
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("RMS of an empty window is undefined")
    return float(np.sqrt(np.mean(x * x)))


def reduction(with_robot: float, without_robot: float) -> float:
    """Percent reduction 100 * (1 - with/without)."""
    if without_robot == 0.0:
        raise ValueError("reduction needs a nonzero baseline")
    return 100.0 * (1.0 - with_robot / without_robot)


def make_controller(config: ScenarioConfig, net: MlpNetwork | None = None,
                    scaler: Scaler | None = None):
    """Instantiate the controller named by the config; fresh state every call."""
    tag = config.controller
    if tag == "nmpc":
        return NmpcController(
            config.robot(),
            horizon=config.horizon,
            weights=config.weights,
            admittance=config.admittance,
            strap=config.strap,
        )
    if tag in ("dnn-only", "hybrid"):
        if net is None or scaler is None:
            raise ConfigError(f"controller {tag!r} needs a trained model "
                              "(set model in [controller] or pass net/scaler)")
        if tag == "hybrid":
            pi = PiState(kp=config.pi_kp, ki=config.pi_ki)
        else:
            pi = PiState(kp=0.0, ki=0.0)
        return HybridController(net, scaler, pi=pi)
    raise ConfigError(f"controller {tag!r} does not produce torque (use run_simulation)")


def load_model_for(config: ScenarioConfig):
    """(net, scaler) from the config's model path, or (None, None) if unset."""
    if config.model_path is None:
        return None, None
    try:
        return load_model(config.model_path)
    except OSError as exc:
        raise ConfigError(f"cannot read model {config.model_path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad model file {config.model_path}: {exc}") from exc


def _initial_state(config: ScenarioConfig, human: dyn.BodyParams) -> cpl.CoupledState:
    q0, qd0, _ = ref.squat_reference(config.profile, 0.0)
    q_r0 = cpl.preload_equilibrium(human, q0, config.strap)
    if config.jitter > 0.0:
        rng = np.random.default_rng(config.seed)
        q_r0 = q_r0 + rng.uniform(-config.jitter, config.jitter, 3)
    return cpl.CoupledState(
        human=dyn.JointState(q=q0, qd=qd0),
        robot=dyn.JointState(q=q_r0, qd=qd0),
        t=0.0,
    )


def _run_human_alone(config: ScenarioConfig) -> SimulationResult:
    human = config.human_params()
    hctrl = cpl.default_human_controller()
    disturbance = config.disturbance if config.disturb_human else dyn.DisturbanceSpec()
    n_steps = int(round(config.duration / config.control_dt))
    q0, qd0, _ = ref.squat_reference(config.profile, 0.0)
    state = dyn.JointState(q=q0, qd=qd0)
    t = 0.0
    data = np.zeros((n_steps, len(CSV_COLUMNS)))
    stable = True
    error = None
    done = 0
    try:
        for k in range(n_steps):
            rp = ref.squat_reference(config.profile, t)
            next_state, t_h = cpl.human_alone_step(
                human, state, rp, hctrl, t, config.control_dt, disturbance=disturbance
            )
            row = data[k]
            row[0] = t
            row[1:4] = state.q
            row[4:7] = state.qd
            row[7:10] = state.q
            row[10:13] = state.qd
            row[22:25] = t_h
            state = next_state
            t = t + config.control_dt
            done = k + 1
    except SimulationUnstableError as exc:
        stable = False
        error = f"{type(exc).__name__}: {exc}"
    return SimulationResult(
        data=data[:done], stable=stable, error=error,
        latencies_ms=np.empty(0), config=config,
    )


def run_simulation(config: ScenarioConfig, net: MlpNetwork | None = None,
                   scaler: Scaler | None = None) -> tuple[SimulationResult, MetricsReport]:
    """Simulate one scenario and score it.

    For learned controllers pass (net, scaler) or set ``model`` in the config.
    Instability never raises here: the result carries ``stable = False``, the
    truncated series, and the triggering error instead, so robustness
    experiments can grade failures.
    """
    if config.controller == "none":
        result = _run_human_alone(config)
        return result, _metrics(result, baseline=result)

    if net is None or scaler is None:
        net, scaler = load_model_for(config)
    controller = make_controller(config, net, scaler)
    human = config.human_params()
    robot_body = config.robot()
    hctrl = cpl.default_human_controller()
    n_steps = int(round(config.duration / config.control_dt))
    state = _initial_state(config, human)
    data = np.zeros((n_steps, len(CSV_COLUMNS)))
    lat = np.zeros(n_steps)
    stable = True
    error = None
    done = 0
    try:
        for k in range(n_steps):
            t_int = cpl.interaction_torque(config.strap, state.robot, state.human)
            f_int = cpl.torque_to_force(config.strap, t_int)
            intd = ref.desired_interaction_for_strap(human, state.robot.q, config.strap)
            u, info = controller.step(state.robot, f_int, intd.force)
            rp = ref.squat_reference(config.profile, state.t)
            t_h = cpl.human_muscle_torque(human, state.human, rp, t_int, hctrl)
            row = data[k]
            row[0] = state.t
            row[1:4] = state.robot.q
            row[4:7] = state.robot.qd
            row[7:10] = state.human.q
            row[10:13] = state.human.qd
            row[13:16] = u
            row[16:19] = t_int
            row[19:22] = intd.torque
            row[22:25] = t_h
            row[25:28] = info.get("o", _ZERO3)
            row[28:31] = info.get("pi_term", _ZERO3)
            lat[k] = info.get("solve_ms", 0.0)
            state = cpl.coupled_step(
                human, robot_body, state, u, rp, config.strap, hctrl,
                config.disturbance, config.control_dt,
                disturb_human=config.disturb_human,
            )
            done = k + 1
    except SimulationUnstableError as exc:
        stable = False
        error = f"{type(exc).__name__}: {exc}"
    result = SimulationResult(
        data=data[:done], stable=stable, error=error,
        latencies_ms=lat[:done], config=config,
    )
    baseline = _run_human_alone(replace(config, controller="none"))
    return result, _metrics(result, baseline=baseline)


def _window(result: SimulationResult) -> np.ndarray:
    mask = result.data[:, 0] >= result.config.profile.cycle_duration
    return result.data[mask]


def _metrics(result: SimulationResult, baseline: SimulationResult) -> MetricsReport:
    cfg = result.config
    window = _window(result)
    bwindow = _window(baseline)
    none_run = cfg.controller == "none"

    tracking = None
    human_rms = None
    base_rms = None
    red = None
    h_power = None
    r_power = None
    if window.shape[0] > 0:
        t_h = window[:, 22:25]
        qd_h = window[:, 10:13]
        human_rms = tuple(rms(t_h[:, j]) for j in range(3))
        h_power = tuple(float(np.mean(np.abs(t_h[:, j] * qd_h[:, j]))) for j in range(3))
        if not none_run:
            err = window[:, 16:19] - window[:, 19:22]
            tracking = tuple(rms(err[:, j]) for j in range(3))
            t_r = window[:, 13:16]
            qd_r = window[:, 4:7]
            r_power = tuple(float(np.mean(np.abs(t_r[:, j] * qd_r[:, j]))) for j in range(3))
        if bwindow.shape[0] > 0:
            base_rms = tuple(rms(bwindow[:, 22 + j]) for j in range(3))
            red = tuple(reduction(human_rms[j], base_rms[j]) for j in range(3))

    if result.latencies_ms.size > 0:
        l_mean = float(np.mean(result.latencies_ms))
        l_median = float(np.median(result.latencies_ms))
        l_p99 = float(np.percentile(result.latencies_ms, 99))
    else:
        l_mean = l_median = l_p99 = None

    return MetricsReport(
        controller=cfg.controller,
        stable=result.stable,
        steps=result.data.shape[0],
        duration=cfg.duration,
        tracking_rms=tracking,
        human_torque_rms=human_rms,
        baseline_human_torque_rms=base_rms,
        torque_reduction_pct=red,
        latency_ms_mean=l_mean,
        latency_ms_median=l_median,
        latency_ms_p99=l_p99,
        human_abs_power_mean_w=h_power,
        robot_abs_power_mean_w=r_power,
    )


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_csv(path, result: SimulationResult) -> None:
    """Fixed-schema CSV; floats via repr so reruns are byte-identical."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in result.data:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def write_metrics_json(path, report: MetricsReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# multi-controller comparison
# ---------------------------------------------------------------------------


def compare_controllers(base_config: ScenarioConfig, controllers,
                        net: MlpNetwork | None = None,
                        scaler: Scaler | None = None) -> dict:
    """Run the identical scenario once per controller tag and tabulate.

    A failing run (bad tag, missing model, ...) fills its row's ``error``
    field without aborting the rest of the table.  Speedups are reported
    against the slowest mean latency in the table (the optimizer, whenever
    it participates).
    """
    controllers = list(controllers)
    if len(controllers) < 2:
        raise ConfigError("compare needs at least two controllers")
    rows = []
    for tag in controllers:
        try:
            cfg = replace(base_config, controller=tag)
            _, report = run_simulation(cfg, net=net, scaler=scaler)
            rows.append({"controller": tag, "report": report, "error": None})
        except (ConfigError, ValueError) as exc:
            rows.append({"controller": tag, "report": None, "error": str(exc)})

    means = [r["report"].latency_ms_mean for r in rows
             if r["report"] is not None and r["report"].latency_ms_mean is not None]
    slowest = max(means) if means else None
    speedups = {}
    for r in rows:
        rep = r["report"]
        if rep is not None and rep.latency_ms_mean and slowest is not None:
            speedups[r["controller"]] = slowest / rep.latency_ms_mean
    reductions = {
        r["controller"]: list(r["report"].torque_reduction_pct)
        for r in rows
        if r["report"] is not None and r["report"].torque_reduction_pct is not None
    }
    return {"rows": rows, "torque_reduction_pct": reductions, "speedup": speedups}


# ---------------------------------------------------------------------------
# latency benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyStats:
    controller: str
    iterations: int
    mean_ms: float
    median_ms: float
    p99_ms: float

    def to_dict(self) -> dict:
        return {
            "controller": self.controller,
            "iterations": self.iterations,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p99_ms": self.p99_ms,
        }


def record_stream(config: ScenarioConfig, n_steps: int,
                  net: MlpNetwork | None = None, scaler: Scaler | None = None):
    """First n_steps of (robot_state, f_int, f_intd) under the config's loop.

    This is the pinned measurement stream for benchmarking: every controller
    is timed against identical inputs instead of inputs its own behavior
    produced, so latency comparisons are apples to apples.
    """
    if config.controller == "none":
        raise ConfigError("cannot record a controller input stream without a robot")
    if net is None or scaler is None:
        net, scaler = load_model_for(config)
    controller = make_controller(config, net, scaler)
    human = config.human_params()
    robot_body = config.robot()
    hctrl = cpl.default_human_controller()
    total = int(round(config.duration / config.control_dt))
    if n_steps > total:
        raise ConfigError(
            f"stream of {n_steps} steps needs duration >= {n_steps * config.control_dt} s"
        )
    state = _initial_state(config, human)
    stream = []
    for _ in range(n_steps):
        t_int = cpl.interaction_torque(config.strap, state.robot, state.human)
        f_int = cpl.torque_to_force(config.strap, t_int)
        intd = ref.desired_interaction_for_strap(human, state.robot.q, config.strap)
        stream.append((state.robot, f_int, intd.force))
        u, _ = controller.step(state.robot, f_int, intd.force)
        rp = ref.squat_reference(config.profile, state.t)
        state = cpl.coupled_step(
            human, robot_body, state, u, rp, config.strap, hctrl,
            config.disturbance, config.control_dt,
            disturb_human=config.disturb_human,
        )
    return stream


def bench_on_stream(controller, tag: str, stream, warmup: int, iterations: int) -> LatencyStats:
    """Time ``controller.step`` over a recorded stream, replay order preserved."""
    if iterations < 100:
        raise ConfigError("bench needs iterations >= 100 for a stable estimate")
    if warmup < 0:
        raise ConfigError("warmup must be >= 0")
    if warmup + iterations > len(stream):
        raise ConfigError(
            f"stream too short: {len(stream)} steps < warmup {warmup} + iterations {iterations}"
        )
    controller.reset()
    for robot, f_int, f_intd in stream[:warmup]:
        controller.step(robot, f_int, f_intd)
    samples = np.empty(iterations)
    for i, (robot, f_int, f_intd) in enumerate(stream[warmup : warmup + iterations]):
        t0 = time.perf_counter()
        controller.step(robot, f_int, f_intd)
        samples[i] = (time.perf_counter() - t0) * 1e3
    return LatencyStats(
        controller=tag,
        iterations=iterations,
        mean_ms=float(np.mean(samples)),
        median_ms=float(np.median(samples)),
        p99_ms=float(np.percentile(samples, 99)),
    )


def bench_controller(config: ScenarioConfig, warmup: int = 50, iterations: int = 200,
                     controllers=None, net: MlpNetwork | None = None,
                     scaler: Scaler | None = None) -> dict:
    """Per-step latency of one or more controllers on one pinned stream.

    The stream is recorded under the config's own controller, then each
    requested controller is timed on it with a fresh instance.  Plant
    integration is never inside the timed region.
    """
    if controllers is None:
        controllers = [config.controller]
    if net is None or scaler is None:
        net, scaler = load_model_for(config)
    stream = record_stream(config, warmup + iterations, net=net, scaler=scaler)
    stats = {}
    for tag in controllers:
        ctrl = make_controller(replace(config, controller=tag), net, scaler)
        stats[tag] = bench_on_stream(ctrl, tag, stream, warmup, iterations)
    return stats

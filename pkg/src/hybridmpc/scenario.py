"""Experiment configuration: a single TOML file describing one scenario.

The schema mirrors the benchmark protocol: an 80 kg / 1.9 m wearer squatting
on a 1.75 s cycle at a 2 ms control period with the two-tone torque
disturbance on the robot, ten cycles long.  ``default_config_toml`` emits
exactly that file with comments; ``load_config`` parses and validates one.
Unknown keys anywhere are configuration errors — silently ignoring a
misspelled gain would corrupt an experiment in the quietest possible way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib

import numpy as np

from .coupling import StrapModel, default_strap
from .datasets import DatasetSpec
from .dynamics import BodyParams, DisturbanceSpec, LinkParams, anthropometry, robot_params
from .errors import ConfigError
from .nmpc import CostWeights, HorizonConfig
from .reference import AdmittanceGains, SquatProfile, default_admittance, default_profile

CONTROLLER_TAGS = ("nmpc", "dnn-only", "hybrid", "none")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one closed-loop run depends on. Immutable; fully validated."""

    mass: float = 80.0
    height: float = 1.9
    profile: SquatProfile = None  # type: ignore[assignment]
    duration: float = 17.5
    control_dt: float = 0.002
    disturbance: DisturbanceSpec = None  # type: ignore[assignment]
    disturb_human: bool = False
    controller: str = "hybrid"
    model_path: str | None = None
    admittance: AdmittanceGains = None  # type: ignore[assignment]
    pi_kp: float = 0.2
    pi_ki: float = 0.13
    horizon: HorizonConfig = None  # type: ignore[assignment]
    weights: CostWeights = None  # type: ignore[assignment]
    strap: StrapModel = None  # type: ignore[assignment]
    robot_override: BodyParams | None = None
    seed: int = 0
    jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.profile is None:
            object.__setattr__(self, "profile", default_profile())
        if self.disturbance is None:
            object.__setattr__(self, "disturbance", _default_disturbance())
        if self.admittance is None:
            object.__setattr__(self, "admittance", default_admittance())
        if self.horizon is None:
            object.__setattr__(self, "horizon", HorizonConfig(dt=self.control_dt))
        if self.weights is None:
            object.__setattr__(self, "weights", CostWeights.default(self.horizon))
        if self.strap is None:
            object.__setattr__(self, "strap", default_strap())
        if self.controller not in CONTROLLER_TAGS:
            raise ConfigError(
                f"unknown controller {self.controller!r}; expected one of {CONTROLLER_TAGS}"
            )
        if not (math.isfinite(self.mass) and self.mass > 0.0):
            raise ConfigError("subject mass must be positive")
        if not (math.isfinite(self.height) and self.height > 0.0):
            raise ConfigError("subject height must be positive")
        if not (math.isfinite(self.duration) and self.duration > 0.0):
            raise ConfigError("duration must be positive")
        if not (math.isfinite(self.control_dt) and self.control_dt > 0.0):
            raise ConfigError("control_dt must be positive")
        if self.horizon.dt != self.control_dt:
            raise ConfigError("horizon dt must equal the control period")
        if self.jitter < 0.0:
            raise ConfigError("jitter must be >= 0")

    def human_params(self) -> BodyParams:
        return anthropometry(self.mass, self.height)

    def robot(self) -> BodyParams:
        if self.robot_override is not None:
            return self.robot_override
        return robot_params(self.human_params())


def _default_disturbance() -> DisturbanceSpec:
    return DisturbanceSpec(terms=((5.0, 1.0, 0.0), (0.2, 1000.0, math.pi / 2)))


def default_config() -> ScenarioConfig:
    return ScenarioConfig()


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _require_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{where}]")


def _vec3(raw, where: str) -> np.ndarray:
    try:
        v = np.asarray(raw, dtype=np.float64).reshape(3)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} must be a list of 3 numbers") from exc
    return v


def parse_config(doc: dict) -> ScenarioConfig:
    """Build a validated ScenarioConfig from a parsed TOML document."""
    _require_keys(doc, {"subject", "profile", "simulation", "disturbance",
                        "controller", "gains", "nmpc", "strap", "robot"}, "top level")
    try:
        return _parse_config_inner(doc)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _parse_config_inner(doc: dict) -> ScenarioConfig:
    subject = doc.get("subject", {})
    _require_keys(subject, {"mass", "height"}, "subject")
    mass = float(subject.get("mass", 80.0))
    height = float(subject.get("height", 1.9))

    prof_sec = doc.get("profile", {})
    _require_keys(prof_sec, {"cycle_duration", "smoothness", "stand_pose", "deep_pose"}, "profile")
    base = default_profile(
        cycle_duration=float(prof_sec.get("cycle_duration", 1.75)),
        smoothness=float(prof_sec.get("smoothness", 1.0)),
    )
    profile = SquatProfile(
        cycle_duration=base.cycle_duration,
        stand_pose=_vec3(prof_sec["stand_pose"], "profile.stand_pose")
        if "stand_pose" in prof_sec else base.stand_pose,
        deep_pose=_vec3(prof_sec["deep_pose"], "profile.deep_pose")
        if "deep_pose" in prof_sec else base.deep_pose,
        smoothness=base.smoothness,
    )

    sim = doc.get("simulation", {})
    _require_keys(sim, {"duration", "control_dt", "seed", "jitter"}, "simulation")

    dist_sec = doc.get("disturbance", {})
    _require_keys(dist_sec, {"terms", "on_human"}, "disturbance")
    if "terms" in dist_sec:
        terms = tuple(
            (float(t[0]), float(t[1]), float(t[2])) for t in dist_sec["terms"]
        )
        disturbance = DisturbanceSpec(terms=terms)
    else:
        disturbance = _default_disturbance()

    ctrl = doc.get("controller", {})
    _require_keys(ctrl, {"kind", "model"}, "controller")

    gains = doc.get("gains", {})
    _require_keys(gains, {"admittance_c1", "admittance_c2", "pi_kp", "pi_ki"}, "gains")
    admittance = AdmittanceGains(
        c1=_vec3(gains.get("admittance_c1", (0.05, 0.05, 0.1)), "gains.admittance_c1"),
        c2=_vec3(gains.get("admittance_c2", (0.01, 0.01, 0.03)), "gains.admittance_c2"),
    )

    nm = doc.get("nmpc", {})
    _require_keys(nm, {"prediction_horizon", "control_horizon", "delta_u_max",
                       "angle_weights", "velocity_weights", "increment_weight"}, "nmpc")
    control_dt = float(sim.get("control_dt", 0.002))
    horizon = HorizonConfig(
        prediction_horizon=int(nm.get("prediction_horizon", 3)),
        control_horizon=int(nm.get("control_horizon", 3)),
        dt=control_dt,
        delta_u_max=float(nm.get("delta_u_max", 5.0)),
    )
    step_weight = np.diag(np.concatenate([
        _vec3(nm.get("angle_weights", (1.0, 1.0, 1.0)), "nmpc.angle_weights"),
        _vec3(nm.get("velocity_weights", (0.05, 0.05, 0.05)), "nmpc.velocity_weights"),
    ]))
    weights = CostWeights(
        r1=np.kron(np.eye(horizon.prediction_horizon), step_weight),
        r2=float(nm.get("increment_weight", 1e-5)) * np.eye(3 * horizon.control_horizon),
    )

    strap_sec = doc.get("strap", {})
    _require_keys(strap_sec, {"stiffness", "damping", "torque_arm"}, "strap")
    strap_default = default_strap()
    strap = StrapModel(
        stiffness=_vec3(strap_sec.get("stiffness", strap_default.stiffness), "strap.stiffness"),
        damping=_vec3(strap_sec.get("damping", strap_default.damping), "strap.damping"),
        torque_arm=_vec3(strap_sec.get("torque_arm", strap_default.torque_arm), "strap.torque_arm"),
    )

    robot_override = None
    if "robot" in doc:
        rb = doc["robot"]
        _require_keys(rb, {"masses", "lengths", "com_distances", "inertias"}, "robot")
        needed = {"masses", "lengths", "com_distances", "inertias"}
        if set(rb) != needed:
            raise ConfigError(f"[robot] override requires all of {sorted(needed)}")
        m = _vec3(rb["masses"], "robot.masses")
        ln = _vec3(rb["lengths"], "robot.lengths")
        cd = _vec3(rb["com_distances"], "robot.com_distances")
        it = _vec3(rb["inertias"], "robot.inertias")
        links = tuple(
            LinkParams(mass=m[i], length=ln[i], com_distance=cd[i], inertia=it[i])
            for i in range(3)
        )
        robot_override = BodyParams(links=links)

    return ScenarioConfig(
        mass=mass,
        height=height,
        profile=profile,
        duration=float(sim.get("duration", 17.5)),
        control_dt=control_dt,
        disturbance=disturbance,
        disturb_human=bool(dist_sec.get("on_human", False)),
        controller=str(ctrl.get("kind", "hybrid")),
        model_path=str(ctrl["model"]) if "model" in ctrl else None,
        admittance=admittance,
        pi_kp=float(gains.get("pi_kp", 0.2)),
        pi_ki=float(gains.get("pi_ki", 0.13)),
        horizon=horizon,
        weights=weights,
        strap=strap,
        robot_override=robot_override,
        seed=int(sim.get("seed", 0)),
        jitter=float(sim.get("jitter", 0.0)),
    )


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    return parse_config(doc)


def load_grid_config(path) -> DatasetSpec:
    """Parse a dataset-grid TOML ([grid] section) into a DatasetSpec."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    return parse_grid_config(doc)


def parse_grid_config(doc: dict) -> DatasetSpec:
    _require_keys(doc, {"grid"}, "top level")
    grid = doc.get("grid", {})
    _require_keys(grid, {"bodies", "cycle_times", "control_dts", "cycles_per_run",
                         "seed", "jitter", "servo_accel_gain", "servo_damping_gain",
                         "explore_sigma", "explore_tau"}, "grid")
    kwargs = {}
    if "bodies" in grid:
        kwargs["bodies"] = tuple((float(b[0]), float(b[1])) for b in grid["bodies"])
    if "cycle_times" in grid:
        kwargs["cycle_times"] = tuple(float(c) for c in grid["cycle_times"])
    if "control_dts" in grid:
        kwargs["control_dts"] = tuple(float(d) for d in grid["control_dts"])
    for key in ("cycles_per_run", "jitter", "servo_accel_gain", "servo_damping_gain",
                "explore_sigma", "explore_tau"):
        if key in grid:
            kwargs[key] = float(grid[key])
    if "seed" in grid:
        kwargs["seed"] = int(grid["seed"])
    try:
        return DatasetSpec(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# emitter
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def default_config_toml() -> str:
    """The benchmark scenario as a commented TOML document.

    Round-trips: parse_config(tomllib.loads(default_config_toml())) equals
    default_config().
    """
    c = default_config()
    p = c.profile
    return f"""\
# Benchmark squat scenario: 80 kg / 1.9 m wearer, 1.75 s cycle, 2 ms control
# period, two-tone torque disturbance on the robot, ten cycles.

[subject]
mass = {_fmt(c.mass)}      # kg
height = {_fmt(c.height)}    # m

[profile]
cycle_duration = {_fmt(p.cycle_duration)}   # s per full squat cycle
smoothness = {_fmt(p.smoothness)}        # >= 1; higher lingers near standing
stand_pose = {_fmt(p.stand_pose)}   # rad: ankle (from horizontal), knee, hip
deep_pose = {_fmt(p.deep_pose)}

[simulation]
duration = {_fmt(c.duration)}     # s (10 cycles)
control_dt = {_fmt(c.control_dt)}   # s
seed = {_fmt(c.seed)}
jitter = {_fmt(c.jitter)}        # rad of seeded initial-pose noise (0 = exact preload)

[disturbance]
# Each term is [amplitude N*m, frequency rad/s, phase rad], summed and applied
# to every robot joint.  Delete all terms for a disturbance-free run.
terms = [{", ".join(_fmt(list(t)) for t in c.disturbance.terms)}]
on_human = {_fmt(c.disturb_human)}

[controller]
kind = "{c.controller}"   # one of: nmpc, dnn-only, hybrid, none
# model = "model.bin"  # trained-network file; required for hybrid and dnn-only

[gains]
admittance_c1 = {_fmt(c.admittance.c1)}   # rad per N of force error
admittance_c2 = {_fmt(c.admittance.c2)}  # rad/s per N
pi_kp = {_fmt(c.pi_kp)}
pi_ki = {_fmt(c.pi_ki)}

[nmpc]
prediction_horizon = {_fmt(c.horizon.prediction_horizon)}
control_horizon = {_fmt(c.horizon.control_horizon)}
delta_u_max = {_fmt(c.horizon.delta_u_max)}     # N*m per step, per joint
angle_weights = {_fmt(np.diag(c.weights.r1)[:3])}
velocity_weights = {_fmt(np.diag(c.weights.r1)[3:6])}
increment_weight = {_fmt(c.weights.r2[0, 0])}

[strap]
stiffness = {_fmt(c.strap.stiffness)}   # N*m/rad per joint
damping = {_fmt(c.strap.damping)}
torque_arm = {_fmt(c.strap.torque_arm)}   # m; force = torque / arm
"""

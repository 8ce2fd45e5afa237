"""Experiment construction and execution.

A scenario bundles the chain, the prescribed platform motion, contact
force events, per-module servo targets and estimator switches, and the
sensor setup.  Running it co-simulates the plant (fixed 1 ms RK4) with
the control network at the same tick and produces a complete trajectory
log plus summary metrics.  Divergence is a reported result, not a crash.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .chain import ChainConfig, ChainPose, ConfigurationError, com_of_subchain_oracle
from .control import (
    DecNetwork,
    EstimatorFlags,
    EstimatorParams,
    ServoParams,
    SetPoint,
    build_network,
    default_servo_params,
)
from .plant import (
    DivergenceError,
    ExternalForce,
    PlantState,
    PlatformInput,
    joint_accelerations,
    passive_torque,
    step,
)
from .sensors import SensorBank, SensorConfig

DT = 1e-3  # global fixed step; delays are exact integer tick counts
DIVERGENCE_ANGLE = math.radians(85.0)


# --------------------------------------------------------------------- #
# analytic waveforms (closed-form derivatives; no numerical differentiation)


@dataclass(frozen=True)
class Waveform:
    """Identically-zero base waveform."""

    def value(self, t: float) -> float:
        return 0.0

    def velocity(self, t: float) -> float:
        return 0.0

    def acceleration(self, t: float) -> float:
        return 0.0


@dataclass(frozen=True)
class Constant(Waveform):
    level: float = 0.0

    def value(self, t: float) -> float:
        return self.level


@dataclass(frozen=True)
class Sinusoid(Waveform):
    amplitude: float = 0.0
    frequency: float = 1.0
    phase: float = 0.0

    def value(self, t):
        return self.amplitude * math.sin(2 * math.pi * self.frequency * t + self.phase)

    def velocity(self, t):
        w = 2 * math.pi * self.frequency
        return self.amplitude * w * math.cos(w * t + self.phase)

    def acceleration(self, t):
        w = 2 * math.pi * self.frequency
        return -self.amplitude * w * w * math.sin(w * t + self.phase)


@dataclass(frozen=True)
class AccelPulse(Waveform):
    """Constant acceleration between t_on and t_off (translation stimulus)."""

    magnitude: float = 0.0
    t_on: float = 0.0
    t_off: float = 0.0

    def acceleration(self, t):
        return self.magnitude if self.t_on <= t < self.t_off else 0.0


@dataclass(frozen=True)
class MinimumJerkRamp(Waveform):
    """Smooth ramp 0 -> target with zero end velocity and acceleration."""

    target: float = 0.0
    t_start: float = 0.0
    duration: float = 1.0

    def _tau(self, t):
        return min(max((t - self.t_start) / self.duration, 0.0), 1.0)

    def value(self, t):
        s = self._tau(t)
        return self.target * (10 * s**3 - 15 * s**4 + 6 * s**5)

    def velocity(self, t):
        s = self._tau(t)
        if s in (0.0, 1.0):
            return 0.0
        return self.target / self.duration * (30 * s**2 - 60 * s**3 + 30 * s**4)

    def acceleration(self, t):
        s = self._tau(t)
        if s in (0.0, 1.0):
            return 0.0
        return self.target / self.duration**2 * (60 * s - 180 * s**2 + 120 * s**3)


def sinusoid_tilt(amplitude: float, frequency: float) -> Sinusoid:
    """Platform tilt waveform A*sin(2*pi*f*t) with exact derivatives."""
    if amplitude <= 0 or frequency <= 0:
        raise ConfigurationError("sinusoid amplitude and frequency must be > 0")
    return Sinusoid(amplitude=amplitude, frequency=frequency)


def voluntary_lean(
    target: float, ramp_duration: float, t_start: float = 0.0
) -> tuple[MinimumJerkRamp, MinimumJerkRamp]:
    """Set-point ramp plus the matching unity-gain disturbance prediction.

    The predicted gravity disturbance of leaning the above-links COM by
    the ramp angle has the same angle equivalent as the ramp itself.
    """
    if ramp_duration <= 0:
        raise ConfigurationError("ramp_duration must be > 0")
    ramp = MinimumJerkRamp(target=target, t_start=t_start, duration=ramp_duration)
    return ramp, ramp


# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class ForceEvent:
    link_index: int
    application_height: float
    horizontal_force: float
    t_on: float
    t_off: float

    def active(self, t: float) -> bool:
        return self.t_on <= t < self.t_off

    def as_force(self) -> ExternalForce:
        return ExternalForce(
            self.link_index, self.application_height, self.horizontal_force
        )


@dataclass
class ModuleSpec:
    """Per-joint control configuration."""

    setpoint_mode: str = "above-com-space"
    setpoint: Waveform = Waveform()
    prediction: Optional[Waveform] = None
    flags: EstimatorFlags = EstimatorFlags()
    estimators: EstimatorParams = EstimatorParams()
    servo: Optional[ServoParams] = None  # None -> kp = m_up * g * h_up default
    passive_setpoint: Waveform = Waveform()


@dataclass
class ScenarioConfig:
    chain: ChainConfig
    duration: float
    modules: list[ModuleSpec]
    tilt_waveform: Waveform = Waveform()
    translation_waveform: Waveform = Waveform()
    force_events: list[ForceEvent] = field(default_factory=list)
    sensors: SensorConfig = SensorConfig()
    initial_joint_angles: Optional[np.ndarray] = None
    analysis_window_fraction: float = 0.5
    name: str = "scenario"

    def validate(self) -> list[str]:
        errors = []
        if self.duration <= 0:
            errors.append("duration must be > 0")
        if len(self.modules) != self.chain.n_links:
            errors.append(
                f"modules: expected {self.chain.n_links} entries, got {len(self.modules)}"
            )
        if not 0 < self.analysis_window_fraction <= 1:
            errors.append("analysis_window_fraction must be in (0, 1]")
        for k, ev in enumerate(self.force_events):
            if not 1 <= ev.link_index <= self.chain.n_links:
                errors.append(f"force_events[{k}].link_index out of range")
            else:
                length = self.chain.links[ev.link_index - 1].length
                if not 0 <= ev.application_height <= length:
                    errors.append(f"force_events[{k}].application_height outside link")
            if ev.t_off <= ev.t_on:
                errors.append(f"force_events[{k}]: t_off must exceed t_on")
        if self.initial_joint_angles is not None and len(
            self.initial_joint_angles
        ) != self.chain.n_links:
            errors.append("initial_joint_angles length mismatch")
        return errors


class ScenarioValidationError(ConfigurationError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class TrajectoryLog:
    """Fixed-spacing per-tick record of one run."""

    time: np.ndarray
    platform_tilt: np.ndarray
    joint_angles: np.ndarray
    joint_velocities: np.ndarray
    space_angles: np.ndarray
    active_torques: np.ndarray
    measured_torques: np.ndarray
    tilt_estimate: np.ndarray
    gravity_torque: np.ndarray
    accel_torque: np.ndarray
    ext_torque: np.ndarray
    servo_error: np.ndarray
    com_x: np.ndarray
    diverged: bool = False
    divergence_time: Optional[float] = None

    @property
    def n_links(self) -> int:
        return self.joint_angles.shape[1]


@dataclass
class RunMetrics:
    space_angle_p2p_deg: np.ndarray  # per link, post-transient window
    com_excursion: float  # max |com_x - com_x(0)| over the whole run
    com_p2p_window: float
    max_abs_space_angle_deg: float
    stable: bool
    settling_time: Optional[float]

    def as_dict(self) -> dict:
        out = {
            f"space_angle_p2p_deg_link{i+1}": float(v)
            for i, v in enumerate(self.space_angle_p2p_deg)
        }
        out["com_excursion_m"] = float(self.com_excursion)
        out["com_p2p_window_m"] = float(self.com_p2p_window)
        out["max_abs_space_angle_deg"] = float(self.max_abs_space_angle_deg)
        out["stable"] = bool(self.stable)
        out["settling_time_s"] = (
            None if self.settling_time is None else float(self.settling_time)
        )
        return out


def _build_network(config: ScenarioConfig) -> DecNetwork:
    chain = config.chain
    defaults = default_servo_params(chain)
    servo = [
        (spec.servo if spec.servo is not None else defaults[i])
        for i, spec in enumerate(config.modules)
    ]
    setpoints = [
        SetPoint(
            mode=spec.setpoint_mode,
            value=spec.setpoint.value,
            prediction=(None if spec.prediction is None else spec.prediction.value),
        )
        for spec in config.modules
    ]
    return build_network(
        chain,
        servo_params=servo,
        estimator_params=[spec.estimators for spec in config.modules],
        flags=[spec.flags for spec in config.modules],
        setpoints=setpoints,
        dt=DT,
        prediction_delay_ticks=config.sensors.vestibular_delay_ticks,
    )


def run_experiment(config: ScenarioConfig) -> tuple[TrajectoryLog, RunMetrics]:
    """Deterministic co-simulation of plant and control network."""
    errors = config.validate()
    if errors:
        raise ScenarioValidationError(errors)

    chain = config.chain
    n = chain.n_links
    ticks = int(round(config.duration / DT))
    net = _build_network(config)
    bank = SensorBank(chain, config.sensors)

    q0 = (
        np.zeros(n)
        if config.initial_joint_angles is None
        else np.asarray(config.initial_joint_angles, dtype=float)
    )
    state = PlantState(q0.copy(), np.zeros(n))
    tau = np.zeros(n)
    qdd = np.zeros(n)

    cols = {
        "time": np.zeros(ticks),
        "platform_tilt": np.zeros(ticks),
        "joint_angles": np.zeros((ticks, n)),
        "joint_velocities": np.zeros((ticks, n)),
        "space_angles": np.zeros((ticks, n)),
        "active_torques": np.zeros((ticks, n)),
        "measured_torques": np.zeros((ticks, n)),
        "tilt_estimate": np.zeros(ticks),
        "gravity_torque": np.zeros((ticks, n)),
        "accel_torque": np.zeros((ticks, n)),
        "ext_torque": np.zeros((ticks, n)),
        "servo_error": np.zeros((ticks, n)),
        "com_x": np.zeros(ticks),
    }
    diverged = False
    divergence_time = None
    recorded = 0

    for i in range(ticks):
        t = i * DT
        platform = PlatformInput(
            tilt=config.tilt_waveform.value(t),
            tilt_velocity=config.tilt_waveform.velocity(t),
            tilt_acceleration=config.tilt_waveform.acceleration(t),
            translation_acceleration=config.translation_waveform.acceleration(t),
        )
        forces = [ev.as_force() for ev in config.force_events if ev.active(t)]
        passive_sp = np.array(
            [spec.passive_setpoint.value(t) for spec in config.modules]
        )

        measured = tau + np.array(
            [
                passive_torque(
                    chain.links[k],
                    state.joint_angles[k],
                    state.joint_velocities[k],
                    passive_sp[k],
                )
                for k in range(n)
            ]
        )
        frame = bank.read(state, platform, qdd, measured, tau)
        tau, logs = net.control_tick(frame, t)

        pose = ChainPose(
            platform.tilt + np.cumsum(state.joint_angles), platform.tilt
        )
        com, _ = com_of_subchain_oracle(chain, pose, 1)

        cols["time"][i] = t
        cols["platform_tilt"][i] = platform.tilt
        cols["joint_angles"][i] = state.joint_angles
        cols["joint_velocities"][i] = state.joint_velocities
        cols["space_angles"][i] = pose.space_angles
        cols["active_torques"][i] = tau
        cols["measured_torques"][i] = measured
        cols["tilt_estimate"][i] = logs[0]["tilt_estimate"]
        cols["gravity_torque"][i] = [lg["gravity_torque"] for lg in logs]
        cols["accel_torque"][i] = [lg["accel_torque"] for lg in logs]
        cols["ext_torque"][i] = [lg["ext_torque"] for lg in logs]
        cols["servo_error"][i] = [lg["error"] for lg in logs]
        cols["com_x"][i] = com[0]
        recorded = i + 1

        try:
            state = step(chain, state, tau, platform, forces, DT, passive_sp)
        except DivergenceError as exc:
            diverged = True
            divergence_time = exc.time
            break
        if np.max(np.abs(platform.tilt + np.cumsum(state.joint_angles))) > DIVERGENCE_ANGLE:
            diverged = True
            divergence_time = state.time
            break
        qdd = joint_accelerations(
            chain, state.joint_angles, state.joint_velocities, tau, platform,
            forces, passive_sp,
        )

    log = TrajectoryLog(
        **{k: v[:recorded] for k, v in cols.items()},
        diverged=diverged,
        divergence_time=divergence_time,
    )
    return log, compute_metrics(log, config.analysis_window_fraction)


def compute_metrics(
    log: TrajectoryLog, window_fraction: float = 0.5
) -> RunMetrics:
    ticks = len(log.time)
    if ticks == 0:
        return RunMetrics(
            space_angle_p2p_deg=np.zeros(log.n_links),
            com_excursion=0.0,
            com_p2p_window=0.0,
            max_abs_space_angle_deg=0.0,
            stable=not log.diverged,
            settling_time=None,
        )
    start = int(ticks * (1 - window_fraction))
    win = slice(start, ticks)
    ang = log.space_angles
    p2p = np.degrees(ang[win].max(axis=0) - ang[win].min(axis=0))
    com_exc = float(np.max(np.abs(log.com_x - log.com_x[0])))
    com_p2p = float(log.com_x[win].max() - log.com_x[win].min())
    max_ang = float(np.degrees(np.max(np.abs(ang))))

    settle = None
    if not log.diverged:
        final = ang[-1]
        tol = math.radians(0.1)
        off = np.any(np.abs(ang - final) > tol, axis=1)
        idx = np.nonzero(off)[0]
        settle = 0.0 if len(idx) == 0 else float(log.time[idx[-1]] + DT)

    return RunMetrics(
        space_angle_p2p_deg=p2p,
        com_excursion=com_exc,
        com_p2p_window=com_p2p,
        max_abs_space_angle_deg=max_ang,
        stable=not log.diverged,
        settling_time=settle,
    )


def ablation_compare(
    config: ScenarioConfig,
    flags_on: list[EstimatorFlags],
    flags_off: list[EstimatorFlags],
) -> tuple[RunMetrics, RunMetrics]:
    """Run the same scenario twice with different estimator switches."""

    def with_flags(flags):
        modules = [replace(spec, flags=f) for spec, f in zip(config.modules, flags)]
        return replace(config, modules=modules)

    _, on = run_experiment(with_flags(flags_on))
    _, off = run_experiment(with_flags(flags_off))
    return on, off

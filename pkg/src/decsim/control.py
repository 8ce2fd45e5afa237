"""Modular posture control: one DEC (disturbance estimation and
compensation) module per joint.

Every control tick the module network runs two passes:

  down-pass (head -> base): each module derives its link's space angle
  from the vestibular reference channeled down through sensed joint
  angles, aggregates the above-links COM, mass and moment of inertia, and
  the self-produced head acceleration, then emits the bus message for the
  module below.

  up-pass (base -> head): the lowest module turns the down-channeled
  velocity into the processed support-tilt estimate (dead band, gain,
  integration); each module then combines its servo set point, the
  up-channeled space reference and the disturbance estimates
  (gravity, support acceleration, contact torque) into a torque command.

Disturbance estimates are converted to angle equivalents (torque divided
by mass*g*com_height) and summed at the servo input, so compensation runs
through the same PID dynamics as tracking.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .chain import ChainConfig, ConfigurationError, LinkParams, link_direction
from .sensors import DelayLine, SensorFrame

DEFAULT_TILT_THRESHOLD = math.radians(0.18)  # rad/s
DEFAULT_TILT_GAIN = 0.75


class ModuleError(RuntimeError):
    """A control module failed; carries the module index."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"module {index}: {cause}")
        self.index = index
        self.cause = cause


class DegenerateGeometryError(ValueError):
    """Above-links COM at or below the joint; angle equivalents undefined."""


def dead_band(x, threshold):
    """Continuous (subtractive) dead band: sign(x) * max(0, |x| - threshold)."""
    if threshold < 0:
        raise ConfigurationError("dead-band threshold must be >= 0")
    return np.sign(x) * np.maximum(0.0, np.abs(x) - threshold)


@dataclass(frozen=True)
class EstimatorParams:
    tilt_threshold: float = DEFAULT_TILT_THRESHOLD  # rad/s
    tilt_gain: float = DEFAULT_TILT_GAIN
    gravity_threshold: float = 0.0  # rad (applied to the COM sway angle)
    gravity_gain: float = 1.0
    gravity_lowpass_cutoff: float = 5.0  # Hz; smooths the restoring channel
    accel_threshold: float = 0.0  # m/s^2, per component
    accel_gain: float = 1.0
    accel_lowpass_cutoff: float = 1.0  # Hz; this channel is delayed positive feedback
    ext_torque_gain: float = 0.5  # positive-feedback path, must stay < 1
    ext_torque_lowpass_cutoff: float = 1.0  # Hz
    ext_torque_threshold: float = 0.0  # N*m

    def __post_init__(self):
        for name in (
            "tilt_threshold",
            "gravity_threshold",
            "accel_threshold",
            "ext_torque_threshold",
        ):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        for name in ("accel_lowpass_cutoff", "gravity_lowpass_cutoff"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        for name in ("tilt_gain", "gravity_gain", "accel_gain", "ext_torque_gain"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.ext_torque_gain >= 1:
            raise ConfigurationError("ext_torque_gain must be < 1")


@dataclass(frozen=True)
class EstimatorFlags:
    """Which disturbance compensations feed the servo of one module."""

    tilt: bool = True
    gravity: bool = True
    acceleration: bool = False
    ext_torque: bool = False


@dataclass(frozen=True)
class ServoParams:
    kp: float
    ki: float | None = None
    kd: float | None = None
    reflexive_share: float = 0.85
    passive_share: float = 0.15

    def __post_init__(self):
        if self.kp <= 0:
            raise ConfigurationError("kp must be > 0")
        if abs(self.reflexive_share + self.passive_share - 1.0) > 1e-9:
            raise ConfigurationError("reflexive_share + passive_share must be 1")
        if self.ki is None:
            object.__setattr__(self, "ki", 0.05 * self.kp)
        if self.kd is None:
            object.__setattr__(self, "kd", 0.25 * self.kp)


SETPOINT_MODES = ("above-com-space", "com-position", "joint-angle")


@dataclass
class SetPoint:
    """Servo target for one module.

    value and prediction are functions of time; prediction is the
    voluntary-movement feed-forward of the self-produced gravity
    disturbance (angle equivalent), injected with unity gain.
    """

    mode: str = "above-com-space"
    value: Callable[[float], float] = lambda t: 0.0
    prediction: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if self.mode not in SETPOINT_MODES:
            raise ConfigurationError(
                f"setpoint mode {self.mode!r} not one of {SETPOINT_MODES}"
            )


@dataclass
class DownMsg:
    """Bus payload from module n+1 to module n (emitted on the down-pass)."""

    com_above: np.ndarray  # CoM of links n+1..N relative to joint n+1
    mass_above: float
    inertia_above: float  # about the subchain COM (J*)
    space_angle_down: float  # receiver's link space angle (alpha_n)
    space_velocity_down: float
    self_acceleration: np.ndarray  # head acceleration relative to joint n+1
    head_angular_acc: float


@dataclass
class UpMsg:
    """Bus payload from module n-1 to module n (emitted on the up-pass)."""

    space_angle_up: float  # processed space reference of link n-1
    # fast-loop counterparts: the servo must close over the short-latency
    # proprioceptive channel, so the sum of fast joint angles and the
    # processed base reference travel up separately
    fast_joint_sum: float
    support_reference: float


def aggregate_com(
    down: DownMsg | None, link: LinkParams, space_angle: float
) -> tuple[np.ndarray, float]:
    """Normalized mass-weighted COM of this link plus everything above.

    Returned position is relative to this module's joint.
    """
    u = link_direction(space_angle)
    own = link.mass * link.com_distance * u
    if down is None:
        return own / link.mass, link.mass
    shifted = down.com_above + link.length * u
    mass = down.mass_above + link.mass
    return (down.mass_above * shifted + own) / mass, mass


def aggregate_inertia(
    down: DownMsg | None,
    link: LinkParams,
    space_angle: float,
    com_self: np.ndarray,
    mass_self: float,
) -> tuple[float, float]:
    """Recursive moment of inertia of the above-links subchain.

    Returns (J about the subchain COM, J about this joint), chaining the
    parallel-axis theorem with a single inertia value per bus hop.
    """
    u = link_direction(space_angle)
    own_com = link.com_distance * u
    j_star = link.inertia_about_com + link.mass * float(
        np.sum((own_com - com_self) ** 2)
    )
    if down is not None:
        com_above_here = down.com_above + link.length * u
        j_star += down.inertia_above + down.mass_above * float(
            np.sum((com_above_here - com_self) ** 2)
        )
    j_up = j_star + mass_self * float(np.sum(com_self**2))
    return j_star, j_up


class DecModule:
    """One joint's controller: servo plus four disturbance estimators."""

    def __init__(
        self,
        index: int,
        link: LinkParams,
        servo: ServoParams,
        estimators: EstimatorParams | None = None,
        flags: EstimatorFlags | None = None,
        setpoint: SetPoint | None = None,
        dt: float = 1e-3,
        is_top: bool = False,
        is_bottom: bool = False,
        prediction_delay_ticks: int = 180,
        gravity: float = 9.81,
    ):
        self.index = index
        self.gravity = gravity
        self.link = link
        self.servo = servo
        self.est = estimators or EstimatorParams()
        self.flags = flags or EstimatorFlags()
        self.setpoint = setpoint or SetPoint()
        self.dt = dt
        self.is_top = is_top
        self.is_bottom = is_bottom
        self.prediction_delay_ticks = prediction_delay_ticks
        self.reset()

    def reset(self):
        self.integral = 0.0
        self.tilt_estimate = 0.0
        self.ext_lowpass = 0.0
        self.accel_lowpass = np.zeros(2)
        self.prev_head_acc: np.ndarray | None = None
        self.gravity_lowpass = 0.0
        self._gravity_lp_primed = False
        self.prev_error: float | None = None
        self.prev_momentum: float | None = None
        self.prev_sway_slow: float | None = None
        self.prev_velocity: float | None = None
        self._u_history: deque = deque(maxlen=3)
        self._pred_delay = DelayLine(self.prediction_delay_ticks)
        # down-pass scratch, valid within one tick
        self.space_angle = 0.0
        self.space_velocity = 0.0
        self.support_angle_raw = 0.0
        self.com = np.zeros(2)
        self.mass_up = 0.0
        self.j_star = 0.0
        self.j_up = 0.0
        self.a_self = np.zeros(2)

    # ------------------------------------------------------------------ #
    def down_pass(self, frame: SensorFrame, down: DownMsg | None) -> DownMsg:
        i = self.index - 1
        if self.is_top:
            self.space_angle = frame.head_space_angle
            self.space_velocity = frame.head_space_velocity
        else:
            assert down is not None
            self.space_angle = down.space_angle_down
            self.space_velocity = down.space_velocity_down
        self.support_angle_raw = self.space_angle - frame.dec_joint_angles[i]

        self.com, self.mass_up = aggregate_com(down, self.link, self.space_angle)
        self.j_star, self.j_up = aggregate_inertia(
            down, self.link, self.space_angle, self.com, self.mass_up
        )

        # self-produced head acceleration: L_n * d^2/dt^2 [u(alpha_n)],
        # chained with the contribution of the links above
        self._u_history.append(link_direction(self.space_angle))
        if len(self._u_history) == 3:
            u0, u1, u2 = self._u_history
            udd = (u2 - 2 * u1 + u0) / self.dt**2
        else:
            udd = np.zeros(2)
        self.a_self = self.link.length * udd
        if down is not None:
            self.a_self = self.a_self + down.self_acceleration

        if self.prev_velocity is None:
            ang_acc = 0.0
        else:
            ang_acc = (self.space_velocity - self.prev_velocity) / self.dt
        self.prev_velocity = self.space_velocity

        return DownMsg(
            com_above=self.com,
            mass_above=self.mass_up,
            inertia_above=self.j_star,
            space_angle_down=self.support_angle_raw,
            space_velocity_down=self.space_velocity - frame.dec_joint_velocities[i],
            self_acceleration=self.a_self,
            head_angular_acc=ang_acc,
        )

    # ------------------------------------------------------------------ #
    def update_tilt_estimate(self, support_velocity: float) -> float:
        """Dead band, gain scaling, integration (lowest module only)."""
        rate = self.est.tilt_gain * dead_band(support_velocity, self.est.tilt_threshold)
        self.tilt_estimate += float(rate) * self.dt
        return self.tilt_estimate

    def _angle_equiv(self, torque: float) -> float:
        com_y = self.com[1]
        if com_y <= 0:
            raise DegenerateGeometryError(
                f"above-links COM at or below joint {self.index}"
            )
        return torque / (self.mass_up * self.gravity * com_y)

    def estimate_gravity(self, sway_angle: float) -> tuple[float, float]:
        """Gravity disturbance torque and its processed compensation value.

        The raw value comes from the long-latency COM aggregation alone.
        The processed compensation instead uses the fused sway angle
        (short-latency joint angles plus the slow shape offset and base
        reference): this channel is the net restoring stiffness of the
        whole loop, and running it purely on the long-latency path is
        destabilizing delayed position feedback.
        """
        g = self.gravity
        raw = self.mass_up * g * self.com[0]
        com_norm = float(np.hypot(*self.com))
        x_eff = com_norm * math.sin(sway_angle)
        shaped = (
            self.mass_up
            * g
            * float(dead_band(x_eff, self.est.gravity_threshold * com_norm))
            * self.est.gravity_gain
        )
        if not self._gravity_lp_primed:
            # start from the initial posture's value, not from zero
            self.gravity_lowpass = shaped
            self._gravity_lp_primed = True
        alpha = 2.0 * math.pi * self.est.gravity_lowpass_cutoff * self.dt
        self.gravity_lowpass += alpha * (shaped - self.gravity_lowpass)
        return raw, self.gravity_lowpass

    def estimate_acceleration(self, frame: SensorFrame) -> tuple[float, float]:
        """Support-acceleration disturbance torque (raw and processed).

        The self-produced part is a centered second difference of the
        sensed link directions, valid one tick in the past, so it is
        compared against the previous tick's vestibular acceleration; a
        first-order low pass removes the tick-scale residue of that
        cancellation, which would otherwise feed back on torque
        increments.
        """
        if self.prev_head_acc is None:
            vestibular = frame.head_linear_acceleration
        else:
            vestibular = self.prev_head_acc
        self.prev_head_acc = frame.head_linear_acceleration
        a_ext = vestibular - self.a_self
        # raw value before filtering: the contact-torque accounting needs
        # the unshaped estimate
        raw = -self.mass_up * float(
            a_ext[0] * self.com[1] - a_ext[1] * self.com[0]
        )
        alpha = 2.0 * math.pi * self.est.accel_lowpass_cutoff * self.dt
        self.accel_lowpass = self.accel_lowpass + alpha * (a_ext - self.accel_lowpass)
        a_ext = self.accel_lowpass
        a_proc = dead_band(a_ext, self.est.accel_threshold) * self.est.accel_gain
        processed = -self.mass_up * float(
            a_proc[0] * self.com[1] - a_proc[1] * self.com[0]
        )
        return raw, processed

    def estimate_external_torque(
        self, frame: SensorFrame, tau_g_raw: float, tau_in_raw: float
    ) -> float:
        """Contact-force torque from the measured-torque balance.

        The inertial reaction d/dt(alphad * J_up) minus the gravity and
        acceleration estimates and the measured joint torque leaves the
        external contact torque.  Processed with dead band, gain < 1 and a
        first-order low pass (the measured torque contains the commanded
        torque, so this path is positive feedback).

        The rotation rate is the COM sway rate of the above-links
        subchain, not this link's own rate: the subchain is not rigid, and
        only the COM rate keeps the accounting consistent with the gravity
        term when upper links move relative to this one.
        """
        sway_slow = math.atan2(self.com[0], self.com[1])
        if self.prev_sway_slow is None:
            sway_rate = 0.0
        else:
            sway_rate = (sway_slow - self.prev_sway_slow) / self.dt
        self.prev_sway_slow = sway_slow
        momentum = sway_rate * self.j_up
        if self.prev_momentum is None:
            tau_inertial = 0.0
        else:
            tau_inertial = (momentum - self.prev_momentum) / self.dt
        self.prev_momentum = momentum
        sensed = float(frame.joint_torques[self.index - 1])
        raw = tau_inertial - tau_g_raw - tau_in_raw - sensed
        shaped = (
            float(dead_band(raw, self.est.ext_torque_threshold))
            * self.est.ext_torque_gain
        )
        alpha = 2.0 * math.pi * self.est.ext_torque_lowpass_cutoff * self.dt
        self.ext_lowpass += alpha * (shaped - self.ext_lowpass)
        return self.ext_lowpass

    # ------------------------------------------------------------------ #
    def up_pass(
        self, frame: SensorFrame, up: UpMsg | None, t: float
    ) -> tuple[float, UpMsg, dict]:
        i = self.index - 1
        if self.is_bottom:
            support_ref = self.tilt_estimate
            base_ref = self.tilt_estimate
            fast_below = 0.0
        else:
            assert up is not None
            support_ref = up.space_angle_up
            base_ref = up.support_reference
            fast_below = up.fast_joint_sum
        # own link's space angle relative to the support, on the fast
        # proprioceptive channel (the servo bandwidth lives here)
        fast_rel = fast_below + float(frame.joint_angles[i])

        # fused sway angle of the above-links COM: slow-channel shape
        # offset plus the short-latency link angle and the processed base
        # reference (proprioceptive-vestibular fusion)
        com_dir = math.atan2(self.com[0], self.com[1])
        sway_est = (
            (com_dir - self.space_angle)
            + fast_rel
            + (base_ref if self.flags.tilt else 0.0)
        )

        tau_g_raw, tau_g = self.estimate_gravity(sway_est)
        tau_in_raw, tau_in = self.estimate_acceleration(frame)
        tau_ext = self.estimate_external_torque(frame, tau_g_raw, tau_in_raw)

        g_comp = self._angle_equiv(tau_g) if self.flags.gravity else 0.0
        if self.setpoint.prediction is not None:
            pred_now = float(self.setpoint.prediction(t))
            pred_delayed = float(self._pred_delay(pred_now))
            g_comp = pred_now + (g_comp - pred_delayed)
        compensation = g_comp
        if self.flags.acceleration:
            compensation += self._angle_equiv(tau_in)
        if self.flags.ext_torque:
            compensation += self._angle_equiv(tau_ext)

        mode = self.setpoint.mode
        if mode == "joint-angle":
            cv = float(frame.joint_angles[i])
        elif mode == "com-position":
            # horizontal COM offset over COM height, an angle-like sway
            cv = math.tan(sway_est)
        else:
            cv = sway_est

        tracking = float(self.setpoint.value(t)) - cv
        error = tracking - compensation
        # integral and derivative act on the tracking error only; the
        # compensations stay in the proportional path as holding torque.
        # Integrating them would shift the static equilibrium (the
        # integrator would null set - cv - comp instead of set - cv), and
        # differentiating them closes an algebraic loop with dt-scale gain
        self.integral += tracking * self.dt
        if self.prev_error is None:
            derror = 0.0
        else:
            derror = (tracking - self.prev_error) / self.dt
        self.prev_error = tracking
        torque = self.servo.reflexive_share * (
            self.servo.kp * error
            + self.servo.ki * self.integral
            + self.servo.kd * derror
        )

        out = UpMsg(
            space_angle_up=support_ref + float(frame.dec_joint_angles[i]),
            fast_joint_sum=fast_rel,
            support_reference=base_ref,
        )
        log = {
            "tilt_reference": support_ref,
            "gravity_torque": tau_g,
            "accel_torque": tau_in,
            "ext_torque": tau_ext,
            "space_angle_raw": self.space_angle,
            "error": error,
            "torque": torque,
        }
        return torque, out, log


class DecNetwork:
    """The chain of DEC modules plus the two-pass tick evaluator."""

    def __init__(self, config: ChainConfig, modules: list[DecModule]):
        if len(modules) != config.n_links:
            raise ConfigurationError("one module per joint required")
        self.config = config
        self.modules = modules

    def reset(self):
        for m in self.modules:
            m.reset()

    def control_tick(self, frame: SensorFrame, t: float) -> tuple[np.ndarray, list[dict]]:
        n = len(self.modules)
        msg: DownMsg | None = None
        for m in reversed(self.modules):
            try:
                msg = m.down_pass(frame, msg)
            except Exception as exc:  # noqa: BLE001
                raise ModuleError(m.index, exc) from exc
        bottom = self.modules[0]
        try:
            bottom.update_tilt_estimate(msg.space_velocity_down)
        except Exception as exc:  # noqa: BLE001
            raise ModuleError(bottom.index, exc) from exc

        torques = np.zeros(n)
        logs: list[dict] = []
        up: UpMsg | None = None
        for m in self.modules:
            try:
                torque, up, log = m.up_pass(frame, up, t)
            except ModuleError:
                raise
            except Exception as exc:  # noqa: BLE001
                raise ModuleError(m.index, exc) from exc
            torques[m.index - 1] = torque
            logs.append(log)
        logs[0]["tilt_estimate"] = bottom.tilt_estimate
        logs[0]["support_angle_raw"] = bottom.support_angle_raw
        return torques, logs


def build_network(
    config: ChainConfig,
    servo_params: list[ServoParams],
    estimator_params: list[EstimatorParams] | None = None,
    flags: list[EstimatorFlags] | None = None,
    setpoints: list[SetPoint] | None = None,
    dt: float = 1e-3,
    prediction_delay_ticks: int = 180,
) -> DecNetwork:
    n = config.n_links
    estimator_params = estimator_params or [EstimatorParams()] * n
    flags = flags or [EstimatorFlags()] * n
    setpoints = setpoints or [SetPoint() for _ in range(n)]
    modules = [
        DecModule(
            index=i + 1,
            link=config.links[i],
            servo=servo_params[i],
            estimators=estimator_params[i],
            flags=flags[i],
            setpoint=setpoints[i],
            dt=dt,
            is_top=(i == n - 1),
            is_bottom=(i == 0),
            prediction_delay_ticks=prediction_delay_ticks,
            gravity=config.gravity,
        )
        for i in range(n)
    ]
    return DecNetwork(config, modules)


def default_servo_params(
    config: ChainConfig, reflexive_share: float = 0.85
) -> list[ServoParams]:
    """Per-joint gains from the upright above-links load: kp = m_up * g * h_up."""
    from .chain import ChainPose, com_of_subchain_oracle

    pose = ChainPose(np.zeros(config.n_links))
    out = []
    for n in range(1, config.n_links + 1):
        com, mass = com_of_subchain_oracle(config, pose, n)
        kp = mass * config.gravity * com[1]
        out.append(
            ServoParams(
                kp=kp, reflexive_share=reflexive_share,
                passive_share=1.0 - reflexive_share,
            )
        )
    return out

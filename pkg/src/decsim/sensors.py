"""Sensory layer: what the controller is allowed to see.

Channels are grouped into classes with one transport delay each:

  proprio     joint angles/velocities for the local servo loop (~60 ms)
  vestibular  head-in-space angle/velocity and head linear acceleration,
              plus the slow copies of joint signals used inside the
              disturbance-estimation loops (~180 ms lumped)
  torque      measured total joint torque (~180 ms)
  efference   copy of the commanded torque (no sensory delay)

Velocity channels are sensed directly (ideal rate sensors).  Optional
additive Gaussian noise is seeded and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .chain import ChainConfig, ConfigurationError
from .plant import PlantState, PlatformInput, point_kinematics

CHANNELS = ("vestibular", "proprio", "torque", "efference")


@dataclass
class SensorFrame:
    """One control tick's worth of delayed, optionally noisy readings."""

    head_space_angle: float
    head_space_velocity: float
    head_linear_acceleration: np.ndarray
    joint_angles: np.ndarray
    joint_velocities: np.ndarray
    joint_torques: np.ndarray
    active_torques: np.ndarray
    # slow copies carried on the disturbance-estimation path (same delay
    # class as the vestibular channels)
    dec_joint_angles: np.ndarray
    dec_joint_velocities: np.ndarray


@dataclass
class DelayLine:
    """Integer-tick transport delay; pre-filled with the first sample."""

    delay_ticks: int
    _buffer: list = field(default_factory=list)
    _head: int = 0

    def __call__(self, sample):
        if self.delay_ticks == 0:
            return sample
        if not self._buffer:
            self._buffer = [sample] * self.delay_ticks
        out = self._buffer[self._head]
        self._buffer[self._head] = sample
        self._head = (self._head + 1) % self.delay_ticks
        return out


@dataclass(frozen=True)
class NoiseConfig:
    """Additive Gaussian noise standard deviations (0 = clean channel)."""

    vestibular_velocity: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class SensorConfig:
    proprio_delay_ticks: int = 60
    vestibular_delay_ticks: int = 180
    torque_delay_ticks: int = 180
    noise: NoiseConfig = NoiseConfig()
    ablated: frozenset = frozenset()


class SensorBank:
    """Per-run sensor state: one delay line per channel class plus the RNG."""

    def __init__(self, config: ChainConfig, sensor_config: SensorConfig):
        self.chain = config
        self.config = sensor_config
        for name in sensor_config.ablated:
            if name not in CHANNELS:
                raise ConfigurationError(f"unknown sensor channel {name!r}")
        self._proprio = DelayLine(sensor_config.proprio_delay_ticks)
        self._vestibular = DelayLine(sensor_config.vestibular_delay_ticks)
        self._torque = DelayLine(sensor_config.torque_delay_ticks)
        self._rng = np.random.default_rng(sensor_config.noise.seed)

    def read(
        self,
        plant_state: PlantState,
        platform: PlatformInput,
        joint_accelerations: np.ndarray,
        measured_torques: np.ndarray,
        commanded_torques: np.ndarray,
    ) -> SensorFrame:
        """Ground truth -> per-class delay -> noise -> ablation."""
        q = plant_state.joint_angles
        qd = plant_state.joint_velocities
        _, _, ja, _, _, _, theta, thetad, _ = point_kinematics(
            self.chain, q, qd, joint_accelerations, platform
        )
        head_angle = float(theta[-1])
        head_velocity = float(thetad[-1])
        head_acc = ja[-1].copy()

        prop_q, prop_qd = self._proprio((q.copy(), qd.copy()))
        ves = self._vestibular(
            (head_angle, head_velocity, head_acc, q.copy(), qd.copy())
        )
        head_angle_d, head_velocity_d, head_acc_d, dec_q, dec_qd = ves
        torques_d = self._torque(np.asarray(measured_torques, dtype=float).copy())

        sigma = self.config.noise.vestibular_velocity
        if sigma > 0:
            head_velocity_d = head_velocity_d + sigma * self._rng.standard_normal()

        frame = SensorFrame(
            head_space_angle=head_angle_d,
            head_space_velocity=head_velocity_d,
            head_linear_acceleration=np.asarray(head_acc_d, dtype=float),
            joint_angles=np.asarray(prop_q, dtype=float),
            joint_velocities=np.asarray(prop_qd, dtype=float),
            joint_torques=torques_d,
            active_torques=np.asarray(commanded_torques, dtype=float).copy(),
            dec_joint_angles=np.asarray(dec_q, dtype=float),
            dec_joint_velocities=np.asarray(dec_qd, dtype=float),
        )
        if self.config.ablated:
            frame = ablate(frame, self.config.ablated)
        return frame


def ablate(frame: SensorFrame, which) -> SensorFrame:
    """Zero out whole channel classes (sensor-loss experiments)."""
    which = set(which)
    unknown = which - set(CHANNELS)
    if unknown:
        raise ConfigurationError(f"unknown sensor channels: {sorted(unknown)}")
    kwargs = {}
    if "vestibular" in which:
        kwargs["head_space_angle"] = 0.0
        kwargs["head_space_velocity"] = 0.0
        kwargs["head_linear_acceleration"] = np.zeros(2)
    if "proprio" in which:
        kwargs["joint_angles"] = np.zeros_like(frame.joint_angles)
        kwargs["joint_velocities"] = np.zeros_like(frame.joint_velocities)
        kwargs["dec_joint_angles"] = np.zeros_like(frame.dec_joint_angles)
        kwargs["dec_joint_velocities"] = np.zeros_like(frame.dec_joint_velocities)
    if "torque" in which:
        kwargs["joint_torques"] = np.zeros_like(frame.joint_torques)
    if "efference" in which:
        kwargs["active_torques"] = np.zeros_like(frame.active_torques)
    return replace(frame, **kwargs)

"""Shipped chain parameters and scenario presets.

Anthropometrics are derived from standard biomechanics tables (Winter's
segment fractions) for an 80 kg, 1.80 m adult; both legs are lumped into
single shank/thigh links, the head-arms-torso group is one link.  These
are documented defaults, not measured values.

Passive joint impedance is the intrinsic share of the total servo
stiffness (15 % by default); the knee carries an elevated passive
stiffness (5x) reflecting deliberate knee stiffening during the platform
experiments.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .chain import ChainConfig, ChainPose, LinkParams, com_of_subchain_oracle
from .control import EstimatorFlags, EstimatorParams
from .scenario import (
    AccelPulse,
    ForceEvent,
    MinimumJerkRamp,
    ModuleSpec,
    ScenarioConfig,
    Sinusoid,
    Waveform,
    sinusoid_tilt,
    voluntary_lean,
)
from .sensors import NoiseConfig, SensorConfig

BODY_MASS = 80.0  # kg
BODY_HEIGHT = 1.80  # m
PASSIVE_SHARE = 0.15
KNEE_STIFFNESS_FACTOR = 5.0


def _bare_links() -> tuple[LinkParams, ...]:
    h = BODY_HEIGHT
    m = BODY_MASS
    shank = LinkParams(
        mass=2 * 0.0465 * m,
        length=0.246 * h,
        com_distance=0.567 * 0.246 * h,
        inertia_about_com=2 * 0.0465 * m * (0.302 * 0.246 * h) ** 2,
    )
    thigh = LinkParams(
        mass=2 * 0.100 * m,
        length=0.245 * h,
        com_distance=0.567 * 0.245 * h,
        inertia_about_com=2 * 0.100 * m * (0.323 * 0.245 * h) ** 2,
    )
    hat = LinkParams(
        mass=0.678 * m,
        length=h - 0.530 * h,
        com_distance=0.35,
        inertia_about_com=0.678 * m * 0.30**2,
    )
    return shank, thigh, hat


def humanoid_chain() -> ChainConfig:
    """Shank-thigh-HAT chain with intrinsic joint impedance filled in.

    The passive stiffness of each joint is PASSIVE_SHARE of the upright
    gravitational load m_up * g * h_up of that joint; the knee is
    stiffened by KNEE_STIFFNESS_FACTOR.
    """
    bare = ChainConfig(links=_bare_links())
    pose = ChainPose(np.zeros(bare.n_links))
    links = []
    for n, link in enumerate(bare.links, start=1):
        com, mass = com_of_subchain_oracle(bare, pose, n)
        kp_total = mass * bare.gravity * com[1]
        factor = KNEE_STIFFNESS_FACTOR if n == 2 else 1.0
        links.append(
            replace(
                link,
                passive_stiffness=factor * PASSIVE_SHARE * kp_total,
                passive_damping=factor * PASSIVE_SHARE * 0.25 * kp_total,
            )
        )
    return ChainConfig(links=tuple(links))


def sip_chain(mass: float = 70.0, com_height: float = 0.9) -> ChainConfig:
    """Single-inverted-pendulum body above the ankle."""
    kp = mass * 9.81 * com_height
    body = LinkParams(
        mass=mass,
        length=1.7,
        com_distance=com_height,
        inertia_about_com=mass * 0.3**2,
        passive_stiffness=PASSIVE_SHARE * kp,
        passive_damping=PASSIVE_SHARE * 0.25 * kp,
    )
    return ChainConfig(links=(body,))


def _balance_modules(with_ext_ankle: bool = False) -> list[ModuleSpec]:
    """The platform-experiment estimator assignment.

    Ankle: gravity + tilt; knee and hip additionally use the support
    acceleration compensation.
    """
    ankle = ModuleSpec(
        flags=EstimatorFlags(
            tilt=True, gravity=True, acceleration=False, ext_torque=with_ext_ankle
        )
    )
    knee = ModuleSpec(flags=EstimatorFlags(tilt=True, gravity=True, acceleration=True))
    hip = ModuleSpec(flags=EstimatorFlags(tilt=True, gravity=True, acceleration=True))
    return [ankle, knee, hip]


def quiet_preset() -> ScenarioConfig:
    return ScenarioConfig(
        chain=humanoid_chain(),
        duration=20.0,
        modules=_balance_modules(),
        name="quiet",
    )


def fig3_preset() -> ScenarioConfig:
    """Sinusoidal +/-4 deg, 0.08 Hz support tilt for 60 s."""
    return ScenarioConfig(
        chain=humanoid_chain(),
        duration=60.0,
        modules=_balance_modules(),
        tilt_waveform=sinusoid_tilt(math.radians(4.0), 0.08),
        name="fig3",
    )


def fig4_preset() -> ScenarioConfig:
    """Voluntary 4 deg forward trunk lean with unity-gain prediction."""
    ramp, prediction = voluntary_lean(math.radians(4.0), 2.0, t_start=5.0)
    modules = _balance_modules()
    modules[2] = replace(
        modules[2],
        setpoint=ramp,
        prediction=prediction,
        passive_setpoint=ramp,
    )
    return ScenarioConfig(
        chain=humanoid_chain(),
        duration=30.0,
        modules=modules,
        name="fig4",
    )


def pull_preset() -> ScenarioConfig:
    """Constant horizontal pull on the trunk; contact-torque estimation on."""
    chain = humanoid_chain()
    trunk = chain.links[-1]
    return ScenarioConfig(
        chain=chain,
        duration=30.0,
        modules=_balance_modules(with_ext_ankle=True),
        force_events=[
            ForceEvent(
                link_index=3,
                application_height=0.8 * trunk.length,
                horizontal_force=15.0,
                t_on=5.0,
                t_off=25.0,
            )
        ],
        name="pull",
    )


def translation_preset() -> ScenarioConfig:
    """Support surface translation (acceleration pulse)."""
    return ScenarioConfig(
        chain=humanoid_chain(),
        duration=30.0,
        modules=_balance_modules(),
        translation_waveform=AccelPulse(magnitude=0.4, t_on=5.0, t_off=7.0),
        name="translation",
    )


PRESETS = {
    "quiet": quiet_preset,
    "fig3": fig3_preset,
    "fig4": fig4_preset,
    "pull": pull_preset,
    "translation": translation_preset,
}

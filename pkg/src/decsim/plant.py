"""Ground-truth physics: planar N-link inverted pendulum on a driven platform.

The support (link 0) is kinematically prescribed: tilt about an axis
through joint 1 plus horizontal translation of joint 1.  Generalized
coordinates are the N joint angles.  The equations of motion are derived
in absolute link angles theta = base_tilt + cumsum(q):

    A(theta) thetadd + Cor(theta, thetad) - g c sin(theta)
        + c xpdd cos(theta) = Q

with A_ij = J_i delta_ij + b_ij cos(theta_i - theta_j),
Cor_i = sum_j b_ij sin(theta_i - theta_j) thetad_j^2,
b_ij = sum_k m_k a_ki a_kj, c_i = sum_k m_k a_ki, where a_ki is L_i for
i < k, h_k for i = k, 0 above.  Mapping to joint coordinates uses the
lower-triangular ones matrix W (theta = W q + tilt).

Full Coriolis/centrifugal terms are kept; the controller is free to
neglect them, the plant is not.

Torque sign convention: positive torque drives the link above the joint
toward forward lean.  ``cross_z(r, F) = r_y F_x - r_x F_y`` is the moment
of a force in this convention.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .chain import ChainConfig, ConfigurationError, LinkParams, link_direction


class DivergenceError(RuntimeError):
    """The plant state became non-finite (run diverged)."""

    def __init__(self, time: float):
        super().__init__(f"plant state diverged at t={time:.6f} s")
        self.time = time


def cross_z(r, f):
    """Moment of force f applied at offset r, in the forward-lean-positive sense."""
    return r[..., 1] * f[..., 0] - r[..., 0] * f[..., 1]


@dataclass
class PlantState:
    joint_angles: np.ndarray
    joint_velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.joint_angles = np.asarray(self.joint_angles, dtype=float)
        self.joint_velocities = np.asarray(self.joint_velocities, dtype=float)

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.joint_angles))
            and np.all(np.isfinite(self.joint_velocities))
        )


@dataclass(frozen=True)
class PlatformInput:
    """Prescribed support motion at one instant (analytic derivatives)."""

    tilt: float = 0.0
    tilt_velocity: float = 0.0
    tilt_acceleration: float = 0.0
    translation_acceleration: float = 0.0


@dataclass(frozen=True)
class ExternalForce:
    """Horizontal point force on one link at a height along the link."""

    link_index: int
    application_height: float
    horizontal_force: float


@lru_cache(maxsize=32)
def _chain_arrays(config: ChainConfig):
    """Constant arrays (a, b, c, J, W) for the absolute-angle EOM."""
    n = config.n_links
    masses = np.array([lk.mass for lk in config.links])
    lengths = np.array([lk.length for lk in config.links])
    hs = np.array([lk.com_distance for lk in config.links])
    js = np.array([lk.inertia_about_com for lk in config.links])
    # a[k, i]: moment arm of angle i in the COM position of link k
    a = np.zeros((n, n))
    for k in range(n):
        a[k, :k] = lengths[:k]
        a[k, k] = hs[k]
    b = np.einsum("k,ki,kj->ij", masses, a, a)
    c = masses @ a
    w = np.tril(np.ones((n, n)))
    return a, b, c, js, w


def _theta(config: ChainConfig, q: np.ndarray, tilt: float) -> np.ndarray:
    return tilt + np.cumsum(q)


def _mass_matrix_theta(config: ChainConfig, theta: np.ndarray) -> np.ndarray:
    _, b, _, js, _ = _chain_arrays(config)
    diff = theta[:, None] - theta[None, :]
    return np.diag(js) + b * np.cos(diff)


def mass_matrix(config: ChainConfig, state: PlantState, tilt: float = 0.0) -> np.ndarray:
    """Joint-space inertia matrix W^T A W (symmetric positive definite)."""
    _, _, _, _, w = _chain_arrays(config)
    a_theta = _mass_matrix_theta(config, _theta(config, state.joint_angles, tilt))
    return w.T @ a_theta @ w


def bias_and_gravity(
    config: ChainConfig, state: PlantState, platform: PlatformInput
) -> np.ndarray:
    """Generalized bias forces: M(q) qdd = tau_applied - bias.

    Includes Coriolis/centrifugal terms, gravity, and the coupling from
    prescribed platform tilt acceleration and horizontal translation.
    """
    _, b, c, _, w = _chain_arrays(config)
    theta = _theta(config, state.joint_angles, platform.tilt)
    thetad = platform.tilt_velocity + np.cumsum(state.joint_velocities)
    diff = theta[:, None] - theta[None, :]
    cor = (b * np.sin(diff)) @ (thetad**2)
    grav = -config.gravity * c * np.sin(theta)
    trans = c * platform.translation_acceleration * np.cos(theta)
    a_theta = _mass_matrix_theta(config, theta)
    tilt_coupling = a_theta @ np.full_like(theta, platform.tilt_acceleration)
    return w.T @ (tilt_coupling + cor + grav + trans)


def passive_torque(
    params: LinkParams, joint_angle: float, joint_velocity: float, setpoint: float = 0.0
) -> float:
    """Intrinsic joint impedance, zero time delay."""
    return -params.passive_stiffness * (joint_angle - setpoint) - (
        params.passive_damping * joint_velocity
    )


def apply_external_force(
    config: ChainConfig, state: PlantState, force: ExternalForce, tilt: float = 0.0
) -> np.ndarray:
    """Joint-space generalized torques of a horizontal point force."""
    n = config.n_links
    if not 1 <= force.link_index <= n:
        raise ConfigurationError(f"force link index {force.link_index} out of range")
    link = config.links[force.link_index - 1]
    if not 0 <= force.application_height <= link.length:
        raise ConfigurationError("application_height outside the link")
    theta = _theta(config, state.joint_angles, tilt)
    # moment arms of each absolute angle in the application point position
    arm = np.zeros(n)
    arm[: force.link_index - 1] = [
        lk.length for lk in config.links[: force.link_index - 1]
    ]
    arm[force.link_index - 1] = force.application_height
    q_theta = force.horizontal_force * arm * np.cos(theta)
    _, _, _, _, w = _chain_arrays(config)
    return w.T @ q_theta


@lru_cache(maxsize=32)
def _impedance_arrays(config: ChainConfig):
    kp = np.array([lk.passive_stiffness for lk in config.links])
    kd = np.array([lk.passive_damping for lk in config.links])
    return kp, kd


def _passive_torques(config, q, qd, passive_setpoints):
    return np.array(
        [
            passive_torque(lk, q[i], qd[i], passive_setpoints[i])
            for i, lk in enumerate(config.links)
        ]
    )


def joint_accelerations(
    config: ChainConfig,
    q: np.ndarray,
    qd: np.ndarray,
    active_torques: np.ndarray,
    platform: PlatformInput,
    forces=(),
    passive_setpoints=None,
) -> np.ndarray:
    """Solve M qdd = tau_active + tau_passive + tau_external - bias."""
    if passive_setpoints is None:
        passive_setpoints = np.zeros(config.n_links)
    state = PlantState(q, qd)
    tau = np.asarray(active_torques, dtype=float) + _passive_torques(
        config, q, qd, passive_setpoints
    )
    for f in forces:
        tau = tau + apply_external_force(config, state, f, platform.tilt)
    bias = bias_and_gravity(config, state, platform)
    m = mass_matrix(config, state, platform.tilt)
    return np.linalg.solve(m, tau - bias)


def _platform_at(platform: PlatformInput, s: float) -> PlatformInput:
    """Advance the prescribed tilt analytically by s seconds (2nd order)."""
    return replace(
        platform,
        tilt=platform.tilt + s * platform.tilt_velocity + 0.5 * s**2 * platform.tilt_acceleration,
        tilt_velocity=platform.tilt_velocity + s * platform.tilt_acceleration,
    )


def step(
    config: ChainConfig,
    state: PlantState,
    active_torques,
    platform: PlatformInput,
    forces=(),
    dt: float = 1e-3,
    passive_setpoints=None,
) -> PlantState:
    """One fixed-step RK4 step with zero-order-hold active torques."""
    active = np.asarray(active_torques, dtype=float)
    if passive_setpoints is None:
        passive_setpoints = np.zeros(config.n_links)

    # hoisted constants for the four derivative evaluations
    n = config.n_links
    _, b, c, js, w = _chain_arrays(config)
    pkp, pkd = _impedance_arrays(config)
    js_diag = np.diag(js)
    g = config.gravity
    force_arms = []
    for f in forces:
        if not 1 <= f.link_index <= n:
            raise ConfigurationError(f"force link index {f.link_index} out of range")
        if not 0 <= f.application_height <= config.links[f.link_index - 1].length:
            raise ConfigurationError("application_height outside the link")
        arm = np.zeros(n)
        arm[: f.link_index - 1] = [
            lk.length for lk in config.links[: f.link_index - 1]
        ]
        arm[f.link_index - 1] = f.application_height
        force_arms.append((f.horizontal_force, arm))

    def deriv(q, qd, s):
        tilt = platform.tilt + s * platform.tilt_velocity + (
            0.5 * s * s * platform.tilt_acceleration
        )
        tilt_vel = platform.tilt_velocity + s * platform.tilt_acceleration
        theta = tilt + np.cumsum(q)
        thetad = tilt_vel + np.cumsum(qd)
        diff = theta[:, None] - theta[None, :]
        a_theta = js_diag + b * np.cos(diff)
        cor = (b * np.sin(diff)) @ (thetad * thetad)
        cos_theta = np.cos(theta)
        rhs = (
            a_theta.sum(axis=1) * platform.tilt_acceleration
            + cor
            - g * c * np.sin(theta)
            + c * platform.translation_acceleration * cos_theta
        )
        tau = active - pkp * (q - passive_setpoints) - pkd * qd
        for mag, arm in force_arms:
            tau = tau + w.T @ (mag * arm * cos_theta)
        qdd = np.linalg.solve(w.T @ a_theta @ w, tau - w.T @ rhs)
        return qd, qdd

    q0, v0 = state.joint_angles, state.joint_velocities
    k1q, k1v = deriv(q0, v0, 0.0)
    k2q, k2v = deriv(q0 + 0.5 * dt * k1q, v0 + 0.5 * dt * k1v, 0.5 * dt)
    k3q, k3v = deriv(q0 + 0.5 * dt * k2q, v0 + 0.5 * dt * k2v, 0.5 * dt)
    k4q, k4v = deriv(q0 + dt * k3q, v0 + dt * k3v, dt)
    q = q0 + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    v = v0 + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    new = PlantState(q, v, state.time + dt)
    if not new.is_finite():
        raise DivergenceError(new.time)
    return new


def total_energy(
    config: ChainConfig, state: PlantState, platform: PlatformInput | None = None
) -> float:
    """Kinetic + gravitational potential energy of the links.

    Potential datum is the height of joint 1.  Platform translation is not
    tracked as a position state, so this is meaningful as a conservation
    oracle for still-platform runs (tilt velocity is included).
    """
    if platform is None:
        platform = PlatformInput()
    _, _, c, _, _ = _chain_arrays(config)
    theta = _theta(config, state.joint_angles, platform.tilt)
    thetad = platform.tilt_velocity + np.cumsum(state.joint_velocities)
    a_theta = _mass_matrix_theta(config, theta)
    ke = 0.5 * thetad @ a_theta @ thetad
    pe = config.gravity * float(c @ np.cos(theta))
    return float(ke + pe)


def point_kinematics(
    config: ChainConfig,
    q: np.ndarray,
    qd: np.ndarray,
    qdd: np.ndarray,
    platform: PlatformInput,
):
    """Absolute positions/velocities/accelerations of joints and link COMs.

    Joint 1 is the origin; its translation acceleration is included in all
    accelerations.  Returns (joint_pos, joint_vel, joint_acc, com_pos,
    com_vel, com_acc, theta, thetad, thetadd); the joint arrays have N+1
    rows (last row is the top of link N, the head reference point).
    """
    n = config.n_links
    theta = platform.tilt + np.cumsum(q)
    thetad = platform.tilt_velocity + np.cumsum(qd)
    thetadd = platform.tilt_acceleration + np.cumsum(qdd)
    u = np.stack([np.sin(theta), np.cos(theta)], axis=1)
    up = np.stack([np.cos(theta), -np.sin(theta)], axis=1)
    udd = up * thetadd[:, None] - u * (thetad**2)[:, None]
    ud = up * thetad[:, None]
    lengths = np.array([lk.length for lk in config.links])
    hs = np.array([lk.com_distance for lk in config.links])
    jp = np.zeros((n + 1, 2))
    jv = np.zeros((n + 1, 2))
    ja = np.zeros((n + 1, 2))
    ja[0] = (platform.translation_acceleration, 0.0)
    for i in range(n):
        jp[i + 1] = jp[i] + lengths[i] * u[i]
        jv[i + 1] = jv[i] + lengths[i] * ud[i]
        ja[i + 1] = ja[i] + lengths[i] * udd[i]
    cp = jp[:-1] + hs[:, None] * u
    cv = jv[:-1] + hs[:, None] * ud
    ca = ja[:-1] + hs[:, None] * udd
    return jp, jv, ja, cp, cv, ca, theta, thetad, thetadd


def torque_balance_components(
    config: ChainConfig,
    state: PlantState,
    active_torques,
    platform: PlatformInput,
    forces=(),
    passive_setpoints=None,
):
    """Ground-truth torque decomposition at every joint.

    For each joint n returns a dict with the physical components of the
    total joint torque: tau_A (rate of change of the above-links angular
    momentum about joint n, in the frame translating with it), tau_g
    (gravity), tau_in (pseudo-force from joint-n acceleration), tau_ext
    (contact forces), tau_p (passive), tau_a (active).  The accounting
    identity tau_A = tau_g + tau_in + tau_ext + tau_p + tau_a holds to
    numerical precision.
    """
    n = config.n_links
    if passive_setpoints is None:
        passive_setpoints = np.zeros(n)
    active = np.asarray(active_torques, dtype=float)
    q, qd = state.joint_angles, state.joint_velocities
    qdd = joint_accelerations(
        config, q, qd, active, platform, forces, passive_setpoints
    )
    jp, jv, ja, cp, cv, ca, _, thetad, thetadd = point_kinematics(
        config, q, qd, qdd, platform
    )
    masses = np.array([lk.mass for lk in config.links])
    js = np.array([lk.inertia_about_com for lk in config.links])
    tau_p = _passive_torques(config, q, qd, passive_setpoints)
    out = []
    for j in range(n):
        above = slice(j, n)
        r = cp[above] - jp[j]
        tau_a_mom = float(
            np.sum(js[above] * thetadd[above])
            + np.sum(masses[above] * cross_z(r, ca[above] - ja[j]))
        )
        tau_g = float(np.sum(masses[above] * config.gravity * r[:, 0]))
        tau_in = float(np.sum(masses[above] * cross_z(r, -ja[j][None, :])))
        tau_ext = 0.0
        for f in forces:
            if f.link_index - 1 >= j:
                theta_l = platform.tilt + np.cumsum(q)[f.link_index - 1]
                r_app = (
                    jp[f.link_index - 1]
                    + f.application_height * link_direction(theta_l)
                    - jp[j]
                )
                tau_ext += cross_z(r_app, np.array([f.horizontal_force, 0.0]))
        out.append(
            {
                "tau_A": tau_a_mom,
                "tau_g": tau_g,
                "tau_in": tau_in,
                "tau_ext": float(tau_ext),
                "tau_p": float(tau_p[j]),
                "tau_a": float(active[j]),
            }
        )
    return out

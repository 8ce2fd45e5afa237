"""Kinematic chain description and brute-force reference computations.

Conventions
-----------
Links are indexed 1..N from the lowest moving link to the head-bearing
link.  Joint n connects link n (above) to link n-1 (below); link 0 is the
support (foot/platform), kinematically driven and not controlled.

Angles: ``space`` angles are measured from earth-vertical, positive for
forward (ventral) lean in the sagittal plane.  Joint angles are relative:

    joint[n] = space[n] - space[n-1]

so space angles are the cumulative sum of joint angles on top of the
support tilt.  A link direction unit vector is ``(sin a, cos a)`` with x
forward and y up.

The ``*_oracle`` functions here are deliberately slow and direct (explicit
forward kinematics, per-link summation with the parallel-axis theorem);
they serve as ground truth for the recursive estimators in the control
layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Raised for invalid chain/scenario configuration values."""


def link_direction(space_angle: float) -> np.ndarray:
    """Unit vector along a link at the given space angle (x forward, y up)."""
    return np.array([np.sin(space_angle), np.cos(space_angle)])


@dataclass(frozen=True)
class LinkParams:
    """Anthropometric parameters of one link.

    mass            kg
    length          m, joint-to-joint
    com_distance    m, joint to link COM, measured along the link
    inertia_about_com  kg*m^2
    passive_stiffness  N*m/rad, intrinsic joint stiffness at the joint below
    passive_damping    N*m*s/rad
    """

    mass: float
    length: float
    com_distance: float
    inertia_about_com: float
    passive_stiffness: float = 0.0
    passive_damping: float = 0.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ConfigurationError(f"mass must be > 0, got {self.mass}")
        if self.length <= 0:
            raise ConfigurationError(f"length must be > 0, got {self.length}")
        if not 0 <= self.com_distance <= self.length:
            raise ConfigurationError(
                f"com_distance must lie in [0, length], got {self.com_distance}"
            )
        if self.inertia_about_com < 0:
            raise ConfigurationError("inertia_about_com must be >= 0")
        if self.passive_stiffness < 0 or self.passive_damping < 0:
            raise ConfigurationError("passive impedance must be >= 0")


@dataclass(frozen=True)
class ChainConfig:
    """An ordered open chain of links standing on a driven support."""

    links: tuple[LinkParams, ...]
    gravity: float = 9.81

    def __post_init__(self):
        if len(self.links) < 1:
            raise ConfigurationError("chain needs at least one link")
        if self.gravity <= 0:
            raise ConfigurationError("gravity must be > 0")
        object.__setattr__(self, "links", tuple(self.links))

    @property
    def n_links(self) -> int:
        return len(self.links)


@dataclass
class ChainPose:
    """A chain configuration snapshot in space coordinates.

    space_angles[n-1] is the space angle of link n; base_tilt is the space
    angle of the support link; base_position is the horizontal position of
    joint 1.
    """

    space_angles: np.ndarray
    base_tilt: float = 0.0
    base_position: float = 0.0

    def __post_init__(self):
        self.space_angles = np.asarray(self.space_angles, dtype=float)


def joint_to_space(joint_angles, base_tilt: float) -> np.ndarray:
    """Cumulative sum: space[n] = base_tilt + sum(joint[1..n])."""
    joint_angles = np.asarray(joint_angles, dtype=float)
    return base_tilt + np.cumsum(joint_angles)


def space_to_joint(space_angles, base_tilt: float) -> np.ndarray:
    """Successive differences; exact inverse of joint_to_space."""
    space_angles = np.asarray(space_angles, dtype=float)
    below = np.concatenate(([base_tilt], space_angles[:-1]))
    return space_angles - below


def check_lengths(config: ChainConfig, angles) -> None:
    if len(angles) != config.n_links:
        raise ConfigurationError(
            f"expected {config.n_links} angles, got {len(angles)}"
        )


def joint_positions(config: ChainConfig, pose: ChainPose) -> np.ndarray:
    """Positions of joints 1..N+1 (last entry is the top of link N).

    Returned array has shape (N+1, 2); joint 1 is at (base_position, 0).
    """
    check_lengths(config, pose.space_angles)
    pts = np.zeros((config.n_links + 1, 2))
    pts[0] = (pose.base_position, 0.0)
    for i, link in enumerate(config.links):
        pts[i + 1] = pts[i] + link.length * link_direction(pose.space_angles[i])
    return pts


def link_com_positions(config: ChainConfig, pose: ChainPose) -> np.ndarray:
    """COM position of each link, shape (N, 2)."""
    joints = joint_positions(config, pose)
    coms = np.zeros((config.n_links, 2))
    for i, link in enumerate(config.links):
        coms[i] = joints[i] + link.com_distance * link_direction(pose.space_angles[i])
    return coms


def com_of_subchain_oracle(
    config: ChainConfig, pose: ChainPose, n: int
) -> tuple[np.ndarray, float]:
    """Mass-weighted mean COM of links n..N relative to joint n (brute force)."""
    if not 1 <= n <= config.n_links:
        raise IndexError(f"link index {n} out of range 1..{config.n_links}")
    joints = joint_positions(config, pose)
    coms = link_com_positions(config, pose)
    masses = np.array([lk.mass for lk in config.links])
    sel = slice(n - 1, config.n_links)
    total_mass = float(masses[sel].sum())
    weighted = (masses[sel, None] * (coms[sel] - joints[n - 1])).sum(axis=0)
    return weighted / total_mass, total_mass


def inertia_of_subchain_oracle(
    config: ChainConfig, pose: ChainPose, n: int
) -> tuple[float, float]:
    """Moment of inertia of links n..N about joint n and about the subchain COM.

    Direct per-link summation with the parallel-axis theorem.
    """
    if not 1 <= n <= config.n_links:
        raise IndexError(f"link index {n} out of range 1..{config.n_links}")
    joints = joint_positions(config, pose)
    coms = link_com_positions(config, pose)
    com_rel, total_mass = com_of_subchain_oracle(config, pose, n)
    com_abs = joints[n - 1] + com_rel
    j_joint = 0.0
    j_com = 0.0
    for i in range(n - 1, config.n_links):
        link = config.links[i]
        j_joint += link.inertia_about_com + link.mass * float(
            np.sum((coms[i] - joints[n - 1]) ** 2)
        )
        j_com += link.inertia_about_com + link.mass * float(
            np.sum((coms[i] - com_abs) ** 2)
        )
    return j_joint, j_com
